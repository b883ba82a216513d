import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .graph import InteractionGraph
from ..exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class DatasetSplit:
    """Train graph plus held-out validation and test edges.

    Attributes:
        train: Training InteractionGraph (full user/item id space)
        validation: (n, 2) array of (user, item) validation edges
        test: (n, 2) array of (user, item) test edges
        seed: Seed the split was drawn with
        ratios: (train, validation, test) fractions
    """
    train: InteractionGraph
    validation: np.ndarray
    test: np.ndarray
    seed: int
    ratios: Tuple[float, float, float]

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def held_out(self, which: str) -> sp.csr_matrix:
        """User x item 0/1 matrix of the 'validation' or 'test' edges."""
        edges = {'validation': self.validation, 'test': self.test}[which]
        return sp.csr_matrix((np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])),
                             shape=(self.num_users, self.num_items))

    def merged(self) -> np.ndarray:
        """All edges of the three parts, sorted by (user, item)."""
        train = np.stack([self.train.users, self.train.items], axis=1)
        merged = np.concatenate([train, self.validation, self.test])
        return merged[np.lexsort((merged[:, 1], merged[:, 0]))]

    def with_train(self, train: InteractionGraph) -> 'DatasetSplit':
        """Same held-out edges over a different training graph (noise studies)."""
        return DatasetSplit(train, self.validation, self.test, self.seed, self.ratios)


def _validate_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3:
        raise ConfigError(f"expected (train, validation, test) ratios, got {ratios}", key='ratios')
    train, val, test = (float(r) for r in ratios)
    if abs(train + val + test - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {train + val + test}", key='ratios')
    if train <= 0 or val < 0 or test < 0:
        raise ConfigError(f"split ratios must be non-negative with a positive train part: {ratios}",
                          key='ratios')
    return train, val, test


def _part_sizes(n: int, ratios: Tuple[float, float, float]) -> Tuple[int, int, int]:
    """Largest-remainder allocation of n edges; at least one training edge."""
    quotas = [n * r for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(3), key=lambda j: (-(quotas[j] - sizes[j]), j))
    for j in order[:n - sum(sizes)]:
        sizes[j] += 1
    if n > 0 and sizes[0] == 0:
        donor = 2 if sizes[2] >= sizes[1] else 1
        sizes[donor] -= 1
        sizes[0] += 1
    return sizes[0], sizes[1], sizes[2]


def split_dataset(graph: InteractionGraph, ratios: Sequence[float], seed: int) -> DatasetSplit:
    """Per-user stratified random split.

    Each user's edges are shuffled with one seeded generator (users visited in
    id order) and cut by largest-remainder counts, so every user's part sizes
    are within one edge of the configured proportions and every user with any
    interaction keeps at least one training edge.

    Args:
        graph: Full interaction graph
        ratios: (train, validation, test) fractions summing to 1
        seed: Random seed

    Returns:
        DatasetSplit
    """
    ratios = _validate_ratios(ratios)
    rng = np.random.default_rng(seed)
    indptr = graph.user_items.indptr
    parts = {0: [], 1: [], 2: []}
    for user in range(graph.num_users):
        # edges are sorted by user, so the CSR row span indexes the edge arrays
        span = np.arange(indptr[user], indptr[user + 1])
        if span.size == 0:
            continue
        span = rng.permutation(span)
        n_train, n_val, _ = _part_sizes(span.size, ratios)
        parts[0].append(span[:n_train])
        parts[1].append(span[n_train:n_train + n_val])
        parts[2].append(span[n_train + n_val:])

    def take(which: int) -> np.ndarray:
        idx = np.sort(np.concatenate(parts[which])) if parts[which] else np.empty(0, dtype=np.int64)
        return idx.astype(np.int64)

    train_idx, val_idx, test_idx = take(0), take(1), take(2)
    train = InteractionGraph(graph.num_users, graph.num_items,
                             graph.users[train_idx], graph.items[train_idx],
                             graph.user_ids, graph.item_ids)
    validation = np.stack([graph.users[val_idx], graph.items[val_idx]], axis=1)
    test = np.stack([graph.users[test_idx], graph.items[test_idx]], axis=1)
    logger.info(f"Split {graph.num_edges} edges into {train.num_edges} train / "
                f"{len(validation)} validation / {len(test)} test (seed {seed})")
    return DatasetSplit(train, validation, test, int(seed), ratios)


def write_split(split: DatasetSplit, directory: str) -> Dict[str, str]:
    """Write split manifests as `u<TAB>i` files plus id maps and a metadata file.

    Returns:
        Mapping of manifest name to written path
    """
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, f"{name}.tsv")
             for name in ('meta', 'train', 'validation', 'test', 'users', 'items')}
    meta = pd.DataFrame([
        ('seed', split.seed),
        ('ratios', ','.join(repr(r) for r in split.ratios)),
        ('num_users', split.num_users),
        ('num_items', split.num_items),
        ('train_edges', split.train.num_edges),
        ('validation_edges', len(split.validation)),
        ('test_edges', len(split.test)),
    ], columns=['key', 'value'])
    meta.to_csv(paths['meta'], sep='\t', index=False, header=False)
    pd.DataFrame({'u': split.train.users, 'i': split.train.items}).to_csv(
        paths['train'], sep='\t', index=False, header=False)
    for name in ('validation', 'test'):
        edges = getattr(split, name)
        pd.DataFrame({'u': edges[:, 0], 'i': edges[:, 1]}).to_csv(
            paths[name], sep='\t', index=False, header=False)
    pd.DataFrame({'id': np.arange(split.num_users), 'label': split.train.user_ids}).to_csv(
        paths['users'], sep='\t', index=False, header=False)
    pd.DataFrame({'id': np.arange(split.num_items), 'label': split.train.item_ids}).to_csv(
        paths['items'], sep='\t', index=False, header=False)
    return paths


def read_split(directory: str) -> DatasetSplit:
    """Read manifests written by `write_split`."""
    meta_path = os.path.join(directory, 'meta.tsv')
    if not os.path.exists(meta_path):
        raise ConfigError(f"no split manifest in {directory}", key='split_dir')
    meta = pd.read_csv(meta_path, sep='\t', header=None, names=['key', 'value'],
                       dtype=str).set_index('key')['value']

    def edges(name: str) -> np.ndarray:
        path = os.path.join(directory, f"{name}.tsv")
        if os.path.getsize(path) == 0:
            return np.empty((0, 2), dtype=np.int64)
        return pd.read_csv(path, sep='\t', header=None, dtype=np.int64).to_numpy().reshape(-1, 2)

    def labels(name: str) -> np.ndarray:
        frame = pd.read_csv(os.path.join(directory, f"{name}.tsv"), sep='\t', header=None,
                            names=['id', 'label'], dtype={'id': np.int64, 'label': str},
                            keep_default_na=False)
        return frame['label'].to_numpy(dtype=object)

    train_edges = edges('train')
    train = InteractionGraph(int(meta['num_users']), int(meta['num_items']),
                             train_edges[:, 0], train_edges[:, 1],
                             labels('users'), labels('items'))
    ratios = tuple(float(r) for r in meta['ratios'].split(','))
    return DatasetSplit(train, edges('validation'), edges('test'), int(meta['seed']), ratios)
