import csv
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pandas.errors import EmptyDataError, ParserError

from ..exceptions import (CapacityError, ConfigError, DatasetParseError,
                          EmptyDatasetError, NodeIndexError)

logger = logging.getLogger(__name__)


class InteractionGraph:
    """Bipartite user-item interaction graph.

    Users occupy node ids [0, num_users) and items occupy
    [num_users, num_users + num_items). Edges are stored once, sorted by
    (user, item), and indexed both ways with CSR matrices so that
    `user_items` and `item_users` are exact transposes.

    Instances are treated as immutable after construction; derived
    structures (adjacency, k-hop reachability) are cached on first use.

    Attributes:
        num_users: Number of users |U|
        num_items: Number of items |I|
        users: Edge user ids (dense, int64)
        items: Edge item ids (dense, int64, item-local numbering)
        user_ids: Original user labels by dense id (remap table)
        item_ids: Original item labels by dense id (remap table)
        synthetic: Boolean flag per edge, True for injected noise edges
    """

    def __init__(self,
                 num_users: int,
                 num_items: int,
                 users: Sequence[int],
                 items: Sequence[int],
                 user_ids: Optional[Sequence] = None,
                 item_ids: Optional[Sequence] = None,
                 synthetic: Optional[Sequence[bool]] = None) -> None:
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise NodeIndexError(f"user id out of range [0, {num_users})")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise NodeIndexError(f"item id out of range [0, {num_items})")
        flags = (np.zeros(users.size, dtype=bool) if synthetic is None
                 else np.asarray(synthetic, dtype=bool).reshape(-1))

        # collapse duplicates, keep the first occurrence's flag, sort by (user, item)
        keys = users * max(num_items, 1) + items
        keys, first = np.unique(keys, return_index=True)

        self.num_users: int = int(num_users)
        self.num_items: int = int(num_items)
        self.users: np.ndarray = users[first]
        self.items: np.ndarray = items[first]
        self.synthetic: np.ndarray = flags[first]
        self.user_ids: np.ndarray = (np.arange(num_users) if user_ids is None
                                     else np.asarray(user_ids, dtype=object))
        self.item_ids: np.ndarray = (np.arange(num_items) if item_ids is None
                                     else np.asarray(item_ids, dtype=object))

        ones = np.ones(self.users.size, dtype=np.int8)
        self.user_items: sp.csr_matrix = sp.csr_matrix(
            (ones, (self.users, self.items)), shape=(self.num_users, self.num_items))
        self.item_users: sp.csr_matrix = self.user_items.T.tocsr()
        self._cache: Dict[Tuple[str, int], sp.csr_matrix] = {}

    def __repr__(self) -> str:
        return (f"InteractionGraph(users={self.num_users}, items={self.num_items}, "
                f"edges={self.num_edges})")

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_edges(self) -> int:
        return int(self.users.size)

    @property
    def edges(self) -> List[Tuple[int, int]]:
        """Edges as (user, item) pairs in item-local numbering."""
        return list(zip(self.users.tolist(), self.items.tolist()))

    @property
    def edge_nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Edge endpoints in node-id space (user node, item node)."""
        return self.users, self.items + self.num_users

    def item_node(self, item: int) -> int:
        return self.num_users + int(item)

    def is_user(self, node: int) -> bool:
        return 0 <= node < self.num_users

    def check_node(self, node: int) -> None:
        if not 0 <= node < self.num_nodes:
            raise NodeIndexError(f"node {node} out of range [0, {self.num_nodes})")

    def degrees(self) -> np.ndarray:
        """Degree of every node in node-id order."""
        return np.concatenate([np.diff(self.user_items.indptr),
                               np.diff(self.item_users.indptr)]).astype(np.int64)

    def degree(self, node: int) -> int:
        self.check_node(node)
        if self.is_user(node):
            row = self.user_items.indptr
            return int(row[node + 1] - row[node])
        item = node - self.num_users
        row = self.item_users.indptr
        return int(row[item + 1] - row[item])

    def neighbors(self, node: int) -> np.ndarray:
        """Node ids adjacent to `node`."""
        self.check_node(node)
        if self.is_user(node):
            start, end = self.user_items.indptr[node:node + 2]
            return self.user_items.indices[start:end].astype(np.int64) + self.num_users
        item = node - self.num_users
        start, end = self.item_users.indptr[item:item + 2]
        return self.item_users.indices[start:end].astype(np.int64)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric (|U|+|I|) x (|U|+|I|) 0/1 adjacency."""
        key = ('adjacency', 0)
        if key not in self._cache:
            rows, cols = self.edge_nodes
            data = np.ones(2 * self.num_edges, dtype=np.float64)
            self._cache[key] = sp.csr_matrix(
                (data, (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
                shape=(self.num_nodes, self.num_nodes))
        return self._cache[key]

    def neighborhood_matrix(self, k: int) -> sp.csr_matrix:
        """0/1 matrix R with R[v, u] = 1 iff BFS distance(v, u) <= k (self included)."""
        if k < 1:
            raise ConfigError(f"hop count must be >= 1, got {k}", key='hops')
        key = ('reach', k)
        if key not in self._cache:
            adjacency = self.adjacency()
            reach = sp.identity(self.num_nodes, dtype=np.float64, format='csr')
            for _ in range(k):
                reach = (reach + reach @ adjacency).tocsr()
                reach.data[:] = 1.0
            reach.sort_indices()
            self._cache[key] = reach
        return self._cache[key]

    def without_edges(self, drop: np.ndarray) -> 'InteractionGraph':
        """New graph over the same nodes minus the edges flagged in `drop`."""
        keep = ~np.asarray(drop, dtype=bool)
        return InteractionGraph(self.num_users, self.num_items,
                                self.users[keep], self.items[keep],
                                self.user_ids, self.item_ids, self.synthetic[keep])

    def with_edges(self, users: np.ndarray, items: np.ndarray,
                   synthetic: bool = False) -> 'InteractionGraph':
        """New graph over the same nodes with the given edges added."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        flags = np.concatenate([self.synthetic, np.full(users.size, synthetic)])
        return InteractionGraph(self.num_users, self.num_items,
                                np.concatenate([self.users, users]),
                                np.concatenate([self.items, items]),
                                self.user_ids, self.item_ids, flags)

    @property
    def synthetic_edges(self) -> List[Tuple[int, int]]:
        """Edges flagged as injected noise, for audit."""
        return list(zip(self.users[self.synthetic].tolist(),
                        self.items[self.synthetic].tolist()))


@dataclass(frozen=True)
class NodeSet:
    """Nodes within `origin[1]` hops of the centric node `origin[0]`."""
    members: FrozenSet[int]
    origin: Tuple[int, int]

    def __contains__(self, node: int) -> bool:
        return node in self.members

    def __len__(self) -> int:
        return len(self.members)


def load_interactions(path: str) -> InteractionGraph:
    """Load a `user<TAB>item[<TAB>extra]` file into an InteractionGraph.

    Raw ids are remapped to dense ids (numeric order when every id is a
    non-negative integer, lexicographic otherwise). Duplicate lines collapse
    to one edge and any third column (timestamps etc.) is ignored.

    Args:
        path: Path to a UTF-8 TSV file

    Returns:
        InteractionGraph with `user_ids` / `item_ids` remap tables

    Raises:
        DatasetParseError: a line without both a user and an item field
        EmptyDatasetError: the file has no interactions
    """
    try:
        df = pd.read_csv(path, sep='\t', header=None, names=['user', 'item', 'extra'],
                         usecols=['user', 'item'], dtype=str, encoding='utf-8',
                         engine='python', quoting=csv.QUOTE_NONE,
                         skip_blank_lines=False, keep_default_na=False)
    except EmptyDataError:
        raise EmptyDatasetError(f"No interactions in {path}")
    except ParserError as e:
        raise DatasetParseError(str(e))

    df = df.fillna('')
    df['user'] = df['user'].str.strip()
    df['item'] = df['item'].str.strip()
    blank = (df['user'] == '') & (df['item'] == '')
    malformed = ~blank & ((df['user'] == '') | (df['item'] == ''))
    if malformed.any():
        line_number = int(np.flatnonzero(malformed.to_numpy())[0]) + 1
        raise DatasetParseError("expected user<TAB>item", line_number=line_number)
    df = df[~blank]
    if df.empty:
        raise EmptyDatasetError(f"No interactions in {path}")

    user_codes, user_ids = _dense_ids(df['user'])
    item_codes, item_ids = _dense_ids(df['item'])
    graph = InteractionGraph(len(user_ids), len(item_ids), user_codes, item_codes,
                             user_ids, item_ids)
    logger.info(f"Loaded {path}: {graph.num_users} users, {graph.num_items} items, "
                f"{graph.num_edges} edges ({len(df) - graph.num_edges} duplicates collapsed)")
    return graph


def _dense_ids(column: pd.Series) -> Tuple[np.ndarray, np.ndarray]:
    """Factorize raw ids; numeric ids keep their numeric order."""
    if column.str.fullmatch(r'\d+').all():
        codes, uniques = pd.factorize(column.astype(np.int64), sort=True)
    else:
        codes, uniques = pd.factorize(column, sort=True)
    return codes.astype(np.int64), np.asarray(uniques, dtype=object)


def k_hop_neighborhood(graph: InteractionGraph, v: int, k: int) -> NodeSet:
    """Breadth-first search from `v` out to `k` hops.

    Args:
        graph: Interaction graph
        v: Centric node id
        k: Hop count (>= 1)

    Returns:
        NodeSet of every node at distance <= k, `v` included
    """
    graph.check_node(v)
    if k < 1:
        raise ConfigError(f"hop count must be >= 1, got {k}", key='hops')
    seen = {int(v)}
    frontier = deque([(int(v), 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == k:
            continue
        for neighbor in graph.neighbors(node).tolist():
            if neighbor not in seen:
                seen.add(neighbor)
                frontier.append((neighbor, depth + 1))
    return NodeSet(members=frozenset(seen), origin=(int(v), int(k)))


def inject_noise(graph: InteractionGraph, ratio: float, seed: int,
                 avoid: Optional[np.ndarray] = None) -> InteractionGraph:
    """Add ceil(ratio * |E|) uniformly random non-existing (u, i) edges.

    The added edges are flagged in `synthetic` (see `synthetic_edges`).
    Pairs listed in `avoid` ((n, 2) user, item) are never added, so held-out
    edges stay out of a noisy training graph.

    Raises:
        ConfigError: ratio outside [0, 1]
        CapacityError: fewer free (u, i) slots than requested edges
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"noise ratio must be in [0, 1], got {ratio}", key='noise_ratios')
    count = math.ceil(round(ratio * graph.num_edges, 9))
    if count == 0:
        return graph
    existing = graph.users * graph.num_items + graph.items
    if avoid is not None and len(avoid):
        avoid = np.asarray(avoid, dtype=np.int64).reshape(-1, 2)
        existing = np.union1d(existing, avoid[:, 0] * graph.num_items + avoid[:, 1])
    capacity = graph.num_users * graph.num_items - existing.size
    if count > capacity:
        raise CapacityError(f"cannot add {count} edges: only {capacity} free slots")

    rng = np.random.default_rng(seed)
    if 2 * count > capacity:
        # dense regime: draw directly from the complement
        free = np.setdiff1d(np.arange(graph.num_users * graph.num_items), existing)
        added = rng.choice(free, size=count, replace=False)
    else:
        added = np.empty(0, dtype=np.int64)
        while added.size < count:
            draws = rng.integers(0, graph.num_users * graph.num_items, size=2 * (count - added.size))
            draws = draws[~np.isin(draws, existing) & ~np.isin(draws, added)]
            _, first = np.unique(draws, return_index=True)
            added = np.concatenate([added, draws[np.sort(first)]])[:count]
    logger.debug(f"Injected {count} noise edges (ratio {ratio})")
    return graph.with_edges(added // graph.num_items, added % graph.num_items, synthetic=True)


def sparsity_groups(train: InteractionGraph, bounds: Sequence[int]) -> Dict[str, np.ndarray]:
    """Partition users by training degree.

    Args:
        train: Training graph
        bounds: Strictly ascending cut points, e.g. (0, 5, 10, 15, 20)

    Returns:
        Ordered mapping of group label ("[5, 10)", ..., "[20, inf)") to user ids.
        Users below the first bound are left out.
    """
    bounds = list(bounds)
    if not bounds:
        raise ConfigError("sparsity bounds must be non-empty", key='sparsity_bounds')
    if any(later <= earlier for earlier, later in zip(bounds, bounds[1:])):
        raise ConfigError(f"sparsity bounds must be strictly ascending: {bounds}",
                          key='sparsity_bounds')
    degrees = pd.Series(np.diff(train.user_items.indptr), name='degree')
    edges = bounds + [np.inf]
    labels = [f"[{lo}, {hi})" for lo, hi in zip(bounds[:-1], bounds[1:])] + [f"[{bounds[-1]}, inf)"]
    binned = pd.cut(degrees, bins=edges, right=False, labels=labels)
    groups = {label: np.flatnonzero((binned == label).to_numpy()) for label in labels}
    skipped = int(binned.isna().sum())
    if skipped:
        logger.debug(f"{skipped} users below the first sparsity bound {bounds[0]}")
    return groups


def subsample_users(graph: InteractionGraph, fraction: float, seed: int) -> InteractionGraph:
    """Degree-preserving user subsample.

    Each kept user keeps all of its interactions; items left without
    interactions are dropped and ids are re-densified (remap tables follow).
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"subsample fraction must be in (0, 1], got {fraction}",
                          key='subsample')
    rng = np.random.default_rng(seed)
    count = max(1, int(round(fraction * graph.num_users)))
    kept_users = np.sort(rng.choice(graph.num_users, size=count, replace=False))
    keep = np.isin(graph.users, kept_users)
    users, items = graph.users[keep], graph.items[keep]
    kept_items = np.unique(items)
    return InteractionGraph(kept_users.size, kept_items.size,
                            np.searchsorted(kept_users, users),
                            np.searchsorted(kept_items, items),
                            graph.user_ids[kept_users], graph.item_ids[kept_items])


def dataset_statistics(graph: InteractionGraph) -> Dict[str, float]:
    """Users, items, interactions and density of a graph."""
    cells = graph.num_users * graph.num_items
    return {
        'users': graph.num_users,
        'items': graph.num_items,
        'interactions': graph.num_edges,
        'density': graph.num_edges / cells if cells else 0.0,
    }
