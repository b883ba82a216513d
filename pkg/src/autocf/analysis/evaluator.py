import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from tabulate import tabulate

from ..constants import DEFAULT_CUTOFFS, REPORT_SCHEMA_VERSION, SPARSITY_BOUNDS, Variant
from ..data.graph import InteractionGraph, sparsity_groups
from ..data.split import DatasetSplit
from ..exceptions import ConfigError
from ..model.autocf import ModelState, inference_embeddings

if TYPE_CHECKING:
    from ..training.trainer import TrainConfig

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['scope', 'group', 'noise_ratio', 'cutoff', 'recall', 'ndcg', 'users']
USER_CHUNK = 256

ScoreFn = Callable[[np.ndarray], np.ndarray]


def config_fingerprint(config: Dict) -> str:
    """Stable short hash of a resolved configuration."""
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]


@dataclass
class MetricsReport:
    """Aggregated Recall@N / NDCG@N records.

    Each row of `records` is one (scope, group, noise_ratio, cutoff)
    aggregate: scope is 'overall', 'sparsity', 'noise', 'ablation' or
    'popularity'; `users` is the number of users averaged over.
    """
    records: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=REPORT_COLUMNS))
    users_evaluated: int = 0
    fingerprint: str = ''
    schema_version: int = REPORT_SCHEMA_VERSION

    def metric(self, cutoff: int, scope: str = 'overall', group: str = 'all',
               noise_ratio: Optional[float] = None) -> Tuple[float, float]:
        """(recall, ndcg) of one record."""
        rows = self.records[(self.records['scope'] == scope) & (self.records['group'] == group)
                            & (self.records['cutoff'] == cutoff)]
        if noise_ratio is not None:
            rows = rows[np.isclose(rows['noise_ratio'].astype(float), noise_ratio)]
        if rows.empty:
            raise KeyError(f"no record for scope={scope} group={group} cutoff={cutoff}")
        row = rows.iloc[0]
        return float(row['recall']), float(row['ndcg'])

    def recall(self, cutoff: int, **kwargs) -> float:
        return self.metric(cutoff, **kwargs)[0]

    def ndcg(self, cutoff: int, **kwargs) -> float:
        return self.metric(cutoff, **kwargs)[1]

    def extend(self, other: 'MetricsReport') -> 'MetricsReport':
        """Report holding both sets of records."""
        records = pd.concat([self.records, other.records], ignore_index=True)
        return MetricsReport(records, max(self.users_evaluated, other.users_evaluated),
                             self.fingerprint or other.fingerprint, self.schema_version)

    def to_jsonl(self, path: str) -> None:
        """One JSON object per record, each carrying the schema version and fingerprint."""
        with open(path, 'w') as f:
            for row in self.records.to_dict(orient='records'):
                row = {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in row.items()}
                row.update(schema_version=self.schema_version, fingerprint=self.fingerprint)
                f.write(json.dumps(row, default=float) + '\n')

    def to_csv(self, path: str) -> None:
        frame = self.records.copy()
        frame['schema_version'] = self.schema_version
        frame['fingerprint'] = self.fingerprint
        frame.to_csv(path, index=False, float_format='%.10g')

    def write(self, directory: str, name: str = 'metrics') -> Dict[str, str]:
        os.makedirs(directory, exist_ok=True)
        paths = {'jsonl': os.path.join(directory, f"{name}.jsonl"),
                 'csv': os.path.join(directory, f"{name}.csv")}
        self.to_jsonl(paths['jsonl'])
        self.to_csv(paths['csv'])
        return paths

    def table(self) -> str:
        return tabulate(self.records, headers='keys', tablefmt='simple', showindex=False,
                        floatfmt='.4f')


def all_rank(h_hat: np.ndarray, user: int, train_items: Sequence[int], num_users: int) -> np.ndarray:
    """Every non-training item ordered by descending score, ties by smaller item id."""
    items = h_hat[num_users:]
    scores = items @ h_hat[user]
    candidates = np.setdiff1d(np.arange(items.shape[0]), np.asarray(train_items, dtype=np.int64))
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order]


@lru_cache(maxsize=None)
def rank_discounts(cutoff: int) -> Tuple[float, ...]:
    """1 / log2(rank + 1) for ranks 1..cutoff."""
    return tuple(1.0 / math.log2(rank + 1) for rank in range(1, cutoff + 1))


def recall_ndcg(ranking: Sequence[int], test_items: Sequence[int],
                cutoff: int) -> Optional[Tuple[float, float]]:
    """Recall@N and NDCG@N with binary gains.

    DCG and ideal DCG are exactly rounded sums (`math.fsum`).

    Returns:
        (recall, ndcg), or None when the test set is empty
    """
    if cutoff < 1:
        raise ConfigError(f"cutoff must be >= 1, got {cutoff}", key='cutoffs')
    test_items = np.unique(np.asarray(test_items, dtype=np.int64))
    if test_items.size == 0:
        return None
    top = np.asarray(ranking, dtype=np.int64)[:cutoff]
    hits = np.flatnonzero(np.isin(top, test_items))
    discounts = rank_discounts(int(cutoff))
    dcg = math.fsum(discounts[j] for j in hits)
    idcg = math.fsum(discounts[:min(test_items.size, cutoff)])
    return hits.size / test_items.size, dcg / idcg


def embedding_scorer(h_hat: np.ndarray, num_users: int) -> ScoreFn:
    items = h_hat[num_users:]
    return lambda users: h_hat[users] @ items.T


class PopularityRanker:
    """User-agnostic ranking by training interaction count."""

    def __init__(self, train: InteractionGraph) -> None:
        self.train = train
        self.counts = np.diff(train.item_users.indptr).astype(np.float64)
        self.order = np.lexsort((np.arange(train.num_items), -self.counts))

    def rank(self, user: int) -> np.ndarray:
        """Global order minus the user's training items."""
        start, end = self.train.user_items.indptr[user:user + 2]
        seen = self.train.user_items.indices[start:end]
        return self.order[~np.isin(self.order, seen)]

    def scores(self, users: np.ndarray) -> np.ndarray:
        return np.tile(self.counts, (len(users), 1))


def popularity_baseline(train: InteractionGraph) -> PopularityRanker:
    return PopularityRanker(train)


def _score_chunk(score_fn: ScoreFn, users: np.ndarray, train: sp.csr_matrix,
                 held_out: sp.csr_matrix, cutoffs: Sequence[int]) -> List[Dict]:
    scores = np.asarray(score_fn(users), dtype=np.float64)
    seen = train[users]
    rows, cols = seen.nonzero()
    scores[rows, cols] = -np.inf
    depth = max(cutoffs)
    # stable sort on negated scores keeps smaller item ids first among ties
    ranked = np.argsort(-scores, axis=1, kind='stable')[:, :depth]
    records = []
    for row, user in enumerate(users):
        start, end = held_out.indptr[user:user + 2]
        test_items = held_out.indices[start:end]
        top = ranked[row]
        top = top[np.isfinite(scores[row, top])]
        for cutoff in cutoffs:
            recall, ndcg = recall_ndcg(top, test_items, cutoff)
            records.append({'user': int(user), 'cutoff': int(cutoff), 'recall': recall, 'ndcg': ndcg})
    return records


def per_user_metrics(score_fn: ScoreFn, train: InteractionGraph, held_out: sp.csr_matrix,
                     cutoffs: Sequence[int] = DEFAULT_CUTOFFS, threads: int = 1) -> pd.DataFrame:
    """Recall/NDCG per (user, cutoff) for every user with at least one held-out item.

    Users are scored in fixed-size chunks; with threads > 1 the chunks run on a
    thread pool and results are reassembled in chunk order.
    """
    cutoffs = sorted(int(c) for c in cutoffs)
    if not cutoffs or cutoffs[0] < 1:
        raise ConfigError(f"cutoffs must be positive, got {cutoffs}", key='cutoffs')
    users = np.flatnonzero(np.diff(held_out.indptr) > 0)
    chunks = [users[i:i + USER_CHUNK] for i in range(0, users.size, USER_CHUNK)]
    train_matrix = train.user_items.tocsr()

    def work(chunk: np.ndarray) -> List[Dict]:
        return _score_chunk(score_fn, chunk, train_matrix, held_out, cutoffs)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(chunk) for chunk in chunks]
    records = [record for chunk in results for record in chunk]
    return pd.DataFrame(records, columns=['user', 'cutoff', 'recall', 'ndcg'])


def aggregate(per_user: pd.DataFrame, scope: str, group: str = 'all',
              noise_ratio: Optional[float] = None) -> pd.DataFrame:
    """Mean over users per cutoff, in report-record layout."""
    if per_user.empty:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    summary = per_user.groupby('cutoff').agg(recall=('recall', 'mean'), ndcg=('ndcg', 'mean'),
                                             users=('user', 'nunique')).reset_index()
    summary['scope'] = scope
    summary['group'] = group
    summary['noise_ratio'] = np.nan if noise_ratio is None else float(noise_ratio)
    return summary[REPORT_COLUMNS]


def _model_embeddings(model: ModelState, split: DatasetSplit, config: 'TrainConfig') -> np.ndarray:
    return inference_embeddings(model, split.train, config.layers, Variant.parse(config.variant))


def evaluate_model(model: ModelState, split: DatasetSplit, config: 'TrainConfig',
                   which: str = 'test', threads: int = 1, scope: str = 'overall',
                   group: str = 'all', noise_ratio: Optional[float] = None) -> MetricsReport:
    """All-rank evaluation of a trained model on the test (or validation) edges."""
    h_hat = _model_embeddings(model, split, config)
    per_user = per_user_metrics(embedding_scorer(h_hat, split.num_users), split.train,
                                split.held_out(which), config.cutoffs, threads)
    report = MetricsReport(aggregate(per_user, scope, group, noise_ratio),
                           int(per_user['user'].nunique()) if not per_user.empty else 0,
                           config_fingerprint(config.to_dict()))
    logger.info(f"Evaluated {report.users_evaluated} users on {which} edges")
    return report


def evaluate_popularity(split: DatasetSplit, cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
                        which: str = 'test', threads: int = 1) -> MetricsReport:
    ranker = popularity_baseline(split.train)
    per_user = per_user_metrics(ranker.scores, split.train, split.held_out(which), cutoffs, threads)
    return MetricsReport(aggregate(per_user, 'popularity'),
                         int(per_user['user'].nunique()) if not per_user.empty else 0)


def sparsity_report(model: ModelState, split: DatasetSplit, config: 'TrainConfig',
                    bounds: Sequence[int] = SPARSITY_BOUNDS, threads: int = 1) -> MetricsReport:
    """Overall metrics plus one block per user-degree group."""
    h_hat = _model_embeddings(model, split, config)
    per_user = per_user_metrics(embedding_scorer(h_hat, split.num_users), split.train,
                                split.held_out('test'), config.cutoffs, threads)
    frames = [aggregate(per_user, 'overall')]
    for label, users in sparsity_groups(split.train, bounds).items():
        frames.append(aggregate(per_user[per_user['user'].isin(users)], 'sparsity', label))
    records = pd.concat([f for f in frames if not f.empty], ignore_index=True)
    return MetricsReport(records, int(per_user['user'].nunique()) if not per_user.empty else 0,
                         config_fingerprint(config.to_dict()))


def export_embeddings(model: ModelState, split: DatasetSplit, config: 'TrainConfig', path: str) -> int:
    """Write final embeddings as TSV rows: kind, original id, node id, then d values.

    Returns:
        Number of rows written
    """
    h_hat = _model_embeddings(model, split, config)
    num_users = split.num_users
    frame = pd.DataFrame(h_hat, columns=[f"e{j}" for j in range(h_hat.shape[1])])
    frame.insert(0, 'node', np.arange(h_hat.shape[0]))
    frame.insert(0, 'id', np.concatenate([split.train.user_ids, split.train.item_ids]))
    frame.insert(0, 'kind', ['user'] * num_users + ['item'] * split.num_items)
    frame.to_csv(path, sep='\t', index=False, float_format='%.10g')
    logger.info(f"Exported {len(frame)} embeddings to {path}")
    return len(frame)
