"""
Learned subgraph masking.

Nodes are scored by how semantically coherent their k-hop subgraph is
(sigmoid of the mean cosine between a node and its subgraph members),
the scores are perturbed with Gumbel noise, and the top-S nodes become
centric nodes whose subgraph edges are masked out for reconstruction.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..constants import GUMBEL_EPS, NORM_FLOOR, Readout
from ..data.graph import InteractionGraph
from ..exceptions import CapacityError, ConfigError, NodeIndexError
from ..tensor import Tensor, ops

logger = logging.getLogger(__name__)


@dataclass
class RelatednessScores:
    """Per-node relatedness scores.

    Attributes:
        s: Scores in (0, 1), one per entry of `nodes` (differentiable w.r.t. ego)
        readout: Pre-sigmoid readout value per node (mean cosine by default)
        k: Hop depth used
        nodes: Sorted node ids that were scored
        eligible: False for nodes without any other subgraph member
    """
    s: Tensor
    readout: np.ndarray
    k: int
    nodes: np.ndarray
    eligible: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.s.values


@dataclass
class MaskPlan:
    """One masking decision over a graph.

    Attributes:
        graph: Graph the plan was built from
        centric: Centric node ids in selection order
        masked: Boolean flag per edge of `graph`
        surviving_graph: `graph` minus the masked edges (same node set)
        subgraph_nodes: Sorted union of the centric nodes' k-hop neighborhoods
    """
    graph: InteractionGraph
    centric: np.ndarray
    masked: np.ndarray
    surviving_graph: InteractionGraph
    subgraph_nodes: np.ndarray

    @property
    def masked_edges(self) -> np.ndarray:
        """(n, 2) array of masked (user, item) edges."""
        return np.stack([self.graph.users[self.masked], self.graph.items[self.masked]], axis=1)

    @property
    def num_masked(self) -> int:
        return int(np.count_nonzero(self.masked))


def _exclusive_reach(graph: InteractionGraph, k: int) -> sp.csr_matrix:
    key = ('reach_excl', k)
    if key not in graph._cache:
        reach = graph.neighborhood_matrix(k).tolil()
        reach.setdiag(0)
        reach = reach.tocsr()
        reach.eliminate_zeros()
        graph._cache[key] = reach
    return graph._cache[key]


def relatedness_scores(graph: InteractionGraph, ego: Tensor, k: int,
                       nodes: Optional[Sequence[int]] = None,
                       readout: str = Readout.MEAN.value) -> RelatednessScores:
    """Score nodes by subgraph coherence.

    s_v = sigmoid(mean over v' in N_v^k minus v of cos(h_v, h_v')), with the
    norm floored at 1e-12. With the 'sum' readout the cosines are summed
    instead of averaged. Nodes whose neighborhood holds nothing but
    themselves score sigmoid(0) = 0.5 and are marked ineligible.

    Args:
        graph: Interaction graph defining the k-hop neighborhoods
        ego: (|U|+|I|, d) embedding table
        k: Hop depth (>= 1)
        nodes: Node ids to score (default: all nodes)
        readout: 'mean' or 'sum'

    Returns:
        RelatednessScores over the sorted, de-duplicated `nodes`
    """
    if k < 1:
        raise ConfigError(f"hop count must be >= 1, got {k}", key='hops')
    readout = Readout(readout)
    if ego.shape[0] != graph.num_nodes:
        raise NodeIndexError(f"embedding table has {ego.shape[0]} rows for {graph.num_nodes} nodes")
    nodes = (np.arange(graph.num_nodes) if nodes is None
             else np.unique(np.asarray(nodes, dtype=np.int64)))
    if nodes.size and (nodes[0] < 0 or nodes[-1] >= graph.num_nodes):
        raise NodeIndexError(f"node ids out of range [0, {graph.num_nodes})")

    rows = _exclusive_reach(graph, k)[nodes]
    counts = np.diff(rows.indptr)
    unit = ops.normalize_rows(ego, NORM_FLOOR)
    pooled = ops.sparse_matmul(rows, unit)
    if readout is Readout.MEAN:
        pooled = ops.scale_rows(pooled, Tensor(1.0 / np.maximum(counts, 1)))
    cosine = ops.dot_rows(ops.gather(unit, nodes), pooled)
    return RelatednessScores(s=ops.sigmoid(cosine), readout=cosine.values.copy(), k=k,
                             nodes=nodes, eligible=counts > 0)


def gumbel_perturb(scores: RelatednessScores, rng: np.random.Generator) -> np.ndarray:
    """log s_v - log(-log mu) with mu ~ Uniform(1e-10, 1 - 1e-10) per node.

    Ineligible nodes get -inf so they are never selected.
    """
    s = np.clip(scores.values, GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    mu = np.asarray(rng.uniform(GUMBEL_EPS, 1.0 - GUMBEL_EPS, size=s.shape[0]), dtype=np.float64)
    mu = np.clip(mu, GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    perturbed = np.log(s) - np.log(-np.log(mu))
    return np.where(scores.eligible, perturbed, -np.inf)


def select_centric(perturbed: Sequence[float], count: int,
                   nodes: Optional[Sequence[int]] = None) -> np.ndarray:
    """The `count` highest-scoring nodes, ties broken by smaller node id.

    Entries equal to -inf are never selected, so fewer than `count` nodes
    come back when too few are eligible.

    Args:
        perturbed: Score per node
        count: Number of centric nodes S (> 0)
        nodes: Node id per score entry (default: position)

    Returns:
        Selected node ids in rank order
    """
    perturbed = np.asarray(perturbed, dtype=np.float64)
    if count <= 0:
        raise ConfigError(f"centric node count must be positive, got {count}", key='centric')
    if count > perturbed.size:
        raise ConfigError(f"cannot select {count} centric nodes out of {perturbed.size}", key='centric')
    ids = np.arange(perturbed.size) if nodes is None else np.asarray(nodes, dtype=np.int64)
    order = np.lexsort((ids, -perturbed))[:count]
    order = order[np.isfinite(perturbed[order])]
    return ids[order]


def mask_edges(graph: InteractionGraph, centric: Sequence[int], k: int) -> MaskPlan:
    """Mask every edge with both endpoints inside some centric node's k-hop neighborhood."""
    centric = np.asarray(centric, dtype=np.int64).reshape(-1)
    for node in centric:
        graph.check_node(int(node))
    if np.unique(centric).size != centric.size:
        raise ConfigError("centric nodes must be distinct", key='centric')

    masked = np.zeros(graph.num_edges, dtype=bool)
    if centric.size == 0:
        return MaskPlan(graph, centric, masked, graph, np.empty(0, dtype=np.int64))

    users, items = graph.edge_nodes
    inside = graph.neighborhood_matrix(k)[centric]
    for row in range(inside.shape[0]):
        members = np.zeros(graph.num_nodes, dtype=bool)
        members[inside.indices[inside.indptr[row]:inside.indptr[row + 1]]] = True
        masked |= members[users] & members[items]
    subgraph_nodes = np.unique(inside.indices).astype(np.int64)
    logger.debug(f"Masked {int(masked.sum())}/{graph.num_edges} edges around "
                 f"{centric.size} centric nodes ({subgraph_nodes.size} subgraph nodes)")
    return MaskPlan(graph, centric, masked, graph.without_edges(masked), subgraph_nodes)


def random_mask(graph: InteractionGraph, count: int, rng: np.random.Generator) -> MaskPlan:
    """Mask `count` uniformly drawn edges; the plan's subgraph is their endpoints."""
    if count < 0:
        raise ConfigError(f"mask size must be non-negative, got {count}", key='centric')
    if count > graph.num_edges:
        raise CapacityError(f"cannot mask {count} of {graph.num_edges} edges")
    masked = np.zeros(graph.num_edges, dtype=bool)
    masked[rng.choice(graph.num_edges, size=count, replace=False)] = True
    users, items = graph.edge_nodes
    subgraph_nodes = np.unique(np.concatenate([users[masked], items[masked]]))
    return MaskPlan(graph, np.empty(0, dtype=np.int64), masked,
                    graph.without_edges(masked), subgraph_nodes)


def infomax_loss(scores: RelatednessScores, over: Sequence[int]) -> Tensor:
    """-sum of s_v over the given nodes (all of them must have been scored)."""
    over = np.unique(np.asarray(over, dtype=np.int64))
    if over.size == 0:
        raise ConfigError("infomax loss needs at least one node", key='centric')
    positions = np.searchsorted(scores.nodes, over)
    if np.any(positions >= scores.nodes.size) or np.any(scores.nodes[np.minimum(positions, scores.nodes.size - 1)] != over):
        raise NodeIndexError("infomax loss requested for nodes that were not scored")
    return ops.scale(ops.total(ops.gather(scores.s, positions)), -1.0)


def write_relatedness_audit(scores: RelatednessScores, centric: Sequence[int], path: str) -> None:
    """Dump per-node relatedness and the centric flag as TSV."""
    frame = pd.DataFrame({
        'node': scores.nodes,
        'score': scores.values,
        'readout': scores.readout,
        'eligible': scores.eligible,
        'centric': np.isin(scores.nodes, np.asarray(centric, dtype=np.int64)),
    })
    frame.to_csv(path, sep='\t', index=False, float_format='%.10g')
    logger.info(f"Wrote relatedness audit for {len(frame)} nodes to {path}")
