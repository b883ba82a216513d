"""
Graph self-attention decoder.

The decoder attends over the surviving edges plus an equal number of
node pairs sampled inside the active set (masked-subgraph nodes topped up
with random nodes), one multi-head attention layer in total.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .mask import MaskPlan
from ..data.graph import InteractionGraph
from ..exceptions import CapacityError, ConfigError, DimensionError
from ..tensor import Tensor, ops

logger = logging.getLogger(__name__)


@dataclass
class AttentionGraph:
    """Directed attention edges src -> dst, sorted by (dst, src).

    Attributes:
        num_nodes: Size of the node universe
        active: Sorted active node ids
        sampled: (m, 2) sampled unordered pairs (lo, hi), node ids
        src: Source node per directed edge
        dst: Destination node per directed edge
        rho: Active-set ratio the graph was sampled with
    """
    num_nodes: int
    active: np.ndarray
    sampled: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rho: float

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    def incoming(self, node: int) -> np.ndarray:
        return self.src[self.dst == node]


@dataclass
class AttentionParams:
    """Query/key/value projections; head h owns rows [h*d/H, (h+1)*d/H) of each."""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    heads: int

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    def tensors(self) -> List[Tensor]:
        return [self.w_q, self.w_k, self.w_v]


def init_attention_params(dim: int, heads: int, rng: np.random.Generator,
                          dtype: np.dtype = None) -> AttentionParams:
    """Uniform init in +-sqrt(6 / (d + d/H)) per projection."""
    if heads < 1 or dim % heads:
        raise ConfigError(f"embedding dim {dim} is not divisible by {heads} heads", key='heads')
    bound = math.sqrt(6.0 / (dim + dim // heads))

    def draw(name: str) -> Tensor:
        return Tensor(rng.uniform(-bound, bound, size=(dim, dim)), requires_grad=True,
                      name=name, dtype=dtype)

    return AttentionParams(draw('w_q'), draw('w_k'), draw('w_v'), heads)


def _directed(num_nodes: int, pairs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Both orientations of each pair, de-duplicated and sorted by (dst, src)."""
    a, b = pairs[:, 0], pairs[:, 1]
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    keys = np.unique(dst * num_nodes + src)
    return keys % num_nodes, keys // num_nodes


def _sample_pairs(active: np.ndarray, target: int, num_nodes: int,
                  rng: np.random.Generator) -> np.ndarray:
    size = active.size
    capacity = size * (size - 1) // 2
    if target > capacity:
        raise CapacityError(f"{size} active nodes hold {capacity} distinct pairs, {target} needed")
    if target == 0:
        return np.empty((0, 2), dtype=np.int64)
    if 2 * target > capacity:
        lo, hi = np.triu_indices(size, k=1)
        pick = np.sort(rng.choice(capacity, size=target, replace=False))
        return np.stack([active[lo[pick]], active[hi[pick]]], axis=1)

    chosen = np.empty(0, dtype=np.int64)
    while chosen.size < target:
        draws = 2 * (target - chosen.size) + 8
        i = active[rng.integers(0, size, size=draws)]
        j = active[rng.integers(0, size, size=draws)]
        keep = i != j
        lo, hi = np.minimum(i, j)[keep], np.maximum(i, j)[keep]
        keys = lo * num_nodes + hi
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        keys = keys[~np.isin(keys, chosen)]
        chosen = np.concatenate([chosen, keys[:target - chosen.size]])
    return np.stack([chosen // num_nodes, chosen % num_nodes], axis=1)


def pair_capacity_nodes(pairs: int) -> int:
    """Smallest node count m with m * (m - 1) / 2 >= pairs."""
    m = max(2, math.ceil((1.0 + math.sqrt(1.0 + 8.0 * pairs)) / 2.0))
    while m > 2 and (m - 1) * (m - 2) // 2 >= pairs:
        m -= 1
    while m * (m - 1) // 2 < pairs:
        m += 1
    return m


def sample_attention_graph(plan: MaskPlan, rho: float, rng: np.random.Generator) -> AttentionGraph:
    """Sample the attention graph for one masking decision.

    The active set is the masked-subgraph node set topped up with uniformly
    drawn nodes to ceil(rho * (|U|+|I|)); it is never shrunk below the
    subgraph. As many distinct non-self pairs as there are surviving edges
    are drawn inside the active set and joined with the surviving edges.
    When the quota is too small to hold that many pairs, the active set is
    topped up to the smallest size that does.
    """
    if not 0.0 < rho <= 1.0:
        raise ConfigError(f"rho must lie in (0, 1], got {rho}", key='rho')
    surviving = plan.surviving_graph
    num_nodes = surviving.num_nodes
    quota = math.ceil(round(rho * num_nodes, 9))
    if quota < 2:
        raise ConfigError(f"rho={rho} activates only {quota} of {num_nodes} nodes", key='rho')
    required = pair_capacity_nodes(surviving.num_edges)
    if required > num_nodes:
        raise CapacityError(f"{surviving.num_edges} pairs do not fit among {num_nodes} nodes")
    if required > max(quota, plan.subgraph_nodes.size):
        logger.info(f"Growing the attention active set from {max(quota, plan.subgraph_nodes.size)} "
                    f"to {required} nodes to hold {surviving.num_edges} sampled pairs")
        quota = required

    active = np.asarray(plan.subgraph_nodes, dtype=np.int64)
    if active.size < quota:
        remainder = np.setdiff1d(np.arange(num_nodes), active)
        extra = rng.choice(remainder, size=quota - active.size, replace=False)
        active = np.sort(np.concatenate([active, extra]))

    sampled = _sample_pairs(active, surviving.num_edges, num_nodes, rng)
    users, items = surviving.edge_nodes
    pairs = np.concatenate([np.stack([users, items], axis=1), sampled])
    src, dst = _directed(num_nodes, pairs)
    logger.debug(f"Attention graph: {active.size} active nodes, {len(sampled)} sampled pairs, "
                 f"{src.size} directed edges")
    return AttentionGraph(num_nodes, active, sampled, src, dst, rho)


def full_attention_graph(graph: InteractionGraph) -> AttentionGraph:
    """Attention over the graph's own edges only (no sampled pairs)."""
    users, items = graph.edge_nodes
    src, dst = _directed(graph.num_nodes, np.stack([users, items], axis=1))
    return AttentionGraph(graph.num_nodes, np.arange(graph.num_nodes),
                          np.empty((0, 2), dtype=np.int64), src, dst, 1.0)


def _head_blocks(dim: int, heads: int) -> np.ndarray:
    """(d, H) indicator with B[j, h] = 1 iff coordinate j belongs to head h."""
    return np.repeat(np.eye(heads), dim // heads, axis=0)


def _attend(h_in: Tensor, ag: AttentionGraph, params: AttentionParams) -> Tuple[Tensor, Tensor]:
    num_nodes, dim = h_in.shape
    if num_nodes != ag.num_nodes or dim != params.dim:
        raise DimensionError(f"embedding table {h_in.shape} does not fit {ag.num_nodes} nodes "
                             f"and dim {params.dim}")
    if dim % params.heads:
        raise DimensionError(f"dim {dim} is not divisible by {params.heads} heads")
    blocks = Tensor(_head_blocks(dim, params.heads), dtype=h_in.values.dtype)

    queries = ops.matmul(h_in, ops.transpose(params.w_q))
    keys = ops.matmul(h_in, ops.transpose(params.w_k))
    values = ops.matmul(h_in, ops.transpose(params.w_v))

    products = ops.mul(ops.gather(queries, ag.dst), ops.gather(keys, ag.src))
    logits = ops.scale(ops.matmul(products, blocks), 1.0 / math.sqrt(dim // params.heads))

    # dst is sorted, so each destination's edges are one contiguous run
    starts = np.flatnonzero(np.r_[True, ag.dst[1:] != ag.dst[:-1]])
    run_max = np.maximum.reduceat(logits.values, starts, axis=0)
    shift = Tensor(np.repeat(run_max, np.diff(np.r_[starts, ag.dst.size]), axis=0))
    weights = ops.exp(ops.sub(logits, shift))
    denominators = ops.segment_sum(weights, ag.dst, num_nodes)
    beta = ops.div(weights, ops.gather(denominators, ag.dst))

    messages = ops.mul(ops.matmul(beta, ops.transpose(blocks)), ops.gather(values, ag.src))
    return ops.segment_sum(messages, ag.dst, num_nodes), beta


def attention_layer(h_in: Tensor, ag: AttentionGraph, params: AttentionParams) -> Tensor:
    """Multi-head attention over incoming attention edges; no incoming edges gives zeros."""
    if ag.num_edges == 0:
        if h_in.shape[0] != ag.num_nodes:
            raise DimensionError(f"embedding table {h_in.shape} does not fit {ag.num_nodes} nodes")
        return Tensor(np.zeros_like(h_in.values))
    out, _ = _attend(h_in, ag, params)
    return out


def attention_weights(h_in: Tensor, ag: AttentionGraph, params: AttentionParams) -> np.ndarray:
    """(num_edges, H) softmax weights, aligned with `ag.src`/`ag.dst`."""
    if ag.num_edges == 0:
        return np.empty((0, params.heads))
    _, beta = _attend(h_in, ag, params)
    return beta.values


def final_embeddings(layers: Sequence[Tensor], decoder_out: Tensor) -> Tensor:
    """Sum of all encoder layers plus the decoder output."""
    total = decoder_out
    for layer in layers:
        if layer.shape != decoder_out.shape:
            raise DimensionError(f"layer shape {layer.shape} differs from {decoder_out.shape}")
        total = ops.add(total, layer)
    return total
