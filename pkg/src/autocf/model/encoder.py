import logging
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.sparse as sp

from ..data.graph import InteractionGraph
from ..exceptions import ConfigError, DimensionError
from ..tensor import Tensor, ops

logger = logging.getLogger(__name__)


@dataclass
class NormalizedAdjacency:
    """Propagation coefficients of a (masked) graph.

    Attributes:
        edge_coef: 1/sqrt(|N'_u| |N'_i|) per surviving edge, in graph edge order
        self_coef: 1/|N'_v| per node (1 for isolated nodes)
        matrix: diag(self_coef) + D^-1/2 A D^-1/2 as an (N, N) CSR matrix
    """
    edge_coef: np.ndarray
    self_coef: np.ndarray
    matrix: sp.csr_matrix

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    def coefficient(self, v: int, w: int) -> float:
        return float(self.matrix[v, w])


def normalized_weights(surviving: InteractionGraph) -> NormalizedAdjacency:
    """Symmetric degree normalization of the surviving graph plus self-coefficients."""
    degrees = surviving.degrees().astype(np.float64)
    connected = degrees > 0
    inv_sqrt = np.zeros_like(degrees)
    inv_sqrt[connected] = np.power(degrees[connected], -0.5)
    self_coef = np.ones_like(degrees)
    self_coef[connected] = 1.0 / degrees[connected]

    d_mat_inv = sp.diags(inv_sqrt)
    norm_adj = d_mat_inv @ surviving.adjacency() @ d_mat_inv
    matrix = (sp.diags(self_coef) + norm_adj).tocsr()
    users, items = surviving.edge_nodes
    return NormalizedAdjacency(edge_coef=inv_sqrt[users] * inv_sqrt[items],
                               self_coef=self_coef, matrix=matrix)


def propagate(h: Tensor, adj: NormalizedAdjacency) -> Tensor:
    """One parameter-free propagation step: self term plus weighted neighbor sum."""
    if h.ndim != 2 or h.shape[0] != adj.num_nodes:
        raise DimensionError(f"embedding table of shape {h.shape} for {adj.num_nodes} nodes")
    return ops.sparse_matmul(adj.matrix, h)


def encode(h0: Tensor, adj: NormalizedAdjacency, num_layers: int) -> List[Tensor]:
    """Run `num_layers` propagation steps; the last layer also adds h0.

    Returns:
        [h0, h1, ..., hL]
    """
    if num_layers < 1:
        raise ConfigError(f"layer count must be >= 1, got {num_layers}", key='layers')
    layers = [h0]
    for layer in range(num_layers):
        h = propagate(layers[-1], adj)
        if layer == num_layers - 1:
            h = ops.add(h, h0)
        layers.append(h)
    return layers
