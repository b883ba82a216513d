"""
Model parameters, the masking structure of a training window, and the
forward pass / joint loss that ties the encoder, decoder and losses together.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .decoder import (AttentionGraph, AttentionParams, attention_layer, final_embeddings,
                      full_attention_graph, init_attention_params)
from .encoder import NormalizedAdjacency, encode, normalized_weights, propagate
from .losses import (LossBreakdown, compose, rec_loss, recon_loss, squared_norm,
                     uniformity_loss)
from .mask import MaskPlan, infomax_loss, mask_edges, relatedness_scores
from ..constants import Readout, Variant
from ..data.graph import InteractionGraph
from ..tensor import AdamState, Tensor

logger = logging.getLogger(__name__)


@dataclass
class ModelState:
    """Trainable parameters plus optimizer state.

    Attributes:
        ego: (|U|+|I|, d) ego embedding table
        attention: Decoder projections
        adam: Optimizer state
        step: Optimizer steps taken
        epoch: Completed epochs
    """
    ego: Tensor
    attention: AttentionParams
    adam: AdamState = field(default_factory=AdamState)
    step: int = 0
    epoch: int = 0

    @property
    def num_nodes(self) -> int:
        return self.ego.shape[0]

    @property
    def dim(self) -> int:
        return self.ego.shape[1]

    def parameters(self) -> Dict[str, Tensor]:
        return {'ego': self.ego, 'w_q': self.attention.w_q,
                'w_k': self.attention.w_k, 'w_v': self.attention.w_v}

    def snapshot(self) -> 'ModelState':
        """Copy of the parameters for read-only use (evaluation, best-epoch tracking)."""
        attention = AttentionParams(self.attention.w_q.detach(), self.attention.w_k.detach(),
                                    self.attention.w_v.detach(), self.attention.heads)
        adam = AdamState(lr=self.adam.lr, beta1=self.adam.beta1, beta2=self.adam.beta2,
                         eps=self.adam.eps, step=self.adam.step,
                         m={k: v.copy() for k, v in self.adam.m.items()},
                         v={k: v.copy() for k, v in self.adam.v.items()})
        return ModelState(self.ego.detach(), attention, adam, self.step, self.epoch)


def init_model(num_users: int, num_items: int, dim: int, heads: int,
               rng: np.random.Generator, lr: float = 1e-3,
               dtype: Optional[np.dtype] = None) -> ModelState:
    """Xavier-uniform ego embeddings and uniformly initialized attention projections."""
    num_nodes = num_users + num_items
    bound = math.sqrt(6.0 / (num_nodes + dim))
    ego = Tensor(rng.uniform(-bound, bound, size=(num_nodes, dim)), requires_grad=True,
                 name='ego', dtype=dtype)
    attention = init_attention_params(dim, heads, rng, dtype=dtype)
    for param in attention.tensors():
        param.requires_grad = True
    return ModelState(ego, attention, AdamState(lr=lr))


@dataclass
class MaskStructure:
    """Everything derived from one masking decision, reused until the next re-mask."""
    plan: MaskPlan
    adjacency: NormalizedAdjacency
    attention_graph: AttentionGraph

    @property
    def centric(self) -> np.ndarray:
        return self.plan.centric


def unmasked_structure(graph: InteractionGraph) -> MaskStructure:
    """Structure with nothing masked and attention over the graph's own edges."""
    plan = mask_edges(graph, [], 1)
    return MaskStructure(plan, normalized_weights(graph), full_attention_graph(graph))


@dataclass
class ForwardTrace:
    layers: List[Tensor]
    decoder_out: Tensor
    h_hat: Tensor


def forward(state: ModelState, structure: MaskStructure, num_layers: int,
            variant: Variant = Variant.FULL) -> ForwardTrace:
    """Encode over the surviving graph, decode, and sum into final embeddings.

    The -GSA variant replaces the attention decoder with one more propagation step.
    """
    layers = encode(state.ego, structure.adjacency, num_layers)
    if variant is Variant.NO_GSA:
        decoder_out = propagate(layers[-1], structure.adjacency)
    else:
        decoder_out = attention_layer(layers[-1], structure.attention_graph, state.attention)
    return ForwardTrace(layers, decoder_out, final_embeddings(layers, decoder_out))


@dataclass
class LossSettings:
    """Subset of the training configuration the joint loss depends on."""
    num_layers: int
    hops: int
    lambda1: float
    lambda2: float
    temperature: float = 1.0
    readout: str = Readout.MEAN.value
    variant: Variant = Variant.FULL


def joint_loss(state: ModelState, graph: InteractionGraph, structure: MaskStructure,
               batch_edges: np.ndarray, settings: LossSettings) -> Tuple[Tensor, LossBreakdown]:
    """Recommendation loss plus gated self-supervised terms and weight decay.

    Self-supervised terms are skipped entirely when lambda1 is 0, recon and
    infomax are skipped for the -M variant, infomax for -IM. Infomax is taken
    over the batch nodes and the current centric nodes.

    Args:
        state: Model parameters
        graph: Training graph (defines relatedness neighborhoods)
        structure: Current masking structure
        batch_edges: (n, 2) training (user, item) edges of this step
        settings: Loss weights and variant

    Returns:
        (total loss Tensor, LossBreakdown)
    """
    num_users = graph.num_users
    zero = Tensor(0.0, dtype=state.ego.values.dtype)
    trace = forward(state, structure, settings.num_layers, settings.variant)
    rec = rec_loss(trace.h_hat, batch_edges, num_users)

    recon = uniformity = infomax = zero
    batch_users = np.unique(batch_edges[:, 0])
    batch_items = np.unique(batch_edges[:, 1]) + num_users
    if settings.lambda1 > 0:
        uniformity = uniformity_loss(trace.h_hat, batch_users, batch_items,
                                     np.arange(num_users), np.arange(num_users, graph.num_nodes),
                                     settings.temperature)
        if settings.variant is not Variant.NO_M:
            recon = recon_loss(trace.h_hat, structure.plan.masked_edges, num_users)
        if settings.variant not in (Variant.NO_M, Variant.NO_IM):
            over = np.union1d(np.concatenate([batch_users, batch_items]), structure.centric)
            scores = relatedness_scores(graph, state.ego, settings.hops, nodes=over,
                                        readout=settings.readout)
            infomax = infomax_loss(scores, over)

    decay = squared_norm(list(state.parameters().values())) if settings.lambda2 > 0 else zero
    return compose(rec, recon, uniformity, infomax, decay, settings.lambda1, settings.lambda2)


def inference_embeddings(state: ModelState, graph: InteractionGraph, num_layers: int,
                         variant: Variant = Variant.FULL) -> np.ndarray:
    """Final embeddings with nothing masked and no sampled attention pairs."""
    trace = forward(state, unmasked_structure(graph), num_layers, variant)
    return trace.h_hat.values
