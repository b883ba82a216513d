"""
Finite-difference verification of the joint loss on a fixed toy problem.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .trainer import TrainConfig
from ..constants import Variant
from ..data.graph import InteractionGraph
from ..data.split import DatasetSplit
from ..model.autocf import MaskStructure, ModelState, init_model, joint_loss
from ..model.decoder import sample_attention_graph
from ..model.encoder import normalized_weights
from ..model.mask import gumbel_perturb, mask_edges, relatedness_scores, select_centric
from ..tensor import finite_diff_check, set_default_dtype

logger = logging.getLogger(__name__)

TOY_EDGES: List[Tuple[int, int]] = [
    (0, 0), (0, 1), (0, 3), (1, 1), (1, 2), (2, 2), (2, 3), (2, 4),
    (3, 0), (3, 4), (3, 5), (4, 1), (4, 5),
]
TOY_USERS, TOY_ITEMS = 5, 6
GRAD_CHECK_THRESHOLD = 1e-4


def toy_graph() -> InteractionGraph:
    """Fixed 5-user / 6-item graph with 13 interactions."""
    users, items = zip(*TOY_EDGES)
    return InteractionGraph(TOY_USERS, TOY_ITEMS, users, items)


def toy_split() -> DatasetSplit:
    """Toy graph as training data with one validation and one test edge."""
    return DatasetSplit(toy_graph(), np.array([[1, 4]]), np.array([[0, 5]]), 0, (0.8, 0.1, 0.1))


def toy_config(**overrides) -> TrainConfig:
    values = dict(embedding_dim=8, layers=2, heads=2, centric=2, hops=1, rho=0.5,
                  remask_period=1, lambda1=1.0, lambda2=1e-4, batch_size=8, epochs=1, seed=7)
    values.update(overrides)
    return TrainConfig(**values).validate()


def frozen_structure(state: ModelState, graph: InteractionGraph, config: TrainConfig,
                     rng: np.random.Generator) -> MaskStructure:
    """Draw one masking decision and attention graph and keep them fixed."""
    scores = relatedness_scores(graph, state.ego, config.hops, readout=config.readout)
    centric = select_centric(gumbel_perturb(scores, rng), config.centric, nodes=scores.nodes)
    plan = mask_edges(graph, centric, config.hops)
    return MaskStructure(plan, normalized_weights(plan.surviving_graph),
                         sample_attention_graph(plan, config.rho, rng))


@dataclass
class GradCheckReport:
    max_relative_error: float
    coordinates: int
    threshold: float
    masked_edges: int

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.threshold


def check_joint_loss_gradients(eps: float = 1e-5, samples: int = 200, seed: int = 7,
                               threshold: float = GRAD_CHECK_THRESHOLD,
                               variant: str = Variant.FULL.value) -> GradCheckReport:
    """Compare analytic and numeric gradients of the joint loss on the toy graph.

    Sampling (centric nodes, attention pairs) is drawn once and held fixed;
    the batch is every training edge.
    """
    set_default_dtype('float64')
    config = toy_config(seed=seed, variant=variant)
    graph = toy_graph()
    rng = np.random.default_rng(seed)
    state = init_model(graph.num_users, graph.num_items, config.embedding_dim, config.heads, rng)
    structure = frozen_structure(state, graph, config, rng)
    batch = np.stack([graph.users, graph.items], axis=1)
    settings = config.loss_settings()
    params = list(state.parameters().values())

    def loss_fn():
        return joint_loss(state, graph, structure, batch, settings)[0]

    error = finite_diff_check(loss_fn, params, eps=eps, samples=samples, seed=seed)
    report = GradCheckReport(error, min(samples, sum(p.size for p in params)), threshold,
                             structure.plan.num_masked)
    logger.info(f"Gradient check: max relative error {error:.3e} over {report.coordinates} "
                f"coordinates ({'pass' if report.passed else 'FAIL'})")
    return report
