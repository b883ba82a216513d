import logging
from dataclasses import asdict, dataclass
from typing import Dict, Sequence

import numpy as np

from ..exceptions import ConfigError
from ..tensor import Tensor, ops

logger = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    """Scalar loss terms of one optimizer step.

    `weight_decay` is the unweighted squared Frobenius norm of all parameters;
    total = rec + lambda1 * (uniformity + infomax + recon) + lambda2 * weight_decay.
    """
    rec: float
    recon: float
    uniformity: float
    infomax: float
    weight_decay: float
    total: float
    lambda1: float = 0.0
    lambda2: float = 0.0

    def recompose(self) -> float:
        return (self.rec + self.lambda1 * (self.uniformity + self.infomax + self.recon)
                + self.lambda2 * self.weight_decay)

    def to_record(self) -> Dict[str, float]:
        record = asdict(self)
        record.pop('lambda1')
        record.pop('lambda2')
        return record


def _pair_dots(h_hat: Tensor, edges: np.ndarray, num_users: int) -> Tensor:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return ops.dot_rows(ops.gather(h_hat, edges[:, 0]), ops.gather(h_hat, edges[:, 1] + num_users))


def recon_loss(h_hat: Tensor, masked: np.ndarray, num_users: int) -> Tensor:
    """Mean negative dot product over masked (user, item) edges; 0 when nothing is masked."""
    if len(masked) == 0:
        return Tensor(0.0, dtype=h_hat.values.dtype)
    return ops.scale(ops.mean(_pair_dots(h_hat, masked, num_users)), -1.0)


def rec_loss(h_hat: Tensor, batch_edges: np.ndarray, num_users: int) -> Tensor:
    """Mean negative dot product over a batch of training (user, item) edges."""
    if len(batch_edges) == 0:
        raise ConfigError("recommendation loss needs a non-empty batch", key='batch_size')
    return ops.scale(ops.mean(_pair_dots(h_hat, batch_edges, num_users)), -1.0)


def _anchored_logsumexp(h_hat: Tensor, anchors: np.ndarray, others: np.ndarray,
                        temperature: float) -> Tensor:
    logits = ops.matmul(ops.gather(h_hat, anchors), ops.transpose(ops.gather(h_hat, others)))
    if temperature != 1.0:
        logits = ops.scale(logits, 1.0 / temperature)
    return ops.mean(ops.logsumexp_rows(logits))


def uniformity_loss(h_hat: Tensor, batch_users: Sequence[int], batch_items: Sequence[int],
                    all_users: Sequence[int], all_items: Sequence[int],
                    temperature: float = 1.0) -> Tensor:
    """Batch-anchored log-sum-exp repulsion for user-item, user-user and item-item pairs.

    All node arguments are node ids (items offset by |U|). Each term averages
    over the batch anchors and sums inside the log over every user or item.
    """
    batch_users = np.asarray(batch_users, dtype=np.int64)
    batch_items = np.asarray(batch_items, dtype=np.int64)
    if batch_users.size == 0 or batch_items.size == 0:
        raise ConfigError("uniformity loss needs batch users and items", key='batch_size')
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}", key='temperature')
    all_users = np.asarray(all_users, dtype=np.int64)
    all_items = np.asarray(all_items, dtype=np.int64)
    user_item = _anchored_logsumexp(h_hat, batch_users, all_items, temperature)
    user_user = _anchored_logsumexp(h_hat, batch_users, all_users, temperature)
    item_item = _anchored_logsumexp(h_hat, batch_items, all_items, temperature)
    return ops.add(ops.add(user_item, user_user), item_item)


def squared_norm(params: Sequence[Tensor]) -> Tensor:
    """Sum of squared entries over all parameters."""
    total = None
    for param in params:
        term = ops.total(ops.mul(param, param))
        total = term if total is None else ops.add(total, term)
    return total if total is not None else Tensor(0.0)


def compose(rec: Tensor, recon: Tensor, uniformity: Tensor, infomax: Tensor,
            weight_decay: Tensor, lambda1: float, lambda2: float):
    """Joint loss and its breakdown.

    Returns:
        (total Tensor, LossBreakdown)
    """
    ssl = ops.add(ops.add(uniformity, infomax), recon)
    total = ops.add(ops.add(rec, ops.scale(ssl, lambda1)), ops.scale(weight_decay, lambda2))
    breakdown = LossBreakdown(rec=rec.item(), recon=recon.item(), uniformity=uniformity.item(),
                              infomax=infomax.item(), weight_decay=weight_decay.item(),
                              total=total.item(), lambda1=lambda1, lambda2=lambda2)
    return total, breakdown
