import logging
from typing import Callable, Sequence, Tuple

import numpy as np

from .tensor import Tape, Tensor
from ..exceptions import ConfigError, ReproducibilityError

logger = logging.getLogger(__name__)

ERROR_FLOOR = 1e-8


def _loss_value(loss_fn: Callable[[], Tensor]) -> float:
    return float(loss_fn().values)


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-6, samples: int = 200, seed: int = 0) -> float:
    """Compare analytic gradients with central finite differences.

    Args:
        loss_fn: Zero-argument closure computing a scalar loss from `params`;
            it must be deterministic (any sampling frozen inside the closure)
        params: Tensors whose coordinates are checked
        eps: Finite-difference step, within [1e-7, 1e-3]
        samples: Number of coordinates drawn without replacement (all of
            them when the parameters hold fewer)
        seed: Seed for the coordinate draw

    Returns:
        Max relative error |a - n| / max(|a|, |n|, 1e-8) over checked coordinates
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"finite-difference step must lie in [1e-7, 1e-3], got {eps}", key='eps')

    first, second = _loss_value(loss_fn), _loss_value(loss_fn)
    if first != second:
        raise ReproducibilityError(f"loss closure is not deterministic: {first!r} != {second!r}")

    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss, params)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.size for p in params], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(samples, total), replace=False))

    worst = 0.0
    worst_at: Tuple[int, int] = (-1, -1)
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side='right') - 1)
        index = int(flat - offsets[which])
        values = params[which].values.reshape(-1)
        original = values[index]
        values[index] = original + eps
        plus = _loss_value(loss_fn)
        values[index] = original - eps
        minus = _loss_value(loss_fn)
        values[index] = original

        numeric = (plus - minus) / (2.0 * eps)
        exact = float(analytic[which].reshape(-1)[index])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), ERROR_FLOOR)
        if error > worst:
            worst, worst_at = error, (which, index)

    label = params[worst_at[0]].name if worst_at[0] >= 0 else None
    logger.debug(f"Gradient check over {len(picks)} coordinates: max relative error "
                 f"{worst:.3e} (parameter {label}, index {worst_at[1]})")
    return worst
