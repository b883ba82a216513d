import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .tensor import Tensor
from ..exceptions import DimensionError, NonFiniteError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for bias-corrected Adam.

    Attributes:
        lr: Learning rate
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator offset
        step: Number of updates applied so far
        m: First-moment buffer per parameter name
        v: Second-moment buffer per parameter name
    """
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, Tensor],
              grads: Dict[str, np.ndarray]) -> Dict[str, Tensor]:
    """Apply one Adam update in place.

    Every gradient is validated before any parameter moves, so a NaN anywhere
    leaves all parameters and moments untouched.

    Args:
        state: Optimizer state (mutated: moments and step counter)
        params: Parameters by name
        grads: Gradients by name, same shapes as `params`

    Returns:
        The updated parameters (same objects as `params`)
    """
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise DimensionError(f"gradient for {name} has shape {grad.shape}, "
                                 f"parameter has {param.shape}")
        if not np.all(np.isfinite(grad)):
            bad = int(np.count_nonzero(~np.isfinite(grad)))
            raise NonFiniteError(f"{bad} non-finite gradient entries for parameter {name}",
                                 parameter=name)

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        m = state.m.setdefault(name, np.zeros_like(param.values))
        v = state.v.setdefault(name, np.zeros_like(param.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        param.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
