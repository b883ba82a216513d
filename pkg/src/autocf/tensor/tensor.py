import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import config
from ..exceptions import ConfigError, DimensionError

logger = logging.getLogger(__name__)

_DEFAULT_DTYPE = np.dtype(config.PRECISION)
_TAPES: List['Tape'] = []

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(name: str) -> None:
    """Switch between 'float64' (default) and the opt-in 'float32' mode."""
    global _DEFAULT_DTYPE
    if name not in ('float64', 'float32'):
        raise ConfigError(f"precision must be float64 or float32, got {name!r}", key='precision')
    _DEFAULT_DTYPE = np.dtype(name)


def active_tape() -> Optional['Tape']:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """Dense array with an optional gradient buffer.

    Attributes:
        values: Underlying numpy array
        requires_grad: Whether backward passes accumulate into `grad`
        grad: Gradient buffer of the same shape (None until a backward pass)
        name: Optional label used in diagnostics
    """

    __slots__ = ('values', 'requires_grad', 'grad', 'name')

    def __init__(self, values: Union[np.ndarray, Sequence, float],
                 requires_grad: bool = False,
                 name: Optional[str] = None,
                 dtype: Optional[np.dtype] = None) -> None:
        if dtype is None and isinstance(values, np.ndarray) and values.dtype.kind == 'f':
            self.values = values
        else:
            self.values = np.asarray(values, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ''
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def detach(self) -> 'Tensor':
        return Tensor(self.values.copy(), name=self.name)

    # operator sugar over the primitives in ops.py
    def __add__(self, other: 'Tensor') -> 'Tensor':
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other: 'Tensor') -> 'Tensor':
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other: Union['Tensor', float]) -> 'Tensor':
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Union['Tensor', float]) -> 'Tensor':
        from . import ops
        if isinstance(other, Tensor):
            return ops.div(self, other)
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self) -> 'Tensor':
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        from . import ops
        return ops.matmul(self, other)

    @property
    def T(self) -> 'Tensor':
        from . import ops
        return ops.transpose(self)


class Tape:
    """Records primitives in execution order and replays them in reverse.

    Usage:
        with Tape() as tape:
            loss = model_loss(...)
        tape.backward(loss, params)

    A tape belongs to one thread for the duration of a forward/backward pass.
    """

    def __init__(self, debug: Optional[bool] = None) -> None:
        self.records: List[Tuple[Tensor, Tuple[Tensor, ...], BackwardFn]] = []
        self.debug = config.DEBUG_CHECKS if debug is None else debug

    def __enter__(self) -> 'Tape':
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.remove(self)
        return False

    def record(self, output: Tensor, inputs: Tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.records.append((output, inputs, backward))

    def backward(self, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
        """Accumulate d(loss)/d(t) into every recorded tensor that requires grad.

        All gradient buffers touched by this tape, plus `params`, are zeroed
        first, so parameters the loss does not depend on end with zero grads.
        """
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        touched = {id(p): p for p in params}
        for output, inputs, _ in self.records:
            touched[id(output)] = output
            for t in inputs:
                touched[id(t)] = t
        for t in touched.values():
            t.zero_grad()
        loss.grad = np.ones_like(loss.values)

        for output, inputs, backward in reversed(self.records):
            if not output.grad.any():
                continue
            for t, g in zip(inputs, backward(output.grad)):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.shape:
                    raise DimensionError(f"gradient shape {g.shape} does not match {t.shape}")
                t.grad += g
