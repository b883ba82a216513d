"""
Differentiable primitives.

Every primitive computes its forward value with numpy/scipy and, when a tape
is active and an input requires grad, records a backward rule that maps the
output gradient to one gradient per input (None for constant inputs).
No broadcasting: operand shapes must agree exactly.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .tensor import BackwardFn, Tensor, active_tape
from .. import config
from ..exceptions import DimensionError, DomainError, NonFiniteError

ArrayLike = Union[Tensor, np.ndarray, Sequence, float]


def _as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, values: np.ndarray, inputs: Tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    tape = active_tape()
    requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(np.asarray(values), requires_grad=requires_grad)
    if (config.DEBUG_CHECKS or (tape is not None and tape.debug)) and not np.all(np.isfinite(out.values)):
        raise NonFiniteError(f"{op} produced non-finite values")
    if requires_grad:
        tape.record(out, inputs, backward)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _require_ndim(op: str, t: Tensor, ndim: int) -> None:
    if t.ndim != ndim:
        raise DimensionError(f"{op}: expected a {ndim}-d tensor, got shape {t.shape}")


def segment_matrix(index: np.ndarray, num_segments: int) -> sp.csr_matrix:
    """Sparse (num_segments x len(index)) 0/1 matrix summing rows into segments."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= num_segments):
        raise DimensionError(f"segment index out of range [0, {num_segments})")
    return sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                         shape=(num_segments, index.size))


def _segment_sum_values(values: np.ndarray, index: np.ndarray, num_segments: int) -> np.ndarray:
    out = segment_matrix(index, num_segments) @ values
    return np.asarray(out, dtype=values.dtype)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_ndim('matmul', a, 2)
    _require_ndim('matmul', b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return _emit('matmul', a.values @ b.values, (a, b),
                 lambda g: (g @ b.values.T, a.values.T @ g))


def transpose(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    _require_ndim('transpose', a, 2)
    return _emit('transpose', a.values.T.copy(), (a,), lambda g: (g.T,))


def gather(a: ArrayLike, index: np.ndarray) -> Tensor:
    """Rows a[index] (index may repeat)."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise DimensionError(f"gather: index out of range [0, {a.shape[0]})")
    n = a.shape[0]
    return _emit('gather', a.values[index], (a,),
                 lambda g: (_segment_sum_values(g, index, n),))


def segment_sum(a: ArrayLike, index: np.ndarray, num_segments: int) -> Tensor:
    """out[s] = sum of a[j] over j with index[j] == s (scatter-add)."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != a.shape[0]:
        raise DimensionError(f"segment_sum: {index.shape[0]} indices for {a.shape[0]} rows")
    return _emit('segment_sum', _segment_sum_values(a.values, index, num_segments), (a,),
                 lambda g: (g[index],))


def sparse_matmul(matrix: sp.spmatrix, a: ArrayLike) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    a = _as_tensor(a)
    if matrix.shape[1] != a.shape[0]:
        raise DimensionError(f"sparse_matmul: {matrix.shape} @ {a.shape}")
    transposed = matrix.T
    return _emit('sparse_matmul', np.asarray(matrix @ a.values, dtype=a.values.dtype), (a,),
                 lambda g: (np.asarray(transposed @ g, dtype=g.dtype),))


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('add', a, b)
    return _emit('add', a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('sub', a, b)
    return _emit('sub', a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('mul', a, b)
    return _emit('mul', a.values * b.values, (a, b),
                 lambda g: (g * b.values, g * a.values))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('div', a, b)
    if np.any(b.values == 0):
        raise DomainError("div: division by zero")
    out = a.values / b.values
    return _emit('div', out, (a, b), lambda g: (g / b.values, -g * out / b.values))


def scale(a: ArrayLike, c: float) -> Tensor:
    a = _as_tensor(a)
    return _emit('scale', a.values * c, (a,), lambda g: (g * c,))


def scale_rows(a: ArrayLike, s: ArrayLike) -> Tensor:
    """out[i, :] = s[i] * a[i, :]."""
    a, s = _as_tensor(a), _as_tensor(s)
    _require_ndim('scale_rows', a, 2)
    if s.shape != (a.shape[0],):
        raise DimensionError(f"scale_rows: {s.shape} scales for {a.shape}")
    return _emit('scale_rows', a.values * s.values[:, None], (a, s),
                 lambda g: (g * s.values[:, None], np.sum(g * a.values, axis=1)))


def sigmoid(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    out = expit(a.values)
    return _emit('sigmoid', out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.values)
    return _emit('exp', out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.values <= 0):
        raise DomainError("log of a non-positive value")
    return _emit('log', np.log(a.values), (a,), lambda g: (g / a.values,))


def sqrt(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.values < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.values)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        safe = np.divide(0.5 * g, out, out=np.zeros_like(g), where=out > 0)
        return (safe,)

    return _emit('sqrt', out, (a,), backward)


def clamp_min(a: ArrayLike, floor: float) -> Tensor:
    a = _as_tensor(a)
    return _emit('clamp_min', np.maximum(a.values, floor), (a,),
                 lambda g: (g * (a.values > floor),))


def softmax_rows(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    _require_ndim('softmax_rows', a, 2)
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return _emit('softmax_rows', out, (a,),
                 lambda g: (out * (g - np.sum(g * out, axis=1, keepdims=True)),))


def logsumexp_rows(a: ArrayLike) -> Tensor:
    """log(sum(exp(a[i, :]))) per row, max-shifted."""
    a = _as_tensor(a)
    _require_ndim('logsumexp_rows', a, 2)
    peak = a.values.max(axis=1, keepdims=True)
    e = np.exp(a.values - peak)
    total = e.sum(axis=1, keepdims=True)
    out = (peak + np.log(total)).reshape(-1)
    weights = e / total
    return _emit('logsumexp_rows', out, (a,), lambda g: (g[:, None] * weights,))


def dot_rows(a: ArrayLike, b: ArrayLike) -> Tensor:
    """out[i] = <a[i, :], b[i, :]>."""
    a, b = _as_tensor(a), _as_tensor(b)
    _require_ndim('dot_rows', a, 2)
    _same_shape('dot_rows', a, b)
    return _emit('dot_rows', np.einsum('ij,ij->i', a.values, b.values), (a, b),
                 lambda g: (g[:, None] * b.values, g[:, None] * a.values))


def sum_rows(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    _require_ndim('sum_rows', a, 2)
    width = a.shape[1]
    return _emit('sum_rows', a.values.sum(axis=1), (a,),
                 lambda g: (np.repeat(g[:, None], width, axis=1),))


def total(a: ArrayLike) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    a = _as_tensor(a)
    return _emit('sum', np.asarray(a.values.sum()), (a,),
                 lambda g: (np.full(a.shape, g, dtype=a.values.dtype),))


def mean(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    n = max(a.size, 1)
    return _emit('mean', np.asarray(a.values.sum() / n), (a,),
                 lambda g: (np.full(a.shape, g / n, dtype=a.values.dtype),))


def row_norms(a: ArrayLike, floor: Optional[float] = None) -> Tensor:
    """Euclidean norm of each row, optionally floored."""
    norms = sqrt(sum_rows(mul(a, a)))
    return norms if floor is None else clamp_min(norms, floor)


def normalize_rows(a: ArrayLike, floor: float) -> Tensor:
    """Rows scaled to unit length, with the norm floored at `floor`."""
    a = _as_tensor(a)
    norms = row_norms(a, floor)
    return scale_rows(a, div(Tensor(np.ones(a.shape[0], dtype=a.values.dtype)), norms))
