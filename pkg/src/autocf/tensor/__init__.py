"""
Dense tensors with tape-based reverse-mode differentiation, a finite-difference
gradient checker and an Adam optimizer.
"""

from .tensor import Tensor, Tape, active_tape, get_default_dtype, set_default_dtype
from .adam import AdamState, adam_step
from .gradcheck import finite_diff_check
from . import ops
