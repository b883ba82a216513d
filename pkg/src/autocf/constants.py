# constants.py
from enum import Enum
from typing import Tuple

from .exceptions import ConfigError

DEFAULT_SPLIT_RATIOS: Tuple[float, float, float] = (0.7, 0.05, 0.25)
SPARSITY_BOUNDS: Tuple[int, ...] = (0, 5, 10, 15, 20)
DEFAULT_CUTOFFS: Tuple[int, ...] = (20, 40)
EARLY_STOP_CUTOFF: int = 20

NORM_FLOOR: float = 1e-12
GUMBEL_EPS: float = 1e-10

REPORT_SCHEMA_VERSION: int = 1
CHECKPOINT_FORMAT_VERSION: int = 1


class Variant(Enum):
    """Model variant; everything except FULL is an ablation."""
    FULL = 'full'
    NO_GSA = '-GSA'    # attention decoder replaced by one more propagation
    NO_M = '-M'        # no masking, no recon, no infomax
    NO_IM = '-IM'      # no infomax term
    NO_L2M = '-L2M'    # random edge masking of the learned size

    @classmethod
    def parse(cls, tag: str) -> 'Variant':
        for variant in cls:
            if variant.value == tag or variant.name == tag:
                return variant
        raise ConfigError(f"Unknown variant tag: {tag!r}", key='variant')


class Readout(Enum):
    """Subgraph readout before the sigmoid in relatedness scoring."""
    MEAN = 'mean'
    SUM = 'sum'


class RngStream(Enum):
    """Named RNG streams; each is spawned from the run seed."""
    INIT = 'init'
    SHUFFLE = 'shuffle'
    MASK = 'mask'
    ATTENTION = 'attention'
