"""Nonnegative CP decomposition with extrapolated block coordinate descent."""
from .ao import AoConfig, RunTrace, ao_run
from .datagen import SyntheticSpec, generate, random_init
from .her import HerParams, her_run
from .nnls import InnerStop
from .tensor_core import KruskalModel

__version__ = "0.1.0"
