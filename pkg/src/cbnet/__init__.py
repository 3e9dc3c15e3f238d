"""Cell segmentation with complete bipartite encoder-decoder shortcuts, in numpy."""
from .errors import (CBNetError, ConfigError, ContractError, DegenerateError, FormatError, PlacementError,
                     ShapeError)
from .model import ModelConfig, build_network, forward, param_count, shape_trace
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "CBNetError", "ConfigError", "ContractError", "DegenerateError", "FormatError", "PlacementError",
    "ShapeError", "ModelConfig", "build_network", "forward", "param_count", "shape_trace", "Tape", "Tensor",
]
