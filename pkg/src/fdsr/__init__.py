"""Fast guided depth super-resolution on a small numpy autodiff core."""

from .net import FdsrConfig, count_params_and_macs, fdsr_forward, init_weights
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "FdsrConfig",
    "Tensor",
    "backward",
    "count_params_and_macs",
    "fdsr_forward",
    "init_weights",
    "no_grad",
]
