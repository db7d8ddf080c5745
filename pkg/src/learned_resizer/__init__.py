"""Learned image resizer trained jointly with a downstream CNN."""
from .kernels import BACKEND as KERNEL_BACKEND
from .resizer import ResizerConfig, ResizerModel, build, flops_estimate, param_count
from .tensor import Tensor, backward, float64_mode, no_grad

__all__ = [
    "KERNEL_BACKEND",
    "ResizerConfig",
    "ResizerModel",
    "Tensor",
    "backward",
    "build",
    "flops_estimate",
    "float64_mode",
    "no_grad",
    "param_count",
]
