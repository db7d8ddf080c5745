"""Hot-loop dispatch: compiled kernels when built, numpy otherwise.

Set ``LEARNED_RESIZER_KERNELS=python`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LEARNED_RESIZER_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def backend_module(name=None):
    """Return the kernel module for ``name`` ("cython"/"python"), default active."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


# The compiled kernels index without bounds checks, so shapes are validated here.


def im2col(x, kh, kw, stride, pad, out_h, out_w):
    if x.ndim != 4:
        raise ValueError(f"im2col expects (N, C, H, W), got shape {x.shape}")
    return _impl.im2col(np.ascontiguousarray(x), kh, kw, stride, pad, out_h, out_w)


def col2im(cols, x_shape, kh, kw, stride, pad, out_h, out_w):
    n, c = x_shape[0], x_shape[1]
    expected = (c * kh * kw, n * out_h * out_w)
    if cols.shape != expected:
        raise ValueError(f"col2im expects columns of shape {expected}, got {cols.shape}")
    return _impl.col2im(np.ascontiguousarray(cols), tuple(x_shape), kh, kw, stride, pad, out_h, out_w)


def _check_plan(in_h, in_w, plan):
    if plan[1].max() >= in_h or plan[5].max() >= in_w:
        raise ValueError(f"resize plan does not fit a {in_h}x{in_w} input")


def bilinear_forward(x, plan):
    if x.ndim != 4:
        raise ValueError(f"bilinear resize expects (N, C, H, W), got shape {x.shape}")
    _check_plan(x.shape[2], x.shape[3], plan)
    return _impl.bilinear_forward(np.ascontiguousarray(x), *plan)


def bilinear_backward(g, in_h, in_w, plan):
    if g.ndim != 4 or g.shape[2:] != (len(plan[0]), len(plan[4])):
        raise ValueError(f"gradient shape {g.shape} does not match the resize plan "
                         f"({len(plan[0])}x{len(plan[4])})")
    _check_plan(in_h, in_w, plan)
    return _impl.bilinear_backward(np.ascontiguousarray(g), in_h, in_w, *plan)
