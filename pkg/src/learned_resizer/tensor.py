"""Dense tensors and a reverse-mode tape.

Images, features and parameters are 4-D ``(N, C, H, W)`` arrays; logits and
probabilities use flattened 2-D ``(N, K)`` views. Every differentiable op
appends one node to the active :class:`Tape` when at least one input is
tracked, and :func:`backward` walks those nodes in exact reverse insertion
order.

Bilinear resizing uses half-pixel alignment: output index ``i`` samples the
source at ``(i + 0.5) * in_size / out_size - 0.5``, clamped to
``[0, in_size - 1]``. Resizing to the same size is therefore an exact
identity, and down/up factors are treated symmetrically.

Compute is float32. :func:`float64_mode` switches newly created tensors to
float64; it exists for finite-difference gradient checks only.
"""
import contextlib
import threading

import numpy as np

from . import kernels

_state = threading.local()


def get_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def float64_mode():
    """Create float64 tensors inside the block (gradient checking only)."""
    prev = get_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """Array plus optional gradient.

    ``tracked`` tensors participate in differentiation. A tracked tensor with
    no producing node is a leaf (a parameter); :func:`backward` fills its
    ``grad``. Untracked tensors never receive a grad.
    """

    __slots__ = ("data", "grad", "tracked", "name", "_node")

    def __init__(self, data, tracked=False, name=None, dtype=None):
        self.data = np.ascontiguousarray(data, dtype=dtype or get_dtype())
        self.grad = None
        self.tracked = bool(tracked)
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), tracked=self.tracked, name=self.name, dtype=dtype)

    def __repr__(self):
        flag = ", tracked" if self.tracked else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable ops since the last backward pass."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        # Tensor._node -> Node -> output Tensor is a reference cycle; break it so
        # activation buffers are freed now rather than at the next cyclic GC.
        for node in self.nodes:
            if node.output._node is node:
                node.output._node = None
            node.inputs = ()
            node.output = None
            node.backward_fn = None
        self.nodes = []

    def backward(self, loss):
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            for inp in node.inputs:
                if inp.tracked and inp._node is None:
                    leaves.setdefault(id(inp), inp)
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, leaf in leaves.items():
            g = grads.get(key)
            leaf.grad = g.reshape(leaf.shape) if g is not None else np.zeros_like(leaf.data)
        self.clear()


def active_tape():
    tapes = getattr(_state, "tapes", None)
    if tapes is None:
        tapes = _state.tapes = [Tape()]
    return tapes[-1]


@contextlib.contextmanager
def fresh_tape():
    """Record into a new tape for the duration of the block."""
    active_tape()
    tape = Tape()
    _state.tapes.append(tape)
    try:
        yield tape
    finally:
        _state.tapes.pop()


@contextlib.contextmanager
def no_grad():
    prev = getattr(_state, "grad_enabled", True)
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def grad_enabled():
    return getattr(_state, "grad_enabled", True)


def backward(loss):
    """Populate ``grad`` on every tracked leaf recorded on the active tape."""
    active_tape().backward(loss)


def record(op, inputs, out_data, backward_fn):
    """Wrap ``out_data`` and, if any input is tracked, put a node on the tape.

    ``backward_fn(g)`` receives the output gradient and returns one array (or
    None) per input.
    """
    out = Tensor(out_data, dtype=out_data.dtype)
    if grad_enabled() and any(t.tracked for t in inputs):
        out.tracked = True
        node = Node(op, tuple(inputs), out, backward_fn)
        out._node = node
        active_tape().nodes.append(node)
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------- ops


def conv2d(x, w, stride=1, padding="same"):
    """Bias-free 2-D convolution with zero "same" padding (``k // 2`` per side)."""
    if padding != "same":
        raise ValueError(f"only 'same' padding is supported, got {padding!r}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    out_c, in_c, kh, kw = w.shape
    if c != in_c:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d needs odd kernel sizes, got kernel {w.shape}")
    pad = kh // 2
    if kh != kw:
        raise ValueError(f"conv2d needs square kernels, got kernel {w.shape}")
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (wd + 2 * pad - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, pad, out_h, out_w)
    w2d = w.data.reshape(out_c, -1)
    out = (w2d @ cols).reshape(out_c, n, out_h, out_w).transpose(1, 0, 2, 3)
    need_dx = x.tracked

    def backward_fn(g):
        g2d = g.transpose(1, 0, 2, 3).reshape(out_c, -1)
        dw = (g2d @ cols.T).reshape(w.shape)
        dx = None
        if need_dx:
            dcols = w2d.T @ g2d
            dx = kernels.col2im(dcols, x.shape, kh, kw, stride, pad, out_h, out_w)
        return dx, dw

    return record("conv2d", (x, w), np.ascontiguousarray(out), backward_fn)


class BatchNormState:
    """Per-channel running statistics; empty until the first training batch."""

    def __init__(self, channels, momentum=0.99, eps=1e-3):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.running_mean = None
        self.running_var = None

    def update(self, mean, var):
        if self.running_mean is None:
            self.running_mean = mean.astype(np.float32)
            self.running_var = var.astype(np.float32)
        else:
            m = np.float32(self.momentum)
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(np.float32)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(np.float32)


def batch_norm(x, state, training):
    """Normalize each channel over (N, H, W); no learnable scale or shift.

    Training mode uses batch statistics and folds them into ``state``; eval
    mode uses the running statistics and raises if none were recorded yet.
    """
    n, c, h, w = x.shape
    if c != state.channels:
        raise ValueError(f"batch_norm expects {state.channels} channels, got input {x.shape}")
    eps = state.eps
    if training:
        if n * h * w < 2:
            raise ValueError(f"batch_norm in training mode needs >= 2 values per channel, got input {x.shape}")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std[None, :, None, None]
        state.update(mean, var)

        def backward_fn(g):
            g_mean = g.mean(axis=(0, 2, 3))[None, :, None, None]
            gx_mean = (g * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
            return ((g - g_mean - xhat * gx_mean) * inv_std[None, :, None, None],)

        return record("batch_norm", (x,), xhat.astype(x.dtype, copy=False), backward_fn)

    if state.running_mean is None:
        raise RuntimeError("batch_norm in eval mode before any running statistics were recorded")
    mean = state.running_mean.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(state.running_var.astype(x.dtype) + eps))[None, :, None, None]
    out = (x.data - mean[None, :, None, None]) * inv_std

    def backward_fn(g):
        return (g * inv_std,)

    return record("batch_norm_eval", (x,), out, backward_fn)


def leaky_relu(x, slope=0.2):
    slope = x.dtype.type(slope)
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * slope)

    def backward_fn(g):
        return (np.where(pos, g, g * slope),)

    return record("leaky_relu", (x,), out, backward_fn)


def _axis_plan(in_size, out_size, dtype):
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = (src - lo).astype(dtype)
    return lo, hi, frac, (dtype.type(1) - frac)


def bilinear_plan(in_h, in_w, out_h, out_w, dtype=np.float32):
    """Precompute source indices and weights for a resize (shared by both kernels)."""
    dtype = np.dtype(dtype)
    y0, y1, wy, wym = _axis_plan(in_h, out_h, dtype)
    x0, x1, wx, wxm = _axis_plan(in_w, out_w, dtype)
    return (y0, y1, wy, wym, x0, x1, wx, wxm)


def bilinear_resize(x, out_h, out_w):
    """Differentiable half-pixel bilinear resize of every channel."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize target must be >= 1x1, got {out_h}x{out_w}")
    n, c, in_h, in_w = x.shape
    plan = bilinear_plan(in_h, in_w, out_h, out_w, x.dtype)
    out = kernels.bilinear_forward(x.data, plan)

    def backward_fn(g):
        return (kernels.bilinear_backward(g, in_h, in_w, plan),)

    return record("bilinear_resize", (x,), out, backward_fn)


def add(a, b):
    if a.shape != b.shape:
        raise ValueError(f"add needs equal shapes, got {a.shape} and {b.shape}")

    def backward_fn(g):
        return g, g

    return record("add", (a, b), a.data + b.data, backward_fn)


def mul(a, b):
    """Elementwise product of equal-shaped tensors."""
    if a.shape != b.shape:
        raise ValueError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward_fn(g):
        return g * bd, g * ad

    return record("mul", (a, b), ad * bd, backward_fn)


def sum_all(x):
    shape = x.shape

    def backward_fn(g):
        return (np.broadcast_to(g.reshape(()), shape).copy(),)

    return record("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype), backward_fn)


def dense(x, w, b):
    """Affine map of the flattened input: ``(N, D) @ (D, K) + (K,)``."""
    n = x.shape[0]
    flat = x.data.reshape(n, -1)
    if flat.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"dense shape mismatch: input {x.shape} (flattened {flat.shape}), weight {w.shape}, bias {b.shape}")
    wd = w.data

    def backward_fn(g):
        return (g @ wd.T).reshape(x.shape), flat.T @ g, g.sum(axis=0)

    return record("dense", (x, w, b), flat @ wd + b.data, backward_fn)


def global_avg_pool(x):
    n, c, h, w = x.shape

    def backward_fn(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.dtype),)

    return record("global_avg_pool", (x,), x.data.mean(axis=(2, 3)), backward_fn)


def softmax(x):
    """Row-wise softmax over the last axis of an ``(N, K)`` tensor."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), p, backward_fn)


def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.data))
    s = s.astype(x.dtype, copy=False)

    def backward_fn(g):
        return (g * s * (1 - s),)

    return record("sigmoid", (x,), s, backward_fn)


def normalize_rows(x):
    """Divide each row of a positive ``(N, K)`` tensor by its sum."""
    total = x.data.sum(axis=-1, keepdims=True)
    out = x.data / total

    def backward_fn(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) / total,)

    return record("normalize_rows", (x,), out, backward_fn)
