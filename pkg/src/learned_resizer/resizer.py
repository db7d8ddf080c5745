"""The learned resizer network.

Layout (``n`` filters, ``r`` residual blocks; every conv is bias-free and
every batch norm is non-affine)::

    x ──► conv7x7 3→n ─ lrelu ─ conv1x1 n→n ─ lrelu ─ bn ──► bilinear to out ──► h
    h ──► r × [conv3x3 ─ bn ─ lrelu ─ conv3x3 ─ bn ─ (+ identity)] ──► conv3x3 ─ bn ─ (+ h)
      ──► conv7x7 n→3 ──► (+ bilinear(x) to out) ──► y

The head runs at the input resolution; everything after the feature resize
runs at the output resolution. Why this wiring: the per-block parameter step
of 18·n² needs two 3x3 n→n convs per block, 294·n needs two 7x7 convs between
3 and n channels, and the remaining 10·n² is one 1x1 plus one 3x3 conv. With
no biases and no batch-norm scale/shift this gives exactly

    params(r, n) = (18·r + 10)·n² + 294·n

which gives 11,872 for (r=1, n=16) up to 93,376 for (r=4, n=32). Counting
conv FLOPs (2 per multiply-accumulate) with the head at input resolution
gives the extra cost of the resizer over plain bilinear resizing.

Outputs are not clamped; clamp only when exporting images.
"""
from dataclasses import dataclass

import numpy as np

from .layers import Model, he_uniform
from .tensor import add, batch_norm, bilinear_resize, conv2d, leaky_relu

SLOPE = 0.2


@dataclass(frozen=True)
class ResizerConfig:
    r: int = 1
    n: int = 16
    out_h: int = 224
    out_w: int = 224

    def __post_init__(self):
        for field in ("r", "n", "out_h", "out_w"):
            if int(getattr(self, field)) < 1:
                raise ValueError(f"ResizerConfig.{field} must be >= 1, got {getattr(self, field)}")


class ResizerModel(Model):
    arch = "resizer"

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        n = cfg.n

        def conv(name, cin, cout, k):
            return self.add_param(name, he_uniform(rng, (cout, cin, k, k), cin * k * k))

        conv("head.conv7", 3, n, 7)
        conv("head.conv1", n, n, 1)
        self.add_bn("head.bn", n)
        for i in range(cfg.r):
            conv(f"block{i}.conv_a", n, n, 3)
            self.add_bn(f"block{i}.bn_a", n)
            conv(f"block{i}.conv_b", n, n, 3)
            self.add_bn(f"block{i}.bn_b", n)
        conv("tail.conv3", n, n, 3)
        self.add_bn("tail.bn", n)
        conv("tail.conv7", n, 3, 7)

    def __call__(self, x, training=True, out_size=None):
        return self.forward(x, training=training, out_size=out_size)

    def forward(self, x, training=True, out_size=None):
        if x.shape[1] != 3:
            raise ValueError(f"resizer expects 3-channel input, got {x.shape}")
        out_h, out_w = out_size or (self.cfg.out_h, self.cfg.out_w)
        p, bn = self.params, self.bn

        h = leaky_relu(conv2d(x, p["head.conv7"]), SLOPE)
        h = leaky_relu(conv2d(h, p["head.conv1"]), SLOPE)
        h = batch_norm(h, bn["head.bn"], training)
        skip = bilinear_resize(h, out_h, out_w)

        t = skip
        for i in range(self.cfg.r):
            u = batch_norm(conv2d(t, p[f"block{i}.conv_a"]), bn[f"block{i}.bn_a"], training)
            u = leaky_relu(u, SLOPE)
            u = batch_norm(conv2d(u, p[f"block{i}.conv_b"]), bn[f"block{i}.bn_b"], training)
            t = add(t, u)
        t = batch_norm(conv2d(t, p["tail.conv3"]), bn["tail.bn"], training)
        t = add(t, skip)
        t = conv2d(t, p["tail.conv7"])
        return add(t, bilinear_resize(x, out_h, out_w))


def build(cfg, seed=0):
    """Randomly initialised resizer (He-uniform, fan-in)."""
    return ResizerModel(cfg, seed)


def param_count(cfg):
    r, n = cfg.r, cfg.n
    return (18 * r + 10) * n * n + 294 * n


def flops_breakdown(cfg, in_h, in_w):
    """Conv FLOPs at input resolution (head) and output resolution (rest)."""
    n, r = cfg.n, cfg.r
    head = 2 * (147 * n + n * n) * in_h * in_w
    rest = 2 * ((2 * r + 1) * 9 * n * n + 147 * n) * cfg.out_h * cfg.out_w
    return {"head": head, "trunk_tail": rest}


def flops_estimate(cfg, in_h, in_w):
    """Convolution FLOPs of one forward pass (batch norm, activations, resize excluded)."""
    parts = flops_breakdown(cfg, in_h, in_w)
    return parts["head"] + parts["trunk_tail"]


def format_thousands(count):
    # the published table truncates rather than rounds (21,088 -> 21.08)
    return f"{count // 10 / 100:.2f}k"


def format_gflops(flops):
    return f"{flops / 1e9:.2f} GFLOPs"
