"""Pure-numpy versions of the hot loops.

Every function here has a twin in ``_ckernels.pyx``. The two must agree bit
for bit, so accumulation order is spelled out explicitly and mirrored in the
compiled code:

* ``col2im`` accumulates kernel-major: for each output pixel, contributions
  arrive in increasing (ki, kj) order.
* ``bilinear_backward`` scatters along width first (output column order,
  low tap before high tap), then along height (output row order, top before
  bottom).
"""
import numpy as np


def im2col(x, kh, kw, stride, pad, out_h, out_w):
    n, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, kh, kw, n, out_h, out_w), dtype=x.dtype)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, :, ki:ki + h_span:stride, kj:kj + w_span:stride]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * out_h * out_w)


def col2im(cols, x_shape, kh, kw, stride, pad, out_h, out_w):
    n, c, h, w = x_shape
    cols = cols.reshape(c, kh, kw, n, out_h, out_w)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki:ki + h_span:stride, kj:kj + w_span:stride] += cols[:, ki, kj].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + w])


def bilinear_forward(x, y0, y1, wy, wym, x0, x1, wx, wxm):
    rows0 = x[:, :, y0, :]
    rows1 = x[:, :, y1, :]
    top = rows0[..., x0] * wxm + rows0[..., x1] * wx
    bot = rows1[..., x0] * wxm + rows1[..., x1] * wx
    return top * wym[:, None] + bot * wy[:, None]


def _scatter_last(dst, idx_lo, idx_hi, v_lo, v_hi):
    # interleave so that column j contributes lo then hi before column j+1
    idx = np.stack([idx_lo, idx_hi], axis=1).ravel()
    vals = np.stack([v_lo, v_hi], axis=-1).reshape(v_lo.shape[:-1] + (-1,))
    np.add.at(np.moveaxis(dst, -1, 0), idx, np.moveaxis(vals, -1, 0))


def bilinear_backward(g, in_h, in_w, y0, y1, wy, wym, x0, x1, wx, wxm):
    n, c, out_h, _ = g.shape
    g_top = g * wym[:, None]
    g_bot = g * wy[:, None]
    t_top = np.zeros((n, c, out_h, in_w), dtype=g.dtype)
    t_bot = np.zeros((n, c, out_h, in_w), dtype=g.dtype)
    _scatter_last(t_top, x0, x1, g_top * wxm, g_top * wx)
    _scatter_last(t_bot, x0, x1, g_bot * wxm, g_bot * wx)
    dx = np.zeros((n, c, in_h, in_w), dtype=g.dtype)
    idx = np.stack([y0, y1], axis=1).ravel()
    vals = np.stack([t_top, t_bot], axis=3).reshape(n, c, 2 * out_h, in_w)
    np.add.at(np.moveaxis(dx, 2, 0), idx, np.moveaxis(vals, 2, 0))
    return dx
