# cython: language_level=3
"""Compiled twins of ``_kernels_py``; see that module for the ordering rules."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((c * kh * kw, n * out_h * out_w), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t ci, ki, kj, b, oy, ox, iy, ix, row, col, lo, hi
    with nogil:
        for ci in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ci * kh + ki) * kw + kj
                    # output columns [lo, hi) read inside the image; the rest are padding
                    lo = 0
                    while lo < out_w and lo * stride + kj - pad < 0:
                        lo += 1
                    hi = out_w
                    while hi > lo and (hi - 1) * stride + kj - pad >= w:
                        hi -= 1
                    col = 0
                    for b in range(n):
                        for oy in range(out_h):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                for ox in range(out_w):
                                    cols[row, col + ox] = 0
                                col += out_w
                                continue
                            for ox in range(lo):
                                cols[row, col + ox] = 0
                            if stride == 1:
                                ix = kj - pad
                                for ox in range(lo, hi):
                                    cols[row, col + ox] = x[b, ci, iy, ox + ix]
                            else:
                                ix = lo * stride + kj - pad
                                for ox in range(lo, hi):
                                    cols[row, col + ox] = x[b, ci, iy, ix]
                                    ix += stride
                            for ox in range(hi, out_w):
                                cols[row, col + ox] = 0
                            col += out_w
    return out


def col2im(floating[:, ::1] cols, tuple x_shape, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t ci, ki, kj, b, oy, ox, iy, ix, row, col, lo, hi
    with nogil:
        for ci in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ci * kh + ki) * kw + kj
                    lo = 0
                    while lo < out_w and lo * stride + kj - pad < 0:
                        lo += 1
                    hi = out_w
                    while hi > lo and (hi - 1) * stride + kj - pad >= w:
                        hi -= 1
                    col = 0
                    for b in range(n):
                        for oy in range(out_h):
                            iy = oy * stride + ki - pad
                            if iy >= 0 and iy < h:
                                if stride == 1:
                                    ix = kj - pad
                                    for ox in range(lo, hi):
                                        dx[b, ci, iy, ox + ix] = dx[b, ci, iy, ox + ix] + cols[row, col + ox]
                                else:
                                    ix = lo * stride + kj - pad
                                    for ox in range(lo, hi):
                                        dx[b, ci, iy, ix] = dx[b, ci, iy, ix] + cols[row, col + ox]
                                        ix += stride
                            col += out_w
    return out


def bilinear_forward(floating[:, :, :, ::1] x,
                     const cnp.intp_t[::1] y0, const cnp.intp_t[::1] y1,
                     const floating[::1] wy, const floating[::1] wym,
                     const cnp.intp_t[::1] x0, const cnp.intp_t[::1] x1,
                     const floating[::1] wx, const floating[::1] wxm):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t out_h = y0.shape[0], out_w = x0.shape[0]
    dtype = np.float32 if floating is float else np.float64
    res = np.empty((n, c, out_h, out_w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = res
    cdef Py_ssize_t b, ci, i, j
    cdef floating top, bot
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(out_h):
                    for j in range(out_w):
                        top = x[b, ci, y0[i], x0[j]] * wxm[j] + x[b, ci, y0[i], x1[j]] * wx[j]
                        bot = x[b, ci, y1[i], x0[j]] * wxm[j] + x[b, ci, y1[i], x1[j]] * wx[j]
                        out[b, ci, i, j] = top * wym[i] + bot * wy[i]
    return res


def bilinear_backward(floating[:, :, :, ::1] g, Py_ssize_t in_h, Py_ssize_t in_w,
                      const cnp.intp_t[::1] y0, const cnp.intp_t[::1] y1,
                      const floating[::1] wy, const floating[::1] wym,
                      const cnp.intp_t[::1] x0, const cnp.intp_t[::1] x1,
                      const floating[::1] wx, const floating[::1] wxm):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t out_h = g.shape[2], out_w = g.shape[3]
    dtype = np.float32 if floating is float else np.float64
    res = np.zeros((n, c, in_h, in_w), dtype=dtype)
    t_top_arr = np.empty((out_h, in_w), dtype=dtype)
    t_bot_arr = np.empty((out_h, in_w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = res
    cdef floating[:, ::1] t_top = t_top_arr
    cdef floating[:, ::1] t_bot = t_bot_arr
    cdef Py_ssize_t b, ci, i, j
    cdef floating gt, gb
    with nogil:
        for b in range(n):
            for ci in range(c):
                t_top[:, :] = 0
                t_bot[:, :] = 0
                for i in range(out_h):
                    for j in range(out_w):
                        gt = g[b, ci, i, j] * wym[i]
                        gb = g[b, ci, i, j] * wy[i]
                        t_top[i, x0[j]] = t_top[i, x0[j]] + gt * wxm[j]
                        t_top[i, x1[j]] = t_top[i, x1[j]] + gt * wx[j]
                        t_bot[i, x0[j]] = t_bot[i, x0[j]] + gb * wxm[j]
                        t_bot[i, x1[j]] = t_bot[i, x1[j]] + gb * wx[j]
                for i in range(out_h):
                    for j in range(in_w):
                        dx[b, ci, y0[i], j] = dx[b, ci, y0[i], j] + t_top[i, j]
                    for j in range(in_w):
                        dx[b, ci, y1[i], j] = dx[b, ci, y1[i], j] + t_bot[i, j]
    return res
