# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled conv kernels for the PGD inner loop.

Bit-compatibility contract with uvcg._kernels_fallback: for each output
element the float32 additions happen in (ci, ky, kx) order on the forward
pass and (co, ky, kx) order on the input-gradient pass, taps that fall
outside the input are skipped (not added as zeros), and products are not
FMA-contracted. Keep the two implementations in lockstep.
"""

import numpy as np


def conv2d_forward(const float[:, :, ::1] x,
                   const float[:, :, :, ::1] w,
                   const float[::1] b,
                   int stride):
    """Strided 2-D convolution, zero padding kernel//2, NCHW single image.

    x: (ci, h, w), w: (co, ci, k, k), b: (co,) -> (co, oh, ow) float32.
    """
    cdef Py_ssize_t ci_n = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t co_n = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t pad = k // 2
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - k) // stride + 1
    out_arr = np.empty((co_n, oh, ow), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t co, oy, ox, ci, ky, kx, iy0, ix0
    cdef Py_ssize_t ky_lo, ky_hi, kx_lo, kx_hi
    cdef float acc

    with nogil:
        for co in range(co_n):
            for oy in range(oh):
                iy0 = oy * stride - pad
                ky_lo = -iy0 if iy0 < 0 else 0
                ky_hi = h - 1 - iy0 if iy0 + k > h else k - 1
                for ox in range(ow):
                    ix0 = ox * stride - pad
                    kx_lo = -ix0 if ix0 < 0 else 0
                    kx_hi = wd - 1 - ix0 if ix0 + k > wd else k - 1
                    acc = b[co]
                    for ci in range(ci_n):
                        for ky in range(ky_lo, ky_hi + 1):
                            for kx in range(kx_lo, kx_hi + 1):
                                acc = acc + w[co, ci, ky, kx] * x[ci, iy0 + ky, ix0 + kx]
                    out[co, oy, ox] = acc
    return out_arr


cdef inline Py_ssize_t _range_lo(Py_ssize_t k_off, Py_ssize_t pad,
                                 Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t t = pad - k_off
    if t <= 0:
        return 0
    return (t + stride - 1) // stride


cdef inline Py_ssize_t _range_hi(Py_ssize_t k_off, Py_ssize_t pad,
                                 Py_ssize_t stride, Py_ssize_t n_in,
                                 Py_ssize_t n_out) noexcept nogil:
    cdef Py_ssize_t u = n_in - 1 + pad - k_off
    if u < 0:
        return -1
    u = u // stride
    if u > n_out - 1:
        return n_out - 1
    return u


def conv2d_backward_input(const float[:, :, ::1] dy,
                          const float[:, :, :, ::1] w,
                          int stride,
                          int h,
                          int wd):
    """Gradient of conv2d_forward with respect to x.

    dy: (co, oh, ow), w: (co, ci, k, k) -> (ci, h, wd) float32. Scatter
    form: for each dx element the adds arrive in (co, ky, kx) order.
    """
    cdef Py_ssize_t co_n = dy.shape[0], oh = dy.shape[1], ow = dy.shape[2]
    cdef Py_ssize_t ci_n = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t pad = k // 2
    dx_arr = np.zeros((ci_n, h, wd), dtype=np.float32)
    cdef float[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t co, ky, kx, ci, oy, ox, iy, ix0
    cdef Py_ssize_t oy_lo, oy_hi, ox_lo, ox_hi
    cdef float wv

    with nogil:
        for co in range(co_n):
            for ky in range(k):
                oy_lo = _range_lo(ky, pad, stride)
                oy_hi = _range_hi(ky, pad, stride, h, oh)
                if oy_hi < oy_lo:
                    continue
                for kx in range(k):
                    ox_lo = _range_lo(kx, pad, stride)
                    ox_hi = _range_hi(kx, pad, stride, wd, ow)
                    if ox_hi < ox_lo:
                        continue
                    ix0 = ox_lo * stride - pad + kx
                    for ci in range(ci_n):
                        wv = w[co, ci, ky, kx]
                        for oy in range(oy_lo, oy_hi + 1):
                            iy = oy * stride - pad + ky
                            for ox in range(ox_lo, ox_hi + 1):
                                dx[ci, iy, ix0 + (ox - ox_lo) * stride] = (
                                    dx[ci, iy, ix0 + (ox - ox_lo) * stride]
                                    + wv * dy[co, oy, ox]
                                )
    return dx_arr
