"""Pure-NumPy conv kernels, bit-compatible with the compiled extension.

Each tap (one weight coefficient) is applied to a strided slice of the
input and accumulated with ``+=``, so for every output element the float32
additions happen in exactly the same order as the compiled loops:
(ci, ky, kx) on the forward pass, (co, ky, kx) on the input-gradient pass.
Out-of-range taps are skipped via slice bounds rather than added as padded
zeros, which keeps signed-zero behaviour identical as well.

Unlike the compiled kernels these work for any float dtype; the float64
path backs the finite-difference oracle.
"""

from __future__ import annotations

import numpy as np


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def _tap_ranges(k_off: int, pad: int, stride: int, n_in: int, n_out: int):
    """Output/input index windows for which tap k_off stays inside the input."""
    lo = max(0, _ceil_div(pad - k_off, stride))
    hi = min(n_out - 1, (n_in - 1 + pad - k_off) // stride)
    if hi < lo:
        return None
    in_lo = lo * stride - pad + k_off
    in_hi = in_lo + (hi - lo) * stride
    return lo, hi, slice(in_lo, in_hi + 1, stride)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Strided 2-D convolution, zero padding kernel//2, NCHW single image."""
    ci_n, h, wd = x.shape
    co_n, _, k, _ = w.shape
    pad = k // 2
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.empty((co_n, oh, ow), dtype=x.dtype)
    out[:] = b[:, None, None]
    for ci in range(ci_n):
        for ky in range(k):
            ry = _tap_ranges(ky, pad, stride, h, oh)
            if ry is None:
                continue
            oy_lo, oy_hi, iy_sl = ry
            for kx in range(k):
                rx = _tap_ranges(kx, pad, stride, wd, ow)
                if rx is None:
                    continue
                ox_lo, ox_hi, ix_sl = rx
                out[:, oy_lo:oy_hi + 1, ox_lo:ox_hi + 1] += (
                    w[:, ci, ky, kx, None, None] * x[ci, iy_sl, ix_sl]
                )
    return out


def conv2d_backward_input(
    dy: np.ndarray, w: np.ndarray, stride: int, h: int, wd: int
) -> np.ndarray:
    """Gradient of conv2d_forward with respect to x: (ci, h, wd)."""
    co_n, oh, ow = dy.shape
    ci_n, k = w.shape[1], w.shape[2]
    pad = k // 2
    dx = np.zeros((ci_n, h, wd), dtype=dy.dtype)
    for co in range(co_n):
        for ky in range(k):
            ry = _tap_ranges(ky, pad, stride, h, oh)
            if ry is None:
                continue
            oy_lo, oy_hi, iy_sl = ry
            for kx in range(k):
                rx = _tap_ranges(kx, pad, stride, wd, ow)
                if rx is None:
                    continue
                ox_lo, ox_hi, ix_sl = rx
                dx[:, iy_sl, ix_sl] += (
                    w[co, :, ky, kx, None, None]
                    * dy[co, oy_lo:oy_hi + 1, ox_lo:ox_hi + 1]
                )
    return dx
