"""Kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
pure-NumPy fallback is always available and produces bit-identical float32
results (see _kernels_fallback for the contract). Set UVCG_KERNEL_BACKEND
to ``compiled`` or ``python`` to force one; ``auto`` (default) prefers the
extension. Non-float32 inputs always take the fallback, which is the
float64 path used by the finite-difference oracle.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_fallback as _fallback

_requested = os.environ.get("UVCG_KERNEL_BACKEND", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(f"UVCG_KERNEL_BACKEND must be auto|compiled|python, got {_requested!r}")

_compiled = None
if _requested in ("auto", "compiled"):
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    if _compiled is not None and x.dtype == np.float32:
        return _compiled.conv2d_forward(x, w, b, stride)
    return _fallback.conv2d_forward(x, w, b, stride)


def conv2d_backward_input(
    dy: np.ndarray, w: np.ndarray, stride: int, h: int, wd: int
) -> np.ndarray:
    if _compiled is not None and dy.dtype == np.float32:
        return _compiled.conv2d_backward_input(dy, w, stride, h, wd)
    return _fallback.conv2d_backward_input(dy, w, stride, h, wd)
