"""Sampled finite-difference self-test for hosted encoders.

Validates that the encoder's reported gradient agrees with central
finite differences of its own loss on a handful of sampled coordinates.
Runs entirely inside the sidecar, before any engine connects. The float32
loss limits achievable accuracy, so the default step is the float32
sweet spot (~cuberoot of machine epsilon) and the tolerance 1e-3 relative
to the gradient scale.
"""

from __future__ import annotations

import numpy as np


def run_selftest(
    encoder,
    frame_size: int = 16,
    samples: int = 16,
    step: float = 5e-3,
    tolerance: float = 1e-3,
    seed: int = 0,
) -> dict:
    rng = np.random.default_rng(seed)
    frame = rng.random((frame_size, frame_size, 3)).astype(np.float32)
    other = rng.random((frame_size, frame_size, 3)).astype(np.float32)
    target = encoder.encode(other)
    delta = np.zeros_like(frame)

    _, grad = encoder.loss_grad(frame, delta, target)
    grad = np.asarray(grad, dtype=np.float64)

    coords = sorted(
        rng.choice(frame.size, size=min(samples, frame.size), replace=False).tolist()
    )
    fd = np.zeros(len(coords))
    for i, idx in enumerate(coords):
        bumped = delta.copy()
        bumped.flat[idx] = step
        plus, _ = encoder.loss_grad(frame, bumped, target)
        bumped.flat[idx] = -step
        minus, _ = encoder.loss_grad(frame, bumped, target)
        fd[i] = (plus - minus) / (2.0 * step)

    scale = max(float(np.abs(fd).max()), 1e-30)
    error = float(np.abs(grad.flat[coords] - fd).max() / scale)
    return {
        "encoder": encoder.name,
        "sampled_coordinates": len(coords),
        "step": step,
        "max_relative_error": error,
        "tolerance": tolerance,
        "ok": error < tolerance,
    }
