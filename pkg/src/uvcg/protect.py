"""Per-frame sign-PGD under an l-infinity budget, with warm starts.

One frame is optimized at a time, in index order: frame i's perturbation
is seeded with frame i-1's result (warm start), the first frame with a
uniform draw from [-eps, eps]. The target clip is encoded once; frame i
aligns to target latent ``i mod m``. Every iteration ends with the
projection, so the budget holds exactly, and the returned perturbation is
the best-loss iterate unless ``last_iterate`` is set.

The update direction is descent: delta <- Pi(delta - alpha * sign(grad)),
minimizing the latent alignment loss. Pi clamps the perturbation to
[-eps, eps] and then re-expresses the pixel clamp on delta, which for the
default [0, 1] pixel range is exact in float32.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderEndpoint, LatentTensor, encode_sequence
from .errors import ConfigError, NumericalError
from .media import FrameImage, VideoClip


@dataclass(frozen=True)
class ProtectionConfig:
    epsilon: float = 15.0 / 255.0
    alpha: float = 2.0 / 255.0
    steps: int = 200
    warm_start: bool = True
    seed: int = 0
    pixel_min: float = 0.0
    pixel_max: float = 1.0
    last_iterate: bool = False
    zero_init: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.epsilon <= 1.0):
            raise ConfigError(
                f"need 0 < alpha <= epsilon <= 1, got alpha={self.alpha}, "
                f"epsilon={self.epsilon}"
            )
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.pixel_min < self.pixel_max:
            raise ConfigError("pixel_min must be below pixel_max")


@dataclass(frozen=True)
class PerturbationField:
    deltas: tuple[np.ndarray, ...]
    epsilon: float

    def __post_init__(self):
        deltas = tuple(np.asarray(d, dtype=np.float32) for d in self.deltas)
        bound = np.float32(self.epsilon)
        for i, d in enumerate(deltas):
            if np.abs(d).max() > bound:
                raise ConfigError(f"delta {i} exceeds the l-inf budget {self.epsilon}")
            d.setflags(write=False)
        object.__setattr__(self, "deltas", deltas)

    def max_abs(self) -> float:
        return float(max(np.abs(d).max() for d in self.deltas))


@dataclass(frozen=True)
class ProtectionResult:
    immunized: VideoClip
    perturbations: PerturbationField
    per_frame_loss_initial: list[float] | None
    per_frame_loss_final: list[float] | None
    per_frame_iterations: list[int]
    wall_clock_seconds: float
    loss_traces: list[list[float]] | None = None
    failed_frames: list[int] = field(default_factory=list)


def target_for_frame(i: int, m: int) -> int:
    """Index of the target latent aligned to frame i: the target sequence
    is cycled when it is shorter than the protected clip."""
    if m < 1:
        raise ConfigError("target sequence length must be >= 1")
    if i < 0:
        raise ConfigError("frame index must be >= 0")
    return i % m


def init_delta(
    i: int,
    previous_final: np.ndarray | None,
    config: ProtectionConfig,
    rng: np.random.Generator,
    shape: tuple[int, ...] | None = None,
) -> np.ndarray:
    """Initial perturbation for frame i: a uniform draw from [-eps, eps]
    for the first frame (or whenever warm starts are disabled), otherwise
    a copy of the previous frame's final perturbation."""
    if i > 0 and config.warm_start:
        if previous_final is None:
            raise ConfigError("warm start needs the previous frame's perturbation")
        return np.array(previous_final, dtype=np.float32)
    if shape is None:
        raise ConfigError("shape is required for a cold-start initialization")
    if config.zero_init:
        return np.zeros(shape, dtype=np.float32)
    eps = np.float32(config.epsilon)
    draw = rng.uniform(-config.epsilon, config.epsilon, size=shape).astype(np.float32)
    return np.clip(draw, -eps, eps)


def _project(delta: np.ndarray, pixels: np.ndarray, config: ProtectionConfig) -> np.ndarray:
    eps = np.float32(config.epsilon)
    np.clip(delta, -eps, eps, out=delta)
    lo = np.float32(config.pixel_min) - pixels
    hi = np.float32(config.pixel_max) - pixels
    np.clip(delta, lo, hi, out=delta)
    return delta


def pgd_step(
    delta: np.ndarray,
    grad: np.ndarray,
    config: ProtectionConfig,
    frame: FrameImage,
) -> np.ndarray:
    """One descent step followed by the projection; sign(0) is 0, so a
    zero gradient leaves the perturbation untouched."""
    step = delta - np.float32(config.alpha) * np.sign(grad)
    return _project(step, frame.pixels, config)


def protect_frame(
    frame: FrameImage,
    target_latent: LatentTensor,
    init: np.ndarray,
    endpoint: EncoderEndpoint,
    config: ProtectionConfig,
) -> tuple[np.ndarray, list[float]]:
    """Optimize one frame's perturbation for ``config.steps`` iterations.

    Returns the applied perturbation (best-loss iterate, or the last one
    in ``last_iterate`` mode) and the loss trace, entry t being the loss
    of the iterate after t steps. Raises NumericalError on a NaN loss; the
    partial trace rides on the exception's ``trace`` attribute.
    """
    init = np.asarray(init, dtype=np.float32)
    if init.shape != frame.pixels.shape:
        raise ConfigError("init shape must match the frame")
    if np.abs(init).max() > np.float32(config.epsilon):
        raise ConfigError("init exceeds the l-inf budget")

    # Warm-start perturbations were feasible for the previous frame; make
    # them feasible for this one before the first loss evaluation.
    delta = _project(init.copy(), frame.pixels, config)

    trace: list[float] = []
    best_loss = math.inf
    best_delta = delta

    def record(loss_value: float, current: np.ndarray) -> None:
        nonlocal best_loss, best_delta
        loss32 = float(np.float32(loss_value))
        if math.isnan(loss32):
            err = NumericalError(f"NaN loss at iteration {len(trace)}")
            err.trace = trace
            raise err
        trace.append(loss32)
        if loss32 < best_loss:
            best_loss = loss32
            best_delta = current.copy()

    for _ in range(config.steps):
        loss, grad = endpoint.loss_gradient(frame, delta, target_latent)
        record(loss, delta)
        grad = np.asarray(grad, dtype=np.float32)
        delta = pgd_step(delta, grad, config, frame)
    final_loss, _ = endpoint.loss_gradient(frame, delta, target_latent)
    record(final_loss, delta)

    return (delta if config.last_iterate else best_delta), trace


def protect_video(
    clip: VideoClip,
    target: VideoClip,
    endpoint: EncoderEndpoint,
    config: ProtectionConfig,
) -> ProtectionResult:
    """Run the full per-frame optimization against the target clip's latent
    sequence. Frames are processed strictly in order (the warm start chains
    them); a NaN abort poisons only its own frame, which falls back to a
    zero perturbation so the batch completes."""
    if (clip.width, clip.height) != (target.width, target.height):
        raise ConfigError(
            f"target resolution {target.width}x{target.height} must match "
            f"the protected clip {clip.width}x{clip.height}"
        )
    start = time.perf_counter()
    targets = encode_sequence(endpoint, target)
    m = len(targets)
    rng = np.random.default_rng(config.seed)

    deltas: list[np.ndarray] = []
    traces: list[list[float]] = []
    iterations: list[int] = []
    failed: list[int] = []
    previous: np.ndarray | None = None
    for i, frame in enumerate(clip.frames):
        init = init_delta(i, previous, config, rng, shape=frame.pixels.shape)
        latent = targets.latents[target_for_frame(i, m)]
        try:
            final, trace = protect_frame(frame, latent, init, endpoint, config)
            iterations.append(len(trace) - 1)
        except NumericalError as exc:
            failed.append(i)
            trace = exc.trace
            final = np.zeros_like(frame.pixels)
            # the abort happened before the step that would have followed
            # the last recorded loss
            iterations.append(len(trace))
        deltas.append(final)
        traces.append(trace)
        previous = final

    immunized = _apply_deltas(clip, deltas, config)
    loss_initial = [t[0] if t else math.nan for t in traces]
    loss_final = []
    for i, t in enumerate(traces):
        if i in failed or not t:
            loss_final.append(math.nan)
        else:
            loss_final.append(t[-1] if config.last_iterate else min(t))
    return ProtectionResult(
        immunized=immunized,
        perturbations=PerturbationField(deltas=tuple(deltas), epsilon=config.epsilon),
        per_frame_loss_initial=loss_initial,
        per_frame_loss_final=loss_final,
        per_frame_iterations=iterations,
        wall_clock_seconds=time.perf_counter() - start,
        loss_traces=traces,
        failed_frames=failed,
    )


def random_noise_baseline(clip: VideoClip, config: ProtectionConfig) -> ProtectionResult:
    """Uniform noise at the same perturbation intensity, for comparison
    runs; no optimization, so the loss fields are not applicable."""
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    eps = np.float32(config.epsilon)
    deltas = []
    for frame in clip.frames:
        draw = rng.uniform(-config.epsilon, config.epsilon, size=frame.pixels.shape)
        delta = np.clip(draw.astype(np.float32), -eps, eps)
        deltas.append(_project(delta, frame.pixels, config))
    immunized = _apply_deltas(clip, deltas, config)
    return ProtectionResult(
        immunized=immunized,
        perturbations=PerturbationField(deltas=tuple(deltas), epsilon=config.epsilon),
        per_frame_loss_initial=None,
        per_frame_loss_final=None,
        per_frame_iterations=[0] * len(clip),
        wall_clock_seconds=time.perf_counter() - start,
    )


def _apply_deltas(
    clip: VideoClip, deltas: list[np.ndarray], config: ProtectionConfig
) -> VideoClip:
    frames = []
    for frame, delta in zip(clip.frames, deltas):
        pixels = np.clip(frame.pixels + delta, config.pixel_min, config.pixel_max)
        frames.append(FrameImage(pixels))
    return VideoClip(frames=tuple(frames), fps=clip.fps, name=clip.name)
