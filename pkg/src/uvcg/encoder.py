"""Latent encoders and the gradient machinery the protection engine drives.

Three endpoint kinds share one interface:

* ``reference`` — a bundled, deterministic stand-in for a production VAE
  encoder: ``log2(downsample_factor)`` strided 3x3 convolutions (stride 2,
  zero padding 1, 16 hidden channels, tanh after each) followed by a 1x1
  projection to ``latent_channels``. Weights are generated from the seed,
  so "seed => weights" is a reproducible contract (see below). All
  arithmetic is float32; the backward pass is hand-written.
* ``identity`` — returns the frame itself as a (3, h, w) latent and
  computes loss/gradient exactly in float64. This is the oracle endpoint
  used by tests and by the echo sidecar equivalence check.
* ``sidecar`` — an out-of-process encoder spoken to over the binary pipe
  protocol (see uvcg.sidecar).

Weight generation contract (reference kind): a single
``numpy.random.default_rng(seed)`` (PCG64) stream is consumed layer by
layer in network order; for each layer the weight tensor of shape
(out_ch, in_ch, k, k) is drawn first with ``rng.uniform(-s, s)`` filled in
C order, then the bias of shape (out_ch,), with s = 1/sqrt(in_ch * k * k).
Draws happen in float64 and are cast to float32.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_fallback, kernels
from .errors import ConfigError, SidecarError
from .media import FrameImage, VideoClip

HIDDEN_CHANNELS = 16
CONV_KERNEL = 3

ENCODER_KINDS = ("reference", "identity", "sidecar")


@dataclass(frozen=True)
class LatentTensor:
    """Encoder output: float array of shape (channels, height, width)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ConfigError(f"latent must be 3-d (c, h, w), got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ConfigError("latent contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class LatentSequence:
    latents: tuple[LatentTensor, ...]
    source_name: str = ""

    def __post_init__(self):
        lats = tuple(self.latents)
        if len(lats) < 1:
            raise ConfigError("latent sequence needs at least one entry")
        shape = lats[0].shape
        for i, z in enumerate(lats):
            if z.shape != shape:
                raise ConfigError(f"latent {i} has shape {z.shape}, expected {shape}")
        object.__setattr__(self, "latents", lats)

    def __len__(self) -> int:
        return len(self.latents)


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    seed: int = 0
    downsample_factor: int = 8
    latent_channels: int = 4
    sidecar_command: str | None = None

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.downsample_factor < 1 or self.latent_channels < 1:
            raise ConfigError("downsample_factor and latent_channels must be >= 1")
        if self.kind == "reference":
            f = self.downsample_factor
            if f & (f - 1):
                raise ConfigError("reference encoder needs a power-of-two downsample_factor")
        if self.kind == "sidecar" and not (
            self.sidecar_command or os.environ.get("UVCG_SIDECAR_CMD")
        ):
            raise ConfigError("sidecar encoder needs sidecar_command or UVCG_SIDECAR_CMD")


class EncoderEndpoint:
    """Interface every encoder kind implements."""

    spec: EncoderSpec

    def encode(self, frame: FrameImage) -> LatentTensor:
        raise NotImplementedError

    def loss_gradient(
        self, frame: FrameImage, delta: np.ndarray, target: LatentTensor
    ) -> tuple[float, np.ndarray]:
        """Squared l2 distance between E(frame + delta) and target, and its
        gradient with respect to the input pixels (same shape as the frame)."""
        raise NotImplementedError

    def close(self) -> None:
        pass


def _to_chw(pixels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(pixels, (2, 0, 1)))


def _to_hwc(chw: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(chw, (1, 2, 0)))


class ReferenceEncoder(EncoderEndpoint):
    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        self._layers = _reference_weights(spec)
        self._layers64 = [
            (w.astype(np.float64), b.astype(np.float64)) for w, b in self._layers
        ]

    def latent_shape_for(self, height: int, width: int) -> tuple[int, int, int]:
        f = self.spec.downsample_factor
        if height % f or width % f:
            raise ConfigError(
                f"frame {width}x{height} not divisible by downsample_factor {f}"
            )
        return (self.spec.latent_channels, height // f, width // f)

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Run the stack on a (3, h, w) array; returns latent and tanh outputs."""
        acts = []
        a = x
        for w, b in self._layers[:-1]:
            a = np.tanh(kernels.conv2d_forward(a, w, b, 2))
            acts.append(a)
        w, b = self._layers[-1]
        return kernels.conv2d_forward(a, w, b, 1), acts

    def encode(self, frame: FrameImage) -> LatentTensor:
        self.latent_shape_for(frame.height, frame.width)
        latent, _ = self._forward(_to_chw(frame.pixels))
        return LatentTensor(latent)

    def loss_gradient(self, frame, delta, target):
        expected = self.latent_shape_for(frame.height, frame.width)
        if tuple(target.shape) != expected:
            raise ConfigError(f"target shape {target.shape}, encoder yields {expected}")
        delta = np.asarray(delta, dtype=np.float32)
        if delta.shape != frame.pixels.shape:
            raise ConfigError("delta shape must match the frame")
        x = _to_chw(frame.pixels + delta)
        inputs = [x]
        a = x
        for w, b in self._layers[:-1]:
            a = np.tanh(kernels.conv2d_forward(a, w, b, 2))
            inputs.append(a)
        w_out, b_out = self._layers[-1]
        latent = kernels.conv2d_forward(a, w_out, b_out, 1)

        diff = latent - np.asarray(target.values, dtype=np.float32)
        loss = float(np.sum(diff.astype(np.float64) ** 2))

        grad = np.float32(2.0) * diff
        grad = kernels.conv2d_backward_input(
            grad, w_out, 1, inputs[-1].shape[1], inputs[-1].shape[2]
        )
        for layer in range(len(self._layers) - 2, -1, -1):
            w, _ = self._layers[layer]
            a = inputs[layer + 1]
            below = inputs[layer]
            grad = grad * (np.float32(1.0) - a * a)
            grad = kernels.conv2d_backward_input(grad, w, 2, below.shape[1], below.shape[2])
        return loss, _to_hwc(grad)

    def loss_f64(self, frame, delta, target) -> float:
        """Float64 forward pass; backs the finite-difference oracle."""
        x = np.transpose(
            frame.pixels.astype(np.float64) + np.asarray(delta, dtype=np.float64),
            (2, 0, 1),
        )
        a = np.ascontiguousarray(x)
        for w, b in self._layers64[:-1]:
            a = np.tanh(_kernels_fallback.conv2d_forward(a, w, b, 2))
        w, b = self._layers64[-1]
        latent = _kernels_fallback.conv2d_forward(a, w, b, 1)
        diff = latent - np.asarray(target.values, dtype=np.float64)
        return float(np.sum(diff * diff))


class IdentityEncoder(EncoderEndpoint):
    """Latent = the frame itself, channels-first. Loss and gradient are the
    exact closed forms sum((x+d-z)^2) and 2*(x+d-z), computed in float64."""

    def __init__(self, spec: EncoderSpec):
        self.spec = spec

    def latent_shape_for(self, height: int, width: int) -> tuple[int, int, int]:
        return (3, height, width)

    def encode(self, frame: FrameImage) -> LatentTensor:
        return LatentTensor(_to_chw(frame.pixels))

    def loss_gradient(self, frame, delta, target):
        if tuple(target.shape) != (3, frame.height, frame.width):
            raise ConfigError(
                f"target shape {target.shape} incompatible with identity encoder"
            )
        delta = np.asarray(delta)
        if delta.shape != frame.pixels.shape:
            raise ConfigError("delta shape must match the frame")
        # Keep this op sequence in lockstep with the echo sidecar: float64
        # throughout, diff formed in (h, w, 3) layout, plain np.sum.
        perturbed = frame.pixels.astype(np.float64) + delta.astype(np.float64)
        target_hwc = np.ascontiguousarray(
            np.transpose(np.asarray(target.values, dtype=np.float64), (1, 2, 0))
        )
        diff = perturbed - target_hwc
        loss = float(np.sum(diff * diff))
        return loss, 2.0 * diff

    def loss_f64(self, frame, delta, target) -> float:
        return self.loss_gradient(frame, delta, target)[0]


def _reference_weights(spec: EncoderSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(spec.seed)
    layers = []
    n_strided = spec.downsample_factor.bit_length() - 1
    in_ch = 3
    for _ in range(n_strided):
        layers.append(_draw_layer(rng, in_ch, HIDDEN_CHANNELS, CONV_KERNEL))
        in_ch = HIDDEN_CHANNELS
    layers.append(_draw_layer(rng, in_ch, spec.latent_channels, 1))
    return layers


def _draw_layer(rng, in_ch: int, out_ch: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    s = 1.0 / math.sqrt(in_ch * k * k)
    w = rng.uniform(-s, s, size=(out_ch, in_ch, k, k)).astype(np.float32)
    b = rng.uniform(-s, s, size=out_ch).astype(np.float32)
    return w, b


def build_encoder(spec: EncoderSpec) -> EncoderEndpoint:
    """Construct the endpoint for a spec; sidecar kinds launch the process
    and complete the handshake here (failure raises SidecarError)."""
    if spec.kind == "reference":
        return ReferenceEncoder(spec)
    if spec.kind == "identity":
        return IdentityEncoder(spec)
    from .sidecar import SidecarEncoder

    command = os.environ.get("UVCG_SIDECAR_CMD") or spec.sidecar_command
    if not command:
        raise SidecarError("no sidecar command configured")
    return SidecarEncoder(spec, command)


def encode_sequence(endpoint: EncoderEndpoint, clip: VideoClip) -> LatentSequence:
    """Encode every frame in order."""
    return LatentSequence(
        latents=tuple(endpoint.encode(f) for f in clip.frames),
        source_name=clip.name,
    )


def finite_difference_gradient(
    endpoint: EncoderEndpoint,
    frame: FrameImage,
    delta: np.ndarray,
    target: LatentTensor,
    step: float,
    coords: list[int] | None = None,
) -> np.ndarray:
    """Central-difference estimate of the loss gradient, one coordinate at
    a time. Uses the endpoint's float64 loss path when it has one (the
    in-process encoders do); falls back to the float32 loss otherwise.
    ``coords`` restricts the estimate to a sample of flat pixel indices,
    leaving other entries zero.
    """
    if step <= 0:
        raise ConfigError("finite-difference step must be positive")
    loss64 = getattr(endpoint, "loss_f64", None)
    if loss64 is not None:
        evaluate = lambda d: loss64(frame, d, target)
    else:
        evaluate = lambda d: endpoint.loss_gradient(frame, d, target)[0]

    base = np.asarray(delta, dtype=np.float64)
    grad = np.zeros(frame.pixels.shape, dtype=np.float64)
    indices = range(grad.size) if coords is None else coords
    for idx in indices:
        bumped = base.copy()
        bumped.flat[idx] = base.flat[idx] + step
        plus = evaluate(bumped)
        bumped.flat[idx] = base.flat[idx] - step
        minus = evaluate(bumped)
        grad.flat[idx] = (plus - minus) / (2.0 * step)
    return grad
