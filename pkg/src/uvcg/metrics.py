"""Quality and consistency metrics, and the evaluation report format.

PSNR uses peak 1.0 and is capped at 100 dB (a zero-MSE pair reports the
cap, keeping reports finite). SSIM follows the original parameterization:
11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0,
computed per channel on the valid (border-cropped) region and averaged.
Frame consistency is the mean cosine similarity of consecutive frame
embeddings; prompt consistency compares frame embeddings with a text
embedding, so it needs a text-capable (sidecar) embedder.

Every aggregate is ``sum(per_frame) / len(per_frame)`` over its per-frame
list, exactly; report emission re-checks that and validates the pinned
JSON schema. LPIPS and VMAF are not computed here: their keys are reserved
as nulls for external tools to fill.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

import jsonschema

from .encoder import EncoderEndpoint
from .errors import CapabilityError, ConfigError, IoError, SchemaError
from .media import FrameImage, VideoClip, write_json

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP_DB = 100.0

_NULLABLE_SERIES = {
    "anyOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {"type": "null"},
    ]
}

REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "meta",
        "prompt_consistency",
        "frame_consistency",
        "ssim",
        "psnr",
        "lpips",
        "vmaf",
        "per_frame",
    ],
    "properties": {
        "meta": {"type": "object"},
        "prompt_consistency": {"type": ["number", "null"]},
        "frame_consistency": {"type": "number"},
        "ssim": {"type": ["number", "null"]},
        "psnr": {"type": ["number", "null"]},
        "lpips": {"type": "null"},
        "vmaf": {"type": "null"},
        "per_frame": {
            "type": "object",
            "additionalProperties": False,
            "required": ["ssim", "psnr", "frame_cos"],
            "properties": {
                "ssim": _NULLABLE_SERIES,
                "psnr": _NULLABLE_SERIES,
                "frame_cos": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 1,
                },
            },
        },
    },
}


def _check_pair(a: VideoClip, b: VideoClip) -> None:
    if len(a) != len(b):
        raise ConfigError(f"clip lengths differ: {len(a)} vs {len(b)}")
    if (a.width, a.height) != (b.width, b.height):
        raise ConfigError("clip resolutions differ")


def psnr(a: VideoClip, b: VideoClip) -> tuple[float, list[float]]:
    """Mean and per-frame PSNR in dB, peak 1.0, capped at 100."""
    _check_pair(a, b)
    per_frame = []
    for fa, fb in zip(a.frames, b.frames):
        mse = float(
            np.mean((fa.pixels.astype(np.float64) - fb.pixels.astype(np.float64)) ** 2)
        )
        if mse == 0.0:
            per_frame.append(PSNR_CAP_DB)
        else:
            per_frame.append(min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse)))
    return sum(per_frame) / len(per_frame), per_frame


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    # 11-tap window: radius 5 = int(truncate * sigma + 0.5)
    truncate = 3.5
    filt = lambda im: gaussian_filter(im, sigma=SSIM_SIGMA, truncate=truncate)
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    ux, uy = filt(x), filt(y)
    vx = filt(x * x) - ux * ux
    vy = filt(y * y) - uy * uy
    vxy = filt(x * y) - ux * uy
    ssim_map = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / (
        (ux * ux + uy * uy + c1) * (vx + vy + c2)
    )
    pad = (SSIM_WINDOW - 1) // 2
    return float(np.mean(ssim_map[pad:-pad, pad:-pad]))


def ssim(a: VideoClip, b: VideoClip) -> tuple[float, list[float]]:
    """Mean and per-frame SSIM (per channel, averaged)."""
    _check_pair(a, b)
    if a.width < SSIM_WINDOW or a.height < SSIM_WINDOW:
        raise ConfigError(f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    per_frame = []
    for fa, fb in zip(a.frames, b.frames):
        xa = fa.pixels.astype(np.float64)
        xb = fb.pixels.astype(np.float64)
        per_channel = [_ssim_channel(xa[:, :, c], xb[:, :, c]) for c in range(3)]
        per_frame.append(sum(per_channel) / 3.0)
    return sum(per_frame) / len(per_frame), per_frame


class EmbedderEndpoint:
    """Maps frames (and optionally text) to unit-norm embedding vectors."""

    def embed_image(self, frame: FrameImage) -> np.ndarray:
        raise NotImplementedError

    def embed_text(self, prompt: str) -> np.ndarray:
        raise CapabilityError("this embedder cannot embed text")

    def close(self) -> None:
        pass


class ReferenceEmbedder(EmbedderEndpoint):
    """Flattened latent of an in-process encoder, L2-normalized. No text."""

    def __init__(self, endpoint: EncoderEndpoint):
        self._endpoint = endpoint

    def embed_image(self, frame: FrameImage) -> np.ndarray:
        flat = self._endpoint.encode(frame).values.astype(np.float64).ravel()
        norm = float(np.linalg.norm(flat))
        if norm == 0.0:
            raise ConfigError("latent collapsed to zero; cannot normalize")
        return flat / norm


def frame_consistency(clip: VideoClip, embedder: EmbedderEndpoint) -> tuple[float, list[float]]:
    """Mean cosine similarity between consecutive frame embeddings."""
    if len(clip) < 2:
        raise ConfigError("frame consistency needs at least two frames")
    embeddings = [embedder.embed_image(f) for f in clip.frames]
    sims = [
        float(np.dot(embeddings[i], embeddings[i + 1]))
        for i in range(len(embeddings) - 1)
    ]
    return sum(sims) / len(sims), sims


def prompt_consistency(
    clip: VideoClip, prompt: str, embedder: EmbedderEndpoint
) -> tuple[float, list[float]]:
    """Mean cosine similarity between each frame embedding and the prompt
    embedding; raises CapabilityError for image-only embedders."""
    text = embedder.embed_text(prompt)
    sims = [float(np.dot(embedder.embed_image(f), text)) for f in clip.frames]
    return sum(sims) / len(sims), sims


@dataclass
class EvaluationReport:
    meta: dict
    frame_consistency: float
    per_frame_frame_cos: list[float]
    prompt_consistency: float | None = None
    ssim: float | None = None
    per_frame_ssim: list[float] | None = None
    psnr: float | None = None
    per_frame_psnr: list[float] | None = None

    def to_json_dict(self) -> dict:
        return {
            "meta": self.meta,
            "prompt_consistency": self.prompt_consistency,
            "frame_consistency": self.frame_consistency,
            "ssim": self.ssim,
            "psnr": self.psnr,
            "lpips": None,
            "vmaf": None,
            "per_frame": {
                "ssim": self.per_frame_ssim,
                "psnr": self.per_frame_psnr,
                "frame_cos": self.per_frame_frame_cos,
            },
        }


def _check_aggregate(name: str, aggregate, per_frame) -> None:
    if (aggregate is None) != (per_frame is None):
        raise SchemaError(f"{name}: aggregate and per-frame list must match")
    if per_frame is None:
        return
    if len(per_frame) == 0:
        raise SchemaError(f"{name}: empty per-frame list")
    if aggregate != sum(per_frame) / len(per_frame):
        raise SchemaError(f"{name}: aggregate is not the mean of the per-frame list")


def emit_report(
    report: EvaluationReport,
    path: str | os.PathLike,
    csv_path: str | os.PathLike | None = None,
) -> dict:
    """Validate the report against the pinned schema and write it as JSON
    (optionally also as one CSV row per aggregate metric)."""
    _check_aggregate("ssim", report.ssim, report.per_frame_ssim)
    _check_aggregate("psnr", report.psnr, report.per_frame_psnr)
    _check_aggregate(
        "frame_consistency", report.frame_consistency, report.per_frame_frame_cos
    )
    payload = report.to_json_dict()
    try:
        jsonschema.validate(payload, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"report violates schema: {exc.message}") from exc
    write_json(path, payload)
    if csv_path is not None:
        _write_csv(payload, csv_path)
    return payload


def _write_csv(payload: dict, csv_path: str | os.PathLike) -> None:
    rows = [
        ("prompt_consistency", "mean", payload["prompt_consistency"]),
        ("frame_consistency", "mean", payload["frame_consistency"]),
        ("ssim", "mean", payload["ssim"]),
        ("psnr", "mean", payload["psnr"]),
        ("lpips", "mean", None),
        ("vmaf", "mean", None),
    ]
    try:
        with Path(csv_path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("metric", "scope", "value"))
            for name, scope, value in rows:
                writer.writerow((name, scope, "" if value is None else repr(value)))
    except OSError as exc:
        raise IoError(f"cannot write {csv_path}: {exc}") from exc
