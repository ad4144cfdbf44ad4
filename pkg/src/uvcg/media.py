"""Frame and video data model plus frame-directory I/O.

A clip on disk is a directory of lossless 8-bit RGB PNG files and a
``manifest.json``. Frames are held in memory as float32 arrays in [0, 1];
files store value/255. Quantization on save is round-to-nearest (ties to
even), so a save/load round trip moves any pixel by at most 1/510.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, IntegrityError, IoError

DEFAULT_FRAME_PATTERN = "frame_%05d.png"

_MANIFEST_KEYS = ("frame_count", "width", "height", "fps_num", "fps_den")


@dataclass(frozen=True)
class FrameImage:
    """One RGB frame: float32 pixels of shape (height, width, 3) in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise IntegrityError(f"frame must be (h, w, 3), got {px.shape}")
        if not np.isfinite(px).all():
            raise IntegrityError("frame contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise IntegrityError("frame intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class VideoClip:
    """An ordered, resolution-consistent frame sequence."""

    frames: tuple[FrameImage, ...]
    fps: Fraction = Fraction(24, 1)
    name: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise IntegrityError("clip needs at least one frame")
        w, h = frames[0].width, frames[0].height
        for i, f in enumerate(frames):
            if f.width != w or f.height != h:
                raise IntegrityError(
                    f"frame {i} is {f.width}x{f.height}, expected {w}x{h}"
                )
        if self.fps <= 0:
            raise IntegrityError("fps must be positive")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", Fraction(self.fps))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def pixel_arrays(self) -> list[np.ndarray]:
        return [f.pixels for f in self.frames]


@dataclass(frozen=True)
class Manifest:
    frame_count: int
    width: int
    height: int
    fps: Fraction
    frame_file_pattern: str = DEFAULT_FRAME_PATTERN

    def to_json_dict(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "width": self.width,
            "height": self.height,
            "fps_num": self.fps.numerator,
            "fps_den": self.fps.denominator,
            "frame_file_pattern": self.frame_file_pattern,
        }


def quantize_frame(pixels: np.ndarray) -> np.ndarray:
    """Map [0,1] float intensities to uint8 by round-to-nearest of 255*v.

    The product is formed in float64 so the half-step error bound is exact.
    """
    scaled = np.rint(np.asarray(pixels, dtype=np.float64) * 255.0)
    return np.clip(scaled, 0.0, 255.0).astype(np.uint8)


def _pattern_regex(pattern: str) -> re.Pattern:
    # turn a single %0Nd (or %d) printf pattern into a filename regex
    m = re.fullmatch(r"(.*)%(?:0(\d+))?d(.*)", pattern)
    if m is None:
        raise FormatError(f"unsupported frame_file_pattern: {pattern!r}")
    pre, digits, post = m.groups()
    num = r"\d{%s,}" % digits if digits else r"\d+"
    return re.compile(re.escape(pre) + num + re.escape(post))


def load_manifest(directory_path: str | os.PathLike) -> Manifest:
    path = Path(directory_path) / "manifest.json"
    if not path.is_file():
        raise FormatError(f"missing manifest: {path}")
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest {path}: {exc}") from exc
    for key in _MANIFEST_KEYS:
        if key not in raw or not isinstance(raw[key], int):
            raise FormatError(f"manifest missing integer key {key!r}")
    if raw["frame_count"] < 1 or raw["width"] < 1 or raw["height"] < 1:
        raise FormatError("manifest dimensions must be positive")
    if raw["fps_num"] < 1 or raw["fps_den"] < 1:
        raise FormatError("manifest fps must be positive")
    pattern = raw.get("frame_file_pattern", DEFAULT_FRAME_PATTERN)
    if not isinstance(pattern, str):
        raise FormatError("frame_file_pattern must be a string")
    return Manifest(
        frame_count=raw["frame_count"],
        width=raw["width"],
        height=raw["height"],
        fps=Fraction(raw["fps_num"], raw["fps_den"]),
        frame_file_pattern=pattern,
    )


def _load_frame(path: Path, width: int, height: int) -> FrameImage:
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                raise FormatError(
                    f"{path.name}: mode {img.mode!r} rejected, frames must be 8-bit RGB"
                )
            data = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise FormatError(f"cannot decode frame {path}: {exc}") from exc
    if data.shape != (height, width, 3):
        raise IntegrityError(
            f"{path.name}: resolution {data.shape[1]}x{data.shape[0]}, "
            f"manifest says {width}x{height}"
        )
    return FrameImage(data.astype(np.float32) / np.float32(255.0))


def load_clip(directory_path: str | os.PathLike) -> VideoClip:
    """Load a frame directory written by :func:`save_clip`.

    Raises FormatError for a missing/bad manifest or non-RGB frames and
    IntegrityError when the directory contents contradict the manifest.
    """
    directory = Path(directory_path)
    manifest = load_manifest(directory)

    rx = _pattern_regex(manifest.frame_file_pattern)
    present = sum(1 for p in directory.iterdir() if rx.fullmatch(p.name))
    if present != manifest.frame_count:
        raise IntegrityError(
            f"manifest says {manifest.frame_count} frames, directory holds {present}"
        )

    frames = []
    for i in range(manifest.frame_count):
        path = directory / (manifest.frame_file_pattern % i)
        if not path.is_file():
            raise IntegrityError(f"missing frame file {path.name}")
        frames.append(_load_frame(path, manifest.width, manifest.height))
    return VideoClip(frames=tuple(frames), fps=manifest.fps, name=directory.name)


def save_clip(
    clip: VideoClip,
    directory_path: str | os.PathLike,
    frame_file_pattern: str = DEFAULT_FRAME_PATTERN,
) -> Manifest:
    """Write a clip as 8-bit RGB PNGs plus manifest.json; returns the manifest."""
    directory = Path(directory_path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(clip.frames):
            img = Image.fromarray(quantize_frame(frame.pixels), mode="RGB")
            img.save(directory / (frame_file_pattern % i), format="PNG")
        manifest = Manifest(
            frame_count=len(clip),
            width=clip.width,
            height=clip.height,
            fps=clip.fps,
            frame_file_pattern=frame_file_pattern,
        )
        write_json(directory / "manifest.json", manifest.to_json_dict())
    except OSError as exc:
        raise IoError(f"cannot write clip to {directory}: {exc}") from exc
    return manifest


def write_json(path: str | os.PathLike, payload: dict) -> None:
    """Write JSON with a stable byte layout (sorted keys, fixed separators)."""
    text = json.dumps(payload, sort_keys=True, indent=2)
    try:
        Path(path).write_text(text + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
