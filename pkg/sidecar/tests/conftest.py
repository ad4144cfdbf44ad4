import io
import json
import shlex
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

from uvcg_sidecar import wire


def compose(*frames: bytes) -> io.BytesIO:
    return io.BytesIO(b"".join(frames))


def request(opcode: int, payload: bytes = b"") -> bytes:
    body = b"UVCG" + bytes((1, opcode)) + payload
    return struct.pack("<Q", len(body)) + body


def parse_replies(raw: bytes):
    stream = io.BytesIO(raw)
    replies = []
    while True:
        frame = wire.read_frame(stream)
        if frame is None:
            return replies
        replies.append(frame)


def sidecar_command(*flags: str) -> str:
    parts = [shlex.quote(sys.executable), "-m", "uvcg_sidecar", *flags]
    return " ".join(parts)


def write_clip_dir(directory: Path, seed: int, n: int, size: int) -> Path:
    """Write a frame directory in the engine's pinned on-disk format
    (8-bit RGB PNGs + manifest.json) without importing the engine."""
    from PIL import Image

    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        pixels = (rng.random((size, size, 3)) * 255).round().astype(np.uint8)
        Image.fromarray(pixels, mode="RGB").save(directory / f"frame_{i:05d}.png")
    manifest = {
        "frame_count": n,
        "width": size,
        "height": size,
        "fps_num": 24,
        "fps_den": 1,
        "frame_file_pattern": "frame_%05d.png",
    }
    (directory / "manifest.json").write_text(json.dumps(manifest))
    return directory


@pytest.fixture
def clip_dirs(tmp_path):
    return (
        write_clip_dir(tmp_path / "video", seed=1, n=4, size=16),
        write_clip_dir(tmp_path / "target", seed=2, n=2, size=16),
    )
