import numpy as np
import pytest

from uvcg.encoder import EncoderSpec, build_encoder
from uvcg.media import FrameImage, VideoClip


def random_clip(seed, n=3, size=16, name=None):
    rng = np.random.default_rng(seed)
    frames = tuple(
        FrameImage(rng.random((size, size, 3)).astype(np.float32)) for _ in range(n)
    )
    return VideoClip(frames=frames, name=name or f"clip{seed}")


def flat_clip(value, n=2, size=16, name="flat"):
    px = np.full((size, size, 3), value, dtype=np.float32)
    return VideoClip(frames=tuple(FrameImage(px) for _ in range(n)), name=name)


def translating_clip(seed, n=4, size=32, shift=2, name=None):
    """Smooth pattern sliding horizontally by `shift` px per frame."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    a, b = rng.uniform(1, 3, 2)
    ph1, ph2 = rng.uniform(0, 2 * np.pi, 2)
    frames = []
    for i in range(n):
        pattern = (
            0.5
            + 0.25 * np.sin(2 * np.pi * a * (xx + shift * i) / size + ph1)
            + 0.2 * np.cos(2 * np.pi * b * yy / size + ph2)
        )
        px = np.repeat(pattern[:, :, None], 3, axis=2).astype(np.float32)
        frames.append(FrameImage(px * np.float32(0.9)))
    return VideoClip(frames=tuple(frames), name=name or f"pan{seed}")


@pytest.fixture(scope="session")
def reference_endpoint():
    return build_encoder(EncoderSpec(kind="reference", seed=7))


@pytest.fixture(scope="session")
def identity_endpoint():
    return build_encoder(EncoderSpec(kind="identity"))
