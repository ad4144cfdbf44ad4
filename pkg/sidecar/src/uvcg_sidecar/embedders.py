"""Embedders the sidecar can host: frames (and text) to unit vectors."""

from __future__ import annotations

import hashlib

import numpy as np


class ConstantEmbedder:
    """Every image and every prompt maps to the same unit vector.

    Test double: with it, frame consistency and prompt consistency are
    exactly 1, which pins the engine's cosine plumbing.
    """

    supports_text = True
    _vector = np.array([0.6, 0.8, 0.0], dtype=np.float32)

    def embed_image(self, frame: np.ndarray) -> np.ndarray:
        return self._vector

    def embed_text(self, prompt: str) -> np.ndarray:
        return self._vector


class HashTextEmbedder:
    """Deterministic stand-in when no real text encoder is hosted: images
    embed as their normalized flattened latent, prompts as a unit vector
    derived from a SHA-256 expansion of the text."""

    supports_text = True

    def __init__(self, encoder, dim: int = 64):
        self._encoder = encoder
        self._dim = dim

    def embed_image(self, frame: np.ndarray) -> np.ndarray:
        flat = self._encoder.encode(frame).astype(np.float64).ravel()[: self._dim]
        if flat.size < self._dim:
            flat = np.pad(flat, (0, self._dim - flat.size))
        norm = np.linalg.norm(flat)
        return (flat / norm if norm else flat).astype(np.float32)

    def embed_text(self, prompt: str) -> np.ndarray:
        stream = []
        counter = 0
        while len(stream) < self._dim:
            digest = hashlib.sha256(f"{counter}:{prompt}".encode()).digest()
            stream.extend(b / 255.0 - 0.5 for b in digest)
            counter += 1
        vec = np.asarray(stream[: self._dim], dtype=np.float64)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


def build_embedder(spec: str, encoder):
    if spec == "constant":
        return ConstantEmbedder()
    if spec == "hash":
        return HashTextEmbedder(encoder)
    if spec == "none":
        return None
    raise ValueError(f"unknown embedder {spec!r}")
