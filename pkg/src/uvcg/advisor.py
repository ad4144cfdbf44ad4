"""Target-selection scoring: semantic proximity and content simplicity.

Both scores operationalize qualitative selection guidance and are advisory
only; they never feed the optimizer. Proximity is the mean cosine
similarity between the protected clip's latents and the candidate's
(cycled to length). Simplicity is one minus the mean local gradient
magnitude: per interior pixel, the horizontal and vertical components are
the mean absolute adjacent differences inside the 3x3 neighbourhood, whose
joint magnitude is normalized by its maximum sqrt(2). A flat clip scores
1.0, a pixel-scale checkerboard 0.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderEndpoint, encode_sequence
from .errors import ConfigError
from .media import VideoClip
from .protect import target_for_frame


@dataclass(frozen=True)
class TargetScore:
    candidate_name: str
    proximity: float
    simplicity: float
    combined: float


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def proximity_score(
    protected: VideoClip, candidate: VideoClip, endpoint: EncoderEndpoint
) -> float:
    """Mean latent cosine similarity over frame pairs, candidate cycled."""
    if (protected.width, protected.height) != (candidate.width, candidate.height):
        raise ConfigError("candidate resolution must match the protected clip")
    own = encode_sequence(endpoint, protected)
    other = encode_sequence(endpoint, candidate)
    m = len(other)
    sims = [
        _cosine(
            own.latents[i].values.astype(np.float64).ravel(),
            other.latents[target_for_frame(i, m)].values.astype(np.float64).ravel(),
        )
        for i in range(len(own))
    ]
    return sum(sims) / len(sims)


def simplicity_score(candidate: VideoClip) -> float:
    """1 - normalized mean gradient magnitude; shift-invariant, in [0, 1]."""
    if candidate.width < 3 or candidate.height < 3:
        raise ConfigError("simplicity needs frames of at least 3x3")
    means = []
    for frame in candidate.frames:
        px = frame.pixels.astype(np.float64)
        c = px[1:-1, 1:-1]
        gh = 0.5 * (np.abs(px[1:-1, 2:] - c) + np.abs(c - px[1:-1, :-2]))
        gv = 0.5 * (np.abs(px[2:, 1:-1] - c) + np.abs(c - px[:-2, 1:-1]))
        means.append(float(np.mean(np.hypot(gh, gv))) / math.sqrt(2.0))
    return 1.0 - sum(means) / len(means)


def rank_targets(
    protected: VideoClip,
    candidates: list[VideoClip],
    endpoint: EncoderEndpoint,
    w1: float = 0.5,
    w2: float = 0.5,
) -> list[TargetScore]:
    """Score every candidate and sort by the combined score, best first;
    ties break on the candidate name ascending."""
    if not candidates:
        raise ConfigError("need at least one candidate")
    scores = []
    for cand in candidates:
        prox = proximity_score(protected, cand, endpoint)
        simp = simplicity_score(cand)
        scores.append(
            TargetScore(
                candidate_name=cand.name,
                proximity=prox,
                simplicity=simp,
                combined=w1 * prox + w2 * simp,
            )
        )
    return sorted(scores, key=lambda s: (-s.combined, s.candidate_name))
