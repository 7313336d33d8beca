"""Handle relocation after each latent update.

Baseline tracking is a nearest-neighbor search in feature space over a
square window around the current handle. Directionally-weighted tracking
divides each candidate's feature distance by a soft angular weight that
favors displacements aligned with the handle-to-target direction, so that
among similar-looking candidates the tracker advances instead of drifting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch

from .backends.base import FeatureMap


class TrackingError(ValueError):
    pass


@dataclass(frozen=True)
class TrackerConfig:
    r2: int = 3
    lambda_dir: float = 0.05
    epsilon: float = 1e-8
    w_floor: float = 0.05

    def __post_init__(self):
        if self.r2 < 1:
            raise TrackingError("search radius must be >= 1")
        if not 0.0 <= self.lambda_dir <= 1.0:
            raise TrackingError("lambda_dir must lie in [0, 1]")
        if self.epsilon <= 0:
            raise TrackingError("epsilon must be positive")
        if self.w_floor <= 0:
            raise TrackingError("w_floor must be positive")


@dataclass(frozen=True)
class TrackResult:
    new_handle: tuple[int, int]
    feature_distance: float
    weighted_distance: float
    cos_theta: float


def direction_vector(
    p: tuple[int, int], t: tuple[int, int], epsilon: float = 1e-8
) -> tuple[float, float]:
    """(t - p) / (|t - p| + epsilon); the zero vector when p == t."""
    dr = float(t[0] - p[0])
    dc = float(t[1] - p[1])
    norm = math.hypot(dr, dc)
    return (dr / (norm + epsilon), dc / (norm + epsilon))


def angular_weight(
    delta_q: tuple[float, float],
    d_i: tuple[float, float],
    config: TrackerConfig = TrackerConfig(),
) -> tuple[float, float]:
    """Cosine of the candidate displacement against the target direction and
    the resulting soft weight lambda*cos + (1 - lambda), floored."""
    norm = math.hypot(delta_q[0], delta_q[1])
    cos_theta = (delta_q[0] * d_i[0] + delta_q[1] * d_i[1]) / (norm + config.epsilon)
    w = config.lambda_dir * cos_theta + (1.0 - config.lambda_dir)
    return cos_theta, max(w, config.w_floor)


def _candidates(
    shape: tuple[int, int], handle: tuple[int, int], r2: int
) -> list[tuple[int, int]]:
    h, w = shape
    out = [
        (r, c)
        for r in range(handle[0] - r2, handle[0] + r2 + 1)
        for c in range(handle[1] - r2, handle[1] + r2 + 1)
        if 0 <= r < h and 0 <= c < w
    ]
    if not out:
        raise TrackingError(
            f"search region around {handle} with radius {r2} misses the grid {shape}"
        )
    return out


def _search(
    F_k: FeatureMap,
    reference_feature: torch.Tensor,
    current_handle: tuple[int, int],
    direction: Optional[tuple[float, float]],
    config: TrackerConfig,
) -> TrackResult:
    handle = (int(current_handle[0]), int(current_handle[1]))
    feats = F_k.data.detach()
    ref = reference_feature.detach().reshape(-1)
    if ref.shape[0] != feats.shape[0]:
        raise TrackingError(
            f"reference feature has {ref.shape[0]} channels, map has {feats.shape[0]}"
        )

    best = None
    for rank, (r, c) in enumerate(_candidates(F_k.spatial_shape, handle, config.r2)):
        dist = float((feats[:, r, c] - ref).abs().sum())
        if direction is None:
            cos_theta, w = 0.0, 1.0
        else:
            cos_theta, w = angular_weight(
                (float(r - handle[0]), float(c - handle[1])), direction, config
            )
        weighted = dist / w
        # tie ladder: weighted distance, raw distance, alignment, then the
        # current handle first and remaining candidates in row-major order
        anchor = 0 if (r, c) == handle else 1 + rank
        key = (weighted, dist, -cos_theta, anchor)
        if best is None or key < best[0]:
            best = (key, TrackResult((r, c), dist, weighted, cos_theta))
    return best[1]


def dwpt_track(
    F_k: FeatureMap,
    reference_feature: torch.Tensor,
    current_handle: tuple[int, int],
    target: tuple[int, int],
    config: TrackerConfig = TrackerConfig(),
) -> TrackResult:
    """Directionally-weighted nearest-neighbor search: picks the candidate
    minimizing feature distance divided by the angular weight. Degenerates to
    the baseline search when lambda_dir is 0."""
    if config.lambda_dir == 0.0:
        return baseline_track(F_k, reference_feature, current_handle, config)
    d_i = direction_vector(current_handle, target, config.epsilon)
    return _search(F_k, reference_feature, current_handle, d_i, config)


def baseline_track(
    F_k: FeatureMap,
    reference_feature: torch.Tensor,
    current_handle: tuple[int, int],
    config: TrackerConfig = TrackerConfig(),
) -> TrackResult:
    """Plain nearest-neighbor search over the window, no directional bias."""
    return _search(F_k, reference_feature, current_handle, None, config)
