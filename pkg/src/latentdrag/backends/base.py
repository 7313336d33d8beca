"""Backend abstraction: image/latent codecs, deterministic inversion and
sampling along a DDIM trajectory, and denoiser feature extraction.

A backend owns its latent geometry and noise schedule. All trajectory ops
are pure functions of their inputs when the backend is deterministic, so
handles can be shared read-only across sessions.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch


class BackendError(ValueError):
    """Raised when a backend op is called outside its contract."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise scales of a variance-preserving trajectory.

    ``noise_levels[i]`` is the noise scale b_t at timestep t = i + 1, with
    b_0 = 0 implied. The signal scale is a_t = sqrt(1 - b_t^2).
    """

    num_steps: int
    noise_levels: tuple[float, ...]

    def __post_init__(self):
        if self.num_steps < 1:
            raise BackendError("schedule needs at least one step")
        if len(self.noise_levels) != self.num_steps:
            raise BackendError(
                f"noise_levels length {len(self.noise_levels)} != num_steps {self.num_steps}"
            )
        diffs = np.diff((0.0,) + tuple(self.noise_levels))
        if not (diffs > 0).all():
            raise BackendError("noise_levels must be strictly increasing from 0")
        if max(self.noise_levels) >= 1.0:
            raise BackendError("noise scales must stay below 1 (variance preserving)")

    def noise_scale(self, t: int) -> float:
        """b_t, the noise scale at timestep t (b_0 = 0)."""
        self.check_timestep(t)
        return 0.0 if t == 0 else self.noise_levels[t - 1]

    def signal_scale(self, t: int) -> float:
        """a_t = sqrt(1 - b_t^2)."""
        b = self.noise_scale(t)
        return float(np.sqrt(1.0 - b * b))

    def check_timestep(self, t: int) -> None:
        if not 0 <= t <= self.num_steps:
            raise BackendError(f"timestep {t} outside schedule [0, {self.num_steps}]")


def uniform_schedule(num_steps: int = 50, max_noise: float = 0.8) -> DiffusionSchedule:
    """Evenly spaced noise scales from max_noise/num_steps up to max_noise."""
    levels = tuple(max_noise * (i + 1) / num_steps for i in range(num_steps))
    return DiffusionSchedule(num_steps=num_steps, noise_levels=levels)


@dataclass(frozen=True)
class LatentCode:
    """A latent tensor on the diffusion trajectory.

    ``timestep`` is the trajectory position t (0 = clean), ``step_index``
    counts edit iterations applied at fixed t.
    """

    data: torch.Tensor  # (channels, height, width)
    timestep: int
    step_index: int = 0

    def __post_init__(self):
        if self.data.dim() != 3:
            raise BackendError(f"latent must be (C, H, W), got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise BackendError("latent contains non-finite entries")
        if self.timestep < 0:
            raise BackendError("timestep must be >= 0")

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class FeatureMap:
    """Denoiser feature grid aligned to latent pixel coordinates."""

    data: torch.Tensor  # (feature_channels, height, width)
    source_layer: str
    timestep: int

    def __post_init__(self):
        if self.data.dim() != 3:
            raise BackendError(f"features must be (C, H, W), got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise BackendError("feature map contains non-finite entries")

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    latent_shape: tuple[int, int, int]  # (channels, height, width)
    feature_layer_ids: tuple[str, ...]
    deterministic: bool

    def __post_init__(self):
        if any(s <= 0 for s in self.latent_shape):
            raise BackendError("latent_shape entries must be positive")
        if not self.feature_layer_ids:
            raise BackendError("backend must declare at least one feature layer")


class DiffusionBackend(ABC):
    """Contract every generative backbone plugs in behind.

    Immutable after construction; safe to share for read-only inference.
    """

    @abstractmethod
    def descriptor(self) -> BackendDescriptor: ...

    @property
    @abstractmethod
    def schedule(self) -> DiffusionSchedule: ...

    @abstractmethod
    def encode_image(self, image: np.ndarray) -> LatentCode:
        """Encode an (H, W, 3) float image in [0, 1] to a clean latent (t=0)."""

    @abstractmethod
    def decode_latent(self, z: LatentCode) -> np.ndarray:
        """Decode a t=0 latent back to an (H, W, 3) image in [0, 1]."""

    @abstractmethod
    def ddim_invert(
        self, z0: LatentCode, target_t: int, schedule: Optional[DiffusionSchedule] = None
    ) -> LatentCode:
        """Walk the deterministic trajectory from t=0 up to target_t."""

    @abstractmethod
    def ddim_sample(
        self,
        zt: LatentCode,
        schedule: Optional[DiffusionSchedule] = None,
        timesteps: Optional[Sequence[int]] = None,
    ) -> LatentCode:
        """Walk the deterministic trajectory from zt.timestep down to t=0.

        ``timesteps`` optionally truncates the walk to a decreasing subset of
        intermediate timesteps ending at 0 (coarse preview sampling). The walk
        is differentiable with respect to zt.data.
        """

    @abstractmethod
    def extract_features(
        self,
        z: LatentCode,
        layer: str,
        condition: Optional[torch.Tensor] = None,
    ) -> FeatureMap:
        """Denoiser features at a declared layer, spatially aligned to the
        latent grid and differentiable with respect to z.data."""

    @abstractmethod
    def decode_preview(self, z: LatentCode) -> torch.Tensor:
        """Differentiable display mapping of a t=0 latent to an (H, W, C)
        image tensor. Unlike decode_latent this stays on the autograd graph
        and applies no display clamping."""

    def check_layer(self, layer: str) -> None:
        ids = self.descriptor().feature_layer_ids
        if layer not in ids:
            raise BackendError(f"unknown feature layer {layer!r}; declared: {list(ids)}")
