"""Deterministic synthetic backend for desk-scale verification.

Latent = image (identity codec) on a small grid. The denoiser is a fixed
depth-3 stack of seeded 3x3 convolutions with tanh nonlinearities, so every
quantity the losses touch is exactly computable and differentiable at
float64. Sampling uses the standard explicit DDIM recursion; inversion
solves each sampling step implicitly (fixed-point), which makes
sample(invert(z)) reproduce z to solver precision rather than to the usual
first-order approximation error.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as nnf

from .base import (
    BackendDescriptor,
    BackendError,
    DiffusionBackend,
    DiffusionSchedule,
    FeatureMap,
    LatentCode,
    uniform_schedule,
)

_LAYERS = ("conv1", "conv2", "conv3")
_FEATURE_LAYERS = ("mid", "late")

# eps output gain; keeps per-step fixed-point contraction well below 1
_EPS_GAIN = 0.3
# fixed-point iterations per inversion step (contraction ~1e-2 per iter)
_INVERT_ITERS = 8


class SyntheticBackend(DiffusionBackend):
    """Identity codec + fixed nonlinear conv denoiser on a small grid."""

    def __init__(
        self,
        height: int = 32,
        width: int = 32,
        channels: int = 3,
        feature_channels: int = 8,
        num_steps: int = 50,
        max_noise: float = 0.8,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
        kernel_deltas: Optional[dict[str, torch.Tensor]] = None,
    ):
        self.height = height
        self.width = width
        self.channels = channels
        self.feature_channels = feature_channels
        self.seed = seed
        self.dtype = dtype
        self._schedule = uniform_schedule(num_steps=num_steps, max_noise=max_noise)

        gen = torch.Generator().manual_seed(seed)
        f = feature_channels
        self._kernels = {
            "conv1": self._draw_kernel(gen, f, channels),
            "conv2": self._draw_kernel(gen, f, f),
            "conv3": self._draw_kernel(gen, channels, f),
        }
        self._deltas = {}
        if kernel_deltas:
            for layer, delta in kernel_deltas.items():
                if layer not in _LAYERS:
                    raise BackendError(f"unknown kernel layer {layer!r}")
                if delta.shape != self._kernels[layer].shape:
                    raise BackendError(
                        f"delta shape {tuple(delta.shape)} != kernel shape "
                        f"{tuple(self._kernels[layer].shape)} for {layer!r}"
                    )
                self._deltas[layer] = delta.to(dtype)

    def _draw_kernel(self, gen: torch.Generator, out_ch: int, in_ch: int) -> torch.Tensor:
        k = torch.randn(out_ch, in_ch, 3, 3, generator=gen, dtype=self.dtype)
        return k / np.sqrt(in_ch * 9)

    # -- descriptor -------------------------------------------------------

    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            name="synthetic",
            latent_shape=(self.channels, self.height, self.width),
            feature_layer_ids=_FEATURE_LAYERS,
            deterministic=True,
        )

    @property
    def schedule(self) -> DiffusionSchedule:
        return self._schedule

    def kernel(self, layer: str) -> torch.Tensor:
        """Effective kernel (base + adapter delta) for a denoiser layer."""
        base = self._kernels[layer]
        delta = self._deltas.get(layer)
        return base if delta is None else base + delta

    def kernel_shapes(self) -> dict[str, tuple[int, ...]]:
        return {layer: tuple(k.shape) for layer, k in self._kernels.items()}

    def with_kernel_deltas(self, deltas: dict[str, torch.Tensor]) -> "SyntheticBackend":
        """New backend handle with additive kernel perturbations applied."""
        return SyntheticBackend(
            height=self.height,
            width=self.width,
            channels=self.channels,
            feature_channels=self.feature_channels,
            num_steps=self._schedule.num_steps,
            max_noise=self._schedule.noise_levels[-1],
            seed=self.seed,
            dtype=self.dtype,
            kernel_deltas=deltas,
        )

    # -- codec ------------------------------------------------------------

    def encode_image(self, image: np.ndarray) -> LatentCode:
        image = np.asarray(image)
        if image.shape != (self.height, self.width, self.channels):
            raise BackendError(
                f"image shape {image.shape} incompatible with backend geometry "
                f"({self.height}, {self.width}, {self.channels})"
            )
        data = torch.from_numpy(np.ascontiguousarray(image)).to(self.dtype)
        return LatentCode(data=data.permute(2, 0, 1), timestep=0)

    def decode_latent(self, z: LatentCode) -> np.ndarray:
        if z.timestep != 0:
            raise BackendError(
                f"decode needs a t=0 latent, got t={z.timestep}; denoise first"
            )
        data = z.data.detach().permute(1, 2, 0).clamp(0.0, 1.0)
        return data.cpu().numpy()

    def decode_preview(self, z: LatentCode) -> torch.Tensor:
        if z.timestep != 0:
            raise BackendError(
                f"preview decode needs a t=0 latent, got t={z.timestep}"
            )
        return z.data.permute(1, 2, 0)

    # -- denoiser ---------------------------------------------------------

    def _stack(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        h1 = torch.tanh(nnf.conv2d(x.unsqueeze(0), self.kernel("conv1"), padding=1))
        h2 = torch.tanh(nnf.conv2d(h1, self.kernel("conv2"), padding=1))
        eps = nnf.conv2d(h2, self.kernel("conv3"), padding=1) * _EPS_GAIN
        return h1.squeeze(0), h2.squeeze(0), eps.squeeze(0)

    def predict_noise(self, data: torch.Tensor, t: int) -> torch.Tensor:
        """Denoiser output eps(z, t) for raw latent data."""
        _, _, eps = self._stack(data)
        return eps

    def extract_features(
        self,
        z: LatentCode,
        layer: str,
        condition: Optional[torch.Tensor] = None,
    ) -> FeatureMap:
        # condition accepted for interface parity; the synthetic denoiser is
        # unconditional, so it never alters the output
        self.check_layer(layer)
        h1, h2, _ = self._stack(z.data)
        data = h1 if layer == "mid" else h2
        return FeatureMap(data=data, source_layer=layer, timestep=z.timestep)

    # -- trajectory -------------------------------------------------------

    def _step_coeffs(self, schedule: DiffusionSchedule, t_hi: int, t_lo: int):
        """Coefficients of the explicit step z_lo = c * z_hi + d * eps(z_hi)."""
        a_hi, b_hi = schedule.signal_scale(t_hi), schedule.noise_scale(t_hi)
        a_lo, b_lo = schedule.signal_scale(t_lo), schedule.noise_scale(t_lo)
        c = a_lo / a_hi
        d = b_lo - c * b_hi
        return c, d

    def ddim_sample(
        self,
        zt: LatentCode,
        schedule: Optional[DiffusionSchedule] = None,
        timesteps: Optional[Sequence[int]] = None,
    ) -> LatentCode:
        schedule = schedule or self._schedule
        schedule.check_timestep(zt.timestep)
        if not torch.isfinite(zt.data).all():
            raise BackendError("non-finite latent passed to ddim_sample")
        if zt.timestep == 0:
            return zt
        if timesteps is None:
            path = list(range(zt.timestep, -1, -1))
        else:
            path = [zt.timestep] + list(timesteps)
            if any(path[i + 1] >= path[i] for i in range(len(path) - 1)) or path[-1] != 0:
                raise BackendError("timesteps must decrease strictly and end at 0")
        x = zt.data
        for t_hi, t_lo in zip(path[:-1], path[1:]):
            c, d = self._step_coeffs(schedule, t_hi, t_lo)
            x = c * x + d * self.predict_noise(x, t_hi)
        return LatentCode(data=x, timestep=0, step_index=zt.step_index)

    def ddim_invert(
        self, z0: LatentCode, target_t: int, schedule: Optional[DiffusionSchedule] = None
    ) -> LatentCode:
        schedule = schedule or self._schedule
        schedule.check_timestep(target_t)
        if z0.timestep != 0:
            raise BackendError(f"inversion starts from t=0, got t={z0.timestep}")
        if target_t == 0:
            return z0
        x = z0.data.detach()
        with torch.no_grad():
            for t in range(1, target_t + 1):
                c, d = self._step_coeffs(schedule, t, t - 1)
                # invert z_{t-1} = c z_t + d eps(z_t) by fixed point in z_t
                z = (x - d * self.predict_noise(x, t)) / c
                for _ in range(_INVERT_ITERS):
                    z = (x - d * self.predict_noise(z, t)) / c
                x = z
        return LatentCode(data=x, timestep=target_t)
