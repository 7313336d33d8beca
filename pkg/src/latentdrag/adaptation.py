"""Per-image low-rank denoiser adaptation.

On the synthetic backend the adapters are additive low-rank perturbations
of the fixed convolution kernels, trained with the standard
noise-prediction objective on the single source image so that sampling
reconstructs it more faithfully. Weights are immutable once trained and
applying them yields a fresh backend handle; the original is untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backends.base import BackendError, LatentCode
from .backends.synthetic import SyntheticBackend


class AdaptationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 16
    train_steps: int = 80
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise AdaptationError("rank must be >= 1")
        if self.train_steps < 0:
            raise AdaptationError("train_steps must be >= 0")


@dataclass(frozen=True)
class AdapterWeights:
    """Low-rank factor pairs (A, B) per target layer; delta = A @ B reshaped
    to the kernel shape."""

    rank: int
    target_layer_ids: tuple[str, ...]
    deltas: dict[str, tuple[torch.Tensor, torch.Tensor]]
    train_steps: int

    def __post_init__(self):
        for layer, (a, b) in self.deltas.items():
            if a.shape[1] != self.rank or b.shape[0] != self.rank:
                raise AdaptationError(
                    f"factor pair for {layer!r} has inner dim "
                    f"({a.shape[1]}, {b.shape[0]}), expected rank {self.rank}"
                )
            if not (torch.isfinite(a).all() and torch.isfinite(b).all()):
                raise AdaptationError(f"non-finite factors for {layer!r}")

    def kernel_deltas(self, shapes: dict[str, tuple[int, ...]]) -> dict[str, torch.Tensor]:
        out = {}
        for layer in self.target_layer_ids:
            a, b = self.deltas[layer]
            out[layer] = (a @ b).reshape(shapes[layer])
        return out

    @classmethod
    def zero(
        cls, rank: int, shapes: dict[str, tuple[int, ...]], dtype=torch.float64
    ) -> "AdapterWeights":
        deltas = {}
        for layer, shape in shapes.items():
            out_ch, fan_in = shape[0], int(np.prod(shape[1:]))
            deltas[layer] = (
                torch.zeros(out_ch, rank, dtype=dtype),
                torch.zeros(rank, fan_in, dtype=dtype),
            )
        return cls(rank=rank, target_layer_ids=tuple(shapes), deltas=deltas, train_steps=0)


def _noise_batch(backend: SyntheticBackend, z0: torch.Tensor, gen: torch.Generator):
    """One (timestep, noised latent, true noise) draw on the trajectory."""
    t = int(torch.randint(1, backend.schedule.num_steps + 1, (1,), generator=gen))
    eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
    a, b = backend.schedule.signal_scale(t), backend.schedule.noise_scale(t)
    return t, a * z0 + b * eps, eps


def reconstruction_error(
    backend: SyntheticBackend,
    image: np.ndarray,
    num_draws: int = 16,
    seed: int = 123,
) -> float:
    """Mean squared latent reconstruction error over held-out noise draws.

    Each draw noises the source latent, predicts the noise, and reconstructs
    the clean latent; the error is MSE against the true clean latent.
    """
    z0 = backend.encode_image(image).data
    gen = torch.Generator().manual_seed(seed)
    total = 0.0
    with torch.no_grad():
        for _ in range(num_draws):
            t, zt, _ = _noise_batch(backend, z0, gen)
            a, b = backend.schedule.signal_scale(t), backend.schedule.noise_scale(t)
            eps_hat = backend.predict_noise(zt, t)
            x0_hat = (zt - b * eps_hat) / a
            total += float(((x0_hat - z0) ** 2).mean())
    return total / num_draws


def finetune_identity(
    image: np.ndarray,
    backend: SyntheticBackend,
    config: AdapterConfig = AdapterConfig(),
    batch_draws: int = 4,
    log_reconstruction: bool = True,
) -> tuple[AdapterWeights, list[float]]:
    """Train low-rank kernel adapters on the source image.

    Returns the trained weights and the per-step held-out reconstruction
    error curve (empty when logging is off). Factors start at (random A,
    zero B), so zero training steps leave the effective deltas exactly zero.
    """
    shapes = backend.kernel_shapes()
    gen = torch.Generator().manual_seed(config.seed)
    factors: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
    params = []
    for layer, shape in shapes.items():
        out_ch, fan_in = shape[0], int(np.prod(shape[1:]))
        a = torch.randn(out_ch, config.rank, generator=gen, dtype=backend.dtype)
        a = (a / np.sqrt(config.rank)).requires_grad_(True)
        b = torch.zeros(config.rank, fan_in, dtype=backend.dtype, requires_grad=True)
        factors[layer] = (a, b)
        params.extend([a, b])

    z0 = backend.encode_image(image).data
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    curve: list[float] = []
    for _ in range(config.train_steps):
        loss = z0.new_zeros(())
        deltas = {
            layer: (a @ b).reshape(shapes[layer]) for layer, (a, b) in factors.items()
        }
        adapted = backend.with_kernel_deltas(deltas)
        for _ in range(batch_draws):
            t, zt, eps_true = _noise_batch(backend, z0, gen)
            eps_hat = adapted.predict_noise(zt, t)
            loss = loss + ((eps_hat - eps_true) ** 2).mean()
        loss = loss / batch_draws
        if not torch.isfinite(loss):
            raise AdaptationError("adapter training diverged (non-finite loss)")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_reconstruction:
            with torch.no_grad():
                deltas = {
                    layer: (a @ b).reshape(shapes[layer])
                    for layer, (a, b) in factors.items()
                }
                curve.append(
                    reconstruction_error(backend.with_kernel_deltas(deltas), image)
                )

    deltas = {
        layer: (a.detach().clone(), b.detach().clone()) for layer, (a, b) in factors.items()
    }
    weights = AdapterWeights(
        rank=config.rank,
        target_layer_ids=tuple(shapes),
        deltas=deltas,
        train_steps=config.train_steps,
    )
    return weights, curve


def apply_adapters(backend: SyntheticBackend, weights: AdapterWeights) -> SyntheticBackend:
    """Backend handle with the adapter deltas folded into its kernels."""
    shapes = backend.kernel_shapes()
    for layer in weights.target_layer_ids:
        if layer not in shapes:
            raise BackendError(f"adapter targets unknown layer {layer!r}")
    return backend.with_kernel_deltas(weights.kernel_deltas(shapes))


def save_adapters(weights: AdapterWeights, path: str | Path) -> None:
    """Versioned flat-tensor container (npz with a json manifest)."""
    arrays = {}
    for layer, (a, b) in weights.deltas.items():
        arrays[f"{layer}.A"] = a.numpy()
        arrays[f"{layer}.B"] = b.numpy()
    manifest = {
        "format_version": 1,
        "rank": weights.rank,
        "target_layer_ids": list(weights.target_layer_ids),
        "train_steps": weights.train_steps,
    }
    np.savez(path, __manifest__=json.dumps(manifest), **arrays)


def load_adapters(path: str | Path) -> AdapterWeights:
    with np.load(path, allow_pickle=False) as payload:
        manifest = json.loads(str(payload["__manifest__"]))
        if manifest.get("format_version") != 1:
            raise AdaptationError(f"unsupported adapter container: {manifest}")
        deltas = {}
        for layer in manifest["target_layer_ids"]:
            deltas[layer] = (
                torch.from_numpy(payload[f"{layer}.A"]),
                torch.from_numpy(payload[f"{layer}.B"]),
            )
    return AdapterWeights(
        rank=manifest["rank"],
        target_layer_ids=tuple(manifest["target_layer_ids"]),
        deltas=deltas,
        train_steps=manifest["train_steps"],
    )
