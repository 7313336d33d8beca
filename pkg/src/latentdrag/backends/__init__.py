"""Backend plug-in registry, keyed by name."""

from __future__ import annotations

from typing import Callable

from .base import (
    BackendDescriptor,
    BackendError,
    DiffusionBackend,
    DiffusionSchedule,
    FeatureMap,
    LatentCode,
    uniform_schedule,
)
from .synthetic import SyntheticBackend

_REGISTRY: dict[str, Callable[..., DiffusionBackend]] = {}


def register_backend(name: str, factory: Callable[..., DiffusionBackend]) -> None:
    _REGISTRY[name] = factory


def create_backend(name: str, **kwargs) -> DiffusionBackend:
    if name not in _REGISTRY:
        raise BackendError(f"no backend named {name!r}; registered: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**kwargs)


def available_backends() -> list[str]:
    return sorted(_REGISTRY)


def _latent_diffusion_factory(**kwargs) -> DiffusionBackend:
    # real backbone loads from a standard latent-diffusion checkpoint
    # directory; kept behind an optional import so the synthetic path has no
    # heavyweight dependencies
    raise BackendError(
        "the latent-diffusion backend needs a checkpoint directory and the "
        "'diffusers' package; install them and register a loader via "
        "register_backend('latent-diffusion', loader)"
    )


register_backend("synthetic", SyntheticBackend)
register_backend("latent-diffusion", _latent_diffusion_factory)

__all__ = [
    "BackendDescriptor",
    "BackendError",
    "DiffusionBackend",
    "DiffusionSchedule",
    "FeatureMap",
    "LatentCode",
    "SyntheticBackend",
    "available_backends",
    "create_backend",
    "register_backend",
    "uniform_schedule",
]
