"""Pluggable vision-language encoder pair used by the reward term and the
semantic metrics.

Contract: ``embed_image`` takes an (H, W, C) float image tensor and
``embed_text`` a prompt string; both return unit vectors in a shared space.
A deterministic linear-projection stub ships for tests; a real CLIP-style
model plugs in behind the same two methods.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np
import torch


class EncoderError(ValueError):
    pass


@runtime_checkable
class VisionLanguageEncoder(Protocol):
    embed_dim: int

    def embed_image(self, image: torch.Tensor) -> torch.Tensor: ...

    def embed_text(self, text: str) -> torch.Tensor: ...


def normalize_embedding(v: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    norm = torch.linalg.vector_norm(v)
    if not torch.isfinite(norm) or norm <= eps:
        raise EncoderError("zero-norm embedding cannot be normalized")
    return v / norm


class LinearProjectionEncoder:
    """Fixed seeded projection of pixels; text vectors derived from a stable
    hash of the prompt. Fully deterministic, differentiable through images."""

    def __init__(self, image_shape: tuple[int, int, int], embed_dim: int = 16, seed: int = 0):
        self.image_shape = image_shape
        self.embed_dim = embed_dim
        h, w, c = image_shape
        gen = torch.Generator().manual_seed(seed)
        self._proj = torch.randn(embed_dim, h * w * c, generator=gen, dtype=torch.float64)
        self._proj /= np.sqrt(h * w * c)

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        if tuple(image.shape) != self.image_shape:
            raise EncoderError(
                f"image shape {tuple(image.shape)} != encoder shape {self.image_shape}"
            )
        flat = image.reshape(-1).to(torch.float64)
        return normalize_embedding(self._proj @ flat)

    def embed_text(self, text: str) -> torch.Tensor:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = torch.from_numpy(rng.standard_normal(self.embed_dim))
        return normalize_embedding(vec)
