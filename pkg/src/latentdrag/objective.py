"""Edit objective: motion supervision, prior-preservation (moment KL), the
contrastive text reward, and their weighted combination.

Every loss returns a scalar tensor on the autograd graph of the edited
latent; gradients come from torch.autograd. Reference quantities (the
inversion-code latent and its features) are treated as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .backends.base import DiffusionBackend, FeatureMap, LatentCode
from .encoders import EncoderError, VisionLanguageEncoder, normalize_embedding

SIGMA_FLOOR = 1e-4

# 8 unit-Chebyshev offsets, row-major
_NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


class ObjectiveError(ValueError):
    pass


@dataclass
class PointPair:
    """Handle/target pixel pair in latent coordinates (row, col).

    ``handle`` is relocated by tracking as the edit progresses;
    ``original_handle`` stays at the position given at step 0.
    """

    handle: tuple[int, int]
    target: tuple[int, int]
    original_handle: tuple[int, int] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.original_handle is None:
            self.original_handle = tuple(self.handle)
        self.handle = tuple(int(v) for v in self.handle)
        self.target = tuple(int(v) for v in self.target)
        self.original_handle = tuple(int(v) for v in self.original_handle)


@dataclass(frozen=True)
class EditMask:
    """Binary editable-region grid; 1 marks pixels the edit may change."""

    data: np.ndarray  # (height, width), values in {0, 1}

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ObjectiveError(f"mask must be 2-D, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ObjectiveError("mask values must be 0 or 1")
        object.__setattr__(self, "data", arr.astype(np.float64))

    @classmethod
    def all_editable(cls, height: int, width: int) -> "EditMask":
        return cls(np.ones((height, width)))


@dataclass(frozen=True)
class GaussianMoments:
    """Mean and standard deviation summarizing a latent sample set."""

    mu: torch.Tensor
    sigma: torch.Tensor
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 2:
            raise ObjectiveError("moment estimate needs at least 2 samples")
        if (self.sigma < SIGMA_FLOOR).any():
            raise ObjectiveError(f"sigma below floor {SIGMA_FLOOR}")


@dataclass(frozen=True)
class LossWeights:
    lambda_clip: float = 150.0
    lambda_kl: float = math.exp(4.0)
    lambda_contrast: float = 0.3
    mask_term_weight: float = 1.0

    def __post_init__(self):
        for name in ("lambda_clip", "lambda_kl", "lambda_contrast", "mask_term_weight"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ObjectiveError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class PatchSpec:
    """Supervision patch around each handle: square or disc of radius r1."""

    r1: int = 1
    shape: str = "square"

    def __post_init__(self):
        if self.r1 < 1:
            raise ObjectiveError("patch radius must be >= 1")
        if self.shape not in ("square", "disc"):
            raise ObjectiveError(f"unknown patch shape {self.shape!r}")

    def offsets(self) -> list[tuple[int, int]]:
        out = []
        for dr in range(-self.r1, self.r1 + 1):
            for dc in range(-self.r1, self.r1 + 1):
                if self.shape == "disc" and dr * dr + dc * dc > self.r1 * self.r1:
                    continue
                out.append((dr, dc))
        return out


def step_direction(pair: PointPair) -> tuple[int, int]:
    """Unit-Chebyshev pixel offset moving the handle one step toward the
    target: the neighbor offset whose direction is closest (by cosine) to
    target - handle. Zero offset iff handle == target."""
    vr = pair.target[0] - pair.handle[0]
    vc = pair.target[1] - pair.handle[1]
    if vr == 0 and vc == 0:
        return (0, 0)
    best, best_cos = None, -np.inf
    for dr, dc in _NEIGHBOR_OFFSETS:
        cos = (vr * dr + vc * dc) / math.hypot(dr, dc)
        if cos > best_cos:
            best, best_cos = (dr, dc), cos
    return best


def motion_supervision_loss(
    F_k: FeatureMap,
    F_0_ref: FeatureMap,
    z_k: LatentCode,
    z_0: LatentCode,
    pairs: Sequence[PointPair],
    mask: EditMask,
    patch: PatchSpec = PatchSpec(),
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    """Patch-matching drag term plus masked anchoring term.

    For each pair, sums the L1 distance between the current features at
    q + d_i and the (gradient-stopped) reference features at q over the
    patch around the handle, with d_i the one-pixel step toward the target.
    Patch positions falling outside the grid, before or after the shift,
    are dropped. The second term is the L1 norm of (z_k - z_0) outside the
    editable region, scaled by mask_term_weight.
    """
    h, w = F_k.spatial_shape
    if F_0_ref.spatial_shape != (h, w):
        raise ObjectiveError("reference feature map has mismatched spatial dims")
    if z_k.data.shape != z_0.data.shape:
        raise ObjectiveError("latent shapes differ")
    if mask.data.shape != z_k.spatial_shape:
        raise ObjectiveError(
            f"mask dims {mask.data.shape} != latent dims {z_k.spatial_shape}"
        )

    feats = F_k.data
    ref = F_0_ref.data.detach()
    total = feats.new_zeros(())
    for pair in pairs:
        dr, dc = step_direction(pair)
        pr, pc = pair.handle
        for orr, occ in patch.offsets():
            qr, qc = pr + orr, pc + occ
            sr, sc = qr + dr, qc + dc
            if not (0 <= qr < h and 0 <= qc < w and 0 <= sr < h and 0 <= sc < w):
                continue
            total = total + (feats[:, sr, sc] - ref[:, qr, qc]).abs().sum()

    protected = torch.from_numpy(1.0 - mask.data).to(z_k.data.dtype)
    residual = (z_k.data - z_0.data.detach()) * protected
    return total + weights.mask_term_weight * residual.abs().sum()


def estimate_moments(
    z: LatentCode | torch.Tensor,
    mode: str = "global",
    sigma_floor: float = SIGMA_FLOOR,
) -> GaussianMoments:
    """Mean and population standard deviation of the latent sample set.

    ``global`` pools every element into one scalar pair; ``per_channel``
    estimates one pair per latent channel. Sigma is floored to keep the KL
    finite on near-constant latents.
    """
    data = z.data if isinstance(z, LatentCode) else z
    if data.numel() < 2:
        raise ObjectiveError("need at least 2 latent elements")
    if mode == "global":
        mu = data.mean()
        var = ((data - mu) ** 2).mean()
        n = data.numel()
    elif mode == "per_channel":
        mu = data.mean(dim=(1, 2))
        var = ((data - mu[:, None, None]) ** 2).mean(dim=(1, 2))
        n = data.shape[1] * data.shape[2]
    else:
        raise ObjectiveError(f"unknown moment mode {mode!r}")
    sigma = torch.clamp(torch.sqrt(var), min=sigma_floor)
    return GaussianMoments(mu=mu, sigma=sigma, sample_count=n)


def gaussian_kl(post: GaussianMoments, prior: GaussianMoments) -> torch.Tensor:
    """KL(N(mu_post, sigma_post) || N(mu_prior, sigma_prior)), averaged over
    channels in per-channel mode."""
    if (post.sigma <= 0).any() or (prior.sigma <= 0).any():
        raise ObjectiveError("sigmas must be positive")
    kl = (
        torch.log(prior.sigma / post.sigma)
        + (post.sigma**2 + (post.mu - prior.mu) ** 2) / (2.0 * prior.sigma**2)
        - 0.5
    )
    return kl.mean()


def prior_preservation_loss(
    z_k: LatentCode,
    z_0: LatentCode,
    mode: str = "global",
    sigma_floor: float = SIGMA_FLOOR,
) -> torch.Tensor:
    """Moment KL between the edited latent and the fixed inversion anchor.

    Gradient flows through the z_k moments only; z_0 moments are constants.
    """
    if z_k.data.shape != z_0.data.shape:
        raise ObjectiveError("latent shapes differ")
    post = estimate_moments(z_k, mode=mode, sigma_floor=sigma_floor)
    with torch.no_grad():
        prior = estimate_moments(z_0.data.detach(), mode=mode, sigma_floor=sigma_floor)
    return gaussian_kl(post, prior)


def reward_loss(
    image_embedding: torch.Tensor,
    target_text_embedding: torch.Tensor,
    initial_text_embedding: torch.Tensor,
    lambda_contrast: float = 0.3,
) -> torch.Tensor:
    """Contrastive alignment score: 1 - cos(img, target) + lambda * cos(img,
    initial). Embeddings are cosine-normalized internally."""
    img = normalize_embedding(image_embedding)
    tgt = normalize_embedding(target_text_embedding)
    ini = normalize_embedding(initial_text_embedding)
    return 1.0 - img @ tgt + lambda_contrast * (img @ ini)


def reward_guidance(
    z_k: LatentCode,
    prompts: tuple[str, str],
    schedule,
    backend: DiffusionBackend,
    encoders: Optional[VisionLanguageEncoder],
    lambda_contrast: float = 0.3,
    preview_steps: int = 5,
) -> torch.Tensor:
    """Reward evaluated on a cheap intermediate preview of the edit.

    Decodes z_k to an image along a truncated deterministic sampling path
    (differentiable), embeds it, and scores it against the target and
    initial prompts. Gradient flows back to z_k.
    """
    if encoders is None:
        raise EncoderError("reward guidance needs a vision-language encoder pair")
    prompt_target, prompt_initial = prompts
    path = _preview_path(z_k.timestep, preview_steps)
    z0 = backend.ddim_sample(z_k, schedule=schedule, timesteps=path)
    preview = backend.decode_preview(z0)
    img_e = encoders.embed_image(preview)
    tgt_e = encoders.embed_text(prompt_target).detach()
    ini_e = encoders.embed_text(prompt_initial).detach()
    return reward_loss(img_e, tgt_e, ini_e, lambda_contrast=lambda_contrast)


def _preview_path(t: int, preview_steps: int) -> Optional[list[int]]:
    if t <= preview_steps:
        return None  # full path is already that short
    ts = np.linspace(t, 0, preview_steps + 1).round().astype(int)
    ts = sorted(set(int(v) for v in ts if v < t), reverse=True)
    if not ts or ts[-1] != 0:
        ts.append(0)
    return ts


@dataclass
class LossBreakdown:
    ms: float
    kl: Optional[float] = None
    reward: Optional[float] = None
    total: float = 0.0

    def as_dict(self) -> dict:
        return {"ms": self.ms, "kl": self.kl, "reward": self.reward, "total": self.total}


def total_loss(
    ms: torch.Tensor,
    kl: Optional[torch.Tensor],
    reward: Optional[torch.Tensor],
    weights: LossWeights,
    ppr_on: bool = True,
    reward_on: bool = True,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted combination of the active terms.

    Disabled terms are skipped, not zero-weighted, so a run with a toggle
    off is indistinguishable from a build without that term.
    """
    total = ms
    if ppr_on:
        if kl is None:
            raise ObjectiveError("ppr_on requires a kl term")
        total = total + weights.lambda_kl * kl
    if reward_on and reward is not None:
        total = total + weights.lambda_clip * reward
    breakdown = LossBreakdown(
        ms=float(ms.detach()),
        kl=float(kl.detach()) if (ppr_on and kl is not None) else None,
        reward=float(reward.detach()) if (reward_on and reward is not None) else None,
        total=float(total.detach()),
    )
    return total, breakdown
