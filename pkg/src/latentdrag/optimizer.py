"""Edit-session orchestration: inversion, identity adaptation, then
alternating latent-gradient steps and point tracking until every handle
sits within the convergence radius of its target or the step budget runs
out.

One session is one logical execution thread; nothing here is shared across
sessions, so concurrent sessions need no coordination.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .adaptation import AdapterConfig, AdapterWeights, apply_adapters, finetune_identity
from .backends.base import DiffusionBackend, FeatureMap, LatentCode
from .encoders import VisionLanguageEncoder
from .objective import (
    EditMask,
    GaussianMoments,
    LossBreakdown,
    LossWeights,
    PatchSpec,
    PointPair,
    estimate_moments,
    gaussian_kl,
    motion_supervision_loss,
    prior_preservation_loss,
    reward_guidance,
    total_loss,
)
from .tracking import TrackerConfig, baseline_track, dwpt_track

CHECKPOINT_FORMAT_VERSION = 1


class OptimizerError(RuntimeError):
    pass


class RequestValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Toggles:
    ppr_on: bool = True
    reward_on: bool = False
    dwpt_on: bool = True


@dataclass
class EditRequest:
    """A user edit: the source image, point pairs, editable mask, prompts,
    and the loss configuration."""

    image: np.ndarray
    pairs: list[PointPair]
    mask: EditMask
    prompt_target: str = ""
    prompt_initial: str = ""
    weights: LossWeights = field(default_factory=LossWeights)
    toggles: Toggles = field(default_factory=Toggles)

    def validate(self) -> None:
        if len(self.pairs) < 1:
            raise RequestValidationError("at least one point pair is required")
        h, w = self.mask.data.shape
        for i, pair in enumerate(self.pairs):
            for name, (r, c) in (("handle", pair.handle), ("target", pair.target)):
                if not (0 <= r < h and 0 <= c < w):
                    raise RequestValidationError(
                        f"pair {i}: {name} ({r}, {c}) outside grid ({h}, {w})"
                    )
        if self.toggles.reward_on:
            if not self.prompt_target or not self.prompt_initial:
                raise RequestValidationError(
                    "reward_on requires both prompt_target and prompt_initial"
                )


@dataclass(frozen=True)
class OptimizerConfig:
    max_steps: int = 80
    step_size: float = 0.01
    convergence_radius: float = 1.0
    reward_interval: int = 5
    optimizer_kind: str = "adam"
    inversion_t: int = 35
    feature_layer: str = "mid"
    # "inversion" references the inversion-code features; "current" uses the
    # per-step stop-gradient convention
    reference_mode: str = "inversion"
    moments_mode: str = "global"
    preview_steps: int = 5
    patch: PatchSpec = field(default_factory=PatchSpec)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    checkpoint_interval: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise RequestValidationError("max_steps must be >= 1")
        if self.step_size <= 0:
            raise RequestValidationError("step_size must be positive")
        if self.convergence_radius < 0:
            raise RequestValidationError("convergence_radius must be >= 0")
        if self.reward_interval < 1:
            raise RequestValidationError("reward_interval must be >= 1")
        if self.optimizer_kind not in ("adam", "sgd"):
            raise RequestValidationError(f"unknown optimizer {self.optimizer_kind!r}")
        if self.reference_mode not in ("inversion", "current"):
            raise RequestValidationError(f"unknown reference mode {self.reference_mode!r}")


@dataclass
class StepReport:
    step_index: int
    losses: LossBreakdown
    handles: list[tuple[int, int]]
    mean_distance: float
    kl_divergence: float
    wall_clock_ms: float

    def as_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "losses": self.losses.as_dict(),
            "handles": [list(p) for p in self.handles],
            "mean_distance": self.mean_distance,
            "kl_divergence": self.kl_divergence,
            "wall_clock_ms": self.wall_clock_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepReport":
        losses = LossBreakdown(**d["losses"])
        return cls(
            step_index=d["step_index"],
            losses=losses,
            handles=[tuple(p) for p in d["handles"]],
            mean_distance=d["mean_distance"],
            kl_divergence=d["kl_divergence"],
            wall_clock_ms=d["wall_clock_ms"],
        )


@dataclass
class EditSession:
    request: EditRequest
    config: OptimizerConfig
    backend: DiffusionBackend
    adapted: DiffusionBackend
    adapters: Optional[AdapterWeights]
    encoders: Optional[VisionLanguageEncoder]
    z0: Optional[LatentCode]
    zt0: Optional[LatentCode]
    z_param: Optional[torch.Tensor]
    reference_features: Optional[FeatureMap]
    handle_features: list[torch.Tensor]
    prior_moments: Optional[GaussianMoments]
    pairs: list[PointPair]
    optim: Optional[torch.optim.Optimizer]
    generator: Optional[torch.Generator]
    state: str = "prepared"
    failure_cause: Optional[str] = None
    step_count: int = 0
    history: list[StepReport] = field(default_factory=list)
    checkpoint_dir: Optional[Path] = None

    @property
    def failed(self) -> bool:
        return self.state == "failed"

    def current_latent(self) -> LatentCode:
        return LatentCode(
            data=self.z_param,
            timestep=self.config.inversion_t,
            step_index=self.step_count,
        )


def _make_optimizer(kind: str, param: torch.Tensor, lr: float) -> torch.optim.Optimizer:
    if kind == "adam":
        return torch.optim.Adam([param], lr=lr)
    return torch.optim.SGD([param], lr=lr)


def prepare_session(
    request: EditRequest,
    backend: DiffusionBackend,
    config: OptimizerConfig = OptimizerConfig(),
    encoders: Optional[VisionLanguageEncoder] = None,
    checkpoint_dir: Optional[str | Path] = None,
) -> EditSession:
    """Build the session state: clean latent, adapters, inversion code,
    reference features, and cached prior moments.

    Invalid requests raise; failures inside preparation (inversion or
    adapter training) return a session marked failed with the cause.
    """
    request.validate()
    if request.toggles.reward_on and encoders is None:
        raise RequestValidationError("reward_on requires an encoder pair")
    backend.check_layer(config.feature_layer)
    backend.schedule.check_timestep(config.inversion_t)
    if config.inversion_t < 1:
        raise RequestValidationError("inversion_t must be >= 1")

    pairs = [
        PointPair(handle=p.handle, target=p.target, original_handle=p.handle)
        for p in request.pairs
    ]
    session = EditSession(
        request=request,
        config=config,
        backend=backend,
        adapted=backend,
        adapters=None,
        encoders=encoders,
        z0=None,
        zt0=None,
        z_param=None,
        reference_features=None,
        handle_features=[],
        prior_moments=None,
        pairs=pairs,
        optim=None,
        generator=torch.Generator().manual_seed(config.seed),
        checkpoint_dir=Path(checkpoint_dir) if checkpoint_dir else None,
    )
    try:
        z0 = backend.encode_image(request.image)
        if (z0.spatial_shape) != request.mask.data.shape:
            raise RequestValidationError(
                f"mask dims {request.mask.data.shape} != latent dims {z0.spatial_shape}"
            )
        if config.adapter.train_steps > 0:
            adapters, _ = finetune_identity(
                request.image, backend, config.adapter, log_reconstruction=False
            )
            adapted = apply_adapters(backend, adapters)
        else:
            adapters, adapted = None, backend
        zt0 = adapted.ddim_invert(z0, config.inversion_t)
        ref = adapted.extract_features(zt0, config.feature_layer)
        handle_features = [
            ref.data[:, p.original_handle[0], p.original_handle[1]].detach().clone()
            for p in pairs
        ]
        with torch.no_grad():
            prior_moments = estimate_moments(zt0, mode=config.moments_mode)
        session.z0 = z0
        session.zt0 = zt0
        session.adapters = adapters
        session.adapted = adapted
        session.reference_features = FeatureMap(
            data=ref.data.detach(), source_layer=ref.source_layer, timestep=ref.timestep
        )
        session.handle_features = handle_features
        session.prior_moments = prior_moments
        session.z_param = zt0.data.detach().clone().requires_grad_(True)
        session.optim = _make_optimizer(config.optimizer_kind, session.z_param, config.step_size)
    except RequestValidationError:
        raise
    except Exception as exc:  # noqa: BLE001 - preparation failure is a session state
        session.state = "failed"
        session.failure_cause = f"preparation failed: {exc}"
        return session

    if session.checkpoint_dir is not None:
        save_checkpoint(session, session.checkpoint_dir / "checkpoint.pt")
    return session


def check_convergence(session: EditSession, radius: Optional[float] = None) -> bool:
    """True iff every handle lies within the radius of its target
    (inclusive)."""
    if radius is None:
        radius = session.config.convergence_radius
    worst = max(
        math.hypot(p.handle[0] - p.target[0], p.handle[1] - p.target[1])
        for p in session.pairs
    )
    return worst <= radius


def drag_step(session: EditSession) -> StepReport:
    """One supervision + tracking alternation.

    Computes the total objective at the current latent, applies one
    first-order update, relocates every handle by tracking on the updated
    features, and appends a report.
    """
    if session.failed:
        raise OptimizerError(f"session failed: {session.failure_cause}")
    if session.state not in ("prepared", "running"):
        raise OptimizerError(f"cannot step a session in state {session.state!r}")
    if session.step_count >= session.config.max_steps:
        raise OptimizerError("step budget exhausted")

    cfg = session.config
    req = session.request
    started = time.perf_counter()
    session.state = "running"
    rollback = session.z_param.detach().clone()
    rollback_handles = [tuple(p.handle) for p in session.pairs]

    z_k = session.current_latent()
    F_k = session.adapted.extract_features(z_k, cfg.feature_layer)
    if cfg.reference_mode == "inversion":
        F_ref = session.reference_features
    else:
        F_ref = FeatureMap(
            data=F_k.data.detach(), source_layer=F_k.source_layer, timestep=F_k.timestep
        )

    ms = motion_supervision_loss(
        F_k, F_ref, z_k, session.zt0, session.pairs, req.mask,
        patch=cfg.patch, weights=req.weights,
    )
    kl_term = (
        prior_preservation_loss(z_k, session.zt0, mode=cfg.moments_mode)
        if req.toggles.ppr_on
        else None
    )
    reward_term = None
    if req.toggles.reward_on and session.step_count % cfg.reward_interval == 0:
        reward_term = reward_guidance(
            z_k,
            (req.prompt_target, req.prompt_initial),
            session.adapted.schedule,
            session.adapted,
            session.encoders,
            lambda_contrast=req.weights.lambda_contrast,
            preview_steps=cfg.preview_steps,
        )

    total, breakdown = total_loss(
        ms, kl_term, reward_term, req.weights,
        ppr_on=req.toggles.ppr_on, reward_on=req.toggles.reward_on,
    )
    if not torch.isfinite(total):
        session.state = "failed"
        session.failure_cause = f"non-finite loss at step {session.step_count}"
        raise OptimizerError(session.failure_cause)

    session.optim.zero_grad()
    total.backward()
    session.optim.step()

    if not torch.isfinite(session.z_param).all():
        with torch.no_grad():
            session.z_param.copy_(rollback)
        session.state = "failed"
        session.failure_cause = f"non-finite latent after step {session.step_count}"
        raise OptimizerError(session.failure_cause)

    with torch.no_grad():
        z_new = LatentCode(
            data=session.z_param.detach().clone(),
            timestep=cfg.inversion_t,
            step_index=session.step_count + 1,
        )
        F_new = session.adapted.extract_features(z_new, cfg.feature_layer)
        for pair, f_ref in zip(session.pairs, session.handle_features):
            if req.toggles.dwpt_on:
                result = dwpt_track(F_new, f_ref, pair.handle, pair.target, cfg.tracker)
            else:
                result = baseline_track(F_new, f_ref, pair.handle, cfg.tracker)
            pair.handle = result.new_handle
        kl_value = float(
            gaussian_kl(
                estimate_moments(z_new, mode=cfg.moments_mode), session.prior_moments
            )
        )

    if not math.isfinite(kl_value):
        # the latent survived but its statistics overflowed; reports carry
        # only finite values, so roll the step back and flag the session
        with torch.no_grad():
            session.z_param.copy_(rollback)
        for pair, handle in zip(session.pairs, rollback_handles):
            pair.handle = handle
        session.state = "failed"
        session.failure_cause = f"non-finite step report at step {session.step_count}"
        raise OptimizerError(session.failure_cause)

    handles = [tuple(p.handle) for p in session.pairs]
    md = float(
        np.mean(
            [math.hypot(p.handle[0] - p.target[0], p.handle[1] - p.target[1])
             for p in session.pairs]
        )
    )
    report = StepReport(
        step_index=session.step_count,
        losses=breakdown,
        handles=handles,
        mean_distance=md,
        kl_divergence=kl_value,
        wall_clock_ms=(time.perf_counter() - started) * 1e3,
    )
    session.history.append(report)
    session.step_count += 1

    if (
        session.checkpoint_dir is not None
        and session.step_count % session.config.checkpoint_interval == 0
    ):
        save_checkpoint(session, session.checkpoint_dir / "checkpoint.pt")
    return report


def run_drag(
    session: EditSession, max_steps: Optional[int] = None
) -> tuple[Optional[np.ndarray], list[StepReport]]:
    """Loop drag steps to convergence or the step budget, then sample the
    final image through the adapted backend. Partial history survives
    failures."""
    if session.failed:
        raise OptimizerError(f"session failed: {session.failure_cause}")
    budget = session.config.max_steps if max_steps is None else min(
        max_steps, session.config.max_steps
    )
    while session.step_count < budget and not check_convergence(session):
        try:
            drag_step(session)
        except OptimizerError:
            if session.failed:
                return None, session.history
            raise
    session.state = "converged" if check_convergence(session) else "capped"
    image = render_result(session)
    return image, session.history


def render_result(session: EditSession) -> np.ndarray:
    """Sample the current latent to t=0 with adapters applied and decode."""
    z = LatentCode(
        data=session.z_param.detach().clone(),
        timestep=session.config.inversion_t,
        step_index=session.step_count,
    )
    z0 = session.adapted.ddim_sample(z)
    return session.adapted.decode_latent(z0)


def save_checkpoint(session: EditSession, path: str | Path) -> None:
    """Versioned container with everything needed to resume the run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "latent": session.z_param.detach().clone(),
        "timestep": session.config.inversion_t,
        "step_count": session.step_count,
        "state": session.state,
        "handles": [list(p.handle) for p in session.pairs],
        "original_handles": [list(p.original_handle) for p in session.pairs],
        "targets": [list(p.target) for p in session.pairs],
        "optimizer_state": session.optim.state_dict() if session.optim else None,
        "rng_state": session.generator.get_state() if session.generator else None,
        "history": [r.as_dict() for r in session.history],
        "adapter_deltas": (
            {k: (a, b) for k, (a, b) in session.adapters.deltas.items()}
            if session.adapters
            else None
        ),
        "adapter_rank": session.adapters.rank if session.adapters else None,
        "adapter_train_steps": session.adapters.train_steps if session.adapters else None,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise OptimizerError(f"unsupported checkpoint version {version!r}")
    return payload


def resume_session(
    request: EditRequest,
    backend: DiffusionBackend,
    config: OptimizerConfig,
    checkpoint: dict,
    encoders: Optional[VisionLanguageEncoder] = None,
    checkpoint_dir: Optional[str | Path] = None,
) -> EditSession:
    """Rebuild a session from a checkpoint produced by save_checkpoint.

    Adapter weights come from the checkpoint (training is not repeated);
    the optimizer and RNG state resume where they left off.
    """
    session = prepare_session(
        request, backend,
        replace(config, adapter=replace(config.adapter, train_steps=0)),
        encoders=encoders, checkpoint_dir=None,
    )
    if session.failed:
        return session
    if checkpoint["adapter_deltas"] is not None:
        adapters = AdapterWeights(
            rank=checkpoint["adapter_rank"],
            target_layer_ids=tuple(checkpoint["adapter_deltas"]),
            deltas=checkpoint["adapter_deltas"],
            train_steps=checkpoint["adapter_train_steps"],
        )
        session.adapters = adapters
        session.adapted = apply_adapters(backend, adapters)
        zt0 = session.adapted.ddim_invert(session.z0, config.inversion_t)
        ref = session.adapted.extract_features(zt0, config.feature_layer)
        session.zt0 = zt0
        session.reference_features = FeatureMap(
            data=ref.data.detach(), source_layer=ref.source_layer, timestep=ref.timestep
        )
        session.handle_features = [
            ref.data[:, p.original_handle[0], p.original_handle[1]].detach().clone()
            for p in session.pairs
        ]
        with torch.no_grad():
            session.prior_moments = estimate_moments(zt0, mode=config.moments_mode)

    session.z_param = checkpoint["latent"].clone().requires_grad_(True)
    session.optim = _make_optimizer(config.optimizer_kind, session.z_param, config.step_size)
    if checkpoint["optimizer_state"] is not None:
        session.optim.load_state_dict(checkpoint["optimizer_state"])
    if checkpoint["rng_state"] is not None:
        session.generator.set_state(checkpoint["rng_state"])
    session.step_count = checkpoint["step_count"]
    session.state = checkpoint["state"]
    session.history = [StepReport.from_dict(d) for d in checkpoint["history"]]
    for pair, handle in zip(session.pairs, checkpoint["handles"]):
        pair.handle = tuple(handle)
    session.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    return session
