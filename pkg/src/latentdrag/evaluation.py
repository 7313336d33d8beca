"""Edit-quality metrics and batch benchmarking.

Mean distance measures how far handles ended from their targets; the
semantic scores measure prompt alignment through the encoder pair; the
perceptual score is 1 - d(a, b) for a pluggable perceptual distance.
Desk-scale runs use the pixel-difference stub; a learned perceptual model
plugs in behind the same callable contract.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .encoders import VisionLanguageEncoder

REPORT_FORMAT_VERSION = 1


class EvaluationError(ValueError):
    pass


@dataclass
class MetricReport:
    mean_distance: float
    clip_obj: Optional[float] = None
    clip_tar: Optional[float] = None
    one_minus_lpips: Optional[float] = None
    wall_clock_s: float = 0.0
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "mean_distance": self.mean_distance,
            "clip_obj": self.clip_obj,
            "clip_tar": self.clip_tar,
            "one_minus_lpips": self.one_minus_lpips,
            "wall_clock_s": self.wall_clock_s,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            mean_distance=d["mean_distance"],
            clip_obj=d.get("clip_obj"),
            clip_tar=d.get("clip_tar"),
            one_minus_lpips=d.get("one_minus_lpips"),
            wall_clock_s=d.get("wall_clock_s", 0.0),
            flags=list(d.get("flags", [])),
        )


def mean_distance(
    final_handles: Sequence[tuple[int, int]], targets: Sequence[tuple[int, int]]
) -> float:
    """Average Euclidean distance between handles and targets."""
    if len(final_handles) != len(targets):
        raise EvaluationError(
            f"{len(final_handles)} handles vs {len(targets)} targets"
        )
    if not final_handles:
        raise EvaluationError("empty point lists")
    return float(
        np.mean(
            [math.hypot(h[0] - t[0], h[1] - t[1]) for h, t in zip(final_handles, targets)]
        )
    )


def semantic_scores(
    image: np.ndarray,
    prompt_object: str,
    prompt_target: str,
    encoders: VisionLanguageEncoder,
) -> tuple[float, float]:
    """Cosine similarity of the image embedding against each prompt."""
    if encoders is None:
        raise EvaluationError("semantic scores need an encoder pair")
    img_e = encoders.embed_image(torch.from_numpy(np.asarray(image, dtype=np.float64)))
    obj = float(img_e @ encoders.embed_text(prompt_object))
    tar = float(img_e @ encoders.embed_text(prompt_target))
    return obj, tar


def pixel_difference_metric(a: np.ndarray, b: np.ndarray) -> float:
    """Stub perceptual distance: mean absolute pixel difference in [0, 1]."""
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).mean())


def perceptual_similarity(
    image_a: np.ndarray,
    image_b: np.ndarray,
    metric: Callable[[np.ndarray, np.ndarray], float] = pixel_difference_metric,
) -> float:
    """1 - d(a, b) for the plugged perceptual distance; identical images
    score 1.0."""
    a, b = np.asarray(image_a), np.asarray(image_b)
    if a.shape != b.shape:
        raise EvaluationError(f"image shapes differ: {a.shape} vs {b.shape}")
    if metric is None:
        raise EvaluationError("perceptual metric unavailable")
    return 1.0 - float(metric(a, b))


def evaluate_run(
    source_image: np.ndarray,
    result_image: np.ndarray,
    final_handles: Sequence[tuple[int, int]],
    targets: Sequence[tuple[int, int]],
    prompt_initial: str = "",
    prompt_target: str = "",
    encoders: Optional[VisionLanguageEncoder] = None,
    perceptual_metric: Optional[Callable] = pixel_difference_metric,
    wall_clock_s: float = 0.0,
) -> MetricReport:
    """Assemble the per-edit metric row; unavailable metrics are omitted
    with an explicit flag rather than zero-filled."""
    report = MetricReport(
        mean_distance=mean_distance(final_handles, targets), wall_clock_s=wall_clock_s
    )
    if encoders is not None and prompt_initial and prompt_target:
        report.clip_obj, report.clip_tar = semantic_scores(
            result_image, prompt_initial, prompt_target, encoders
        )
    else:
        report.flags.append("semantic_scores_unavailable")
    if perceptual_metric is not None:
        report.one_minus_lpips = perceptual_similarity(
            source_image, result_image, perceptual_metric
        )
    else:
        report.flags.append("perceptual_metric_unavailable")
    return report


def aggregate_reports(reports: dict[str, MetricReport]) -> dict:
    """Mean over cases for each populated metric column."""
    def _mean(values: list[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return float(np.mean(present)) if present else None

    rows = [reports[k] for k in sorted(reports)]
    return {
        "cases": len(rows),
        "mean_distance": _mean([r.mean_distance for r in rows]),
        "clip_obj": _mean([r.clip_obj for r in rows]),
        "clip_tar": _mean([r.clip_tar for r in rows]),
        "one_minus_lpips": _mean([r.one_minus_lpips for r in rows]),
        "wall_clock_s": _mean([r.wall_clock_s for r in rows]),
    }


def run_benchmark(
    spec_dir: str | Path,
    backend,
    config=None,
    encoders: Optional[VisionLanguageEncoder] = None,
    out_path: Optional[str | Path] = None,
    max_workers: int = 2,
) -> tuple[dict[str, MetricReport], dict]:
    """Run every edit spec in a directory end to end and aggregate metrics.

    ``backend`` is a backend handle or a callable mapping an image shape to
    one (for backends whose grid tracks the input). Per-case failures are
    recorded and the batch continues. Reports merge deterministically by
    case id (the spec filename stem).
    """
    from .editspec import load_edit_spec
    from .optimizer import prepare_session, run_drag

    spec_dir = Path(spec_dir)
    spec_files = sorted(spec_dir.glob("*.json"))
    if not spec_files:
        raise EvaluationError(f"no edit specs (*.json) under {spec_dir}")

    def _run_case(spec_file: Path):
        request, case_config = load_edit_spec(spec_file)
        started = time.perf_counter()
        case_backend = backend(request.image.shape) if callable(backend) else backend
        session = prepare_session(
            request, case_backend, case_config if config is None else config,
            encoders=encoders,
        )
        if session.failed:
            raise RuntimeError(session.failure_cause)
        image, history = run_drag(session)
        if session.failed:
            raise RuntimeError(session.failure_cause)
        return evaluate_run(
            source_image=request.image,
            result_image=image,
            final_handles=[p.handle for p in session.pairs],
            targets=[p.target for p in session.pairs],
            prompt_initial=request.prompt_initial,
            prompt_target=request.prompt_target,
            encoders=encoders,
            wall_clock_s=time.perf_counter() - started,
        )

    reports: dict[str, MetricReport] = {}
    failures: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {spec.stem: pool.submit(_run_case, spec) for spec in spec_files}
        for case_id in sorted(futures):
            try:
                reports[case_id] = futures[case_id].result()
            except Exception as exc:  # noqa: BLE001 - batch keeps going
                failures[case_id] = str(exc)

    aggregate = aggregate_reports(reports) if reports else {"cases": 0}
    aggregate["failures"] = failures
    if out_path is not None:
        document = {
            "format_version": REPORT_FORMAT_VERSION,
            "cases": {k: v.as_dict() for k, v in reports.items()},
            "aggregate": aggregate,
        }
        Path(out_path).write_text(json.dumps(document, indent=2))
    return reports, aggregate
