"""Edit-spec documents: the JSON schema shared by the CLI, the HTTP
service, and the browser studio.

Schema (paths resolve relative to the spec file):

    {
      "image": "source.png",
      "points": [{"handle": [r, c], "target": [r, c]}, ...],
      "mask": "mask.png" | "HxW:run,run,..." | null,
      "prompt_initial": "...",
      "prompt_target": "...",
      "weights": {"lambda_clip": ..., "lambda_kl": ..., ...},
      "toggles": {"ppr_on": ..., "reward_on": ..., "dwpt_on": ...},
      "optimizer": {"max_steps": ..., "step_size": ..., ...}
    }

A run-length mask encodes the row-major grid as alternating runs starting
with zeros: "4x4:8,4,4" is 8 zeros, 4 ones, 4 zeros.
"""

from __future__ import annotations

import json
from dataclasses import fields as dataclass_fields
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adaptation import AdapterConfig
from .objective import EditMask, LossWeights, PatchSpec, PointPair
from .optimizer import EditRequest, OptimizerConfig, Toggles
from .pngio import load_png
from .tracking import TrackerConfig


class EditSpecError(ValueError):
    """Schema violation; the message names the offending field."""


def decode_rle_mask(text: str) -> EditMask:
    try:
        header, runs_text = text.split(":", 1)
        h_text, w_text = header.lower().split("x", 1)
        h, w = int(h_text), int(w_text)
        runs = [int(r) for r in runs_text.split(",") if r != ""]
    except ValueError as exc:
        raise EditSpecError(f"mask: malformed run-length string ({exc})") from exc
    if h < 1 or w < 1 or any(r < 0 for r in runs):
        raise EditSpecError("mask: run-length dims and runs must be positive")
    if sum(runs) != h * w:
        raise EditSpecError(
            f"mask: runs sum to {sum(runs)}, grid needs {h * w}"
        )
    flat = np.zeros(h * w)
    value, pos = 0.0, 0
    for run in runs:
        flat[pos : pos + run] = value
        pos += run
        value = 1.0 - value
    return EditMask(flat.reshape(h, w))


def encode_rle_mask(mask: EditMask) -> str:
    flat = mask.data.reshape(-1)
    runs, current, count = [], 0.0, 0
    for v in flat:
        if v == current:
            count += 1
        else:
            runs.append(count)
            current, count = v, 1
    runs.append(count)
    h, w = mask.data.shape
    return f"{h}x{w}:" + ",".join(str(r) for r in runs)


def _mask_from_image(path: Path) -> EditMask:
    arr = load_png(path).mean(axis=2)
    return EditMask((arr >= 0.5).astype(np.float64))


def _check_keys(doc: dict, section: str, allowed: set[str]) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise EditSpecError(f"{section}: unknown field(s) {sorted(unknown)}")


def _build_weights(doc: dict) -> LossWeights:
    _check_keys(doc, "weights", {f.name for f in dataclass_fields(LossWeights)})
    try:
        return LossWeights(**{k: float(v) for k, v in doc.items()})
    except (TypeError, ValueError) as exc:
        raise EditSpecError(f"weights: {exc}") from exc


def _build_toggles(doc: dict) -> Toggles:
    _check_keys(doc, "toggles", {f.name for f in dataclass_fields(Toggles)})
    for k, v in doc.items():
        if not isinstance(v, bool):
            raise EditSpecError(f"toggles.{k}: expected boolean, got {v!r}")
    return Toggles(**doc)


def _build_optimizer(doc: dict) -> OptimizerConfig:
    doc = dict(doc)
    nested = {}
    if "patch" in doc:
        patch = doc.pop("patch")
        _check_keys(patch, "optimizer.patch", {"r1", "shape"})
        nested["patch"] = PatchSpec(**patch)
    if "tracker" in doc:
        tracker = doc.pop("tracker")
        _check_keys(tracker, "optimizer.tracker", {"r2", "lambda_dir", "epsilon", "w_floor"})
        nested["tracker"] = TrackerConfig(**tracker)
    if "adapter" in doc:
        adapter = doc.pop("adapter")
        _check_keys(
            adapter, "optimizer.adapter", {"rank", "train_steps", "learning_rate", "seed"}
        )
        nested["adapter"] = AdapterConfig(**adapter)
    allowed = {f.name for f in dataclass_fields(OptimizerConfig)} - set(nested)
    _check_keys(doc, "optimizer", allowed)
    try:
        return OptimizerConfig(**doc, **nested)
    except (TypeError, ValueError) as exc:
        raise EditSpecError(f"optimizer: {exc}") from exc


def _build_pairs(points) -> list[PointPair]:
    if not isinstance(points, list) or not points:
        raise EditSpecError("points: need a non-empty list of pairs")
    pairs = []
    for i, entry in enumerate(points):
        if not isinstance(entry, dict) or set(entry) != {"handle", "target"}:
            raise EditSpecError(f"points[{i}]: expected {{handle, target}}")
        for key in ("handle", "target"):
            coords = entry[key]
            if (
                not isinstance(coords, (list, tuple))
                or len(coords) != 2
                or not all(isinstance(v, int) for v in coords)
            ):
                raise EditSpecError(f"points[{i}].{key}: expected [row, col] integers")
        pairs.append(PointPair(handle=tuple(entry["handle"]), target=tuple(entry["target"])))
    return pairs


def _build_mask(mask_field, shape: tuple[int, int], base_dir: Optional[Path]) -> EditMask:
    h, w = shape
    if mask_field is None:
        mask = EditMask.all_editable(h, w)
    elif isinstance(mask_field, str) and ":" in mask_field:
        mask = decode_rle_mask(mask_field)
    elif isinstance(mask_field, str):
        if base_dir is None:
            raise EditSpecError("mask: file paths are not accepted here; use a run-length string")
        mask_path = (base_dir / mask_field).resolve()
        if not mask_path.exists():
            raise EditSpecError(f"mask: file not found: {mask_path}")
        mask = _mask_from_image(mask_path)
    else:
        raise EditSpecError("mask: expected path, run-length string, or null")
    if mask.data.shape != (h, w):
        raise EditSpecError(
            f"mask: dims {mask.data.shape} do not match image dims {(h, w)}"
        )
    return mask


def build_edit_request(
    doc: dict, image: np.ndarray, base_dir: Optional[Path] = None
) -> tuple[EditRequest, OptimizerConfig]:
    """Build a validated request plus run configuration from an edit
    document (the spec minus its image field)."""
    _check_keys(
        doc, "spec",
        {"points", "mask", "prompt_initial", "prompt_target",
         "weights", "toggles", "optimizer"},
    )
    request = EditRequest(
        image=image,
        pairs=_build_pairs(doc.get("points")),
        mask=_build_mask(doc.get("mask"), image.shape[:2], base_dir),
        prompt_initial=str(doc.get("prompt_initial", "")),
        prompt_target=str(doc.get("prompt_target", "")),
        weights=_build_weights(doc.get("weights", {})),
        toggles=_build_toggles(doc.get("toggles", {})),
    )
    config = _build_optimizer(doc.get("optimizer", {}))
    try:
        request.validate()
    except ValueError as exc:
        raise EditSpecError(str(exc)) from exc
    return request, config


def load_edit_spec(path: str | Path) -> tuple[EditRequest, OptimizerConfig]:
    """Parse and validate an edit spec file; returns the request plus the
    run configuration it carries."""
    path = Path(path)
    if not path.exists():
        raise EditSpecError(f"spec file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise EditSpecError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise EditSpecError("spec: expected a JSON object")
    if "image" not in doc:
        raise EditSpecError("image: required field missing")
    doc = dict(doc)
    image_field = doc.pop("image")
    image_path = (path.parent / image_field).resolve()
    if not image_path.exists():
        raise EditSpecError(f"image: file not found: {image_path}")
    return build_edit_request(doc, load_png(image_path), base_dir=path.parent)


def apply_ablations(request: EditRequest, ablate: list[str]) -> EditRequest:
    """Map --ablate flags onto toggles: ppr, reward, dwpt."""
    toggles = request.toggles
    for name in ablate:
        if name == "ppr":
            toggles = replace(toggles, ppr_on=False)
        elif name == "reward":
            toggles = replace(toggles, reward_on=False)
        elif name == "dwpt":
            toggles = replace(toggles, dwpt_on=False)
        else:
            raise EditSpecError(f"--ablate: unknown term {name!r} (ppr, reward, dwpt)")
    request.toggles = toggles
    return request
