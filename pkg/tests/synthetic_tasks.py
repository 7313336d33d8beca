"""Synthetic edit tasks shared by the optimizer, evaluation, and acceptance
tests: a planted blob to translate, and a periodic-dots field whose repeated
features make plain nearest-neighbor tracking miss."""

from __future__ import annotations

import numpy as np

from latentdrag import EditMask, EditRequest, OptimizerConfig, PointPair, Toggles
from latentdrag.adaptation import AdapterConfig
from latentdrag.objective import LossWeights, PatchSpec
from latentdrag.tracking import TrackerConfig

GRID = 48
DRAG_PX = 10


def blob_image(h, w, r, c, sigma=3.0, amp=0.8, base=0.1):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    img = np.full((h, w, 3), base)
    g = amp * np.exp(-(((yy - r) ** 2 + (xx - c) ** 2) / (2 * sigma**2)))
    img[:, :, 0] += g
    img[:, :, 1] += 0.7 * g
    img[:, :, 2] += 0.4 * g
    return np.clip(img, 0.0, 1.0)


def dots_image(h, w, row, cols, sigma=1.2, amp=0.8, base=0.12):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    img = np.full((h, w, 3), base)
    for c in cols:
        g = amp * np.exp(-(((yy - row) ** 2 + (xx - c) ** 2) / (2 * sigma**2)))
        img[:, :, 0] += g
        img[:, :, 1] += 0.6 * g
        img[:, :, 2] += 0.3 * g
    return np.clip(img, 0.0, 1.0)


def path_mask(h, w, handle, target, margin=8):
    m = np.zeros((h, w))
    r0 = max(0, min(handle[0], target[0]) - margin)
    r1 = min(h, max(handle[0], target[0]) + margin + 1)
    c0 = max(0, min(handle[1], target[1]) - margin)
    c1 = min(w, max(handle[1], target[1]) + margin + 1)
    m[r0:r1, c0:c1] = 1.0
    return EditMask(m)


def task_config(**overrides) -> OptimizerConfig:
    base = dict(
        step_size=0.05,
        patch=PatchSpec(r1=2),
        tracker=TrackerConfig(r2=3),
        adapter=AdapterConfig(train_steps=20),
        reference_mode="current",
    )
    base.update(overrides)
    return OptimizerConfig(**base)


def blob_task(seed: int, dwpt_on: bool = True, **request_overrides) -> EditRequest:
    """Translate a planted blob DRAG_PX pixels to the right."""
    rng = np.random.default_rng(seed)
    r = int(rng.integers(16, GRID - 16))
    c = int(rng.integers(12, GRID - 12 - DRAG_PX))
    handle, target = (r, c), (r, c + DRAG_PX)
    fields = dict(
        image=blob_image(GRID, GRID, r, c),
        pairs=[PointPair(handle=handle, target=target)],
        mask=path_mask(GRID, GRID, handle, target),
        toggles=Toggles(ppr_on=True, reward_on=False, dwpt_on=dwpt_on),
        weights=LossWeights(),
    )
    fields.update(request_overrides)
    return EditRequest(**fields)


# (seed, dot period) pairs whose repeated features reliably trip the plain
# tracker while the directional tracker stays on course
AMBIGUITY_CASES = ((1003, 3), (1005, 3), (1006, 3), (1007, 3))


def dots_task(seed: int, period: int, dwpt_on: bool = True) -> EditRequest:
    """Drag one dot of a periodic row of identical dots."""
    rng = np.random.default_rng(seed)
    row = int(rng.integers(14, GRID - 14))
    col = int(rng.integers(10, 14))
    drag = 12
    handle, target = (row, col), (row, col + drag)
    cols = list(range(col - 2 * period, GRID - 6, period))
    return EditRequest(
        image=dots_image(GRID, GRID, row, cols),
        pairs=[PointPair(handle=handle, target=target)],
        mask=path_mask(GRID, GRID, handle, target),
        toggles=Toggles(ppr_on=True, reward_on=False, dwpt_on=dwpt_on),
        weights=LossWeights(),
    )


def paired_suite(dwpt_on: bool) -> list[EditRequest]:
    """Ten tasks: six plain blob translations plus four ambiguity cases."""
    tasks = [blob_task(seed, dwpt_on=dwpt_on) for seed in range(6)]
    tasks += [dots_task(seed, period, dwpt_on=dwpt_on) for seed, period in AMBIGUITY_CASES]
    return tasks
