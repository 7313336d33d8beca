"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime (run with `pytest tests/test_acceptance.py -s`).

Full-scale leaderboard numbers need the pretrained backbone and GPU-scale
benchmarks; these desk-scale criteria pin the verifiable behavior instead.
"""

import json
import math
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from latentdrag import (
    EditMask,
    GaussianMoments,
    LatentCode,
    LinearProjectionEncoder,
    LossWeights,
    PointPair,
    SyntheticBackend,
    Toggles,
    TrackerConfig,
    baseline_track,
    dwpt_track,
    gaussian_kl,
    motion_supervision_loss,
    prepare_session,
    prior_preservation_loss,
    reward_guidance,
    run_drag,
)
from latentdrag.backends.base import FeatureMap
from latentdrag.pngio import encode_png_bytes
from latentdrag.service import create_app
from latentdrag.tracking import angular_weight, direction_vector

import synthetic_tasks as tasks


def criterion(name, budget_s):
    """Time the criterion body and print its verdict line."""

    class _Ctx:
        def __enter__(self):
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, exc_type, exc, tb):
            elapsed = time.perf_counter() - self.t0
            verdict = "PASS" if exc_type is None else "FAIL"
            print(f"[{verdict}] {name} ({elapsed:.2f}s, budget {budget_s}s)")
            if exc_type is None:
                assert elapsed < budget_s, f"{name}: {elapsed:.2f}s over budget {budget_s}s"
            return False

    return _Ctx()


def fd_relative_errors(f, x, n_coords, rng, h=1e-6):
    (grad,) = torch.autograd.grad(f(x), x)
    errors = []
    for _ in range(n_coords):
        idx = tuple(rng.integers(0, s) for s in x.shape)
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[idx] += h
        xm[idx] -= h
        fd = (float(f(xp)) - float(f(xm))) / (2 * h)
        denom = max(abs(fd), abs(float(grad[idx])), 1e-10)
        errors.append(abs(float(grad[idx]) - fd) / denom)
    return errors


def test_closed_form_kl():
    """gaussian_kl reproduces the closed forms to 1e-9 and a Monte-Carlo
    estimate to 1e-2."""
    with criterion("closed-form KL", budget_s=1.0):
        def moments(mu, sigma):
            return GaussianMoments(
                torch.tensor(mu, dtype=torch.float64),
                torch.tensor(sigma, dtype=torch.float64),
                10,
            )

        got_shift = float(gaussian_kl(moments(1.0, 1.0), moments(0.0, 1.0)))
        assert abs(got_shift - 0.5) < 1e-9

        expected_scale = math.log(0.5) + 2.0 - 0.5  # 0.8068528...
        got_scale = float(gaussian_kl(moments(0.0, 2.0), moments(0.0, 1.0)))
        assert abs(got_scale - expected_scale) < 1e-9

        x = np.random.default_rng(42).normal(0.0, 2.0, size=1_000_000)
        mc = (-np.log(2.0) - x**2 / 8.0 + x**2 / 2.0).mean()
        assert abs(got_scale - mc) < 1e-2


def test_gradient_suite():
    """Motion supervision, moment-KL, and reward-guidance gradients match
    central finite differences at rel err < 1e-4 over 24 random configs."""
    with criterion("gradient suite", budget_s=60.0):
        backend = SyntheticBackend(height=12, width=12)
        encoders = LinearProjectionEncoder(image_shape=(12, 12, 3), embed_dim=8)
        worst = 0.0
        for seed in range(8):
            rng = np.random.default_rng(seed)
            gen = torch.Generator().manual_seed(seed)

            z0 = LatentCode(
                data=torch.randn(3, 12, 12, generator=gen, dtype=torch.float64), timestep=5
            )
            F0 = backend.extract_features(z0, "mid")
            pair = PointPair(
                handle=(int(rng.integers(2, 10)), int(rng.integers(2, 10))),
                target=(int(rng.integers(2, 10)), int(rng.integers(2, 10))),
            )
            mask = EditMask((rng.random((12, 12)) > 0.5).astype(float))
            x = (
                z0.data + 0.1 * torch.randn(3, 12, 12, generator=gen, dtype=torch.float64)
            ).requires_grad_(True)

            def f_ms(data):
                zk = LatentCode(data=data, timestep=5)
                return motion_supervision_loss(
                    backend.extract_features(zk, "mid"), F0, zk, z0, [pair], mask
                )

            def f_ppr(data):
                return prior_preservation_loss(LatentCode(data=data, timestep=5), z0)

            def f_reward(data):
                return reward_guidance(
                    LatentCode(data=data, timestep=20),
                    ("goal", "start"), backend.schedule, backend, encoders,
                )

            for f, tol in ((f_ms, 1e-4), (f_ppr, 1e-4), (f_reward, 1e-4)):
                errors = fd_relative_errors(f, x, 4, rng)
                worst = max(worst, max(errors))
                assert max(errors) < tol, f"{f.__name__} seed {seed}: {max(errors)}"
        print(f"  worst relative error {worst:.2e} over 24 configurations")


def test_dwpt_equivalence_and_ordering():
    """lambda 0 reproduces the baseline on 1000 random fields, the
    equidistant fixture always resolves toward the target, and every weight
    stays in [0.90, 1.00] at lambda 0.05."""
    with criterion("DWPT equivalence & ordering", budget_s=10.0):
        rng = np.random.default_rng(12345)
        cfg0 = TrackerConfig(r2=3, lambda_dir=0.0)
        for _ in range(1000):
            field = rng.standard_normal((3, 9, 9))
            fm = FeatureMap(
                data=torch.as_tensor(field, dtype=torch.float64),
                source_layer="mid", timestep=5,
            )
            handle = (int(rng.integers(0, 9)), int(rng.integers(0, 9)))
            target = (int(rng.integers(0, 9)), int(rng.integers(0, 9)))
            ref = torch.as_tensor(rng.standard_normal(3))
            assert dwpt_track(fm, ref, handle, target, cfg0) == baseline_track(
                fm, ref, handle, cfg0
            )

        cfg = TrackerConfig(r2=3, lambda_dir=0.05)
        for offset in range(1, 4):
            for axis_target in ((4, 8), (8, 4), (4, 0), (0, 4)):
                field = np.zeros((2, 9, 9))
                direction = (
                    np.sign(axis_target[0] - 4), np.sign(axis_target[1] - 4)
                )
                toward = (4 + offset * direction[0], 4 + offset * direction[1])
                away = (4 - offset * direction[0], 4 - offset * direction[1])
                field[:, toward[0], toward[1]] = 0.5
                field[:, away[0], away[1]] = 0.5
                fm = FeatureMap(
                    data=torch.as_tensor(field, dtype=torch.float64),
                    source_layer="mid", timestep=5,
                )
                got = dwpt_track(fm, torch.ones(2, dtype=torch.float64), (4, 4), axis_target, cfg)
                assert got.new_handle == toward, (axis_target, offset, got)

        for _ in range(2000):
            delta = tuple(rng.uniform(-3, 3, 2))
            d = direction_vector(
                tuple(rng.integers(0, 30, 2)), tuple(rng.integers(0, 30, 2)), cfg.epsilon
            )
            _, w = angular_weight(delta, d, cfg)
            assert 0.90 - 1e-12 <= w <= 1.0 + 1e-12


def test_inversion_roundtrip():
    """sample(invert(z)) reproduces z to 1e-5 in the sup norm over 100
    random latents."""
    with criterion("inversion round-trip", budget_s=30.0):
        backend = SyntheticBackend(height=16, width=16)
        gen = torch.Generator().manual_seed(7)
        worst = 0.0
        for _ in range(100):
            z0 = LatentCode(
                data=torch.randn(3, 16, 16, generator=gen, dtype=torch.float64), timestep=0
            )
            back = backend.ddim_sample(backend.ddim_invert(z0, 50))
            worst = max(worst, float((back.data - z0.data).abs().max()))
        print(f"  worst round-trip error {worst:.2e}")
        assert worst < 1e-5


def test_end_to_end_synthetic_drag():
    """Planted-blob translations reach mean distance <= 2 px inside the
    80-step cap with directional tracking on, and the directional tracker's
    suite mean strictly beats the baseline tracker's."""
    with criterion("end-to-end synthetic drag", budget_s=300.0):
        backend = SyntheticBackend(height=tasks.GRID, width=tasks.GRID)
        means = {}
        for dwpt_on in (True, False):
            mds = []
            for req in tasks.paired_suite(dwpt_on):
                session = prepare_session(req, backend, tasks.task_config())
                assert not session.failed, session.failure_cause
                _, history = run_drag(session)
                assert len(history) <= 80
                mds.append(history[-1].mean_distance if history else 0.0)
            means[dwpt_on] = float(np.mean(mds))
            if dwpt_on:
                blob_mds = mds[:6]
                assert all(md <= 2.0 for md in blob_mds), blob_mds
                assert all(md <= 2.0 for md in mds), mds
        print(f"  suite mean distance: directional {means[True]:.2f} px, baseline {means[False]:.2f} px")
        assert means[True] < means[False]


def test_ablation_fidelity():
    """Toggling a term off is bit-identical to running with its weight at
    zero (the build-without-the-term oracle)."""
    with criterion("ablation fidelity", budget_s=120.0):
        backend = SyntheticBackend(height=tasks.GRID, width=tasks.GRID)
        encoders = LinearProjectionEncoder(image_shape=(tasks.GRID, tasks.GRID, 3), embed_dim=8)

        def run(toggles, weights):
            req = tasks.blob_task(
                3, toggles=toggles, weights=weights,
                prompt_target="goal", prompt_initial="start",
            )
            session = prepare_session(
                req, backend, tasks.task_config(max_steps=15), encoders=encoders
            )
            _, history = run_drag(session)
            return session.z_param.detach(), [
                (r.handles, r.losses.total, r.mean_distance) for r in history
            ]

        z_off, h_off = run(Toggles(ppr_on=False, reward_on=False, dwpt_on=True), LossWeights())
        z_zero, h_zero = run(
            Toggles(ppr_on=True, reward_on=False, dwpt_on=True), LossWeights(lambda_kl=0.0)
        )
        assert torch.equal(z_off, z_zero)
        assert h_off == h_zero

        z_off, h_off = run(Toggles(ppr_on=True, reward_on=False, dwpt_on=True), LossWeights())
        z_zero, h_zero = run(
            Toggles(ppr_on=True, reward_on=True, dwpt_on=True), LossWeights(lambda_clip=0.0)
        )
        assert torch.equal(z_off, z_zero)
        assert h_off == h_zero


def test_ppr_containment():
    """With a strong reward term pushing the latent around, the final moment
    KL with the prior term on stays at or below half the value with it off,
    averaged over the paired suite."""
    with criterion("PPR containment", budget_s=120.0):
        backend = SyntheticBackend(height=tasks.GRID, width=tasks.GRID)
        encoders = LinearProjectionEncoder(image_shape=(tasks.GRID, tasks.GRID, 3), embed_dim=16)
        final_kl = {}
        for ppr_on in (True, False):
            values = []
            for req in tasks.paired_suite(True):
                req.prompt_target = "a bright red ball"
                req.prompt_initial = "a dull gray blob"
                req.toggles = Toggles(ppr_on=ppr_on, reward_on=True, dwpt_on=True)
                session = prepare_session(
                    req, backend, tasks.task_config(reward_interval=1), encoders=encoders
                )
                _, history = run_drag(session)
                values.append(history[-1].kl_divergence if history else 0.0)
            final_kl[ppr_on] = float(np.mean(values))
        print(
            f"  mean final KL: on {final_kl[True]:.4f}, off {final_kl[False]:.4f} "
            f"(ratio {final_kl[True] / final_kl[False]:.3f})"
        )
        assert final_kl[True] <= 0.5 * final_kl[False]


def test_service_state_machine(tmp_path):
    """Every illegal transition probe is rejected, and a restarted service
    reloads histories bit-exactly."""
    with criterion("service state machine", budget_s=120.0):
        root = tmp_path / "data"
        image_png = encode_png_bytes(tasks.blob_task(0).image)
        req = tasks.blob_task(0)
        doc = {
            "points": [
                {"handle": list(p.handle), "target": list(p.target)} for p in req.pairs
            ],
            "mask": None,
            "toggles": {"ppr_on": True, "reward_on": False, "dwpt_on": True},
            "optimizer": {
                "max_steps": 6, "step_size": 0.05, "reference_mode": "current",
                "patch": {"r1": 2}, "adapter": {"train_steps": 5},
            },
        }

        def probe_all(client, sid, legal):
            ops = {
                "edit": lambda: client.put(f"/v1/sessions/{sid}/edit", json=doc),
                "prepare": lambda: client.post(f"/v1/sessions/{sid}/prepare"),
                "run": lambda: client.post(f"/v1/sessions/{sid}/run"),
                "step": lambda: client.post(f"/v1/sessions/{sid}/step"),
                "cancel": lambda: client.post(f"/v1/sessions/{sid}/cancel"),
                "result": lambda: client.get(f"/v1/sessions/{sid}/result"),
            }
            for name, call in ops.items():
                if name in legal:
                    continue
                status = call().status_code
                assert status == 409, f"probe {name}: expected 409, got {status}"

        app = create_app(data_root=root)
        with TestClient(app) as client:
            sid = client.post("/v1/sessions", content=image_png).json()["id"]
            probe_all(client, sid, legal={"edit", "prepare"})  # created (no edit yet)
            client.put(f"/v1/sessions/{sid}/edit", json=doc)
            client.post(f"/v1/sessions/{sid}/prepare")
            probe_all(client, sid, legal={"edit", "run", "step"})  # prepared
            client.post(f"/v1/sessions/{sid}/run")
            deadline = time.time() + 60
            while time.time() < deadline:
                record = client.get(f"/v1/sessions/{sid}").json()
                if record["state"] in ("converged", "capped", "failed"):
                    break
                time.sleep(0.05)
            assert record["state"] in ("converged", "capped")
            probe_all(client, sid, legal={"result"})  # terminal
            before = client.get(f"/v1/sessions/{sid}").json()

        reborn = create_app(data_root=root)
        with TestClient(reborn) as client:
            after = client.get(f"/v1/sessions/{sid}").json()
            assert after["history"] == before["history"]
            assert after["state"] == before["state"]
            assert after["metrics"] == before["metrics"]
