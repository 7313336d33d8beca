"""Headless CLI: artifacts, exit codes, diagnostics."""

import json

import numpy as np
import pytest

from latentdrag.cli import main
from latentdrag.pngio import save_png

import synthetic_tasks as tasks


def write_spec(tmp_path, name="edit.json", **overrides):
    req = tasks.blob_task(0)
    save_png(req.image, tmp_path / "source.png")
    doc = {
        "image": "source.png",
        "points": [{"handle": list(p.handle), "target": list(p.target)} for p in req.pairs],
        "mask": None,
        "optimizer": {
            "max_steps": 40,
            "step_size": 0.05,
            "reference_mode": "current",
            "patch": {"r1": 2},
            "adapter": {"train_steps": 5},
        },
    }
    doc.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestEditCommand:
    def test_valid_spec_writes_three_artifacts(self, tmp_path, capsys):
        spec = write_spec(tmp_path)
        assert main(["edit", str(spec), "--backend", "synthetic"]) == 0
        assert (tmp_path / "edit.result.png").exists()
        assert (tmp_path / "edit.report.json").exists()
        assert (tmp_path / "edit.history.json").exists()
        out = capsys.readouterr().out
        assert "mean distance" in out

    def test_out_dir_flag(self, tmp_path):
        spec = write_spec(tmp_path)
        out_dir = tmp_path / "results"
        assert main(["edit", str(spec), "--out", str(out_dir)]) == 0
        assert (out_dir / "edit.result.png").exists()

    def test_missing_mask_file_nonzero_exit_names_path(self, tmp_path, capsys):
        spec = write_spec(tmp_path, mask="gone.png")
        assert main(["edit", str(spec)]) == 2
        assert "gone.png" in capsys.readouterr().err

    def test_schema_violation_nonzero_exit_names_field(self, tmp_path, capsys):
        spec = write_spec(tmp_path, points=[])
        assert main(["edit", str(spec)]) == 2
        assert "points" in capsys.readouterr().err

    def test_ablate_flag_disables_term(self, tmp_path):
        spec = write_spec(tmp_path, name="ablated.json")
        assert main(["edit", str(spec), "--ablate", "ppr", "--max-steps", "5"]) == 0
        history = json.loads((tmp_path / "ablated.history.json").read_text())
        assert all(row["losses"]["kl"] is None for row in history)

    def test_max_steps_flag_caps_history(self, tmp_path):
        spec = write_spec(tmp_path, name="short.json")
        assert main(["edit", str(spec), "--max-steps", "3"]) == 0
        history = json.loads((tmp_path / "short.history.json").read_text())
        assert len(history) <= 3

    def test_unknown_backend_exit_one(self, tmp_path, capsys):
        spec = write_spec(tmp_path)
        assert main(["edit", str(spec), "--backend", "nope"]) == 1
        assert "no backend named" in capsys.readouterr().err


class TestBenchCommand:
    def test_bench_writes_aggregate(self, tmp_path, capsys):
        for i in range(2):
            req = tasks.blob_task(i)
            save_png(req.image, tmp_path / f"case{i}.png")
            doc = {
                "image": f"case{i}.png",
                "points": [
                    {"handle": list(p.handle), "target": list(p.target)}
                    for p in req.pairs
                ],
                "optimizer": {
                    "max_steps": 10,
                    "step_size": 0.05,
                    "reference_mode": "current",
                    "patch": {"r1": 2},
                    "adapter": {"train_steps": 5},
                },
            }
            (tmp_path / f"case{i}.json").write_text(json.dumps(doc))
        out = tmp_path / "report.json"
        assert main(["bench", str(tmp_path), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["aggregate"]["cases"] == 2
