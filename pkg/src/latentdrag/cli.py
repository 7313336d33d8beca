"""Command line: headless edits, benchmarking, and serving the studio.

    latentdrag edit spec.json --backend synthetic --ablate ppr --out results/
    latentdrag bench specs/ --out report.json
    latentdrag serve --port 8000 --data-root ./sessions
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .backends import BackendError, create_backend
from .editspec import EditSpecError, apply_ablations, load_edit_spec
from .encoders import LinearProjectionEncoder
from .evaluation import EvaluationError, evaluate_run, run_benchmark
from .optimizer import OptimizerError, prepare_session, run_drag
from .pngio import save_png


def _add_backend_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        default=os.environ.get("LATENTDRAG_BACKEND", "synthetic"),
        help="backend registry name (default: synthetic)",
    )


def _backend_for(name: str, image_shape=None):
    options = {}
    if name == "synthetic" and image_shape is not None:
        options = {"height": image_shape[0], "width": image_shape[1]}
    return create_backend(name, **options)


def cmd_edit(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    request, config = load_edit_spec(spec_path)
    request = apply_ablations(request, args.ablate)
    if args.max_steps is not None:
        config = replace(config, max_steps=args.max_steps)
    backend = _backend_for(args.backend, request.image.shape)
    encoders = (
        LinearProjectionEncoder(image_shape=request.image.shape)
        if request.toggles.reward_on
        else None
    )
    out_dir = Path(args.out) if args.out else spec_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    session = prepare_session(request, backend, config, encoders=encoders)
    if session.failed:
        print(f"error: {session.failure_cause}", file=sys.stderr)
        return 1
    image, history = run_drag(session)
    if session.failed:
        print(f"error: {session.failure_cause}", file=sys.stderr)
        return 1

    stem = spec_path.stem
    save_png(image, out_dir / f"{stem}.result.png")
    report = evaluate_run(
        source_image=request.image,
        result_image=image,
        final_handles=[p.handle for p in session.pairs],
        targets=[p.target for p in session.pairs],
        prompt_initial=request.prompt_initial,
        prompt_target=request.prompt_target,
        encoders=encoders or LinearProjectionEncoder(image_shape=request.image.shape),
        wall_clock_s=time.perf_counter() - started,
    )
    (out_dir / f"{stem}.report.json").write_text(json.dumps(report.as_dict(), indent=2))
    (out_dir / f"{stem}.history.json").write_text(
        json.dumps([r.as_dict() for r in history], indent=2)
    )
    print(
        f"{session.state}: {len(history)} steps, "
        f"mean distance {report.mean_distance:.2f} px -> {out_dir / (stem + '.result.png')}"
    )
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.backend == "synthetic":
        backend = lambda shape: _backend_for("synthetic", shape)  # noqa: E731
    else:
        backend = create_backend(args.backend)
    out = Path(args.out) if args.out else Path(args.spec_dir) / "benchmark.json"
    reports, aggregate = run_benchmark(args.spec_dir, backend, out_path=out)
    print(json.dumps(aggregate, indent=2))
    print(f"per-case report -> {out}")
    return 0 if not aggregate.get("failures") else 1


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(data_root=args.data_root, backend_name=args.backend)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentdrag")
    sub = parser.add_subparsers(dest="command", required=True)

    p_edit = sub.add_parser("edit", help="run one edit spec headlessly")
    p_edit.add_argument("spec", help="path to the edit spec (json)")
    _add_backend_arg(p_edit)
    p_edit.add_argument(
        "--ablate", action="append", default=[], choices=["ppr", "reward", "dwpt"],
        help="disable a term (repeatable)",
    )
    p_edit.add_argument("--max-steps", type=int, default=None)
    p_edit.add_argument("--out", default=None, help="artifact directory (default: beside the spec)")
    p_edit.set_defaults(func=cmd_edit)

    p_bench = sub.add_parser("bench", help="run every edit spec in a directory")
    p_bench.add_argument("spec_dir")
    _add_backend_arg(p_bench)
    p_bench.add_argument("--out", default=None, help="aggregate report path")
    p_bench.set_defaults(func=cmd_bench)

    p_serve = sub.add_parser("serve", help="start the HTTP service and studio")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument(
        "--port", type=int, default=int(os.environ.get("LATENTDRAG_PORT", "8000"))
    )
    p_serve.add_argument(
        "--data-root", default=os.environ.get("LATENTDRAG_DATA_ROOT", "./latentdrag-data")
    )
    _add_backend_arg(p_serve)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EditSpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except (BackendError, EvaluationError, OptimizerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
