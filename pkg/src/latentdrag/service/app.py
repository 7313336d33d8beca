"""Session-oriented HTTP service: image upload, edit definition, run
control with a server-push progress stream, and result retrieval.

Runs execute on background threads (one writer per session) so the service
stays responsive; every progress event is also persisted, which makes the
stream replayable and restart-safe.
"""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..backends import create_backend
from ..editspec import EditSpecError, build_edit_request
from ..encoders import LinearProjectionEncoder
from ..evaluation import evaluate_run
from ..optimizer import (
    EditSession,
    OptimizerError,
    check_convergence,
    drag_step,
    load_checkpoint,
    prepare_session,
    render_result,
    resume_session,
)
from ..pngio import decode_png_bytes, encode_png_bytes, save_png
from .store import IllegalTransition, SessionNotFound, SessionStore, TERMINAL_STATES

DEFAULT_SIZE_CAP = 10 * 1024 * 1024  # bytes
API_PREFIX = "/v1"
_STATIC_DIR = Path(__file__).resolve().parent / "static"


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


class ServiceState:
    def __init__(
        self,
        data_root: str | Path,
        backend_name: str = "synthetic",
        backend_options: Optional[dict] = None,
        size_cap: int = DEFAULT_SIZE_CAP,
    ):
        self.store = SessionStore(data_root)
        self.backend_name = backend_name
        self.backend_options = backend_options or {}
        self.size_cap = size_cap
        self._encoders_cache: dict[tuple[int, int, int], LinearProjectionEncoder] = {}
        self._backend_cache: dict[tuple[int, int], object] = {}

    def backend_for(self, image_shape: tuple[int, ...]):
        """Backend handle matching the upload geometry; the synthetic backend
        is built per grid size, real backbones keep their fixed geometry."""
        if self.backend_name != "synthetic" or "height" in self.backend_options:
            key = (0, 0)
            options = self.backend_options
        else:
            key = (image_shape[0], image_shape[1])
            options = {**self.backend_options, "height": key[0], "width": key[1]}
        if key not in self._backend_cache:
            self._backend_cache[key] = create_backend(self.backend_name, **options)
        return self._backend_cache[key]

    def encoders_for(self, shape: tuple[int, int, int]) -> LinearProjectionEncoder:
        if shape not in self._encoders_cache:
            self._encoders_cache[shape] = LinearProjectionEncoder(image_shape=shape)
        return self._encoders_cache[shape]


def _step_event(record_history_row: dict, preview: Optional[str]) -> dict:
    event = {"type": "step", **record_history_row}
    if preview:
        event["preview"] = preview
    return event


def _load_source_image(state: ServiceState, sid: str) -> np.ndarray:
    from ..pngio import load_png

    return load_png(state.store.session_dir(sid) / "source.png")


def _build_engine(state: ServiceState, sid: str) -> EditSession:
    record = state.store.get(sid)
    image = _load_source_image(state, sid)
    request, config = build_edit_request(dict(record.edit), image)
    backend = state.backend_for(image.shape)
    encoders = state.encoders_for(image.shape) if request.toggles.reward_on else None
    checkpoint = state.store.session_dir(sid) / "checkpoint.pt"
    if checkpoint.exists() and record.state == "prepared":
        return resume_session(
            request, backend, config, load_checkpoint(checkpoint),
            encoders=encoders, checkpoint_dir=state.store.session_dir(sid),
        )
    return prepare_session(
        request, backend, config,
        encoders=encoders, checkpoint_dir=state.store.session_dir(sid),
    )


def _finish_run(state: ServiceState, sid: str, engine: EditSession, final_state: str):
    store = state.store
    directory = store.session_dir(sid)
    image = render_result(engine)
    save_png(image, directory / "result.png")
    store.set_artifact(sid, "result", "result.png")
    report = evaluate_run(
        source_image=engine.request.image,
        result_image=image,
        final_handles=[p.handle for p in engine.pairs],
        targets=[p.target for p in engine.pairs],
        prompt_initial=engine.request.prompt_initial,
        prompt_target=engine.request.prompt_target,
        encoders=state.encoders_for(engine.request.image.shape),
        wall_clock_s=sum(r.wall_clock_ms for r in engine.history) / 1e3,
    )
    (directory / "report.json").write_text(json.dumps(report.as_dict(), indent=2))
    store.set_artifact(sid, "report", "report.json")
    store.set_metrics(sid, report.as_dict())
    store.transition(sid, final_state)


def _run_worker(state: ServiceState, sid: str) -> None:
    store = state.store
    engine = store.engine(sid)
    cancel = store.cancel_flag(sid)
    try:
        while (
            engine.step_count < engine.config.max_steps
            and not check_convergence(engine)
            and not cancel.is_set()
        ):
            report = drag_step(engine)
            preview = None
            if engine.step_count % engine.config.reward_interval == 0:
                name = f"preview_{report.step_index}.png"
                save_png(render_result(engine), store.session_dir(sid) / name)
                store.set_artifact(sid, f"preview_{report.step_index}", name)
                preview = f"{API_PREFIX}/sessions/{sid}/files/{name}"
            row = report.as_dict()
            if preview:
                row["preview"] = preview
            store.append_step(sid, row)
        if cancel.is_set():
            final = "capped"
        else:
            final = "converged" if check_convergence(engine) else "capped"
        engine.state = final
        _finish_run(state, sid, engine, final)
    except OptimizerError as exc:
        store.mark_failed(sid, str(exc))
    except Exception as exc:  # noqa: BLE001 - worker must never die silently
        store.mark_failed(sid, f"run crashed: {exc}")
    finally:
        store.release_run(sid)


def create_app(
    data_root: Optional[str | Path] = None,
    backend_name: Optional[str] = None,
    backend_options: Optional[dict] = None,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> FastAPI:
    data_root = data_root or os.environ.get("LATENTDRAG_DATA_ROOT", "./latentdrag-data")
    backend_name = backend_name or os.environ.get("LATENTDRAG_BACKEND", "synthetic")
    state = ServiceState(data_root, backend_name, backend_options, size_cap)
    app = FastAPI(title="latentdrag", version="1", on_shutdown=[lambda: state.store.shutdown()])
    app.state.service = state

    @app.exception_handler(SessionNotFound)
    def _not_found(request: Request, exc: SessionNotFound):
        return _error(404, f"no session {exc.args[0]!r}")

    @app.exception_handler(IllegalTransition)
    def _conflict(request: Request, exc: IllegalTransition):
        return _error(409, str(exc))

    @app.exception_handler(EditSpecError)
    def _bad_edit(request: Request, exc: EditSpecError):
        return _error(422, str(exc))

    # -- sessions ---------------------------------------------------------

    @app.post(f"{API_PREFIX}/sessions")
    async def create_session(request: Request):
        payload = await request.body()
        if not payload:
            return _error(400, "empty upload")
        if len(payload) > state.size_cap:
            return _error(413, f"upload exceeds size cap of {state.size_cap} bytes")
        try:
            image = decode_png_bytes(payload)
        except Exception:
            return _error(400, "upload is not a decodable image")
        record = state.store.create()
        save_png(image, state.store.session_dir(record.id) / "source.png")
        state.store.set_artifact(record.id, "source", "source.png")
        return {"id": record.id, "state": record.state}

    @app.get(f"{API_PREFIX}/sessions")
    def list_sessions():
        return {"sessions": state.store.ids()}

    @app.get(f"{API_PREFIX}/sessions/{{sid}}")
    def get_session(sid: str):
        return state.store.get(sid).as_dict()

    @app.put(f"{API_PREFIX}/sessions/{{sid}}/edit")
    def set_edit(sid: str, doc: dict):
        state.store.require_state(sid, "created", "prepared")
        image = _load_source_image(state, sid)
        request_obj, _ = build_edit_request(dict(doc), image)  # validates
        record = state.store.set_edit(sid, doc)
        return {"id": sid, "state": record.state, "edit": record.edit}

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/prepare")
    def prepare(sid: str):
        record = state.store.require_state(sid, "created")
        if record.edit is None:
            return _error(409, f"session {sid}: no edit set")
        engine = _build_engine(state, sid)
        if engine.failed:
            state.store.transition(sid, "failed")
            state.store.mark_failed(sid, engine.failure_cause)
            return _error(500, engine.failure_cause)
        state.store.set_engine(sid, engine)
        state.store.set_artifact(sid, "checkpoint", "checkpoint.pt")
        return state.store.transition(sid, "prepared").as_dict()

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/run")
    def run(sid: str):
        state.store.require_state(sid, "prepared")
        if not state.store.acquire_run(sid):
            return _error(409, f"session {sid}: a run is already active")
        try:
            if state.store.engine(sid) is None:
                state.store.set_engine(sid, _build_engine(state, sid))
            state.store.cancel_flag(sid).clear()
            record = state.store.transition(sid, "running")
        except Exception:
            state.store.release_run(sid)
            raise
        worker = threading.Thread(target=_run_worker, args=(state, sid), daemon=True)
        state.store.track_thread(sid, worker)
        worker.start()
        return Response(
            status_code=202, content=json.dumps(record.as_dict()),
            media_type="application/json",
        )

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/step")
    def step(sid: str):
        record = state.store.require_state(sid, "prepared", "running")
        if not state.store.acquire_run(sid):
            return _error(409, f"session {sid}: a run is already active")
        try:
            if state.store.engine(sid) is None:
                state.store.set_engine(sid, _build_engine(state, sid))
            engine = state.store.engine(sid)
            if record.state == "prepared":
                state.store.transition(sid, "running")
            if check_convergence(engine) or engine.step_count >= engine.config.max_steps:
                final = "converged" if check_convergence(engine) else "capped"
                engine.state = final
                _finish_run(state, sid, engine, final)
                return state.store.get(sid).as_dict()
            try:
                report = drag_step(engine)
            except OptimizerError as exc:
                state.store.mark_failed(sid, str(exc))
                return _error(500, str(exc))
            state.store.append_step(sid, report.as_dict())
            if check_convergence(engine) or engine.step_count >= engine.config.max_steps:
                final = "converged" if check_convergence(engine) else "capped"
                engine.state = final
                _finish_run(state, sid, engine, final)
            return state.store.get(sid).as_dict()
        finally:
            state.store.release_run(sid)

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/cancel")
    def cancel(sid: str):
        state.store.require_state(sid, "running")
        state.store.cancel_flag(sid).set()
        return {"id": sid, "state": "running", "cancel_requested": True}

    # -- progress stream ----------------------------------------------------

    def _sse(event: dict, event_id: Optional[int] = None) -> str:
        head = f"id: {event_id}\n" if event_id is not None else ""
        return f"{head}event: {event['type']}\ndata: {json.dumps(event)}\n\n"

    def _event_source(sid: str, after: int) -> Iterator[str]:
        cursor = after + 1
        while True:
            record = state.store.get(sid)
            rows = record.history
            while cursor < len(rows):
                row = rows[cursor]
                yield _sse(
                    _step_event(row, row.get("preview")), event_id=row["step_index"]
                )
                cursor += 1
            if record.state in TERMINAL_STATES:
                yield _sse(
                    {
                        "type": "terminal",
                        "state": record.state,
                        "metrics": record.metrics,
                        "error": record.error,
                    }
                )
                return
            state.store.wait_for_change(sid, timeout=0.25)

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/events")
    def events(sid: str, after: int = -1):
        state.store.get(sid)  # 404 before streaming starts
        return StreamingResponse(
            _event_source(sid, after), media_type="text/event-stream"
        )

    # -- results ------------------------------------------------------------

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/result")
    def result(sid: str):
        record = state.store.get(sid)
        if record.state not in TERMINAL_STATES:
            return _error(409, f"session {sid} not finished (state {record.state!r})")
        body = {
            "id": sid,
            "state": record.state,
            "metrics": record.metrics,
            "history": record.history,
            "error": record.error,
            "artifacts": {
                name: f"{API_PREFIX}/sessions/{sid}/files/{path}"
                for name, path in record.artifacts.items()
            },
        }
        if record.state == "failed":
            body["artifacts"].pop("result", None)
        return body

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/files/{{name}}")
    def files(sid: str, name: str):
        record = state.store.get(sid)
        if name not in record.artifacts.values():
            return _error(404, f"no artifact {name!r}")
        return FileResponse(state.store.session_dir(sid) / name)

    if _STATIC_DIR.is_dir():
        app.mount("/", StaticFiles(directory=_STATIC_DIR, html=True), name="studio")

    return app
