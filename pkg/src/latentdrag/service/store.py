"""Persistent session records behind the HTTP service.

One directory per session under the data root; every mutation rewrites
record.json atomically, so a restarted process reloads sessions with the
exact histories it last persisted. The run state machine is enforced here:
created -> prepared -> running -> {converged | capped | failed}.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

RECORD_FORMAT_VERSION = 1

TERMINAL_STATES = ("converged", "capped", "failed")
_ALLOWED_TRANSITIONS = {
    ("created", "prepared"),
    ("created", "failed"),
    ("prepared", "running"),
    ("running", "converged"),
    ("running", "capped"),
    ("running", "failed"),
}


class SessionNotFound(KeyError):
    pass


class IllegalTransition(RuntimeError):
    def __init__(self, sid: str, current: str, requested: str):
        super().__init__(
            f"session {sid}: cannot move from {current!r} to {requested!r}"
        )
        self.current = current
        self.requested = requested


@dataclass
class SessionRecord:
    id: str
    state: str = "created"
    created_at: float = field(default_factory=time.time)
    edit: Optional[dict] = None
    history: list[dict] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    metrics: Optional[dict] = None
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "format_version": RECORD_FORMAT_VERSION,
            "id": self.id,
            "state": self.state,
            "created_at": self.created_at,
            "edit": self.edit,
            "history": self.history,
            "artifacts": self.artifacts,
            "metrics": self.metrics,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionRecord":
        return cls(
            id=d["id"],
            state=d["state"],
            created_at=d["created_at"],
            edit=d.get("edit"),
            history=list(d.get("history", [])),
            artifacts=dict(d.get("artifacts", {})),
            metrics=d.get("metrics"),
            error=d.get("error"),
        )


class SessionStore:
    """Disk-backed session records plus in-memory run bookkeeping."""

    def __init__(self, data_root: str | Path):
        self.data_root = Path(data_root)
        self.data_root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._records: dict[str, SessionRecord] = {}
        self._events: dict[str, threading.Condition] = {}
        self._cancel_flags: dict[str, threading.Event] = {}
        self._run_active: dict[str, bool] = {}
        self._engines: dict[str, object] = {}
        self._threads: dict[str, threading.Thread] = {}
        self._load_existing()

    # -- lifecycle ----------------------------------------------------------

    def _load_existing(self) -> None:
        for record_path in sorted(self.data_root.glob("*/record.json")):
            record = SessionRecord.from_dict(json.loads(record_path.read_text()))
            if record.state == "running":
                # a run died with the process; its partial history survives
                record.state = "failed"
                record.error = "run interrupted by service restart"
            self._records[record.id] = record
            self._events[record.id] = threading.Condition()
            self._cancel_flags[record.id] = threading.Event()
            self._run_active[record.id] = False
            self._persist(record)

    def create(self) -> SessionRecord:
        with self._lock:
            sid = uuid.uuid4().hex[:12]
            record = SessionRecord(id=sid)
            self._records[sid] = record
            self._events[sid] = threading.Condition()
            self._cancel_flags[sid] = threading.Event()
            self._run_active[sid] = False
            self.session_dir(sid).mkdir(parents=True, exist_ok=True)
            self._persist(record)
            return record

    def session_dir(self, sid: str) -> Path:
        return self.data_root / sid

    def get(self, sid: str) -> SessionRecord:
        with self._lock:
            if sid not in self._records:
                raise SessionNotFound(sid)
            return self._records[sid]

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._records)

    # -- state machine ------------------------------------------------------

    def transition(self, sid: str, new_state: str) -> SessionRecord:
        with self._lock:
            record = self.get(sid)
            if (record.state, new_state) not in _ALLOWED_TRANSITIONS:
                raise IllegalTransition(sid, record.state, new_state)
            record.state = new_state
            self._persist(record)
            self._notify(sid)
            return record

    def require_state(self, sid: str, *states: str) -> SessionRecord:
        record = self.get(sid)
        if record.state not in states:
            raise IllegalTransition(sid, record.state, "/".join(states))
        return record

    # -- mutations ----------------------------------------------------------

    def set_edit(self, sid: str, edit: dict) -> SessionRecord:
        with self._lock:
            record = self.require_state(sid, "created", "prepared")
            record.edit = edit
            # overwriting an already-prepared edit re-arms the session
            record.state = "created"
            self._engines.pop(sid, None)
            self._persist(record)
            return record

    def mark_failed(self, sid: str, error: str) -> SessionRecord:
        with self._lock:
            record = self.get(sid)
            record.state = "failed"
            record.error = error
            self._persist(record)
            self._notify(sid)
            return record

    def append_step(self, sid: str, step: dict) -> None:
        with self._lock:
            record = self.get(sid)
            record.history.append(step)
            self._persist(record)
            self._notify(sid)

    def set_artifact(self, sid: str, name: str, relative_path: str) -> None:
        with self._lock:
            record = self.get(sid)
            record.artifacts[name] = relative_path
            self._persist(record)

    def set_metrics(self, sid: str, metrics: dict) -> None:
        with self._lock:
            record = self.get(sid)
            record.metrics = metrics
            self._persist(record)

    # -- run bookkeeping (in-memory) -----------------------------------------

    def engine(self, sid: str):
        return self._engines.get(sid)

    def set_engine(self, sid: str, engine) -> None:
        self._engines[sid] = engine

    def cancel_flag(self, sid: str) -> threading.Event:
        return self._cancel_flags[sid]

    def acquire_run(self, sid: str) -> bool:
        """Single-writer rule: only one run/step driver per session."""
        with self._lock:
            if self._run_active.get(sid):
                return False
            self._run_active[sid] = True
            return True

    def release_run(self, sid: str) -> None:
        with self._lock:
            self._run_active[sid] = False

    def run_active(self, sid: str) -> bool:
        with self._lock:
            return bool(self._run_active.get(sid))

    def track_thread(self, sid: str, thread: threading.Thread) -> None:
        with self._lock:
            self._threads[sid] = thread

    def shutdown(self, timeout: float = 30.0) -> None:
        """Cancel every active run and wait for the workers to drain."""
        with self._lock:
            threads = dict(self._threads)
            for flag in self._cancel_flags.values():
                flag.set()
        for thread in threads.values():
            if thread.is_alive():
                thread.join(timeout=timeout)

    # -- events ---------------------------------------------------------------

    def _notify(self, sid: str) -> None:
        cond = self._events.get(sid)
        if cond is not None:
            with cond:
                cond.notify_all()

    def wait_for_change(self, sid: str, timeout: float = 0.5) -> None:
        cond = self._events[sid]
        with cond:
            cond.wait(timeout=timeout)

    # -- persistence ----------------------------------------------------------

    def _persist(self, record: SessionRecord) -> None:
        directory = self.session_dir(record.id)
        directory.mkdir(parents=True, exist_ok=True)
        tmp = directory / "record.json.tmp"
        tmp.write_text(json.dumps(record.as_dict(), indent=2))
        tmp.replace(directory / "record.json")
