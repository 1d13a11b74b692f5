"""Subprocess workers and the host side of their stdio message protocol.

A worker is any executable. The host writes one handshake line, then serves
newline-delimited JSON requests until the worker calls ``finish`` or exits.
Every mutating method is applied atomically before the next request is read,
so killing a worker mid-run can lose future work but never corrupt state.
"""

from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from .errors import AnnoflowError, StateError

# protocol error codes, JSON-RPC style
PARSE_ERROR = -32700
UNKNOWN_METHOD = -32601
BAD_PARAMS = -32602
DOMAIN_ERROR = -32000

METHODS = (
    "get_media",
    "get_input_annotations",
    "request_annotations",
    "report_progress",
    "set_loop_break",
    "add_data_export",
    "add_visualization",
    "finish",
)


class JobState(str, Enum):
    SPAWNED = "spawned"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"
    TIMEOUT = "timeout"

    def terminal(self) -> bool:
        return self in (JobState.DONE, JobState.FAILED, JobState.TIMEOUT)


@dataclass
class ScriptJob:
    job_id: str
    instance_id: str
    element_id: str
    iteration: int
    entrypoint: str
    arguments: dict[str, Any] = field(default_factory=dict)
    state: JobState = JobState.SPAWNED
    progress: float = 0.0
    diagnostics: list[str] = field(default_factory=list)
    exit_code: int | None = None
    finish_message: str = ""

    def diagnose(self, line: str) -> None:
        self.diagnostics.append(line)
        del self.diagnostics[:-200]  # keep a bounded tail


class HostServices(Protocol):
    """Pipeline-facing operations a worker may invoke, minus protocol bookkeeping."""

    def get_media(self, job: ScriptJob) -> dict[str, Any]: ...

    def get_input_annotations(self, job: ScriptJob, iteration: int | None) -> list[dict[str, Any]]: ...

    def request_annotations(
        self,
        job: ScriptJob,
        items: Sequence[Mapping[str, Any]] | None,
        clusters: Mapping[str, Any] | None,
    ) -> dict[str, Any]: ...

    def set_loop_break(self, job: ScriptJob) -> dict[str, Any]: ...

    def add_data_export(self, job: ScriptJob, path: str) -> dict[str, Any]: ...

    def add_visualization(self, job: ScriptJob, path: str) -> dict[str, Any]: ...


def build_argv(job: ScriptJob) -> list[str]:
    """Worker command line; declared arguments become --key=value flags."""
    entry = Path(job.entrypoint)
    argv = [sys.executable, str(entry)] if entry.suffix == ".py" else [str(entry)]
    for key in sorted(job.arguments):
        argv.append(f"--{key}={job.arguments[key]}")
    return argv


class WorkerHost:
    """Runs one worker to completion, mediating all its data access."""

    def __init__(
        self,
        job: ScriptJob,
        services: HostServices,
        inputs: Sequence[str] = (),
        timeout_seconds: float | None = None,
        grace_seconds: float = 5.0,
    ) -> None:
        self.job = job
        self.services = services
        self.inputs = list(inputs)
        self.timeout_seconds = timeout_seconds
        self.grace_seconds = grace_seconds
        self._proc: subprocess.Popen[str] | None = None
        self._write_lock = threading.Lock()
        self._finished = threading.Event()
        self._finish_success: bool | None = None
        self._readers: list[threading.Thread] = []

    # -- lifecycle ---------------------------------------------------------

    def run(self) -> ScriptJob:
        """Spawn, serve requests, and settle the job's terminal state."""
        job = self.job
        entry = Path(job.entrypoint)
        if not entry.exists():
            job.state = JobState.FAILED
            job.diagnose(f"entrypoint not found: {entry}")
            return job
        try:
            self._proc = subprocess.Popen(
                build_argv(job),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            job.state = JobState.FAILED
            job.diagnose(f"spawn failed: {exc}")
            return job

        job.state = JobState.RUNNING
        lines: queue.Queue[str | None] = queue.Queue()
        self._readers = [
            threading.Thread(target=self._read_stdout, args=(lines,), daemon=True),
            threading.Thread(target=self._drain_stderr, daemon=True),
        ]
        for reader in self._readers:
            reader.start()

        self._send({"hello": {
            "instance_id": job.instance_id,
            "element_id": job.element_id,
            "iteration": job.iteration,
            "inputs": self.inputs,
        }})

        deadline = None if self.timeout_seconds is None else time.monotonic() + self.timeout_seconds
        eof = False
        while not self._finished.is_set() and not eof:
            try:
                line = lines.get(timeout=0.05)
                if line is None:
                    eof = True
                else:
                    self._handle_line(line)
            except queue.Empty:
                pass
            if deadline is not None and time.monotonic() > deadline and not self._finished.is_set():
                job.diagnose(f"timed out after {self.timeout_seconds}s")
                self._kill()
                job.state = JobState.TIMEOUT
                self._settle(expect_exit=True)
                return job

        self._settle(expect_exit=True)
        if self._finish_success is not None:
            job.state = JobState.DONE if self._finish_success else JobState.FAILED
        else:
            job.state = JobState.FAILED
            job.diagnose(f"worker exited without calling finish (exit code {job.exit_code})")
        return job

    def _settle(self, expect_exit: bool) -> None:
        proc = self._proc
        if proc is None:
            return
        for stream in (proc.stdin,):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.job.exit_code = proc.wait(timeout=self.grace_seconds if expect_exit else 0)
        except subprocess.TimeoutExpired:
            self._kill()
            self.job.exit_code = proc.wait()
        # the pipes hit EOF once the process is gone; collect the readers so
        # every diagnostic line is in place before the job is reported settled
        for reader in self._readers:
            reader.join(timeout=self.grace_seconds)

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()

    def _read_stdout(self, lines: queue.Queue[str | None]) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        for line in self._proc.stdout:
            lines.put(line)
        lines.put(None)

    def _drain_stderr(self) -> None:
        assert self._proc is not None and self._proc.stderr is not None
        for line in self._proc.stderr:
            self.job.diagnose(line.rstrip("\n"))

    def _send(self, obj: dict[str, Any]) -> None:
        proc = self._proc
        if proc is None or proc.stdin is None:
            return
        with self._write_lock:
            try:
                proc.stdin.write(json.dumps(obj, separators=(",", ":")) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass  # worker died; the EOF path settles the job

    # -- dispatch ---------------------------------------------------------

    def _handle_line(self, line: str) -> None:
        line = line.strip()
        if not line:
            return
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            self.job.diagnose(f"unparseable request line: {exc}")
            return
        if not isinstance(msg, dict) or "id" not in msg:
            self.job.diagnose(f"request without an id: {line[:200]}")
            return
        req_id = msg["id"]
        method = msg.get("method")
        params = msg.get("params") or {}
        if not isinstance(params, dict):
            self._send({"id": req_id, "error": {"code": BAD_PARAMS, "message": "params must be an object"}})
            return
        if method not in METHODS:
            self._send({"id": req_id, "error": {"code": UNKNOWN_METHOD, "message": f"unknown method {method!r}"}})
            return
        try:
            result = self._dispatch(method, params)
        except AnnoflowError as exc:
            self._send({"id": req_id, "error": {"code": DOMAIN_ERROR, "message": f"{exc.code}: {exc}"}})
            return
        except (TypeError, ValueError, KeyError) as exc:
            self._send({"id": req_id, "error": {"code": BAD_PARAMS, "message": str(exc)}})
            return
        self._send({"id": req_id, "result": result})
        if method == "finish":
            self._finished.set()

    def _dispatch(self, method: str, params: dict[str, Any]) -> Any:
        job = self.job
        if method == "get_media":
            return self.services.get_media(job)
        if method == "get_input_annotations":
            iteration = params.get("iteration")
            if iteration is not None:
                iteration = int(iteration)
            return {"annotations": self.services.get_input_annotations(job, iteration)}
        if method == "request_annotations":
            items = params.get("items")
            clusters = params.get("clusters")
            if items is None and clusters is None:
                raise ValueError("request_annotations needs items or clusters")
            return self.services.request_annotations(job, items, clusters)
        if method == "report_progress":
            fraction = float(params["progress"])
            if not 0.0 <= fraction <= 1.0:
                raise ValueError(f"progress must lie in [0,1], got {fraction}")
            if fraction < job.progress:
                raise StateError(f"progress may not decrease ({job.progress} -> {fraction})")
            job.progress = fraction
            return {"progress": job.progress}
        if method == "set_loop_break":
            return self.services.set_loop_break(job)
        if method == "add_data_export":
            return self.services.add_data_export(job, str(params["path"]))
        if method == "add_visualization":
            return self.services.add_visualization(job, str(params["path"]))
        if method == "finish":
            status = params.get("status", "success")
            if status not in ("success", "failure"):
                raise ValueError(f"finish status must be success or failure, got {status!r}")
            self._finish_success = status == "success"
            job.finish_message = str(params.get("message", ""))
            return {"acknowledged": True}
        raise AssertionError(f"unhandled method {method}")  # pragma: no cover
