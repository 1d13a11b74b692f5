"""Host doubles for exercising workers without the real pipeline."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable

from annoflow_workers.protocol import Connection

DEFAULT_HELLO = {"instance_id": "inst-1", "element_id": "el", "iteration": 0, "inputs": []}


@dataclass(frozen=True)
class ErrorSpec:
    code: int
    message: str


class ScriptedHost:
    """Answers each request from a canned result table and records traffic."""

    def __init__(self, hello: dict | None = None, results: dict[str, Any] | None = None):
        self.hello = {**DEFAULT_HELLO, **(hello or {})}
        self.results = {"finish": {"acknowledged": True}, "report_progress": {}, **(results or {})}
        self.requests: list[dict] = []
        self.sent_lines: list[str] = []
        self.response_lines: list[str] = [json.dumps({"hello": self.hello})]
        self._cursor = 0

    def read_line(self) -> str:
        if self._cursor >= len(self.response_lines):
            return ""
        line = self.response_lines[self._cursor]
        self._cursor += 1
        return line + "\n"

    def write_line(self, text: str) -> None:
        self.sent_lines.append(text)
        msg = json.loads(text)
        self.requests.append(msg)
        spec = self.results.get(msg["method"], {})
        if callable(spec):
            spec = spec(msg["params"])
        if isinstance(spec, ErrorSpec):
            response = {"id": msg["id"], "error": {"code": spec.code, "message": spec.message}}
        else:
            response = {"id": msg["id"], "result": spec}
        self.response_lines.append(json.dumps(response))

    def connection(self) -> Connection:
        return Connection(read_line=self.read_line, write_line=self.write_line)

    def calls(self, method: str) -> list[dict]:
        return [r["params"] for r in self.requests if r["method"] == method]

    def finish_params(self) -> dict:
        finishes = self.calls("finish")
        assert len(finishes) == 1, finishes
        return finishes[0]


class ReplayTransport:
    """Feeds previously recorded host lines; records what the client sends."""

    def __init__(self, recorded_lines: list[str]):
        self.lines = list(recorded_lines)
        self.sent_lines: list[str] = []
        self._cursor = 0

    def read_line(self) -> str:
        if self._cursor >= len(self.lines):
            return ""
        line = self.lines[self._cursor]
        self._cursor += 1
        return line + "\n"

    def write_line(self, text: str) -> None:
        self.sent_lines.append(text)

    def connection(self) -> Connection:
        return Connection(read_line=self.read_line, write_line=self.write_line)


def assert_replays_identically(run: Callable[[Connection], int], host: ScriptedHost) -> None:
    """The replay invariant: same recorded responses, same bytes out."""
    replay = ReplayTransport(host.response_lines)
    run(replay.connection())
    assert replay.sent_lines == host.sent_lines
