"""Client side of the host protocol: one JSON object per line over stdio.

The host opens with ``{"hello": {...}}`` carrying job context.  After
that the client sends ``{"id", "method", "params"}`` requests and the
host answers each id exactly once with ``{"id", "result"}`` or
``{"id", "error": {"code", "message"}}``.  One request in flight at a
time.

The transport is injected as a pair of callables so tests can replay
recorded host lines without a live host.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from typing import Any, Callable


class HostError(RuntimeError):
    """An error response from the host for one of our requests."""

    def __init__(self, code: int, message: str) -> None:
        super().__init__(f"host error {code}: {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class Hello:
    instance_id: str
    element_id: str
    iteration: int
    inputs: list[str]


class Connection:
    def __init__(self, read_line: Callable[[], str], write_line: Callable[[str], None]) -> None:
        self._read_line = read_line
        self._write_line = write_line
        self._next_id = 0
        self.hello: Hello | None = None

    def handshake(self) -> Hello:
        line = self._read_line()
        if not line:
            raise RuntimeError("no handshake from the host")
        hello = json.loads(line)["hello"]
        self.hello = Hello(
            instance_id=hello["instance_id"],
            element_id=hello["element_id"],
            iteration=int(hello["iteration"]),
            inputs=list(hello.get("inputs", [])),
        )
        return self.hello

    def call(self, method: str, params: dict[str, Any] | None = None) -> Any:
        self._next_id += 1
        request = {"id": self._next_id, "method": method, "params": params or {}}
        self._write_line(json.dumps(request))
        while True:
            line = self._read_line()
            if not line:
                raise RuntimeError(f"host closed the pipe while {method!r} was pending")
            line = line.strip()
            if not line:
                continue
            response = json.loads(line)
            if response.get("id") != self._next_id:
                continue  # not ours (host noise); keep waiting
            if "error" in response:
                error = response["error"]
                raise HostError(error["code"], error["message"])
            return response.get("result")

    def finish(self, status: str, message: str) -> None:
        self.call("finish", {"status": status, "message": message})


def stdio_connection() -> Connection:
    def write_line(text: str) -> None:
        sys.stdout.write(text + "\n")
        sys.stdout.flush()

    return Connection(read_line=sys.stdin.readline, write_line=write_line)
