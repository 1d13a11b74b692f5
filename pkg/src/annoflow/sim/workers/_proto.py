"""Line-protocol client used by the bundled worker scripts.

Workers read one handshake object from stdin, then exchange one JSON
object per line: requests carry ``{"id", "method", "params"}`` and the
host answers with ``{"id", "result"}`` or ``{"id", "error"}``.  Only one
request is in flight at a time.
"""
from __future__ import annotations

import json
import sys


class HostError(RuntimeError):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(f"host error {code}: {message}")
        self.code = code
        self.message = message


class Host:
    def __init__(self) -> None:
        line = sys.stdin.readline()
        if not line:
            raise RuntimeError("no handshake on stdin")
        hello = json.loads(line)["hello"]
        self.instance_id: str = hello["instance_id"]
        self.element_id: str = hello["element_id"]
        self.iteration: int = hello["iteration"]
        self.inputs: list[str] = hello["inputs"]
        self._next_id = 0

    def call(self, method: str, params: dict | None = None):
        self._next_id += 1
        request = {"id": self._next_id, "method": method, "params": params or {}}
        sys.stdout.write(json.dumps(request) + "\n")
        sys.stdout.flush()
        while True:
            line = sys.stdin.readline()
            if not line:
                raise RuntimeError("host closed the pipe mid-request")
            line = line.strip()
            if not line:
                continue
            response = json.loads(line)
            if response.get("id") != self._next_id:
                continue
            if "error" in response:
                error = response["error"]
                raise HostError(error["code"], error["message"])
            return response.get("result")

    def finish(self, status: str = "success", message: str = "") -> None:
        self.call("finish", {"status": status, "message": message})


def parse_args(argv: list[str]) -> dict[str, str]:
    """Decode ``--key=value`` style script arguments."""
    values: dict[str, str] = {}
    for token in argv:
        if not token.startswith("--") or "=" not in token:
            continue
        key, _, value = token[2:].partition("=")
        values[key] = value
    return values
