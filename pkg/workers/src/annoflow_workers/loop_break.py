"""Break the enclosing pipeline loop once enough passes have run."""
from __future__ import annotations

import argparse

from .protocol import Connection, HostError, stdio_connection


def run(conn: Connection, break_after: int) -> int:
    hello = conn.handshake()
    if hello.iteration < break_after:
        conn.finish("success", f"iteration {hello.iteration} below threshold {break_after}")
        return 0
    try:
        conn.call("set_loop_break")
    except HostError as exc:
        conn.finish("failure", exc.message)
        return 0
    conn.finish("success", f"break requested at iteration {hello.iteration}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--break-after", type=int, default=2, help="iteration that triggers the break")
    args = parser.parse_args(argv)
    return run(stdio_connection(), break_after=args.break_after)


if __name__ == "__main__":
    raise SystemExit(main())
