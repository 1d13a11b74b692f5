"""Queue one annotation item per upstream media file."""
from __future__ import annotations

import argparse

from .protocol import Connection, HostError, stdio_connection


def run(conn: Connection) -> int:
    conn.handshake()
    try:
        media = conn.call("get_media")["media"]
    except HostError as exc:
        conn.finish("failure", exc.message)
        return 0
    items = [{"image_ref": m["ref"], "proposals": []} for m in media]
    conn.call("request_annotations", {"items": items})
    conn.call("report_progress", {"progress": 1.0})
    conn.finish("success", f"queued {len(items)} items")
    return 0


def main(argv: list[str] | None = None) -> int:
    argparse.ArgumentParser(description=__doc__).parse_args(argv)
    return run(stdio_connection())


if __name__ == "__main__":
    raise SystemExit(main())
