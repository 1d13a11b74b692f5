"""Worker: queue every upstream image as a bare annotation item."""
from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _proto import Host, parse_args


def main() -> None:
    args = parse_args(sys.argv[1:])
    limit = int(args["limit"]) if "limit" in args else None
    host = Host()
    media = host.call("get_media")["media"]
    if limit is not None:
        media = media[:limit]
    items = [{"image_ref": entry["ref"], "proposals": []} for entry in media]
    attached = host.call("request_annotations", {"items": items})
    host.call("report_progress", {"progress": 1.0})
    host.finish(message=f"queued {attached['attached_items']} items")


if __name__ == "__main__":
    main()
