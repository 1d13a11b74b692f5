"""Queue annotation items with detector proposals read from a sidecar file.

The sidecar is JSON of the form
``{"images": {"<path>": [{"bbox": [xc, yc, w, h], "score": s, "label": "name"}]}}``.
Only proposals scoring strictly above the threshold are attached.  A
missing sidecar is not an error: the first loop pass runs before any
detector output exists, so items are queued bare.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from .protocol import Connection, HostError, stdio_connection


def load_sidecar(path: Path) -> dict[str, list[dict]]:
    document = json.loads(path.read_text())
    images = document["images"]
    if not isinstance(images, dict):
        raise ValueError("'images' must map paths to proposal lists")
    for ref, entries in images.items():
        for entry in entries:
            bbox = entry["bbox"]
            if len(bbox) != 4 or not all(isinstance(v, (int, float)) for v in bbox):
                raise ValueError(f"{ref}: bbox must be four numbers")
            if not 0.0 <= float(entry["score"]) <= 1.0:
                raise ValueError(f"{ref}: score {entry['score']} outside [0, 1]")
            if not isinstance(entry["label"], str):
                raise ValueError(f"{ref}: label must be a string")
    return images


def run(conn: Connection, sidecar: Path, min_score: float) -> int:
    conn.handshake()
    try:
        media = conn.call("get_media")["media"]
    except HostError as exc:
        conn.finish("failure", exc.message)
        return 0

    images: dict[str, list[dict]] = {}
    if sidecar.exists():
        try:
            images = load_sidecar(sidecar)
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            conn.finish("failure", f"malformed sidecar {sidecar.name}: {exc}")
            return 0

    items = []
    attached = 0
    for m in media:
        entries = images.get(m["ref"], images.get(m["path"], []))
        proposals = [
            {"kind": "bbox", "coords": list(e["bbox"]), "score": float(e["score"]), "label": e["label"]}
            for e in entries
            if float(e["score"]) > min_score
        ]
        attached += len(proposals)
        items.append({"image_ref": m["ref"], "proposals": proposals})
    conn.call("request_annotations", {"items": items})
    conn.call("report_progress", {"progress": 1.0})
    conn.finish("success", f"queued {len(items)} items with {attached} proposals")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sidecar", default="proposals.json", help="proposal sidecar file")
    parser.add_argument("--min-score", type=float, default=0.4, help="strict lower score bound")
    args = parser.parse_args(argv)
    return run(stdio_connection(), sidecar=Path(args.sidecar), min_score=args.min_score)


if __name__ == "__main__":
    raise SystemExit(main())
