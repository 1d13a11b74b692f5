"""Worker: queue one image slice per loop round, with sidecar proposals.

Round k takes images ``[k*n : (k+1)*n]`` from the upstream media list.
Box proposals come from an optional sidecar file ``iter-<k>.json`` shaped
as ``{"images": {"<ref>": [{"bbox": [...], "score": s, "label": name}]}}``;
only proposals scoring strictly above the threshold are attached.  When no
sidecar exists for a round (typically the first), items go out bare.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _proto import Host, parse_args


def load_sidecar(directory: str | None, iteration: int) -> dict:
    if not directory:
        return {}
    path = Path(directory) / f"iter-{iteration}.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8")).get("images", {})


def main() -> None:
    args = parse_args(sys.argv[1:])
    per_round = int(args["images-per-iteration"]) if "images-per-iteration" in args else None
    min_score = float(args.get("min-score", "0.4"))
    host = Host()

    media = host.call("get_media")["media"]
    if per_round is not None:
        media = media[host.iteration * per_round : (host.iteration + 1) * per_round]
    sidecar = load_sidecar(args.get("sidecar-dir"), host.iteration)

    items = []
    kept = 0
    dropped = 0
    for entry in media:
        raw = sidecar.get(entry["ref"], sidecar.get(entry["path"], []))
        proposals = []
        for prop in raw:
            if prop["score"] > min_score:
                proposals.append(
                    {
                        "kind": "bbox",
                        "coords": list(prop["bbox"]),
                        "label": prop["label"],
                        "score": prop["score"],
                    }
                )
                kept += 1
            else:
                dropped += 1
        items.append({"image_ref": entry["ref"], "proposals": proposals})

    result = host.call("request_annotations", {"items": items})
    host.call("report_progress", {"progress": 1.0})
    host.finish(
        message=(
            f"round {host.iteration}: {result['attached_items']} items, "
            f"{kept} proposals kept, {dropped} below {min_score}"
        )
    )


if __name__ == "__main__":
    main()
