"""Group upstream boxes for clustered review.

Boxes are partitioned on plain geometry features (center, aspect, area);
each group proposes the most common label among its members, if any.
"""
from __future__ import annotations

import argparse
from collections import Counter

from .grouping import geometry_features, partition
from .protocol import Connection, HostError, stdio_connection


def propose_label(labels: list[str]) -> str | None:
    if not labels:
        return None
    counts = Counter(labels)
    top = max(counts.values())
    return sorted(name for name, c in counts.items() if c == top)[0]


def run(conn: Connection, groups: int, seed: int) -> int:
    hello = conn.handshake()
    try:
        annos = conn.call("get_input_annotations", {"iteration": hello.iteration})["annotations"]
    except HostError as exc:
        conn.finish("failure", exc.message)
        return 0
    boxes = [a for a in annos if a["kind"] == "bbox"]
    assignments: dict[str, str] = {}
    proposed: dict[str, str | None] = {}
    if boxes:
        parts = partition(
            [a["anno_id"] for a in boxes],
            [geometry_features(a["coords"]) for a in boxes],
            k=groups,
            seed=seed,
        )
        by_id = {a["anno_id"]: a for a in boxes}
        for key, members in parts.items():
            for member in members:
                assignments[member] = key
            proposed[key] = propose_label([l for m in members for l in by_id[m]["labels"]])
    try:
        conn.call(
            "request_annotations",
            {"clusters": {"assignments": assignments, "proposed_labels": proposed, "member_kind": "annotation"}},
        )
    except HostError as exc:
        conn.finish("failure", exc.message)
        return 0
    conn.finish("success", f"{len(proposed)} groups over {len(boxes)} boxes")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--groups", type=int, default=12, help="number of review groups")
    parser.add_argument("--seed", type=int, default=7, help="grouping seed")
    args = parser.parse_args(argv)
    return run(stdio_connection(), groups=args.groups, seed=args.seed)


if __name__ == "__main__":
    raise SystemExit(main())
