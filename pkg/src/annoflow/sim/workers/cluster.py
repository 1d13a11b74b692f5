"""Worker: group the current round's boxes into geometry clusters.

Runs a small k-means over (center, size, aspect) features with a
deterministic farthest-point seeding, so the same inputs always produce
the same grouping.  The resulting assignment is handed to the downstream
review task as annotation clusters.
"""
from __future__ import annotations

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _proto import Host, parse_args


def features(row: dict) -> tuple[float, float, float, float]:
    xc, yc, w, h = row["coords"]
    return (xc, yc, math.sqrt(w * h), w / h)


def distance(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    return sum((x - y) ** 2 for x, y in zip(a, b))


def kmeans(points: list[tuple[float, ...]], k: int, rounds: int = 10) -> list[int]:
    # farthest-point init from the lexicographically smallest point keeps
    # the outcome independent of input order
    order = sorted(range(len(points)), key=lambda i: points[i])
    centers = [points[order[0]]]
    while len(centers) < k:
        best = max(
            order, key=lambda i: (min(distance(points[i], c) for c in centers), points[i])
        )
        centers.append(points[best])
    assignment = [0] * len(points)
    for _ in range(rounds):
        for i, point in enumerate(points):
            assignment[i] = min(
                range(len(centers)), key=lambda j: (distance(point, centers[j]), j)
            )
        for j in range(len(centers)):
            members = [points[i] for i in range(len(points)) if assignment[i] == j]
            if members:
                centers[j] = tuple(
                    sum(axis) / len(members) for axis in zip(*members)
                )
    return assignment


def main() -> None:
    args = parse_args(sys.argv[1:])
    k = int(args.get("clusters", "8"))
    host = Host()

    rows = host.call("get_input_annotations", {"iteration": host.iteration})["annotations"]
    boxes = [row for row in rows if row["kind"] == "bbox"]
    if not boxes:
        host.call("request_annotations", {"clusters": {"assignments": {}, "member_kind": "annotation"}})
        host.finish(message=f"round {host.iteration}: nothing to cluster")
        return

    boxes.sort(key=lambda row: row["anno_id"])
    k = min(k, len(boxes))
    assignment = kmeans([features(row) for row in boxes], k)
    assignments = {
        row["anno_id"]: f"g{assignment[i]:03d}" for i, row in enumerate(boxes)
    }
    result = host.call(
        "request_annotations",
        {"clusters": {"assignments": assignments, "member_kind": "annotation"}},
    )
    host.call("report_progress", {"progress": 1.0})
    host.finish(
        message=f"round {host.iteration}: {len(boxes)} boxes in {result['clusters']} clusters"
    )


if __name__ == "__main__":
    main()
