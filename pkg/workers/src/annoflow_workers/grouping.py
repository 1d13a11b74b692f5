"""Deterministic k-way grouping of boxes by plain geometry features."""
from __future__ import annotations

import random
from typing import Sequence

Feature = tuple[float, float, float, float]


def geometry_features(coords: Sequence[float]) -> Feature:
    """Center, aspect ratio, and area of a center-format box."""
    xc, yc, w, h = coords
    aspect = w / h if h else 0.0
    return (float(xc), float(yc), aspect, float(w) * float(h))


def _dist2(a: Feature, b: Feature) -> float:
    return sum((x - y) ** 2 for x, y in zip(a, b))


def partition(members: Sequence[str], features: Sequence[Feature], k: int, seed: int = 7, rounds: int = 8) -> dict[str, list[str]]:
    """Split members into exactly min(k, n) non-empty groups.

    Seeded centroid grouping with empty-group repair, so the result is a
    partition: every member lands in exactly one group and no group is
    empty.  Same inputs, same output.
    """
    if k < 1:
        raise ValueError(f"group count must be positive, got {k}")
    if len(members) != len(features):
        raise ValueError("one feature tuple per member required")
    n = len(members)
    if n == 0:
        return {}
    k = min(k, n)
    rng = random.Random(seed)
    centroids = [features[i] for i in sorted(rng.sample(range(n), k))]

    assignment = [0] * n
    for _ in range(rounds):
        for i, f in enumerate(features):
            assignment[i] = min(range(k), key=lambda c: (_dist2(f, centroids[c]), c))
        # repair: give every empty group the loneliest point of a group
        # that can spare one, farthest-from-centroid first
        sizes = [assignment.count(c) for c in range(k)]
        for c in range(k):
            while sizes[c] == 0:
                donors = [i for i in range(n) if sizes[assignment[i]] > 1]
                victim = max(donors, key=lambda i: (_dist2(features[i], centroids[assignment[i]]), -i))
                sizes[assignment[victim]] -= 1
                assignment[victim] = c
                sizes[c] += 1
        for c in range(k):
            rows = [features[i] for i in range(n) if assignment[i] == c]
            centroids[c] = tuple(sum(col) / len(rows) for col in zip(*rows))

    # stable group keys: numbered by each group's first member in input order
    order: dict[int, int] = {}
    for i in range(n):
        order.setdefault(assignment[i], len(order))
    groups: dict[str, list[str]] = {}
    for i, member in enumerate(members):
        groups.setdefault(f"g{order[assignment[i]]:03d}", []).append(member)
    return groups
