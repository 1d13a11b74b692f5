"""Deterministic robot annotators for driving tasks end to end.

Each robot works a task the way a human would through the API: lease an
item, act on it, submit, repeat until the task runs dry.  Time is charged
on the shared virtual clock so a full pipeline run produces an exact,
reproducible wall-clock figure.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field

from ..annotations import BBox
from ..clock import VirtualClock
from ..errors import EvaluationError
from ..evaluation import iou
from .timing import allocate_box_counts

ACCEPT_IOU = 0.5
KEEP_UNTOUCHED_IOU = 0.9


@dataclass(frozen=True)
class TargetBox:
    """One box the robot intends to end up with on an image."""

    bbox: BBox
    label: str


class SyntheticScene:
    """Seeded ground truth: every image gets a fixed set of target boxes.

    The same (seed, image) pair always yields the same boxes, so proposal
    generators, robots, and assertions can all recompute the truth
    independently without sharing state.
    """

    def __init__(
        self,
        seed: int,
        images: list[str],
        labels: tuple[str, ...],
        boxes_per_image: float = 2.7,
    ) -> None:
        if not images:
            raise EvaluationError("scene needs at least one image")
        if not labels:
            raise EvaluationError("scene needs at least one label name")
        self.seed = seed
        self.images = list(images)
        self.labels = tuple(labels)
        counts = allocate_box_counts(len(images), boxes_per_image, seed)
        self.counts = {ref: counts[i] for i, ref in enumerate(images)}

    def total_boxes(self, images: list[str] | None = None) -> int:
        refs = self.images if images is None else images
        return sum(self.counts[ref] for ref in refs)

    def boxes_for(self, image_ref: str) -> list[TargetBox]:
        rng = random.Random(f"scene:{self.seed}:{image_ref}")
        targets = []
        for _ in range(self.counts[image_ref]):
            width = rng.uniform(0.10, 0.24)
            height = rng.uniform(0.10, 0.24)
            x_center = rng.uniform(0.15, 0.85)
            y_center = rng.uniform(0.15, 0.85)
            label = rng.choice(self.labels)
            targets.append(
                TargetBox(bbox=BBox(x_center, y_center, width, height), label=label)
            )
        return targets

    def best_label_for(self, image_ref: str, coords: tuple[float, ...]) -> str:
        """Label of the target box overlapping the given bbox coords most."""
        candidate = BBox(*coords)
        best_label = self.labels[0]
        best_overlap = -1.0
        for target in self.boxes_for(image_ref):
            overlap = iou(candidate, target.bbox)
            if overlap > best_overlap:
                best_overlap = overlap
                best_label = target.label
        return best_label


@dataclass
class RobotStats:
    items: int = 0
    created: int = 0
    edited: int = 0
    deleted: int = 0
    kept_proposals: int = 0
    labeled: int = 0
    removed: int = 0
    seconds_by_iteration: dict[int, float] = field(default_factory=dict)

    def charge(self, iteration: int, seconds: float) -> None:
        self.seconds_by_iteration[iteration] = (
            self.seconds_by_iteration.get(iteration, 0.0) + seconds
        )

    @property
    def total_seconds(self) -> float:
        return sum(self.seconds_by_iteration.values())


class SiaRobot:
    """Works single-image tasks: corrects proposals, draws missing boxes.

    Proposals overlapping a target at IoU >= 0.9 are kept untouched,
    matches in [0.5, 0.9) are edited onto the exact target, everything
    unmatched is deleted and the uncovered targets are drawn fresh.
    ``seconds_per_box`` is indexed by loop iteration; each submitted item
    charges that cost once per target box.
    """

    def __init__(
        self,
        backend,
        annotator_id: str,
        scene: SyntheticScene,
        seconds_per_box: tuple[float, ...],
        assign_labels: bool = False,
    ) -> None:
        self.backend = backend
        self.annotator_id = annotator_id
        self.scene = scene
        self.seconds_per_box = tuple(seconds_per_box)
        self.assign_labels = assign_labels
        self.stats = RobotStats()

    def _cost(self, iteration: int) -> float:
        if iteration < len(self.seconds_per_box):
            return self.seconds_per_box[iteration]
        return self.seconds_per_box[-1]

    def work_task(self, task_id: str) -> RobotStats:
        clock: VirtualClock = self.backend.clock
        task = self.backend.store.get_task(task_id)
        # the final submission of a round closes the task, so re-check
        # before asking for more work
        while task.accepting:
            payload = self.backend.next_item(task_id, self.annotator_id)
            if payload is None:
                return self.stats
            item = payload["item"]
            iteration = item["iteration"]
            label_ids = {entry["name"]: entry["label_id"] for entry in payload["labels"]}
            targets = self.scene.boxes_for(item["image_ref"])
            operations = self._plan(item, targets, label_ids)
            cost = len(targets) * self._cost(iteration)
            clock.advance(cost)
            self.stats.charge(iteration, cost)
            self.backend.submit_sia(
                task_id,
                self.annotator_id,
                payload["lease"]["lease_id"],
                operations,
            )
            self.stats.items += 1
        return self.stats

    def _plan(
        self,
        item: dict,
        targets: list[TargetBox],
        label_ids: dict[str, str],
    ) -> list[dict]:
        operations: list[dict] = []
        unused = {p["anno_id"]: p for p in item["proposals"]}
        for target in targets:
            best_id = None
            best_overlap = 0.0
            for anno_id, proposal in unused.items():
                overlap = iou(BBox(*proposal["coords"]), target.bbox)
                if overlap > best_overlap:
                    best_overlap = overlap
                    best_id = anno_id
            labels = [label_ids[target.label]] if self.assign_labels else []
            if best_id is not None and best_overlap >= ACCEPT_IOU:
                del unused[best_id]
                if best_overlap >= KEEP_UNTOUCHED_IOU and not self.assign_labels:
                    self.stats.kept_proposals += 1
                    continue
                operation = {
                    "op": "edit",
                    "anno_id": best_id,
                    "coords": list(target.bbox.coords()),
                }
                if labels:
                    operation["labels"] = labels
                operations.append(operation)
                self.stats.edited += 1
            else:
                operations.append(
                    {
                        "op": "create",
                        "kind": "bbox",
                        "coords": list(target.bbox.coords()),
                        "labels": labels,
                    }
                )
                self.stats.created += 1
        for anno_id in unused:
            operations.append({"op": "delete", "anno_id": anno_id})
            self.stats.deleted += 1
        return operations


class MiaRobot:
    """Reviews clusters: picks the majority true label, ejects the rest.

    For every member the robot recomputes the true label from the scene,
    takes the majority (ties broken lexicographically), removes members
    whose truth disagrees, and charges ``seconds_per_box`` per member.
    """

    def __init__(
        self,
        backend,
        annotator_id: str,
        scene: SyntheticScene,
        seconds_per_box: tuple[float, ...],
    ) -> None:
        self.backend = backend
        self.annotator_id = annotator_id
        self.scene = scene
        self.seconds_per_box = tuple(seconds_per_box)
        self.stats = RobotStats()

    def _cost(self, iteration: int) -> float:
        if iteration < len(self.seconds_per_box):
            return self.seconds_per_box[iteration]
        return self.seconds_per_box[-1]

    def work_task(self, task_id: str) -> RobotStats:
        clock: VirtualClock = self.backend.clock
        task = self.backend.store.get_task(task_id)
        while task.accepting:
            payload = self.backend.next_item(task_id, self.annotator_id)
            if payload is None:
                return self.stats
            cluster = payload["cluster"]
            iteration = cluster["iteration"]
            label_ids = {entry["name"]: entry["label_id"] for entry in payload["labels"]}
            truths: dict[str, str] = {}
            for member in cluster["members"]:
                truths[member["anno_id"]] = self.scene.best_label_for(
                    member["image_ref"], tuple(member["coords"])
                )
            votes: dict[str, int] = defaultdict(int)
            for label in truths.values():
                votes[label] += 1
            chosen = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
            removed = sorted(
                anno_id for anno_id, label in truths.items() if label != chosen
            )
            cost = len(cluster["members"]) * self._cost(iteration)
            clock.advance(cost)
            self.stats.charge(iteration, cost)
            self.backend.review_cluster(
                cluster["cluster_id"],
                self.annotator_id,
                payload["lease"]["lease_id"],
                removed,
                label_ids[chosen],
            )
            self.stats.items += 1
            self.stats.labeled += len(cluster["members"]) - len(removed)
            self.stats.removed += len(removed)
        return self.stats
