"""Annotation task runtime: work items, exclusive leases, SIA and MIA flows.

A task hands out one work item per annotator at a time through expiring
leases, so several annotators can split one task without collisions. SIA
items are single images; MIA items are clusters reviewed in bulk.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .annotations import AnnoSource, TwoDAnno, geometry_from_coords
from .clock import Clock, SystemClock
from .errors import (
    ActionNotAllowedError,
    ConflictError,
    DuplicateError,
    LabelScopeError,
    LeaseExpiredError,
    NotAssignedError,
    StateError,
    UnknownEntityError,
)
from .model import ALL_ACTIONS, ALL_TOOLS, MIA, SIA

DEFAULT_LEASE_SECONDS = 600.0


class AnnotationSink(Protocol):
    """The slice of the store that task submissions write through."""

    def new_anno_id(self) -> str: ...

    def get_annotation(self, anno_id: str) -> TwoDAnno: ...

    def apply_annotation_batch(
        self, created: Sequence[TwoDAnno], superseded: Sequence[str], deleted: Sequence[str]
    ) -> None: ...


@dataclass(frozen=True)
class SiaTaskConfig:
    """What an annotator is allowed to do on a SIA task."""

    allowed_tools: frozenset[str] = frozenset(ALL_TOOLS)
    allowed_actions: frozenset[str] = frozenset(ALL_ACTIONS)
    proposal_source: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "allowed_tools", frozenset(self.allowed_tools))
        object.__setattr__(self, "allowed_actions", frozenset(self.allowed_actions))
        if not self.allowed_tools <= set(ALL_TOOLS):
            raise ActionNotAllowedError(f"unknown tools: {sorted(self.allowed_tools - set(ALL_TOOLS))}")
        if not self.allowed_actions:
            raise ActionNotAllowedError("a task must allow at least one action")
        if not self.allowed_actions <= set(ALL_ACTIONS):
            raise ActionNotAllowedError(f"unknown actions: {sorted(self.allowed_actions - set(ALL_ACTIONS))}")
        if self.allowed_actions == {"assign_label"} and self.proposal_source is None:
            raise ActionNotAllowedError(
                "a label-only task needs a proposal source, otherwise there is nothing to label"
            )


@dataclass
class Lease:
    lease_id: str
    item_ref: str
    annotator_id: str
    acquired_at: datetime
    expires_at: datetime

    def expired(self, now: datetime) -> bool:
        return now >= self.expires_at


@dataclass
class TaskItem:
    item_id: str
    image_ref: str
    iteration: int
    proposal_ids: tuple[str, ...] = ()
    finished: bool = False
    finished_by: str | None = None
    finished_at: datetime | None = None


CLUSTER_PENDING = "pending"
CLUSTER_REVIEWED = "reviewed"

MEMBER_ANNOTATION = "annotation"
MEMBER_IMAGE = "image"


@dataclass
class Cluster:
    cluster_id: str
    members: tuple[str, ...]
    member_kind: str
    iteration: int
    proposed_label: str | None = None
    status: str = CLUSTER_PENDING
    reviewed_by: str | None = None
    chosen_label: str | None = None
    removed: tuple[str, ...] = ()


class AnnotationTask:
    """Runtime state of one annotation-task element.

    All mutation goes through one lock, which makes the lease table
    linearizable: no two active leases ever share an item. Items and
    clusters are namespaced by loop iteration (``round``).
    """

    def __init__(
        self,
        task_id: str,
        instance_id: str,
        element_id: str,
        interface: str,
        config: SiaTaskConfig,
        assignees: Sequence[str],
        assignable_labels: Iterable[str],
        label_names: Mapping[str, str] | None = None,
        clock: Clock | None = None,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
    ) -> None:
        if interface not in (SIA, MIA):
            raise StateError(f"unknown task interface {interface!r}")
        if not assignees:
            raise NotAssignedError("a task needs at least one assignee")
        self.task_id = task_id
        self.instance_id = instance_id
        self.element_id = element_id
        self.interface = interface
        self.config = config
        self.assignees = tuple(assignees)
        self.assignable_labels = frozenset(assignable_labels)
        self.label_names = dict(label_names or {})
        self.clock = clock or SystemClock()
        self.lease_seconds = float(lease_seconds)
        self.accepting = False
        self.current_round = 0
        self.items: list[TaskItem] = []
        self.clusters: list[Cluster] = []
        self.unresolved: list[tuple[int, str]] = []  # (iteration, member ref)
        self.image_labels: dict[tuple[int, str], str] = {}  # (iteration, image) -> label id
        self._leases: dict[str, Lease] = {}  # item/cluster ref -> active lease
        self._idempotent: dict[str, dict[str, Any]] = {}
        self._counters = {"item": 0, "lease": 0, "cluster": 0}
        self._lock = threading.RLock()

    def _next_id(self, kind: str, prefix: str) -> str:
        self._counters[kind] += 1
        return f"{self.task_id}-{prefix}{self._counters[kind]:05d}"

    # -- round and item management -----------------------------------------

    def open_round(self, iteration: int) -> None:
        """Accept work for one loop iteration."""
        with self._lock:
            self.current_round = iteration
            self.accepting = True

    def close(self) -> None:
        with self._lock:
            self.accepting = False
            self._leases.clear()

    def add_items(
        self, entries: Sequence[tuple[str, Sequence[str]]], iteration: int | None = None
    ) -> list[TaskItem]:
        """Add (image_ref, proposal anno ids) work items for a round."""
        with self._lock:
            if self.interface != SIA:
                raise StateError(f"task {self.task_id!r} is a {self.interface} task; it takes clusters, not images")
            it = self.current_round if iteration is None else iteration
            new = []
            for image_ref, proposal_ids in entries:
                item = TaskItem(
                    item_id=self._next_id("item", "it"),
                    image_ref=image_ref,
                    iteration=it,
                    proposal_ids=tuple(proposal_ids),
                )
                self.items.append(item)
                new.append(item)
            return new

    def build_clusters(
        self,
        assignments: Mapping[str, str],
        proposed_labels: Mapping[str, str | None] | None = None,
        member_kind: str = MEMBER_ANNOTATION,
        iteration: int | None = None,
        known_members: Iterable[str] | None = None,
    ) -> list[Cluster]:
        """Persist a partition of members into clusters for MIA review.

        ``assignments`` maps each member ref to a caller-chosen cluster key;
        keys become clusters ordered deterministically. Every member must
        appear exactly once, and members must be known when a universe of
        valid refs is supplied.
        """
        with self._lock:
            if self.interface != MIA:
                raise StateError(f"task {self.task_id!r} is a {self.interface} task; it takes images, not clusters")
            if member_kind not in (MEMBER_ANNOTATION, MEMBER_IMAGE):
                raise StateError(f"unknown cluster member kind {member_kind!r}")
            members = list(assignments)
            if known_members is not None:
                unknown = sorted(set(members) - set(known_members))
                if unknown:
                    raise UnknownEntityError(f"cluster members not part of this task: {unknown}")
            it = self.current_round if iteration is None else iteration
            already = {m for c in self.clusters if c.iteration == it for m in c.members}
            overlap = sorted(set(members) & already)
            if overlap:
                raise DuplicateError(f"members {overlap} are already clustered in round {it}")
            labels = proposed_labels or {}
            by_key: dict[str, list[str]] = {}
            for member, key in assignments.items():
                by_key.setdefault(str(key), []).append(member)
            new = []
            for key in sorted(by_key):
                if not by_key[key]:
                    continue
                cluster = Cluster(
                    cluster_id=self._next_id("cluster", "cl"),
                    members=tuple(by_key[key]),
                    member_kind=member_kind,
                    iteration=it,
                    proposed_label=labels.get(key),
                )
                self.clusters.append(cluster)
                new.append(cluster)
            return new

    # -- leasing ------------------------------------------------------------

    def _require_assigned(self, annotator_id: str) -> None:
        if annotator_id not in self.assignees:
            raise NotAssignedError(f"annotator {annotator_id!r} is not assigned to task {self.task_id!r}")

    def _open_refs(self) -> list[str]:
        if self.interface == SIA:
            return [i.item_id for i in self.items if i.iteration == self.current_round and not i.finished]
        return [
            c.cluster_id
            for c in self.clusters
            if c.iteration == self.current_round and c.status == CLUSTER_PENDING
        ]

    def open_item_count(self) -> int:
        with self._lock:
            return len(self._open_refs())

    def next_item(self, annotator_id: str, now: datetime | None = None) -> Lease | None:
        """Lease the next open item; None when all are finished or taken."""
        with self._lock:
            self._require_assigned(annotator_id)
            if not self.accepting:
                raise StateError(f"task {self.task_id!r} is not accepting work")
            now = now or self.clock.now()
            for ref in self._open_refs():
                lease = self._leases.get(ref)
                if lease is not None:
                    if lease.annotator_id == annotator_id and not lease.expired(now):
                        return lease  # the caller already holds this item
                    if not lease.expired(now):
                        continue
                    del self._leases[ref]  # expired: reclaim
                lease = Lease(
                    lease_id=self._next_id("lease", "ls"),
                    item_ref=ref,
                    annotator_id=annotator_id,
                    acquired_at=now,
                    expires_at=now + timedelta(seconds=self.lease_seconds),
                )
                self._leases[ref] = lease
                return lease
            return None

    def active_leases(self, now: datetime | None = None) -> list[Lease]:
        with self._lock:
            now = now or self.clock.now()
            return [l for l in self._leases.values() if not l.expired(now)]

    def _take_lease(self, lease_id: str, annotator_id: str, now: datetime) -> Lease:
        for ref, lease in self._leases.items():
            if lease.lease_id == lease_id:
                if lease.annotator_id != annotator_id:
                    raise NotAssignedError(f"lease {lease_id!r} belongs to {lease.annotator_id!r}")
                if lease.expired(now):
                    del self._leases[ref]
                    raise LeaseExpiredError(f"lease {lease_id!r} expired; request the item again")
                return lease
        raise LeaseExpiredError(f"no active lease {lease_id!r}; it may have expired and been reclaimed")

    # -- SIA ---------------------------------------------------------------

    def _item_by_ref(self, ref: str) -> TaskItem:
        for item in self.items:
            if item.item_id == ref:
                return item
        raise UnknownEntityError(f"no item {ref!r} in task {self.task_id!r}")

    def _check_labels(self, labels: Sequence[str]) -> tuple[str, ...]:
        bad = sorted(set(labels) - self.assignable_labels)
        if bad:
            raise LabelScopeError(f"labels {bad} are outside this task's bound subtrees")
        return tuple(labels)

    def submit_sia(
        self,
        lease_id: str,
        annotator_id: str,
        operations: Sequence[Mapping[str, Any]],
        store: AnnotationSink,
        now: datetime | None = None,
        idempotency_key: str | None = None,
    ) -> dict[str, Any]:
        """Validate and apply one SIA submission atomically, finishing the item.

        Every operation is checked against the task config before anything
        is written; a rejected operation rejects the whole submission.
        """
        with self._lock:
            if idempotency_key is not None and idempotency_key in self._idempotent:
                return self._idempotent[idempotency_key]
            now = now or self.clock.now()
            self._require_assigned(annotator_id)
            lease = self._take_lease(lease_id, annotator_id, now)
            item = self._item_by_ref(lease.item_ref)

            created: list[TwoDAnno] = []
            superseded: list[str] = []
            deleted: list[str] = []
            updated_ids: list[str] = []
            for op in operations:
                action = op.get("op")
                if action not in ALL_ACTIONS:
                    raise ActionNotAllowedError(f"unknown operation {action!r}")
                if action not in self.config.allowed_actions:
                    raise ActionNotAllowedError(f"operation {action!r} is not allowed on task {self.task_id!r}")
                if action == "create":
                    kind = op.get("kind")
                    if kind not in self.config.allowed_tools:
                        raise ActionNotAllowedError(f"tool {kind!r} is not allowed on task {self.task_id!r}")
                    geometry = geometry_from_coords(kind, op.get("coords", ()))
                    labels = self._check_labels(op.get("labels", ()))
                    created.append(
                        TwoDAnno(
                            anno_id=store.new_anno_id(),
                            image_ref=item.image_ref,
                            geometry=geometry,
                            labels=labels,
                            source=AnnoSource.HUMAN,
                            annotator_id=annotator_id,
                            iteration=item.iteration,
                            instance_id=self.instance_id,
                            task_element=self.element_id,
                            created_at=now,
                        )
                    )
                    continue
                target = store.get_annotation(str(op.get("anno_id")))
                if target.image_ref != item.image_ref:
                    raise ConflictError(
                        f"annotation {target.anno_id!r} belongs to {target.image_ref!r}, not the leased image"
                    )
                if not target.is_active():
                    raise ConflictError(f"annotation {target.anno_id!r} was already edited or deleted")
                if action == "delete":
                    deleted.append(target.anno_id)
                    continue
                # edit and assign_label both supersede the target with a new row
                geometry = target.geometry
                if action == "edit" and "coords" in op:
                    geometry = geometry_from_coords(op.get("kind", target.geometry.kind), op["coords"])
                labels = target.labels
                if "labels" in op:
                    labels = self._check_labels(op["labels"])
                new_row = TwoDAnno(
                    anno_id=store.new_anno_id(),
                    image_ref=target.image_ref,
                    geometry=geometry,
                    labels=labels,
                    source=AnnoSource.HUMAN,
                    annotator_id=annotator_id,
                    iteration=item.iteration,
                    instance_id=self.instance_id,
                    task_element=self.element_id,
                    predecessor_id=target.anno_id,
                    created_at=now,
                )
                created.append(new_row)
                superseded.append(target.anno_id)
                updated_ids.append(new_row.anno_id)

            store.apply_annotation_batch(created, superseded, deleted)
            item.finished = True
            item.finished_by = annotator_id
            item.finished_at = now
            del self._leases[lease.item_ref]
            result = {
                "item_id": item.item_id,
                "image_ref": item.image_ref,
                "created": [a.anno_id for a in created if a.anno_id not in updated_ids],
                "updated": updated_ids,
                "deleted": deleted,
                "round_complete": self.round_complete(),
            }
            if idempotency_key is not None:
                self._idempotent[idempotency_key] = result
            return result

    # -- MIA ---------------------------------------------------------------

    def _cluster_by_ref(self, ref: str) -> Cluster:
        for cluster in self.clusters:
            if cluster.cluster_id == ref:
                return cluster
        raise UnknownEntityError(f"no cluster {ref!r} in task {self.task_id!r}")

    def submit_mia_review(
        self,
        lease_id: str,
        annotator_id: str,
        removed_member_ids: Sequence[str],
        chosen_label: str | None,
        store: AnnotationSink,
        now: datetime | None = None,
    ) -> dict[str, Any]:
        """Review one cluster: drop outliers, label the rest.

        No label means full rejection and requires removing every member;
        conversely removing every member while naming a label is a
        contradiction and is refused.
        """
        with self._lock:
            now = now or self.clock.now()
            self._require_assigned(annotator_id)
            lease = self._take_lease(lease_id, annotator_id, now)
            cluster = self._cluster_by_ref(lease.item_ref)
            if cluster.status != CLUSTER_PENDING:
                raise ConflictError(f"cluster {cluster.cluster_id!r} was already reviewed")

            removed = list(dict.fromkeys(removed_member_ids))
            unknown = sorted(set(removed) - set(cluster.members))
            if unknown:
                raise UnknownEntityError(f"refs {unknown} are not members of cluster {cluster.cluster_id!r}")
            remaining = [m for m in cluster.members if m not in set(removed)]
            if chosen_label is None:
                if remaining:
                    raise ConflictError("rejecting a cluster without a label requires removing every member")
            else:
                if not remaining:
                    raise ConflictError(
                        "a label with every member removed is contradictory; reject with no label instead"
                    )
                self._check_labels([chosen_label])

            labeled: list[str] = []
            if chosen_label is not None:
                if cluster.member_kind == MEMBER_ANNOTATION:
                    created: list[TwoDAnno] = []
                    superseded: list[str] = []
                    for member in remaining:
                        target = store.get_annotation(member)
                        new_row = TwoDAnno(
                            anno_id=store.new_anno_id(),
                            image_ref=target.image_ref,
                            geometry=target.geometry,
                            labels=(chosen_label,),
                            source=AnnoSource.HUMAN,
                            annotator_id=annotator_id,
                            iteration=cluster.iteration,
                            instance_id=self.instance_id,
                            task_element=self.element_id,
                            predecessor_id=target.anno_id,
                            created_at=now,
                        )
                        created.append(new_row)
                        superseded.append(target.anno_id)
                        labeled.append(new_row.anno_id)
                    store.apply_annotation_batch(created, superseded, [])
                else:
                    for member in remaining:
                        self.image_labels[(cluster.iteration, member)] = chosen_label
                        labeled.append(member)

            for member in removed:
                self.unresolved.append((cluster.iteration, member))
            cluster.status = CLUSTER_REVIEWED
            cluster.reviewed_by = annotator_id
            cluster.chosen_label = chosen_label
            cluster.removed = tuple(removed)
            del self._leases[lease.item_ref]
            return {
                "cluster_id": cluster.cluster_id,
                "labeled": labeled,
                "removed": removed,
                "label": chosen_label,
                "round_complete": self.round_complete(),
            }

    # -- progress ------------------------------------------------------------

    def round_complete(self, iteration: int | None = None) -> bool:
        it = self.current_round if iteration is None else iteration
        if self.interface == SIA:
            current = [i for i in self.items if i.iteration == it]
            return bool(current) and all(i.finished for i in current)
        current = [c for c in self.clusters if c.iteration == it]
        return bool(current) and all(c.status == CLUSTER_REVIEWED for c in current)

    def progress(self) -> dict[str, Any]:
        with self._lock:
            if self.interface == SIA:
                current = [i for i in self.items if i.iteration == self.current_round]
                finished = [i for i in current if i.finished]
                per_annotator: dict[str, int] = {}
                for i in finished:
                    per_annotator[i.finished_by] = per_annotator.get(i.finished_by, 0) + 1
            else:
                current = [c for c in self.clusters if c.iteration == self.current_round]
                finished = [c for c in current if c.status == CLUSTER_REVIEWED]
                per_annotator = {}
                for c in finished:
                    per_annotator[c.reviewed_by] = per_annotator.get(c.reviewed_by, 0) + 1
            return {
                "task_id": self.task_id,
                "interface": self.interface,
                "round": self.current_round,
                "finished_items": len(finished),
                "total_items": len(current),
                "per_annotator": per_annotator,
                "accepting": self.accepting,
            }
