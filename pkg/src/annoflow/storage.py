"""In-memory store with referential integrity and deterministic CSV export.

The logical schema is the contract: templates, instances, per-instance event
logs, versioned annotation rows, annotation tasks (items, clusters, leases),
label trees, media collections, and exported files. The physical engine
behind it is deliberately simple; the integrity rules are what downstream
code may rely on.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Container, Iterable, Sequence

from .annotations import TwoDAnno
from .clock import Clock, SystemClock, rfc3339
from .engine import EngineEvent, fold_state
from .errors import DuplicateError, LogCorruptionError, StorageError, UnknownEntityError
from .labels import LabelTree
from .model import PipelineInstance, PipelineTemplate, Violation
from .tasks import AnnotationTask

log = logging.getLogger(__name__)

CSV_HEADER = "anno_id,img_path,anno_type,coords,labels,annotator,source,iteration,created_at"


@dataclass(frozen=True)
class MediaCollection:
    collection_id: str
    root: Path
    files: tuple[str, ...]  # paths relative to root, registration order
    checksums: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ExportRecord:
    export_id: str
    instance_id: str
    element_id: str | None
    name: str
    content: bytes
    kind: str  # "csv" | "file" | "visualization"
    created_at: datetime


class Store:
    """Single-node store; writes serialize per entity family through a lock."""

    def __init__(self, clock: Clock | None = None) -> None:
        self.clock = clock or SystemClock()
        self._lock = threading.RLock()
        self.templates: dict[str, PipelineTemplate] = {}
        self.instances: dict[str, PipelineInstance] = {}
        self.event_logs: dict[str, list[EngineEvent]] = {}
        self.annotations: dict[str, TwoDAnno] = {}
        self._anno_order: list[str] = []
        self.label_trees: dict[str, LabelTree] = {}
        self.tasks: dict[str, AnnotationTask] = {}
        self.collections: dict[str, MediaCollection] = {}
        self.exports: dict[str, ExportRecord] = {}
        self._task_index: dict[tuple[str, str], str] = {}  # (instance, element) -> task id
        self._counters = {"anno": 0, "instance": 0, "export": 0, "tree": 0, "task": 0}

    def _next(self, kind: str, prefix: str, width: int, taken: Container[str]) -> str:
        # entities may also arrive with hand-picked ids, so skip over those
        with self._lock:
            while True:
                self._counters[kind] += 1
                candidate = f"{prefix}{self._counters[kind]:0{width}d}"
                if candidate not in taken:
                    return candidate

    def new_anno_id(self) -> str:
        return self._next("anno", "a", 6, self.annotations)

    def new_instance_id(self) -> str:
        return self._next("instance", "inst-", 4, self.instances)

    def new_export_id(self) -> str:
        return self._next("export", "exp-", 6, self.exports)

    def new_tree_id(self) -> str:
        return self._next("tree", "tree-", 3, self.label_trees)

    def new_task_id(self) -> str:
        return self._next("task", "task-", 4, self.tasks)

    # -- templates and instances -------------------------------------------

    def add_template(self, template: PipelineTemplate) -> None:
        with self._lock:
            if template.name in self.templates:
                raise DuplicateError(f"template {template.name!r} already registered")
            self.templates[template.name] = template

    def get_template(self, name: str) -> PipelineTemplate:
        try:
            return self.templates[name]
        except KeyError:
            raise UnknownEntityError(f"no template {name!r}") from None

    def add_instance(self, instance: PipelineInstance, events: list[EngineEvent]) -> None:
        """Register an instance together with its live event log list."""
        with self._lock:
            if instance.instance_id in self.instances:
                raise DuplicateError(f"instance {instance.instance_id!r} already registered")
            self.instances[instance.instance_id] = instance
            self.event_logs[instance.instance_id] = events

    def get_instance(self, instance_id: str) -> PipelineInstance:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise UnknownEntityError(f"no instance {instance_id!r}") from None

    # -- media ---------------------------------------------------------------

    def register_media_collection(self, name: str, root: str | Path, files: Sequence[str]) -> str:
        """Record a named, checksummed set of media files under one root."""
        root = Path(root)
        if not files:
            raise StorageError(f"collection {name!r} lists no files")
        with self._lock:
            if name in self.collections:
                raise DuplicateError(f"collection {name!r} already registered")
            resolved_root = root.resolve()
            ordered: list[str] = []
            checksums: dict[str, str] = {}
            for rel in files:
                if rel in checksums:
                    log.warning("collection %r lists %r twice; keeping the first", name, rel)
                    continue
                path = root / rel
                if not path.resolve().is_relative_to(resolved_root):
                    raise StorageError(f"collection {name!r}: path {rel!r} escapes the collection root")
                try:
                    digest = hashlib.sha256(path.read_bytes()).hexdigest()
                except OSError as exc:
                    raise StorageError(f"collection {name!r}: cannot read {path}: {exc}") from exc
                ordered.append(rel)
                checksums[rel] = digest
            self.collections[name] = MediaCollection(name, root, tuple(ordered), checksums)
            return name

    def get_collection(self, collection_id: str) -> MediaCollection:
        try:
            return self.collections[collection_id]
        except KeyError:
            raise UnknownEntityError(f"no media collection {collection_id!r}") from None

    def media_path(self, collection_id: str, rel_path: str) -> Path:
        """Resolve a collection-relative path, refusing directory escape."""
        collection = self.get_collection(collection_id)
        # membership first: probes for files outside the listing get the same
        # answer whether or not the path exists
        if rel_path not in collection.checksums:
            raise UnknownEntityError(f"{rel_path!r} is not part of collection {collection_id!r}")
        root = collection.root.resolve()
        target = (root / rel_path).resolve()
        if not target.is_relative_to(root):
            raise StorageError(f"path {rel_path!r} escapes collection {collection_id!r}")
        return target

    # -- label trees ---------------------------------------------------------

    def add_label_tree(self, tree: LabelTree) -> None:
        with self._lock:
            if tree.tree_id in self.label_trees:
                raise DuplicateError(f"label tree {tree.tree_id!r} already registered")
            self.label_trees[tree.tree_id] = tree

    def get_label_tree(self, tree_id: str) -> LabelTree:
        try:
            return self.label_trees[tree_id]
        except KeyError:
            raise UnknownEntityError(f"no label tree {tree_id!r}") from None

    def label_name(self, label_id: str) -> str:
        for tree in self.label_trees.values():
            if label_id in tree:
                return tree.name_of(label_id)
        return label_id  # exports must not crash on a stale reference

    def label_references(self, label_id: str) -> list[str]:
        """Who uses a label: stored annotations and task bindings."""
        refs = []
        with self._lock:
            for anno in self.annotations.values():
                if label_id in anno.labels and anno.is_active():
                    refs.append(f"annotation {anno.anno_id}")
            for task in self.tasks.values():
                if label_id in task.assignable_labels:
                    refs.append(f"task {task.task_id}")
        return refs

    # -- tasks ---------------------------------------------------------------

    def add_task(self, task: AnnotationTask) -> None:
        with self._lock:
            if task.task_id in self.tasks:
                raise DuplicateError(f"task {task.task_id!r} already registered")
            key = (task.instance_id, task.element_id)
            if key in self._task_index:
                raise DuplicateError(f"element {task.element_id!r} of {task.instance_id!r} already has a task")
            self.tasks[task.task_id] = task
            self._task_index[key] = task.task_id

    def get_task(self, task_id: str) -> AnnotationTask:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise UnknownEntityError(f"no task {task_id!r}") from None

    def get_task_by_element(self, instance_id: str, element_id: str) -> AnnotationTask:
        try:
            return self.tasks[self._task_index[(instance_id, element_id)]]
        except KeyError:
            raise UnknownEntityError(f"no task for element {element_id!r} of {instance_id!r}") from None

    def find_task_of_cluster(self, cluster_id: str) -> AnnotationTask:
        with self._lock:
            for task in self.tasks.values():
                if any(c.cluster_id == cluster_id for c in task.clusters):
                    return task
        raise UnknownEntityError(f"no cluster {cluster_id!r}")

    # -- annotations -----------------------------------------------------------

    def get_annotation(self, anno_id: str) -> TwoDAnno:
        try:
            return self.annotations[anno_id]
        except KeyError:
            raise UnknownEntityError(f"no annotation {anno_id!r}") from None

    def add_annotation(self, anno: TwoDAnno) -> None:
        self.apply_annotation_batch([anno], [], [])

    def apply_annotation_batch(
        self, created: Sequence[TwoDAnno], superseded: Sequence[str], deleted: Sequence[str]
    ) -> None:
        """All-or-nothing commit of new rows and flag flips."""
        with self._lock:
            for a in created:
                if a.anno_id in self.annotations:
                    raise DuplicateError(f"annotation id {a.anno_id!r} already stored")
                if a.predecessor_id is not None and a.predecessor_id not in self.annotations:
                    raise UnknownEntityError(f"predecessor {a.predecessor_id!r} of {a.anno_id!r} not stored")
            for anno_id in list(superseded) + list(deleted):
                if anno_id not in self.annotations:
                    raise UnknownEntityError(f"cannot flag unknown annotation {anno_id!r}")
            for a in created:
                self.annotations[a.anno_id] = a
                self._anno_order.append(a.anno_id)
            for anno_id in superseded:
                self.annotations[anno_id] = self.annotations[anno_id].with_flags(superseded=True)
            for anno_id in deleted:
                self.annotations[anno_id] = self.annotations[anno_id].with_flags(deleted=True)

    def annotations_in_order(self) -> list[TwoDAnno]:
        with self._lock:
            return [self.annotations[i] for i in self._anno_order]

    def query_annotations(
        self,
        instance_id: str | None = None,
        elements: Iterable[str] | None = None,
        image_ref: str | None = None,
        iteration: int | None = None,
        active_only: bool = True,
        include_proposals: bool = True,
    ) -> list[TwoDAnno]:
        """Filter rows in insertion order; ``elements`` matches producer or task."""
        element_set = set(elements) if elements is not None else None
        out = []
        for a in self.annotations_in_order():
            if active_only and not a.is_active():
                continue
            if instance_id is not None and a.instance_id != instance_id:
                continue
            if element_set is not None and a.task_element not in element_set and a.producer_element not in element_set:
                continue
            if image_ref is not None and a.image_ref != image_ref:
                continue
            if iteration is not None and a.iteration != iteration:
                continue
            if not include_proposals and a.source.value == "proposal":
                continue
            out.append(a)
        return out

    def version_chain(self, anno_id: str) -> list[TwoDAnno]:
        """Follow predecessor links back to the original row."""
        chain = [self.get_annotation(anno_id)]
        seen = {anno_id}
        while chain[-1].predecessor_id is not None:
            pred = chain[-1].predecessor_id
            if pred in seen:
                raise StorageError(f"version chain of {anno_id!r} loops at {pred!r}")
            seen.add(pred)
            chain.append(self.get_annotation(pred))
        return chain

    # -- exports -----------------------------------------------------------------

    def add_export(
        self,
        instance_id: str,
        name: str,
        content: bytes,
        element_id: str | None = None,
        kind: str = "file",
    ) -> ExportRecord:
        with self._lock:
            record = ExportRecord(
                export_id=self.new_export_id(),
                instance_id=instance_id,
                element_id=element_id,
                name=name,
                content=content,
                kind=kind,
                created_at=self.clock.now(),
            )
            self.exports[record.export_id] = record
            return record

    def get_export(self, export_id: str) -> ExportRecord:
        try:
            return self.exports[export_id]
        except KeyError:
            raise UnknownEntityError(f"no export {export_id!r}") from None

    def export_annotations_csv(
        self, instance_id: str, element_scope: Iterable[str] | None = None
    ) -> tuple[str, int]:
        """Canonical CSV of the instance's active annotations.

        Byte-deterministic: fixed header, 6-decimal coordinates, rows sorted
        by image path then annotation id, RFC-3339 second-precision stamps.
        """
        rows = self.query_annotations(instance_id=instance_id, elements=element_scope, active_only=True)
        rows.sort(key=lambda a: (a.image_ref, a.anno_id))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        for a in rows:
            writer.writerow(
                [
                    a.anno_id,
                    a.image_ref,
                    a.geometry.kind,
                    ";".join(f"{v:.6f}" for v in a.geometry.coords()),
                    ";".join(self.label_name(l) for l in a.labels),
                    a.annotator_id or "",
                    a.source.value,
                    a.iteration,
                    rfc3339(a.created_at),
                ]
            )
        return buf.getvalue(), len(rows)

    # -- integrity -----------------------------------------------------------------

    def snapshot_and_replay_integrity_check(self, instance_id: str | None = None) -> list[Violation]:
        """Audit referential integrity and event-log consistency.

        Violations are data, not exceptions; a healthy store returns [].
        """
        report: list[Violation] = []
        with self._lock:
            instances = (
                {instance_id: self.get_instance(instance_id)} if instance_id is not None else dict(self.instances)
            )
            for iid, instance in instances.items():
                try:
                    fold_state(instance, self.event_logs.get(iid, []))
                except LogCorruptionError as exc:
                    report.append(
                        Violation(
                            "corrupt_log",
                            f"instance {iid}: {exc} (event index {exc.event_index})",
                            (iid,),
                        )
                    )

            known_labels: set[str] = set()
            for tree in self.label_trees.values():
                known_labels.update(n.label_id for n in tree.nodes())
            for a in self.annotations_in_order():
                if instance_id is not None and a.instance_id != instance_id:
                    continue
                for label in a.labels:
                    if label not in known_labels:
                        report.append(
                            Violation(
                                "dangling_label",
                                f"annotation {a.anno_id} references unknown or deleted label {label!r}",
                                (a.anno_id, label),
                            )
                        )
                try:
                    chain = self.version_chain(a.anno_id)
                except (StorageError, UnknownEntityError) as exc:
                    report.append(Violation("broken_chain", str(exc), (a.anno_id,)))
                else:
                    origin = chain[-1]
                    if origin.predecessor_id is not None:
                        report.append(
                            Violation("broken_chain", f"chain of {a.anno_id} has no origin", (a.anno_id,))
                        )

            for a in self.annotations_in_order():
                if a.superseded:
                    heirs = [b for b in self.annotations.values() if b.predecessor_id == a.anno_id]
                    if not heirs:
                        report.append(
                            Violation(
                                "orphan_superseded",
                                f"annotation {a.anno_id} is superseded but nothing replaced it",
                                (a.anno_id,),
                            )
                        )

            for task in self.tasks.values():
                if instance_id is not None and task.instance_id != instance_id:
                    continue
                seen_members: dict[tuple[int, str], str] = {}
                for cluster in task.clusters:
                    for member in cluster.members:
                        key = (cluster.iteration, member)
                        if key in seen_members:
                            report.append(
                                Violation(
                                    "cluster_overlap",
                                    f"member {member!r} is in clusters {seen_members[key]} and "
                                    f"{cluster.cluster_id} of round {cluster.iteration}",
                                    (member,),
                                )
                            )
                        seen_members[key] = cluster.cluster_id
                now = self.clock.now()
                with task._lock:
                    open_refs = set(task._open_refs())
                for lease in task.active_leases(now):
                    if lease.item_ref not in open_refs:
                        report.append(
                            Violation(
                                "stale_lease",
                                f"lease {lease.lease_id} holds closed item {lease.item_ref!r}",
                                (lease.lease_id,),
                            )
                        )
        return report


def parse_annotations_csv(document: str) -> list[dict[str, Any]]:
    """Parse the canonical export back into plain row dicts."""
    reader = csv.reader(io.StringIO(document))
    rows = list(reader)
    if not rows or rows[0] != CSV_HEADER.split(","):
        raise StorageError(f"annotation CSV must start with header {CSV_HEADER!r}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 9:
            raise StorageError(f"annotation CSV line {lineno}: expected 9 fields, got {len(row)}")
        anno_id, img_path, anno_type, coords, labels, annotator, source, iteration, created_at = row
        out.append(
            {
                "anno_id": anno_id,
                "img_path": img_path,
                "anno_type": anno_type,
                "coords": [float(v) for v in coords.split(";")] if coords else [],
                "labels": labels.split(";") if labels else [],
                "annotator": annotator or None,
                "source": source,
                "iteration": int(iteration),
                "created_at": created_at,
            }
        )
    return out
