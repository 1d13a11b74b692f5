"""Glue layer: drives engines, opens tasks, runs workers, serves their requests.

``advance`` pushes one instance as far as it can go without human input:
auto elements finish, script workers run to completion, annotation tasks
open and then wait for submissions. Submissions re-enter through this layer
so that finishing the last item of a round immediately advances the
pipeline again.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Any, Mapping, Sequence

from .annotations import AnnoSource, TwoDAnno, anno_to_obj, geometry_from_coords
from .clock import Clock, SystemClock
from .engine import ElementState, Engine
from .errors import LabelScopeError, StateError, UnknownEntityError
from .model import (
    ElementKind,
    PipelineInstance,
    PipelineTemplate,
    ancestors,
    instantiate,
)
from .runtime import HostServices, JobState, ScriptJob, WorkerHost
from .storage import Store
from .tasks import MEMBER_ANNOTATION, AnnotationTask, SiaTaskConfig


def media_ref(collection_id: str, rel_path: str) -> str:
    return f"{collection_id}/{rel_path}"


class Backend:
    def __init__(
        self,
        store: Store | None = None,
        clock: Clock | None = None,
        worker_timeout: float | None = None,
        lease_seconds: float = 600.0,
    ) -> None:
        self.clock = clock or SystemClock()
        self.store = store or Store(clock=self.clock)
        self.worker_timeout = worker_timeout
        self.lease_seconds = lease_seconds
        self.engines: dict[str, Engine] = {}
        self.jobs: dict[str, ScriptJob] = {}
        self._lock = threading.RLock()

    # -- instance lifecycle --------------------------------------------------

    def instantiate(
        self, template_name: str, bindings: Mapping[str, Mapping[str, Any]], owner: str = "anonymous"
    ) -> PipelineInstance:
        """Bind a template, build its engine, and register its tasks."""
        template = self.store.get_template(template_name)
        instance = instantiate(
            template,
            bindings,
            owner=owner,
            instance_id=self.store.new_instance_id(),
            created_at=self.clock.now(),
        )
        engine = Engine(instance, clock=self.clock)
        with self._lock:
            for el in template.elements:
                # catch a bad collection id here, not inside the first worker
                if el.kind is ElementKind.DATASOURCE:
                    self.store.get_collection(instance.params[el.id]["collection"])
            self.store.add_instance(instance, engine.events)
            self.engines[instance.instance_id] = engine
            for el in template.elements:
                if el.kind is not ElementKind.ANNO_TASK:
                    continue
                params = instance.params[el.id]
                tree = self.store.get_label_tree(params["label_tree"])
                assignable = tree.select_subtrees(params["label_subtrees"])
                spec = el.anno_task
                task = AnnotationTask(
                    task_id=self.store.new_task_id(),
                    instance_id=instance.instance_id,
                    element_id=el.id,
                    interface=spec.interface,
                    config=SiaTaskConfig(
                        allowed_tools=frozenset(spec.allowed_tools),
                        allowed_actions=frozenset(spec.allowed_actions),
                        proposal_source=spec.proposal_source,
                    ),
                    assignees=params["assignees"],
                    assignable_labels=assignable,
                    label_names={i: tree.name_of(i) for i in assignable},
                    clock=self.clock,
                    lease_seconds=self.lease_seconds,
                )
                self.store.add_task(task)
        return instance

    def engine_for(self, instance_id: str) -> Engine:
        try:
            return self.engines[instance_id]
        except KeyError:
            raise UnknownEntityError(f"no running engine for instance {instance_id!r}") from None

    def task_for_element(self, instance_id: str, element_id: str) -> AnnotationTask:
        return self.store.get_task_by_element(instance_id, element_id)

    # -- advancing -------------------------------------------------------------

    def advance(self, instance_id: str) -> dict[str, Any]:
        """Run the instance until it finishes or waits on annotators."""
        engine = self.engine_for(instance_id)
        instance = self.store.get_instance(instance_id)
        ran_jobs: list[str] = []
        while True:
            newly = engine.tick()
            if not newly:
                break
            for el_id in newly:
                kind = instance.template.element(el_id).kind
                if kind is ElementKind.SCRIPT:
                    job = self._run_script(instance, engine, el_id)
                    ran_jobs.append(job.job_id)
                elif kind is ElementKind.ANNO_TASK:
                    self._open_task(instance, engine, el_id)
                elif kind is ElementKind.DATA_EXPORT:
                    self._materialize_export(instance, el_id)
        return {
            "instance_id": instance_id,
            "ran_jobs": ran_jobs,
            "all_finished": engine.all_finished(),
            "elements": engine.snapshot(),
        }

    def _run_script(self, instance: PipelineInstance, engine: Engine, el_id: str) -> ScriptJob:
        engine.mark_started(el_id)
        iteration = engine.iteration_of(el_id)
        spec = instance.template.element(el_id).script
        job = ScriptJob(
            job_id=f"{instance.instance_id}/{el_id}/{iteration}",
            instance_id=instance.instance_id,
            element_id=el_id,
            iteration=iteration,
            entrypoint=spec.entrypoint,
            arguments=dict(instance.params[el_id].get("arguments", {})),
        )
        self.jobs[job.job_id] = job
        host = WorkerHost(
            job,
            BackendServices(self),
            inputs=list(instance.template.predecessors()[el_id]),
            timeout_seconds=self.worker_timeout,
        )
        host.run()
        tail = "; ".join(job.diagnostics[-3:])
        engine.report_element_result(el_id, job.state is JobState.DONE, tail)
        return job

    def _open_task(self, instance: PipelineInstance, engine: Engine, el_id: str) -> None:
        engine.mark_started(el_id)
        task = self.task_for_element(instance.instance_id, el_id)
        iteration = engine.iteration_of(el_id)
        task.open_round(iteration)
        if task.open_item_count() == 0 and not task.round_complete(iteration):
            # nothing was requested for this round; the task is trivially done
            task.close()
            engine.report_element_result(el_id, True, "no items this round")
        elif task.round_complete(iteration):
            task.close()
            engine.report_element_result(el_id, True, "round already complete")

    def _materialize_export(self, instance: PipelineInstance, el_id: str) -> None:
        scope = ancestors(instance.template, el_id)
        text, rows = self.store.export_annotations_csv(instance.instance_id, element_scope=scope)
        engine = self.engine_for(instance.instance_id)
        self.store.add_export(
            instance.instance_id,
            name=f"{el_id}-round{engine.iteration_of(el_id)}.csv",
            content=text.encode("utf-8"),
            element_id=el_id,
            kind="csv",
        )

    # -- task entry points (used by the API and by robot annotators) -----------

    def next_item(self, task_id: str, annotator_id: str) -> dict[str, Any] | None:
        """Lease the next work item and bundle what the annotator needs."""
        task = self.store.get_task(task_id)
        lease = task.next_item(annotator_id, self.clock.now())
        if lease is None:
            return None
        payload: dict[str, Any] = {
            "lease": {
                "lease_id": lease.lease_id,
                "item_ref": lease.item_ref,
                "annotator": lease.annotator_id,
                "expires_at": lease.expires_at.isoformat(),
            },
            "task_id": task.task_id,
            "interface": task.interface,
            "config": {
                "allowed_tools": sorted(task.config.allowed_tools),
                "allowed_actions": sorted(task.config.allowed_actions),
            },
            "labels": [
                {"label_id": i, "name": task.label_names.get(i, i)} for i in sorted(task.assignable_labels)
            ],
        }
        if task.interface == "sia":
            item = task._item_by_ref(lease.item_ref)
            payload["item"] = {
                "item_id": item.item_id,
                "image_ref": item.image_ref,
                "iteration": item.iteration,
                "proposals": [anno_to_obj(self.store.get_annotation(i)) for i in item.proposal_ids],
            }
        else:
            cluster = task._cluster_by_ref(lease.item_ref)
            members = []
            for m in cluster.members:
                if cluster.member_kind == MEMBER_ANNOTATION:
                    members.append(anno_to_obj(self.store.get_annotation(m)))
                else:
                    members.append({"image_ref": m})
            payload["cluster"] = {
                "cluster_id": cluster.cluster_id,
                "member_kind": cluster.member_kind,
                "members": members,
                "proposed_label": cluster.proposed_label,
                "iteration": cluster.iteration,
            }
        return payload

    def submit_sia(
        self,
        task_id: str,
        annotator_id: str,
        lease_id: str,
        operations: Sequence[Mapping[str, Any]],
        idempotency_key: str | None = None,
    ) -> dict[str, Any]:
        task = self.store.get_task(task_id)
        result = task.submit_sia(
            lease_id,
            annotator_id,
            operations,
            self.store,
            now=self.clock.now(),
            idempotency_key=idempotency_key,
        )
        if result.get("round_complete"):
            self._complete_task_round(task)
        return result

    def submit_mia_review(
        self,
        task_id: str,
        annotator_id: str,
        lease_id: str,
        removed_member_ids: Sequence[str],
        chosen_label: str | None,
    ) -> dict[str, Any]:
        task = self.store.get_task(task_id)
        result = task.submit_mia_review(
            lease_id, annotator_id, removed_member_ids, chosen_label, self.store, now=self.clock.now()
        )
        if result.get("round_complete"):
            self._complete_task_round(task)
        return result

    def review_cluster(
        self,
        cluster_id: str,
        annotator_id: str,
        lease_id: str,
        removed_member_ids: Sequence[str],
        chosen_label: str | None,
    ) -> dict[str, Any]:
        task = self.store.find_task_of_cluster(cluster_id)
        return self.submit_mia_review(task.task_id, annotator_id, lease_id, removed_member_ids, chosen_label)

    def _complete_task_round(self, task: AnnotationTask) -> None:
        engine = self.engine_for(task.instance_id)
        if not task.accepting or engine.state_of(task.element_id) is not ElementState.IN_PROGRESS:
            return  # a parallel submission already closed the round
        task.close()
        engine.report_element_result(task.element_id, True, f"round {task.current_round} complete")
        self.advance(task.instance_id)

    # -- instance views ----------------------------------------------------------

    def instance_detail(self, instance_id: str) -> dict[str, Any]:
        instance = self.store.get_instance(instance_id)
        engine = self.engine_for(instance_id)
        tasks = {
            t.task_id: t.progress()
            for t in self.store.tasks.values()
            if t.instance_id == instance_id
        }
        exports = [
            {
                "export_id": e.export_id,
                "name": e.name,
                "kind": e.kind,
                "element_id": e.element_id,
                "bytes": len(e.content),
            }
            for e in self.store.exports.values()
            if e.instance_id == instance_id
        ]
        return {
            "instance_id": instance_id,
            "template": instance.template.name,
            "owner": instance.owner,
            "created_at": instance.created_at.isoformat(),
            "elements": engine.snapshot(),
            "all_finished": engine.all_finished(),
            "tasks": tasks,
            "exports": exports,
            "events": len(engine.events),
        }


class BackendServices(HostServices):
    """What a running worker can reach, scoped to its own element."""

    def __init__(self, backend: Backend) -> None:
        self.backend = backend

    def _engine(self, job: ScriptJob) -> Engine:
        return self.backend.engine_for(job.instance_id)

    def _instance(self, job: ScriptJob) -> PipelineInstance:
        return self.backend.store.get_instance(job.instance_id)

    def get_media(self, job: ScriptJob) -> dict[str, Any]:
        """Media of every datasource upstream of the worker's element."""
        instance = self._instance(job)
        upstream = ancestors(instance.template, job.element_id)
        media = []
        for el in instance.template.elements:
            if el.kind is not ElementKind.DATASOURCE or el.id not in upstream:
                continue
            collection_id = instance.params[el.id]["collection"]
            collection = self.backend.store.get_collection(collection_id)
            for rel in collection.files:
                media.append({"ref": media_ref(collection_id, rel), "collection": collection_id, "path": rel})
        return {"media": media}

    def get_input_annotations(self, job: ScriptJob, iteration: int | None) -> list[dict[str, Any]]:
        instance = self._instance(job)
        preds = instance.template.predecessors()[job.element_id]
        rows = self.backend.store.query_annotations(
            instance_id=job.instance_id, elements=preds, iteration=iteration
        )
        return [anno_to_obj(a) for a in rows]

    def _downstream_task(self, job: ScriptJob) -> AnnotationTask:
        instance = self._instance(job)
        for succ in instance.template.successors()[job.element_id]:
            if instance.template.element(succ).kind is ElementKind.ANNO_TASK:
                return self.backend.task_for_element(job.instance_id, succ)
        raise StateError(f"element {job.element_id!r} has no annotation task connected downstream")

    def _resolve_label(self, task: AnnotationTask, name_or_id: str) -> str:
        if name_or_id in task.assignable_labels:
            return name_or_id
        lowered = name_or_id.lower()
        matches = [i for i, n in task.label_names.items() if n.lower() == lowered]
        if len(matches) == 1:
            return matches[0]
        raise LabelScopeError(f"label {name_or_id!r} is not assignable on task {task.task_id!r}")

    def request_annotations(
        self,
        job: ScriptJob,
        items: Sequence[Mapping[str, Any]] | None,
        clusters: Mapping[str, Any] | None,
    ) -> dict[str, Any]:
        task = self._downstream_task(job)
        engine = self._engine(job)
        iteration = engine.iteration_of(task.element_id)
        if items is not None:
            rows: list[TwoDAnno] = []
            entries: list[tuple[str, list[str]]] = []
            for item in items:
                image_ref = str(item["image_ref"])
                ids = []
                for prop in item.get("proposals", ()):
                    labels = tuple(
                        self._resolve_label(task, l)
                        for l in ([prop["label"]] if "label" in prop else prop.get("labels", ()))
                    )
                    row = TwoDAnno(
                        anno_id=self.backend.store.new_anno_id(),
                        image_ref=image_ref,
                        geometry=geometry_from_coords(prop.get("kind", "bbox"), prop["coords"]),
                        labels=labels,
                        source=AnnoSource.PROPOSAL,
                        score=prop.get("score"),
                        iteration=iteration,
                        instance_id=job.instance_id,
                        producer_element=job.element_id,
                        created_at=self.backend.clock.now(),
                    )
                    rows.append(row)
                    ids.append(row.anno_id)
                entries.append((image_ref, ids))
            # one atomic commit per request: either every proposal and item
            # lands or none do
            self.backend.store.apply_annotation_batch(rows, [], [])
            added = task.add_items(entries, iteration=iteration)
            return {"attached_items": len(added), "proposals": len(rows)}
        assignments = {str(k): str(v) for k, v in clusters["assignments"].items()}
        member_kind = clusters.get("member_kind", MEMBER_ANNOTATION)
        if member_kind == MEMBER_ANNOTATION:
            for member in assignments:
                self.backend.store.get_annotation(member)
        proposed = {
            str(k): (self._resolve_label(task, v) if v is not None else None)
            for k, v in (clusters.get("proposed_labels") or {}).items()
        }
        built = task.build_clusters(
            assignments, proposed_labels=proposed, member_kind=member_kind, iteration=iteration
        )
        return {"clusters": len(built)}

    def set_loop_break(self, job: ScriptJob) -> dict[str, Any]:
        engine = self._engine(job)
        loop_id = engine.enclosing_loop(job.element_id)
        if loop_id is None:
            raise StateError(f"element {job.element_id!r} is not inside any loop; nothing to break")
        engine.request_break(loop_id)
        return {"loop": loop_id, "break": True}

    def add_data_export(self, job: ScriptJob, path: str) -> dict[str, Any]:
        return self._ingest_file(job, path, kind="file")

    def add_visualization(self, job: ScriptJob, path: str) -> dict[str, Any]:
        return self._ingest_file(job, path, kind="visualization")

    def _ingest_file(self, job: ScriptJob, path: str, kind: str) -> dict[str, Any]:
        p = Path(path)
        try:
            content = p.read_bytes()  # read now: the record must not dangle
        except OSError as exc:
            raise StateError(f"cannot read {path!r}: {exc}") from exc
        record = self.backend.store.add_export(
            job.instance_id, name=p.name, content=content, element_id=job.element_id, kind=kind
        )
        return {"export_id": record.export_id, "bytes": len(content)}
