"""Drive full pipelines with robot annotators on a virtual clock.

Two canonical shapes are built here.  The short one queues every image
into a single annotation task and exports the result.  The looped one
runs draw and clustered-label rounds: a proposer queues one image slice
per round (attaching sidecar box proposals from the second round on), a
draw task fixes the boxes, a clusterer groups them, a review task labels
the groups, and a stand-in model update closes the round.

All annotator effort is charged on a shared virtual clock, so the total
elapsed time of a run is exact and must match the closed-form product of
box counts and per-box costs.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..backend import Backend, media_ref
from ..clock import VirtualClock
from ..engine import ElementState
from ..errors import StateError
from ..labels import LabelTree
from ..model import ElementKind, PipelineInstance, template_from_obj
from ..storage import Store, parse_annotations_csv
from .robots import MiaRobot, SiaRobot, SyntheticScene
from .timing import DEFAULT_SECONDS_DRAW_AND_LABEL

WORKERS_DIR = Path(__file__).resolve().parent / "workers"


def worker_path(name: str) -> str:
    return str(WORKERS_DIR / name)


@dataclass(frozen=True)
class LoopRunConfig:
    """Knobs for the looped two-stage run."""

    images_per_iteration: int = 150
    iterations: int = 2
    boxes_per_image: float = 2.7
    draw_seconds: tuple[float, ...] = (11.0, 5.5)
    review_seconds: tuple[float, ...] = (2.5, 1.6)
    single_stage_seconds_per_box: float = DEFAULT_SECONDS_DRAW_AND_LABEL
    clusters_per_round: int = 12
    proposal_min_score: float = 0.4
    seed: int = 7
    label_names: tuple[str, ...] = ("car", "dog", "person")
    worker_timeout: float = 120.0

    def __post_init__(self) -> None:
        if len(self.draw_seconds) != self.iterations:
            raise StateError("draw_seconds must have one entry per iteration")
        if len(self.review_seconds) != self.iterations:
            raise StateError("review_seconds must have one entry per iteration")


@dataclass
class IterationFigures:
    iteration: int
    boxes: int
    draw_seconds: float
    review_seconds: float

    @property
    def seconds(self) -> float:
        return self.draw_seconds + self.review_seconds

    @property
    def seconds_per_box(self) -> float:
        return self.seconds / self.boxes if self.boxes else 0.0


@dataclass
class PipelineRunResult:
    """Everything a test or CLI needs to judge a finished run."""

    instance_id: str
    backend: Backend
    store: Store
    per_iteration: list[IterationFigures]
    total_seconds: float
    closed_form_seconds: float
    crossover_iteration: int | None
    single_stage_seconds_per_box: float
    csv_text: str
    csv_rows: list[dict[str, Any]]
    expected_boxes: int
    loop_passes: int
    event_count: int
    integrity_violations: list
    kept_proposals: int = 0
    created: int = 0
    edited: int = 0
    deleted_proposals: int = 0
    labeled: int = 0
    removed_in_review: int = 0
    exports: list[dict[str, Any]] = field(default_factory=list)

    @property
    def total_minutes(self) -> float:
        return self.total_seconds / 60.0

    def summary(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "total_minutes": self.total_minutes,
            "closed_form_minutes": self.closed_form_seconds / 60.0,
            "crossover_iteration": self.crossover_iteration,
            "single_stage_seconds_per_box": self.single_stage_seconds_per_box,
            "boxes": self.expected_boxes,
            "csv_rows": len(self.csv_rows),
            "loop_passes": self.loop_passes,
            "events": self.event_count,
            "integrity_violations": len(self.integrity_violations),
            "iterations": [
                {
                    "iteration": fig.iteration,
                    "boxes": fig.boxes,
                    "minutes": fig.seconds / 60.0,
                    "seconds_per_box": fig.seconds_per_box,
                }
                for fig in self.per_iteration
            ],
            "proposals": {
                "kept": self.kept_proposals,
                "edited": self.edited,
                "deleted": self.deleted_proposals,
                "drawn": self.created,
            },
            "review": {"labeled": self.labeled, "removed": self.removed_in_review},
            "exports": self.exports,
        }


def _write_media(root: Path, count: int) -> list[str]:
    root.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(count):
        rel = f"img_{i:04d}.jpg"
        (root / rel).write_bytes(f"stub image {i}\n".encode())
        files.append(rel)
    return files


def _build_label_tree(store: Store, names: tuple[str, ...]) -> tuple[str, str, dict[str, str]]:
    tree = LabelTree(store.new_tree_id(), name="objects", root_name="root")
    group_id = tree.add_node(tree.root_id, "objects")
    ids = {name: tree.add_node(group_id, name) for name in names}
    store.add_label_tree(tree)
    return tree.tree_id, group_id, ids


def _write_sidecars(
    directory: Path, scene: SyntheticScene, refs: list[str], config: LoopRunConfig
) -> None:
    """Jittered near-truth proposals for every round after the first."""
    directory.mkdir(parents=True, exist_ok=True)
    n = config.images_per_iteration
    for k in range(1, config.iterations):
        images: dict[str, list[dict[str, Any]]] = {}
        for ref in refs[k * n : (k + 1) * n]:
            rng = random.Random(f"sidecar:{config.seed}:{k}:{ref}")
            entries = []
            for target in scene.boxes_for(ref):
                xc, yc, w, h = target.bbox.coords()
                w = min(0.9, max(0.05, w * rng.uniform(0.92, 1.08)))
                h = min(0.9, max(0.05, h * rng.uniform(0.92, 1.08)))
                xc = min(1 - w / 2, max(w / 2, xc + rng.uniform(-0.02, 0.02)))
                yc = min(1 - h / 2, max(h / 2, yc + rng.uniform(-0.02, 0.02)))
                score = rng.uniform(0.45, 0.95) if rng.random() < 0.85 else rng.uniform(0.05, 0.4)
                entries.append(
                    {"bbox": [xc, yc, w, h], "score": round(score, 4), "label": target.label}
                )
            if rng.random() < 0.1:
                entries.append(
                    {
                        "bbox": [0.5, 0.5, 0.04, 0.04],
                        "score": round(rng.uniform(0.45, 0.8), 4),
                        "label": scene.labels[0],
                    }
                )
            images[ref] = entries
        payload = {"images": images}
        (directory / f"iter-{k}.json").write_text(json.dumps(payload), encoding="utf-8")


def looped_template_obj(config: LoopRunConfig, sidecar_dir: Path) -> dict[str, Any]:
    return {
        "name": "looped-two-stage",
        "description": "draw and clustered-label rounds with box proposals",
        "elements": [
            {"id": "images", "kind": "datasource", "config": {}},
            {
                "id": "propose",
                "kind": "script",
                "config": {
                    "entrypoint": worker_path("propose.py"),
                    "arguments": {
                        "images-per-iteration": str(config.images_per_iteration),
                        "sidecar-dir": str(sidecar_dir),
                        "min-score": str(config.proposal_min_score),
                    },
                },
            },
            {
                "id": "draw_boxes",
                "kind": "anno_task",
                "config": {
                    "interface": "sia",
                    "allowed_tools": ["bbox"],
                    "allowed_actions": ["create", "edit", "delete"],
                    "proposal_source": "propose",
                },
            },
            {
                "id": "group_boxes",
                "kind": "script",
                "config": {
                    "entrypoint": worker_path("cluster.py"),
                    "arguments": {"clusters": str(config.clusters_per_round)},
                },
            },
            {"id": "label_clusters", "kind": "anno_task", "config": {"interface": "mia"}},
            {
                "id": "update_model",
                "kind": "script",
                "config": {"entrypoint": worker_path("retrain.py")},
            },
            {
                "id": "next_round",
                "kind": "loop",
                "config": {"jump_target": "propose", "max_iteration": config.iterations},
            },
            {"id": "export", "kind": "data_export", "config": {}},
        ],
        "connections": [
            ["images", "propose"],
            ["propose", "draw_boxes"],
            ["propose", "group_boxes"],
            ["draw_boxes", "group_boxes"],
            ["group_boxes", "label_clusters"],
            ["label_clusters", "update_model"],
            ["update_model", "next_round"],
            ["next_round", "export"],
        ],
    }


def single_stage_template_obj(seconds_hint: str = "") -> dict[str, Any]:
    return {
        "name": "single-stage",
        "description": seconds_hint or "one combined draw-and-label pass",
        "elements": [
            {"id": "images", "kind": "datasource", "config": {}},
            {
                "id": "queue_items",
                "kind": "script",
                "config": {"entrypoint": worker_path("request_items.py")},
            },
            {"id": "annotate", "kind": "anno_task", "config": {"interface": "sia"}},
            {
                "id": "summarize",
                "kind": "script",
                "config": {"entrypoint": worker_path("summarize.py")},
            },
            {"id": "export", "kind": "data_export", "config": {}},
        ],
        "connections": [
            ["images", "queue_items"],
            ["queue_items", "annotate"],
            ["annotate", "summarize"],
            ["summarize", "export"],
        ],
    }


def _drive(backend: Backend, instance: PipelineInstance, robots: dict[str, Any], max_cycles: int = 400) -> None:
    """Alternate engine ticks and robot work until the instance finishes."""
    engine = backend.engine_for(instance.instance_id)
    backend.advance(instance.instance_id)
    for _ in range(max_cycles):
        if engine.all_finished():
            return
        worked = False
        for el in instance.template.elements:
            if el.kind is not ElementKind.ANNO_TASK:
                continue
            task = backend.task_for_element(instance.instance_id, el.id)
            if task.accepting and task.open_item_count() > 0:
                robots[task.interface].work_task(task.task_id)
                worked = True
        if engine.all_finished():
            return
        if not worked:
            if engine.any_error():
                raise StateError(f"pipeline errored: {engine.snapshot()}")
            backend.advance(instance.instance_id)
            if not engine.all_finished() and not any(
                backend.task_for_element(instance.instance_id, el.id).accepting
                for el in instance.template.elements
                if el.kind is ElementKind.ANNO_TASK
            ):
                raise StateError(f"pipeline stalled: {engine.snapshot()}")
    raise StateError("pipeline did not finish within the cycle budget")


def _csv_export_text(store: Store, instance_id: str) -> str:
    records = [
        e
        for e in store.exports.values()
        if e.instance_id == instance_id and e.kind == "csv"
    ]
    if not records:
        raise StateError(f"instance {instance_id!r} produced no table export")
    return records[-1].content.decode("utf-8")


def run_pipeline_end_to_end(
    work_dir: str | Path, config: LoopRunConfig | None = None
) -> PipelineRunResult:
    """Looped two-stage run; returns measured and closed-form figures."""
    config = config or LoopRunConfig()
    work_dir = Path(work_dir)
    clock = VirtualClock()
    store = Store(clock=clock)
    backend = Backend(store, clock=clock, worker_timeout=config.worker_timeout)

    total_images = config.images_per_iteration * config.iterations
    files = _write_media(work_dir / "media", total_images)
    collection_id = store.register_media_collection(
        "synthetic", work_dir / "media", files
    )
    refs = [media_ref(collection_id, rel) for rel in files]
    scene = SyntheticScene(config.seed, refs, config.label_names, config.boxes_per_image)
    _write_sidecars(work_dir / "sidecars", scene, refs, config)

    tree_id, subtree_id, _ = _build_label_tree(store, config.label_names)
    template = template_from_obj(looped_template_obj(config, work_dir / "sidecars"))
    store.add_template(template)

    instance = backend.instantiate(
        template.name,
        {
            "images": {"collection": collection_id},
            "draw_boxes": {
                "assignees": ["robot-draw"],
                "label_tree": tree_id,
                "label_subtrees": [subtree_id],
            },
            "label_clusters": {
                "assignees": ["robot-review"],
                "label_tree": tree_id,
                "label_subtrees": [subtree_id],
            },
        },
        owner="sim",
    )

    sia = SiaRobot(backend, "robot-draw", scene, config.draw_seconds)
    mia = MiaRobot(backend, "robot-review", scene, config.review_seconds)
    started = clock.now()
    _drive(backend, instance, {"sia": sia, "mia": mia})
    total_seconds = (clock.now() - started).total_seconds()

    n = config.images_per_iteration
    per_iteration = []
    closed_form = 0.0
    crossover = None
    for k in range(config.iterations):
        boxes = scene.total_boxes(refs[k * n : (k + 1) * n])
        figures = IterationFigures(
            iteration=k,
            boxes=boxes,
            draw_seconds=sia.stats.seconds_by_iteration.get(k, 0.0),
            review_seconds=mia.stats.seconds_by_iteration.get(k, 0.0),
        )
        per_iteration.append(figures)
        closed_form += boxes * (config.draw_seconds[k] + config.review_seconds[k])
        per_box = config.draw_seconds[k] + config.review_seconds[k]
        if crossover is None and per_box < config.single_stage_seconds_per_box:
            crossover = k

    engine = backend.engine_for(instance.instance_id)
    csv_text = _csv_export_text(store, instance.instance_id)
    detail = backend.instance_detail(instance.instance_id)
    return PipelineRunResult(
        instance_id=instance.instance_id,
        backend=backend,
        store=store,
        per_iteration=per_iteration,
        total_seconds=total_seconds,
        closed_form_seconds=closed_form,
        crossover_iteration=crossover,
        single_stage_seconds_per_box=config.single_stage_seconds_per_box,
        csv_text=csv_text,
        csv_rows=parse_annotations_csv(csv_text),
        expected_boxes=scene.total_boxes(),
        loop_passes=engine.iteration_of("next_round") + 1,
        event_count=len(engine.events),
        integrity_violations=store.snapshot_and_replay_integrity_check(
            instance.instance_id
        ),
        kept_proposals=sia.stats.kept_proposals,
        created=sia.stats.created,
        edited=sia.stats.edited,
        deleted_proposals=sia.stats.deleted,
        labeled=mia.stats.labeled,
        removed_in_review=mia.stats.removed,
        exports=detail["exports"],
    )


def run_single_stage_pipeline(
    work_dir: str | Path,
    n_images: int = 40,
    boxes_per_image: float = 2.7,
    seconds_per_box: float = DEFAULT_SECONDS_DRAW_AND_LABEL,
    seed: int = 7,
    label_names: tuple[str, ...] = ("car", "dog", "person"),
) -> PipelineRunResult:
    """One combined draw-and-label pass over every image."""
    work_dir = Path(work_dir)
    clock = VirtualClock()
    store = Store(clock=clock)
    backend = Backend(store, clock=clock, worker_timeout=120.0)

    files = _write_media(work_dir / "media", n_images)
    collection_id = store.register_media_collection("synthetic", work_dir / "media", files)
    refs = [media_ref(collection_id, rel) for rel in files]
    scene = SyntheticScene(seed, refs, label_names, boxes_per_image)

    tree_id, subtree_id, _ = _build_label_tree(store, label_names)
    template = template_from_obj(single_stage_template_obj())
    store.add_template(template)
    instance = backend.instantiate(
        template.name,
        {
            "images": {"collection": collection_id},
            "annotate": {
                "assignees": ["robot-full"],
                "label_tree": tree_id,
                "label_subtrees": [subtree_id],
            },
        },
        owner="sim",
    )

    robot = SiaRobot(
        backend, "robot-full", scene, (seconds_per_box,), assign_labels=True
    )
    started = clock.now()
    _drive(backend, instance, {"sia": robot})
    total_seconds = (clock.now() - started).total_seconds()

    boxes = scene.total_boxes()
    engine = backend.engine_for(instance.instance_id)
    csv_text = _csv_export_text(store, instance.instance_id)
    detail = backend.instance_detail(instance.instance_id)
    figures = IterationFigures(
        iteration=0,
        boxes=boxes,
        draw_seconds=robot.stats.seconds_by_iteration.get(0, 0.0),
        review_seconds=0.0,
    )
    return PipelineRunResult(
        instance_id=instance.instance_id,
        backend=backend,
        store=store,
        per_iteration=[figures],
        total_seconds=total_seconds,
        closed_form_seconds=boxes * seconds_per_box,
        crossover_iteration=None,
        single_stage_seconds_per_box=seconds_per_box,
        csv_text=csv_text,
        csv_rows=parse_annotations_csv(csv_text),
        expected_boxes=boxes,
        loop_passes=1,
        event_count=len(engine.events),
        integrity_violations=store.snapshot_and_replay_integrity_check(
            instance.instance_id
        ),
        created=robot.stats.created,
        exports=detail["exports"],
    )
