"""Closed-form timing model for annotation workflows.

Estimates wall-clock effort for three labeling strategies over the same
image set: single-stage (draw and label each box in one pass), two-stage
(draw boxes first, label them in bulk afterwards), and a looped two-stage
variant where per-box costs shrink each round as proposals improve.
"""
from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass, field

from ..errors import EvaluationError

DEFAULT_SECONDS_DRAW_AND_LABEL = 11.15
DEFAULT_SECONDS_DRAW_ONLY = 7.1
DEFAULT_SECONDS_LABEL_SINGLE = 4.05
DEFAULT_SECONDS_LABEL_CLUSTERED = 1.92

# Reported end-to-end baseline for the single-stage strategy.  It does not
# equal boxes * seconds-per-box under the default figures (540 * 11.15 s is
# 100.35 min, not 102.75 min), so reports carry an explicit flag instead of
# silently matching it.
BASELINE_SINGLE_STAGE_MINUTES = 102.75
BASELINE_BOX_COUNT = 540

FLAG_BASELINE_NOT_RECONSTRUCTIBLE = (
    "baseline-total-not-reconstructible: published 102.75 min exceeds "
    "540 boxes * 11.15 s = 100.35 min"
)

SINGLE_STAGE = "single_stage"
TWO_STAGE = "two_stage"
LOOPED = "looped"


@dataclass(frozen=True)
class AnnotatorModel:
    """Per-box effort figures, in seconds.

    ``seconds_draw_and_label`` covers drawing one box and picking its class
    in the same view.  ``seconds_draw_only`` covers drawing without class
    selection.  The two label costs cover assigning a class to one box,
    either inside the single-image view or inside a clustered bulk view.
    """

    seconds_draw_and_label: float = DEFAULT_SECONDS_DRAW_AND_LABEL
    seconds_draw_only: float = DEFAULT_SECONDS_DRAW_ONLY
    seconds_label_single: float = DEFAULT_SECONDS_LABEL_SINGLE
    seconds_label_clustered: float = DEFAULT_SECONDS_LABEL_CLUSTERED

    def __post_init__(self) -> None:
        for name in (
            "seconds_draw_and_label",
            "seconds_draw_only",
            "seconds_label_single",
            "seconds_label_clustered",
        ):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise EvaluationError(f"{name} must be a finite number")
            if value <= 0:
                raise EvaluationError(f"{name} must be positive, got {value}")

    def label_speedup(self) -> float:
        """How much faster clustered labeling is than per-image labeling."""
        return self.seconds_label_single / self.seconds_label_clustered


@dataclass(frozen=True)
class WorkloadSpec:
    """How many images to annotate and how densely they are populated."""

    n_images: int = 200
    boxes_per_image: float = 2.7
    iterations: int = 1

    def __post_init__(self) -> None:
        if self.n_images <= 0:
            raise EvaluationError("n_images must be positive")
        if self.boxes_per_image <= 0:
            raise EvaluationError("boxes_per_image must be positive")
        if self.iterations <= 0:
            raise EvaluationError("iterations must be positive")

    def total_boxes(self) -> int:
        return round(self.n_images * self.boxes_per_image)


def allocate_box_counts(n_images: int, boxes_per_image: float, seed: int) -> list[int]:
    """Spread ``round(n_images * boxes_per_image)`` boxes over images.

    Every image gets the integer floor; the remainder is handed out to a
    seeded random subset so repeated runs place the extra boxes on the same
    images.  The returned counts always sum to the rounded total.
    """
    if n_images <= 0:
        raise EvaluationError("n_images must be positive")
    if boxes_per_image <= 0:
        raise EvaluationError("boxes_per_image must be positive")
    total = round(n_images * boxes_per_image)
    base = total // n_images
    remainder = total - base * n_images
    counts = [base] * n_images
    rng = random.Random(f"box-counts:{seed}")
    for index in rng.sample(range(n_images), remainder):
        counts[index] += 1
    return counts


@dataclass(frozen=True)
class StageReport:
    """One row of a simulation report."""

    strategy: str
    stage: str
    seconds: float
    seconds_per_box: float | None = None
    speedup: float | None = None

    @property
    def minutes(self) -> float:
        return self.seconds / 60.0


@dataclass(frozen=True)
class SimReport:
    """Aggregate of one strategy run: stage rows plus their total."""

    strategy: str
    stages: tuple[StageReport, ...]
    boxes: int
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        total = sum(stage.seconds for stage in self.stages)
        if total < 0:
            raise EvaluationError("stage seconds must not sum negative")

    @property
    def total_seconds(self) -> float:
        return sum(stage.seconds for stage in self.stages)

    @property
    def total_minutes(self) -> float:
        return self.total_seconds / 60.0

    def rows(self) -> list[StageReport]:
        """Stage rows followed by a synthetic total row."""
        per_box = self.total_seconds / self.boxes if self.boxes else None
        total_row = StageReport(
            strategy=self.strategy,
            stage="total",
            seconds=self.total_seconds,
            seconds_per_box=per_box,
        )
        return [*self.stages, total_row]


def simulate_single_stage(
    model: AnnotatorModel | None = None,
    workload: WorkloadSpec | None = None,
) -> SimReport:
    """Everything drawn and labeled in one pass over the images."""
    model = model or AnnotatorModel()
    workload = workload or WorkloadSpec()
    boxes = workload.total_boxes()
    seconds = boxes * model.seconds_draw_and_label
    flags: tuple[str, ...] = ()
    if (
        boxes == BASELINE_BOX_COUNT
        and model.seconds_draw_and_label == DEFAULT_SECONDS_DRAW_AND_LABEL
        and abs(seconds / 60.0 - BASELINE_SINGLE_STAGE_MINUTES) > 1e-9
    ):
        flags = (FLAG_BASELINE_NOT_RECONSTRUCTIBLE,)
    stage = StageReport(
        strategy=SINGLE_STAGE,
        stage="draw_and_label",
        seconds=seconds,
        seconds_per_box=model.seconds_draw_and_label,
    )
    return SimReport(strategy=SINGLE_STAGE, stages=(stage,), boxes=boxes, flags=flags)


def simulate_two_stage(
    model: AnnotatorModel | None = None,
    workload: WorkloadSpec | None = None,
) -> SimReport:
    """Boxes drawn first, then labeled in bulk through clustered review."""
    model = model or AnnotatorModel()
    workload = workload or WorkloadSpec()
    boxes = workload.total_boxes()
    draw = StageReport(
        strategy=TWO_STAGE,
        stage="draw",
        seconds=boxes * model.seconds_draw_only,
        seconds_per_box=model.seconds_draw_only,
    )
    label = StageReport(
        strategy=TWO_STAGE,
        stage="label_clusters",
        seconds=boxes * model.seconds_label_clustered,
        seconds_per_box=model.seconds_label_clustered,
        speedup=model.label_speedup(),
    )
    return SimReport(strategy=TWO_STAGE, stages=(draw, label), boxes=boxes)


@dataclass(frozen=True)
class LoopedReport:
    """Per-iteration two-stage reports plus the crossover point.

    ``crossover_iteration`` is the first round whose combined per-box cost
    drops below the single-stage per-box cost, or None if it never does.
    """

    iterations: tuple[SimReport, ...]
    single_stage_seconds_per_box: float
    crossover_iteration: int | None

    @property
    def total_seconds(self) -> float:
        return sum(report.total_seconds for report in self.iterations)

    @property
    def total_minutes(self) -> float:
        return self.total_seconds / 60.0


def simulate_looped(
    draw_seconds: list[float] | tuple[float, ...],
    review_seconds: list[float] | tuple[float, ...],
    workload: WorkloadSpec | None = None,
    model: AnnotatorModel | None = None,
    seed: int = 0,
) -> LoopedReport:
    """Two-stage rounds with per-iteration draw and review costs.

    ``workload.n_images`` is the per-round image count; box totals per round
    come from the same seeded allocation the end-to-end harness uses, so the
    closed form here matches the driven pipeline exactly.
    """
    model = model or AnnotatorModel()
    workload = workload or WorkloadSpec(iterations=2)
    if len(draw_seconds) != workload.iterations:
        raise EvaluationError(
            f"draw_seconds has {len(draw_seconds)} entries for "
            f"{workload.iterations} iterations"
        )
    if len(review_seconds) != workload.iterations:
        raise EvaluationError(
            f"review_seconds has {len(review_seconds)} entries for "
            f"{workload.iterations} iterations"
        )
    for value in (*draw_seconds, *review_seconds):
        if value <= 0:
            raise EvaluationError("per-iteration costs must be positive")

    counts = allocate_box_counts(
        workload.n_images * workload.iterations, workload.boxes_per_image, seed
    )
    reports = []
    crossover: int | None = None
    for k in range(workload.iterations):
        boxes = sum(counts[k * workload.n_images : (k + 1) * workload.n_images])
        draw = StageReport(
            strategy=LOOPED,
            stage=f"iteration{k}_draw",
            seconds=boxes * draw_seconds[k],
            seconds_per_box=draw_seconds[k],
        )
        review = StageReport(
            strategy=LOOPED,
            stage=f"iteration{k}_label_clusters",
            seconds=boxes * review_seconds[k],
            seconds_per_box=review_seconds[k],
        )
        reports.append(
            SimReport(strategy=LOOPED, stages=(draw, review), boxes=boxes)
        )
        per_box = draw_seconds[k] + review_seconds[k]
        if crossover is None and per_box < model.seconds_draw_and_label:
            crossover = k
    return LoopedReport(
        iterations=tuple(reports),
        single_stage_seconds_per_box=model.seconds_draw_and_label,
        crossover_iteration=crossover,
    )


def reports_to_csv(reports: list[SimReport] | tuple[SimReport, ...]) -> str:
    """Flatten reports into CSV with a fixed column set."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["strategy", "stage", "minutes", "seconds_per_box", "speedup"])
    for report in reports:
        for row in report.rows():
            writer.writerow(
                [
                    row.strategy,
                    row.stage,
                    f"{row.minutes:.6f}",
                    "" if row.seconds_per_box is None else f"{row.seconds_per_box:.6f}",
                    "" if row.speedup is None else f"{row.speedup:.6f}",
                ]
            )
    return buffer.getvalue()


def reports_to_json(reports: list[SimReport] | tuple[SimReport, ...]) -> str:
    payload = []
    for report in reports:
        payload.append(
            {
                "strategy": report.strategy,
                "boxes": report.boxes,
                "total_minutes": report.total_minutes,
                "flags": list(report.flags),
                "stages": [
                    {
                        "stage": row.stage,
                        "minutes": row.minutes,
                        "seconds_per_box": row.seconds_per_box,
                        "speedup": row.speedup,
                    }
                    for row in report.rows()
                ],
            }
        )
    return json.dumps(payload, indent=2)
