"""Simulation harness: timing models, robot annotators, full pipeline runs."""
from __future__ import annotations

from .endtoend import (
    LoopRunConfig,
    PipelineRunResult,
    run_pipeline_end_to_end,
    run_single_stage_pipeline,
)
from .robots import MiaRobot, SiaRobot, SyntheticScene
from .timing import (
    AnnotatorModel,
    LoopedReport,
    SimReport,
    StageReport,
    WorkloadSpec,
    allocate_box_counts,
    reports_to_csv,
    reports_to_json,
    simulate_looped,
    simulate_single_stage,
    simulate_two_stage,
)

__all__ = [
    "AnnotatorModel",
    "LoopRunConfig",
    "LoopedReport",
    "MiaRobot",
    "PipelineRunResult",
    "SiaRobot",
    "SimReport",
    "StageReport",
    "SyntheticScene",
    "WorkloadSpec",
    "allocate_box_counts",
    "reports_to_csv",
    "reports_to_json",
    "run_pipeline_end_to_end",
    "run_single_stage_pipeline",
    "simulate_looped",
    "simulate_single_stage",
    "simulate_two_stage",
]
