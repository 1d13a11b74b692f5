"""annoflow: semi-automatic image annotation pipelines.

Templates describe annotation workflows as directed acyclic graphs of
datasources, worker scripts, annotation tasks, loops, and exports.  An
event-sourced engine runs them; annotators work leased items through
single-image or clustered review tasks; results leave as deterministic
CSV exports.  A simulation harness measures how much labeling time the
two-stage and looped strategies save.
"""
from __future__ import annotations

from .annotations import AnnoSource, BBox, Line, Point, Polygon, TwoDAnno
from .backend import Backend
from .clock import SystemClock, VirtualClock
from .engine import ElementState, Engine, EngineEvent, EventKind, resume
from .errors import AnnoflowError
from .evaluation import EvalConfig, MapResult, ProposalFilter, evaluate_map, filter_proposals, iou
from .labels import LabelTree
from .model import (
    ElementKind,
    PipelineInstance,
    PipelineTemplate,
    instantiate,
    parse_template,
    serialize_template,
    template_from_obj,
    validate_template,
)
from .storage import Store
from .tasks import AnnotationTask, SiaTaskConfig

__version__ = "0.1.0"

__all__ = [
    "AnnoSource",
    "AnnoflowError",
    "AnnotationTask",
    "BBox",
    "Backend",
    "ElementKind",
    "ElementState",
    "Engine",
    "EngineEvent",
    "EvalConfig",
    "EventKind",
    "LabelTree",
    "Line",
    "MapResult",
    "PipelineInstance",
    "PipelineTemplate",
    "Point",
    "Polygon",
    "ProposalFilter",
    "SiaTaskConfig",
    "Store",
    "SystemClock",
    "TwoDAnno",
    "VirtualClock",
    "evaluate_map",
    "filter_proposals",
    "instantiate",
    "iou",
    "parse_template",
    "resume",
    "serialize_template",
    "template_from_obj",
    "validate_template",
    "__version__",
]
