"""Box overlap and detection-quality metrics.

Matching follows the widespread detection protocol: per class and image,
predictions are ranked by descending score and each claims its best-overlap
ground-truth box; a claim below the overlap threshold, or on an already
claimed box, is a false positive. Average precision integrates the full
precision-recall curve using the precision envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .annotations import BBox, TwoDAnno
from .errors import EvaluationError


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    class_aware: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold <= 1.0:
            raise EvaluationError(f"iou_threshold must lie in (0,1], got {self.iou_threshold}")


@dataclass(frozen=True)
class ProposalFilter:
    confidence_min: float = 0.4

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence_min <= 1.0:
            raise EvaluationError(f"confidence_min must lie in [0,1], got {self.confidence_min}")


@dataclass(frozen=True)
class MapResult:
    """mAP over classes present in the ground truth.

    ``mean_ap`` is None when the ground truth defines no classes to average
    over; that is an explicit no-result, deliberately distinct from 0.0.
    """

    mean_ap: float | None
    per_class: dict[str, float] = field(default_factory=dict)
    n_predictions: int = 0
    n_ground_truth: int = 0
    note: str = ""


@dataclass(frozen=True)
class AgreementReport:
    a_to_b: MapResult
    b_to_a: MapResult


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area; symmetric, 1 iff identical boxes."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    # areas from the same corner values keep inter <= union in float math,
    # so identical boxes give exactly 1.0 and nothing ever exceeds it
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def filter_proposals(proposals: Sequence[TwoDAnno], f: ProposalFilter) -> list[TwoDAnno]:
    """Keep proposals scoring strictly above the cutoff, in input order."""
    out = []
    for p in proposals:
        if p.score is None:
            raise EvaluationError(f"proposal {p.anno_id!r} carries no score")
        if p.score > f.confidence_min:
            out.append(p)
    return out


def _eval_class_of(a: TwoDAnno, cfg: EvalConfig) -> str:
    if not cfg.class_aware:
        return ""
    if len(a.labels) != 1:
        raise EvaluationError(
            f"annotation {a.anno_id!r} needs exactly one label for class-aware evaluation, has {len(a.labels)}"
        )
    return a.labels[0]


def _require_bbox(a: TwoDAnno) -> BBox:
    if not isinstance(a.geometry, BBox):
        raise EvaluationError(f"annotation {a.anno_id!r} is a {a.geometry.kind}; evaluation covers boxes only")
    return a.geometry


def average_precision(tp_fp_ranked: Sequence[bool], n_ground_truth: int) -> float:
    """All-points average precision from a ranked true/false-positive run."""
    if n_ground_truth == 0:
        raise EvaluationError("average precision is undefined without ground truth")
    if sum(tp_fp_ranked) > n_ground_truth:
        raise EvaluationError(
            f"{sum(tp_fp_ranked)} true positives cannot come from {n_ground_truth} ground-truth boxes"
        )
    if not tp_fp_ranked:
        return 0.0
    recalls = [0.0]
    precisions = [1.0]
    tp = fp = 0
    for is_tp in tp_fp_ranked:
        tp, fp = (tp + 1, fp) if is_tp else (tp, fp + 1)
        recalls.append(tp / n_ground_truth)
        precisions.append(tp / (tp + fp))
    recalls.append(recalls[-1])
    precisions.append(0.0)
    # precision envelope: best precision reachable at or beyond each recall
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    for i in range(1, len(recalls)):
        ap += (recalls[i] - recalls[i - 1]) * precisions[i]
    return ap


def match_predictions(
    predictions: Sequence[TwoDAnno], ground_truth: Sequence[TwoDAnno], cfg: EvalConfig
) -> dict[str, tuple[list[bool], int]]:
    """Rank and match per class; returns class -> (tp/fp run, gt count).

    Only classes present in the ground truth appear. Ranking is by
    descending score with input order breaking ties; missing scores count
    as 1.0 (the convention for human sets, which carry no confidences).
    """
    gt_by_class: dict[str, list[tuple[str, BBox]]] = {}
    for g in ground_truth:
        box = _require_bbox(g)
        gt_by_class.setdefault(_eval_class_of(g, cfg), []).append((g.image_ref, box))

    preds_by_class: dict[str, list[tuple[str, BBox, float]]] = {}
    for p in predictions:
        box = _require_bbox(p)
        cls = _eval_class_of(p, cfg)
        score = 1.0 if p.score is None else p.score
        preds_by_class.setdefault(cls, []).append((p.image_ref, box, score))

    out: dict[str, tuple[list[bool], int]] = {}
    for cls, gts in gt_by_class.items():
        preds = preds_by_class.get(cls, [])
        ranked = sorted(preds, key=lambda t: -t[2])  # stable: ties keep input order
        claimed = [False] * len(gts)
        run: list[bool] = []
        for image_ref, box, _score in ranked:
            best_idx, best_iou = -1, 0.0
            for gi, (g_image, g_box) in enumerate(gts):
                if g_image != image_ref:
                    continue
                overlap = iou(box, g_box)
                if overlap > best_iou:
                    best_idx, best_iou = gi, overlap
            if best_idx >= 0 and best_iou >= cfg.iou_threshold and not claimed[best_idx]:
                claimed[best_idx] = True
                run.append(True)
            else:
                run.append(False)
        out[cls] = (run, len(gts))
    return out


def evaluate_map(
    predictions: Sequence[TwoDAnno], ground_truth: Sequence[TwoDAnno], cfg: EvalConfig | None = None
) -> MapResult:
    """Mean average precision of predictions against ground truth."""
    cfg = cfg or EvalConfig()
    if not ground_truth:
        return MapResult(
            mean_ap=None,
            n_predictions=len(predictions),
            n_ground_truth=0,
            note="no ground truth; mAP undefined",
        )
    matched = match_predictions(predictions, ground_truth, cfg)
    per_class = {cls: average_precision(run, n_gt) for cls, (run, n_gt) in sorted(matched.items())}
    mean_ap = sum(per_class.values()) / len(per_class)
    return MapResult(
        mean_ap=mean_ap,
        per_class=per_class,
        n_predictions=len(predictions),
        n_ground_truth=len(ground_truth),
    )


def evaluate_agreement(
    set_a: Sequence[TwoDAnno], set_b: Sequence[TwoDAnno], cfg: EvalConfig | None = None
) -> AgreementReport:
    """mAP in both directions, since neither annotator is the ground truth."""
    cfg = cfg or EvalConfig()
    return AgreementReport(
        a_to_b=evaluate_map(set_a, set_b, cfg),
        b_to_a=evaluate_map(set_b, set_a, cfg),
    )
