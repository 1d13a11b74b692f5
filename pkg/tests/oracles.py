"""Independent reference implementations used to check the package.

Everything here is written from the documented behavior alone, on purpose
in a different style from the production code, so that agreement between
the two is meaningful.  Do not import production internals beyond plain
data types.
"""
from __future__ import annotations

import random

import numpy as np

# ---------------------------------------------------------------------------
# box overlap


def corners(box):
    """(xc, yc, w, h) -> (x0, y0, x1, y1) without touching package code."""
    xc, yc, w, h = box
    return (xc - w / 2.0, yc - h / 2.0, xc + w / 2.0, yc + h / 2.0)


def slow_iou(box_a, box_b) -> float:
    ax0, ay0, ax1, ay1 = corners(box_a)
    bx0, by0, bx1, by1 = corners(box_b)
    overlap_w = min(ax1, bx1) - max(ax0, bx0)
    overlap_h = min(ay1, by1) - max(ay0, by0)
    if overlap_w <= 0 or overlap_h <= 0:
        return 0.0
    inter = overlap_w * overlap_h
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def raster_iou(box_a, box_b, resolution: int = 1000) -> float:
    """Pixel-counting overlap on a discrete grid."""
    grid_a = np.zeros((resolution, resolution), dtype=bool)
    grid_b = np.zeros((resolution, resolution), dtype=bool)
    for grid, box in ((grid_a, box_a), (grid_b, box_b)):
        x0, y0, x1, y1 = corners(box)
        c0 = max(0, int(round(x0 * resolution)))
        r0 = max(0, int(round(y0 * resolution)))
        c1 = min(resolution, int(round(x1 * resolution)))
        r1 = min(resolution, int(round(y1 * resolution)))
        grid[r0:r1, c0:c1] = True
    inter = np.logical_and(grid_a, grid_b).sum()
    union = np.logical_or(grid_a, grid_b).sum()
    if union == 0:
        return 0.0
    return float(inter) / float(union)


# ---------------------------------------------------------------------------
# detection scoring
#
# A prediction is (image, class, score_or_None, box); ground truth is
# (image, class, box).  Ranking is by descending score with input order
# breaking ties; a missing score counts as 1.0.  Each prediction considers
# every ground-truth box of its image and class, takes the single best
# overlap, and is a true positive only if that overlap reaches the
# threshold and the box was not already claimed by a higher-ranked
# prediction.


def _effective_score(score) -> float:
    return 1.0 if score is None else float(score)


def oracle_match(predictions, truths, iou_threshold):
    """Per-class TP/FP runs, computed the slow explicit way."""
    classes = sorted({t[1] for t in truths})
    out = {}
    for cls in classes:
        preds = [p for p in predictions if p[1] == cls]
        order = sorted(range(len(preds)), key=lambda i: -_effective_score(preds[i][2]))
        gts = [t for t in truths if t[1] == cls]
        claimed = [False] * len(gts)
        run = []
        for i in order:
            image, _, _, box = preds[i]
            best_j = -1
            best = -1.0
            for j, (gt_image, _, gt_box) in enumerate(gts):
                if gt_image != image:
                    continue
                overlap = slow_iou(box, gt_box)
                if overlap > best:
                    best = overlap
                    best_j = j
            if best_j >= 0 and best >= iou_threshold and not claimed[best_j]:
                claimed[best_j] = True
                run.append(True)
            else:
                run.append(False)
        out[cls] = (run, len(gts))
    return out


def declarative_tp_set(predictions, truths, iou_threshold):
    """Second formulation: a prediction is TP iff its best-overlap box
    reaches the threshold and no higher-ranked TP shares that box."""
    classes = sorted({t[1] for t in truths})
    tp_flags = {}
    for cls in classes:
        preds = [(i, p) for i, p in enumerate(predictions) if p[1] == cls]
        preds.sort(key=lambda pair: -_effective_score(pair[1][2]))
        gts = [t for t in truths if t[1] == cls]
        used = set()
        for index, (image, _, _, box) in preds:
            candidates = [
                (slow_iou(box, gt[2]), j)
                for j, gt in enumerate(gts)
                if gt[0] == image
            ]
            if not candidates:
                tp_flags[index] = False
                continue
            best, best_j = max(candidates, key=lambda c: (c[0], -c[1]))
            ok = best >= iou_threshold and best_j not in used
            tp_flags[index] = ok
            if ok:
                used.add(best_j)
    return tp_flags


def oracle_average_precision(run, n_gt) -> float:
    """All-points AP: area under the running precision envelope."""
    if n_gt == 0:
        return 0.0
    recalls = [0.0]
    precisions = [1.0]
    tp = 0
    for count, flag in enumerate(run, start=1):
        if flag:
            tp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / count)
    recalls.append(recalls[-1])
    precisions.append(0.0)
    envelope = np.array(precisions)
    envelope = np.maximum.accumulate(envelope[::-1])[::-1]
    recall_array = np.array(recalls)
    steps = recall_array[1:] - recall_array[:-1]
    return float((steps * envelope[1:]).sum())


def oracle_map(predictions, truths, iou_threshold=0.5):
    """Mean AP over ground-truth classes; None when there is no truth."""
    if not truths:
        return None
    per_class = oracle_match(predictions, truths, iou_threshold)
    return sum(
        oracle_average_precision(run, n_gt) for run, n_gt in per_class.values()
    ) / len(per_class)


def random_detection_case(rng: random.Random, max_classes=5, max_boxes=8):
    """One random evaluation instance: (predictions, truths)."""
    classes = [f"cls{i}" for i in range(rng.randint(1, max_classes))]
    images = [f"img{i}" for i in range(rng.randint(1, 3))]

    def random_box():
        w = rng.uniform(0.05, 0.4)
        h = rng.uniform(0.05, 0.4)
        xc = rng.uniform(w / 2, 1 - w / 2)
        yc = rng.uniform(h / 2, 1 - h / 2)
        return (xc, yc, w, h)

    truths = []
    for image in images:
        for _ in range(rng.randint(0, max_boxes)):
            truths.append((image, rng.choice(classes), random_box()))
    predictions = []
    for image in images:
        for _ in range(rng.randint(0, max_boxes)):
            if truths and rng.random() < 0.6:
                base = rng.choice(truths)[2]
                xc, yc, w, h = base
                box = (
                    min(1 - w / 2, max(w / 2, xc + rng.uniform(-0.05, 0.05))),
                    min(1 - h / 2, max(h / 2, yc + rng.uniform(-0.05, 0.05))),
                    w,
                    h,
                )
            else:
                box = random_box()
            score = None if rng.random() < 0.1 else round(rng.uniform(0, 1), 3)
            predictions.append((image, rng.choice(classes), score, box))
    return predictions, truths


# ---------------------------------------------------------------------------
# engine log replay
#
# A from-scratch interpreter of the event log, tracking per element a state
# in {pending, in_progress, finished, error} and an iteration counter, and
# per loop a current iteration and sticky break flag.  Loop iteration k+1
# resets every element inside the loop's scope back to pending at k+1.


class OracleReplayError(Exception):
    def __init__(self, index, message):
        super().__init__(f"event {index}: {message}")
        self.index = index


def replay_log(elements, loop_bounds, scope_owner, events):
    """elements: {id: kind}; loop_bounds: {loop_id: max_or_None};
    scope_owner: {element_id: loop_id or None}; events: list of
    (element_id, kind_str, iteration).  Returns final per-element
    (state, iteration) plus loop counters."""
    state = {el: "pending" for el in elements}
    iteration = {el: 0 for el in elements}
    loop_iter = {el: 0 for el in loop_bounds}
    break_flag = {el: False for el in loop_bounds}
    seen_started = set()
    seen_activated = set()

    for index, (el, kind, it) in enumerate(events):
        if el not in elements:
            raise OracleReplayError(index, f"unknown element {el}")
        if kind == "activated":
            if state[el] not in ("pending", "error") or it != iteration[el]:
                raise OracleReplayError(index, f"bad activation of {el}")
            if state[el] == "error":
                seen_started.discard((el, it))
            state[el] = "in_progress"
            seen_activated.add((el, it))
        elif kind == "started":
            if state[el] != "in_progress" or (el, it) not in seen_activated:
                raise OracleReplayError(index, f"start without activation on {el}")
            if (el, it) in seen_started:
                raise OracleReplayError(index, f"double start on {el}")
            seen_started.add((el, it))
        elif kind == "finished":
            if state[el] != "in_progress" or (el, it) not in seen_started:
                raise OracleReplayError(index, f"finish without start on {el}")
            state[el] = "finished"
        elif kind == "errored":
            if state[el] != "in_progress":
                raise OracleReplayError(index, f"error while not running on {el}")
            state[el] = "error"
        elif kind == "loop_iterated":
            if el not in loop_bounds:
                raise OracleReplayError(index, f"{el} is not a loop")
            if state[el] != "in_progress":
                raise OracleReplayError(index, f"loop {el} iterated while idle")
            if it != loop_iter[el] + 1:
                raise OracleReplayError(index, f"loop {el} skipped to {it}")
            bound = loop_bounds[el]
            if bound is not None and it >= bound:
                raise OracleReplayError(index, f"loop {el} exceeded bound {bound}")
            loop_iter[el] = it
            for member, owner in scope_owner.items():
                if owner == el:
                    state[member] = "pending"
                    iteration[member] = it
        elif kind == "break_requested":
            if el not in loop_bounds:
                raise OracleReplayError(index, f"{el} is not a loop")
            break_flag[el] = True
        else:
            raise OracleReplayError(index, f"unknown event kind {kind}")
    return state, iteration, loop_iter, break_flag


def check_activation_order(elements, predecessors, scope_owner, events):
    """Every activation must come after all predecessors finished, with
    same-loop predecessors at the same iteration.  Returns activation
    count; raises OracleReplayError on the first violation."""
    finished_at = {}
    activations = 0
    for index, (el, kind, it) in enumerate(events):
        if kind == "finished":
            finished_at[el] = (it, index)
        if kind != "activated":
            continue
        activations += 1
        for pred in predecessors.get(el, ()):
            if pred not in finished_at:
                raise OracleReplayError(index, f"{el} activated before {pred} finished")
            pred_it, _ = finished_at[pred]
            same_scope = (
                scope_owner.get(pred) is not None
                and scope_owner.get(pred) == scope_owner.get(el)
            )
            if same_scope and pred_it != it:
                raise OracleReplayError(
                    index, f"{el}@{it} activated with {pred} at iteration {pred_it}"
                )
    return activations
