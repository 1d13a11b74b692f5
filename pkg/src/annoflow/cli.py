"""Command line front end: timing simulations, pipeline runs, API server."""
from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from .errors import AnnoflowError
from .sim.endtoend import (
    LoopRunConfig,
    run_pipeline_end_to_end,
    run_single_stage_pipeline,
)
from .sim.timing import (
    AnnotatorModel,
    SimReport,
    StageReport,
    WorkloadSpec,
    reports_to_csv,
    reports_to_json,
    simulate_looped,
    simulate_single_stage,
    simulate_two_stage,
)


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--t-box-draw-label", type=float, default=11.15,
                        help="seconds to draw one box and pick its class")
    parser.add_argument("--t-box-draw", type=float, default=7.1,
                        help="seconds to draw one box without labeling")
    parser.add_argument("--t-label-sia", type=float, default=4.05,
                        help="seconds to label one box in the single-image view")
    parser.add_argument("--t-label-mia", type=float, default=1.92,
                        help="seconds to label one box in the clustered view")


def _add_workload_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--images", type=int, default=200)
    parser.add_argument("--boxes-per-image", type=float, default=2.7)


def _model(args: argparse.Namespace) -> AnnotatorModel:
    return AnnotatorModel(
        seconds_draw_and_label=args.t_box_draw_label,
        seconds_draw_only=args.t_box_draw,
        seconds_label_single=args.t_label_sia,
        seconds_label_clustered=args.t_label_mia,
    )


def _parse_seconds_list(raw: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise SystemExit(f"{flag} expects comma-separated numbers, got {raw!r}")
    if not values:
        raise SystemExit(f"{flag} needs at least one value")
    return values


def _emit(reports: list[SimReport], fmt: str) -> None:
    if fmt == "csv":
        sys.stdout.write(reports_to_csv(reports))
    else:
        sys.stdout.write(reports_to_json(reports) + "\n")


def _cmd_simulate_single(args: argparse.Namespace) -> int:
    report = simulate_single_stage(
        _model(args), WorkloadSpec(n_images=args.images, boxes_per_image=args.boxes_per_image)
    )
    _emit([report], args.report)
    for flag in report.flags:
        print(f"note: {flag}", file=sys.stderr)
    return 0


def _cmd_simulate_two_stage(args: argparse.Namespace) -> int:
    model = _model(args)
    workload = WorkloadSpec(n_images=args.images, boxes_per_image=args.boxes_per_image)
    _emit([simulate_single_stage(model, workload), simulate_two_stage(model, workload)], args.report)
    return 0


def _cmd_simulate_loop(args: argparse.Namespace) -> int:
    model = _model(args)
    workload = WorkloadSpec(
        n_images=args.images, boxes_per_image=args.boxes_per_image, iterations=args.iterations
    )
    draw = _parse_seconds_list(args.draw_seconds, "--draw-seconds")
    review = _parse_seconds_list(args.review_seconds, "--review-seconds")
    report = simulate_looped(draw, review, workload, model, seed=args.seed)
    if args.report == "json":
        payload = {
            "single_stage_seconds_per_box": report.single_stage_seconds_per_box,
            "crossover_iteration": report.crossover_iteration,
            "total_minutes": report.total_minutes,
            "iterations": json.loads(reports_to_json(list(report.iterations))),
        }
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    else:
        sys.stdout.write(reports_to_csv(list(report.iterations)))
        print(f"note: crossover_iteration={report.crossover_iteration}", file=sys.stderr)
    return 0


def _cmd_run_pipeline(args: argparse.Namespace) -> int:
    work_dir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="annoflow-run-"))
    if args.mode == "looped":
        draw = _parse_seconds_list(args.draw_seconds, "--draw-seconds")
        review = _parse_seconds_list(args.review_seconds, "--review-seconds")
        config = LoopRunConfig(
            images_per_iteration=args.images,
            iterations=args.iterations,
            boxes_per_image=args.boxes_per_image,
            draw_seconds=draw,
            review_seconds=review,
            single_stage_seconds_per_box=args.t_box_draw_label,
            seed=args.seed,
        )
        result = run_pipeline_end_to_end(work_dir, config)
    else:
        result = run_single_stage_pipeline(
            work_dir,
            n_images=args.images,
            boxes_per_image=args.boxes_per_image,
            seconds_per_box=args.t_box_draw_label,
            seed=args.seed,
        )
    if args.report == "json":
        sys.stdout.write(json.dumps(result.summary(), indent=2) + "\n")
    else:
        reports = []
        for fig in result.per_iteration:
            stage = StageReport(
                strategy=f"pipeline-{args.mode}",
                stage=f"iteration{fig.iteration}",
                seconds=fig.seconds,
                seconds_per_box=fig.seconds_per_box,
            )
            reports.append(
                SimReport(strategy=f"pipeline-{args.mode}", stages=(stage,), boxes=fig.boxes)
            )
        sys.stdout.write(reports_to_csv(reports))
    mismatch = abs(result.total_seconds - result.closed_form_seconds)
    if mismatch > 1e-6 * max(1.0, result.closed_form_seconds):
        print(
            f"warning: measured {result.total_seconds:.6f}s differs from "
            f"closed form {result.closed_form_seconds:.6f}s",
            file=sys.stderr,
        )
        return 1
    if result.integrity_violations:
        print(f"warning: {len(result.integrity_violations)} integrity violations", file=sys.stderr)
        return 1
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .api import serve
    from .backend import Backend
    from .storage import Store

    store = Store()
    backend = Backend(store)
    if args.demo:
        from .labels import LabelTree
        from .model import template_from_obj
        from .sim.endtoend import single_stage_template_obj

        media_dir = Path(tempfile.mkdtemp(prefix="annoflow-demo-"))
        files = []
        for i in range(6):
            rel = f"demo_{i}.jpg"
            (media_dir / rel).write_bytes(f"demo image {i}\n".encode())
            files.append(rel)
        store.register_media_collection("demo", media_dir, files)
        tree = LabelTree(store.new_tree_id(), name="objects", root_name="root")
        group_id = tree.add_node(tree.root_id, "objects")
        for name in ("car", "dog", "person"):
            tree.add_node(group_id, name)
        store.add_label_tree(tree)
        store.add_template(template_from_obj(single_stage_template_obj()))
        print(f"demo assets ready: collection 'demo', tree {tree.tree_id}", file=sys.stderr)
    serve(backend, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annoflow",
        description="Annotation pipeline toolkit: simulations, pipeline runs, API server.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-single", help="closed-form single-stage timing")
    _add_model_flags(p)
    _add_workload_flags(p)
    p.add_argument("--report", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_cmd_simulate_single)

    p = sub.add_parser("simulate-two-stage", help="single-stage vs two-stage timing")
    _add_model_flags(p)
    _add_workload_flags(p)
    p.add_argument("--report", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_cmd_simulate_two_stage)

    p = sub.add_parser("simulate-loop", help="per-iteration two-stage timing with crossover")
    _add_model_flags(p)
    _add_workload_flags(p)
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draw-seconds", default="11.0,5.5",
                   help="comma-separated per-iteration draw cost")
    p.add_argument("--review-seconds", default="2.5,1.6",
                   help="comma-separated per-iteration clustered-label cost")
    p.add_argument("--report", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_cmd_simulate_loop)

    p = sub.add_parser("run-pipeline", help="drive a real pipeline with robot annotators")
    _add_model_flags(p)
    p.add_argument("--mode", choices=("looped", "single"), default="looped")
    p.add_argument("--images", type=int, default=30,
                   help="images per iteration (looped) or in total (single)")
    p.add_argument("--boxes-per-image", type=float, default=2.7)
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--draw-seconds", default="11.0,5.5")
    p.add_argument("--review-seconds", default="2.5,1.6")
    p.add_argument("--workdir", default=None, help="scratch directory (default: temp)")
    p.add_argument("--report", choices=("csv", "json"), default="json")
    p.set_defaults(func=_cmd_run_pipeline)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--demo", action="store_true", help="preload demo media, labels, template")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AnnoflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
