"""HTTP facade over the backend.

Every handler is a thin adapter: it parses the request, calls the same
backend entry point that in-process callers use, and serializes the result.
Identity travels as headers (X-Annotator, X-Role); template and instance
management require the designer role.
"""

from __future__ import annotations

import mimetypes
from dataclasses import dataclass
from typing import Any

from fastapi import Depends, FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .backend import Backend
from .errors import (
    ActionNotAllowedError,
    AnnoflowError,
    BindingError,
    ConflictError,
    DuplicateError,
    EvaluationError,
    GeometryError,
    InvalidAnnotationError,
    InvalidTemplateError,
    LabelScopeError,
    LeaseError,
    LogCorruptionError,
    NotAssignedError,
    SessionError,
    StateError,
    StorageError,
    TemplateParseError,
    UnknownEntityError,
)
from .labels import LabelTree, export_tree_csv, import_tree_csv
from .model import serialize_template, template_from_obj, validate_template

_STATUS_BY_ERROR: list[tuple[type[AnnoflowError], int]] = [
    (SessionError, 401),
    (NotAssignedError, 403),
    (ActionNotAllowedError, 403),
    (UnknownEntityError, 404),
    (LeaseError, 409),
    (ConflictError, 409),
    (DuplicateError, 409),
    (StateError, 409),
    (LabelScopeError, 400),
    (GeometryError, 400),
    (InvalidAnnotationError, 400),
    (TemplateParseError, 400),
    (InvalidTemplateError, 400),
    (BindingError, 400),
    (EvaluationError, 400),
    (LogCorruptionError, 500),
    (StorageError, 500),
]


def _status_for(exc: AnnoflowError) -> int:
    for klass, status in _STATUS_BY_ERROR:
        if isinstance(exc, klass):
            return status
    return 500


@dataclass(frozen=True)
class Session:
    annotator_id: str
    role: str  # "annotator" | "designer"


def get_session(
    x_annotator: str | None = Header(default=None),
    x_role: str = Header(default="annotator"),
) -> Session | None:
    if x_annotator is None:
        return None
    if x_role not in ("annotator", "designer"):
        raise SessionError(f"unknown role {x_role!r}")
    return Session(annotator_id=x_annotator, role=x_role)


def require_session(session: Session | None = Depends(get_session)) -> Session:
    if session is None:
        raise SessionError("this call requires an X-Annotator header")
    return session


def require_designer(session: Session = Depends(require_session)) -> Session:
    if session.role != "designer":
        raise SessionError("this call requires the designer role (X-Role: designer)")
    return session


class TemplateBody(BaseModel):
    template: dict[str, Any]


class InstantiateBody(BaseModel):
    bindings: dict[str, dict[str, Any]] = Field(default_factory=dict)


class SubmitSiaBody(BaseModel):
    lease_id: str
    operations: list[dict[str, Any]] = Field(default_factory=list)
    idempotency_key: str | None = None


class ReviewBody(BaseModel):
    lease_id: str
    removed: list[str] = Field(default_factory=list)
    label: str | None = None


class TreeBody(BaseModel):
    name: str
    root_name: str = "root"
    csv: str | None = None


class NodeBody(BaseModel):
    parent_id: str
    name: str
    description: str = ""
    external_ref: str = ""


def create_app(backend: Backend) -> FastAPI:
    app = FastAPI(title="annoflow", docs_url=None, redoc_url=None)
    store = backend.store

    @app.exception_handler(AnnoflowError)
    async def _domain_error(_req: Request, exc: AnnoflowError) -> JSONResponse:
        return JSONResponse(status_code=_status_for(exc), content={"code": exc.code, "message": str(exc)})

    # -- pipelines ---------------------------------------------------------

    @app.get("/pipelines")
    def list_pipelines() -> dict[str, Any]:
        return {
            "templates": [
                {
                    "name": t.name,
                    "description": t.description,
                    "elements": len(t.elements),
                    "violations": len(validate_template(t)),
                }
                for t in store.templates.values()
            ],
            "instances": [
                {"instance_id": i.instance_id, "template": i.template.name, "owner": i.owner}
                for i in store.instances.values()
            ],
        }

    @app.post("/pipelines", status_code=201)
    def register_pipeline(body: TemplateBody, _s: Session = Depends(require_designer)) -> dict[str, Any]:
        template = template_from_obj(body.template)
        store.add_template(template)
        return {"name": template.name, "violations": [v.__dict__ for v in validate_template(template)]}

    @app.get("/pipelines/{name}")
    def pipeline_detail(name: str) -> dict[str, Any]:
        template = store.get_template(name)
        return {
            "template": serialize_template(template),
            "violations": [v.__dict__ for v in validate_template(template)],
        }

    @app.post("/pipelines/{name}/instantiate", status_code=201)
    def instantiate_pipeline(
        name: str, body: InstantiateBody, session: Session = Depends(require_designer)
    ) -> dict[str, Any]:
        instance = backend.instantiate(name, body.bindings, owner=session.annotator_id)
        return backend.instance_detail(instance.instance_id)

    @app.get("/instances/{instance_id}")
    def instance_detail(instance_id: str) -> dict[str, Any]:
        return backend.instance_detail(instance_id)

    @app.post("/instances/{instance_id}/tick")
    def tick_instance(instance_id: str, _s: Session = Depends(require_designer)) -> dict[str, Any]:
        return backend.advance(instance_id)

    @app.get("/instances/{instance_id}/events")
    def instance_events(instance_id: str) -> dict[str, Any]:
        from .engine import event_to_obj

        engine = backend.engine_for(instance_id)
        return {"events": [event_to_obj(e) for e in engine.events]}

    @app.get("/instances/{instance_id}/integrity")
    def instance_integrity(instance_id: str) -> dict[str, Any]:
        report = store.snapshot_and_replay_integrity_check(instance_id)
        return {"violations": [v.__dict__ for v in report]}

    # -- tasks ---------------------------------------------------------------

    @app.get("/tasks")
    def list_tasks(session: Session | None = Depends(get_session)) -> dict[str, Any]:
        tasks = []
        for task in store.tasks.values():
            if session is not None and session.role != "designer" and session.annotator_id not in task.assignees:
                continue
            tasks.append(task.progress())
        return {"tasks": tasks}

    @app.get("/tasks/{task_id}")
    def task_detail(task_id: str) -> dict[str, Any]:
        task = store.get_task(task_id)
        detail = task.progress()
        detail["config"] = {
            "allowed_tools": sorted(task.config.allowed_tools),
            "allowed_actions": sorted(task.config.allowed_actions),
            "proposal_source": task.config.proposal_source,
        }
        detail["assignees"] = list(task.assignees)
        detail["labels"] = [
            {"label_id": i, "name": task.label_names.get(i, i)} for i in sorted(task.assignable_labels)
        ]
        return detail

    @app.post("/tasks/{task_id}/next_item")
    def next_item(task_id: str, session: Session = Depends(require_session)) -> dict[str, Any]:
        payload = backend.next_item(task_id, session.annotator_id)
        if payload is None:
            return {"status": "none_remaining"}
        payload["status"] = "leased"
        return payload

    @app.post("/tasks/{task_id}/submit_sia")
    def submit_sia(task_id: str, body: SubmitSiaBody, session: Session = Depends(require_session)) -> dict[str, Any]:
        return backend.submit_sia(
            task_id,
            session.annotator_id,
            body.lease_id,
            body.operations,
            idempotency_key=body.idempotency_key,
        )

    @app.get("/tasks/{task_id}/clusters/next")
    def next_cluster(task_id: str, session: Session = Depends(require_session)) -> dict[str, Any]:
        task = store.get_task(task_id)
        if task.interface != "mia":
            raise StateError(f"task {task_id!r} is not a cluster-review task")
        payload = backend.next_item(task_id, session.annotator_id)
        if payload is None:
            return {"status": "none_remaining"}
        payload["status"] = "leased"
        return payload

    @app.post("/clusters/{cluster_id}/review")
    def review_cluster(
        cluster_id: str, body: ReviewBody, session: Session = Depends(require_session)
    ) -> dict[str, Any]:
        return backend.review_cluster(
            cluster_id, session.annotator_id, body.lease_id, body.removed, body.label
        )

    # -- label trees ---------------------------------------------------------

    @app.get("/label_trees")
    def list_trees() -> dict[str, Any]:
        return {
            "trees": [
                {"tree_id": t.tree_id, "name": t.name, "nodes": len(t)} for t in store.label_trees.values()
            ]
        }

    @app.post("/label_trees", status_code=201)
    def create_tree(body: TreeBody, _s: Session = Depends(require_designer)) -> dict[str, Any]:
        tree_id = store.new_tree_id()
        if body.csv is not None:
            tree = import_tree_csv(body.csv, tree_id, body.name)
        else:
            tree = LabelTree(tree_id, body.name, root_name=body.root_name)
        store.add_label_tree(tree)
        return _tree_detail(tree)

    def _tree_detail(tree: LabelTree) -> dict[str, Any]:
        return {
            "tree_id": tree.tree_id,
            "name": tree.name,
            "root_id": tree.root_id,
            "nodes": [
                {
                    "label_id": n.label_id,
                    "parent_id": n.parent_id,
                    "name": n.name,
                    "description": n.description,
                    "external_ref": n.external_ref,
                }
                for n in tree.nodes()
            ],
        }

    @app.get("/label_trees/{tree_id}")
    def tree_detail(tree_id: str) -> dict[str, Any]:
        return _tree_detail(store.get_label_tree(tree_id))

    @app.post("/label_trees/{tree_id}/nodes", status_code=201)
    def add_node(tree_id: str, body: NodeBody, _s: Session = Depends(require_designer)) -> dict[str, Any]:
        tree = store.get_label_tree(tree_id)
        label_id = tree.add_node(
            body.parent_id, body.name, description=body.description, external_ref=body.external_ref
        )
        return {"label_id": label_id}

    @app.delete("/label_trees/{tree_id}/nodes/{node_id}")
    def delete_node(tree_id: str, node_id: str, _s: Session = Depends(require_designer)) -> dict[str, Any]:
        tree = store.get_label_tree(tree_id)
        removed = tree.delete_subtree(node_id, references=store.label_references)
        return {"removed": sorted(removed)}

    @app.get("/label_trees/{tree_id}/export")
    def export_tree(tree_id: str) -> Response:
        tree = store.get_label_tree(tree_id)
        return Response(content=export_tree_csv(tree), media_type="text/csv")

    # -- files ---------------------------------------------------------------

    @app.get("/exports/{export_id}")
    def get_export(export_id: str) -> Response:
        record = store.get_export(export_id)
        media_type = "text/csv" if record.kind == "csv" else "application/octet-stream"
        return Response(
            content=record.content,
            media_type=media_type,
            headers={"Content-Disposition": f'attachment; filename="{record.name}"'},
        )

    @app.get("/media/{collection}/{path:path}")
    def get_media(collection: str, path: str) -> Response:
        target = store.media_path(collection, path)
        media_type = mimetypes.guess_type(path)[0] or "application/octet-stream"
        return Response(content=target.read_bytes(), media_type=media_type)

    return app


def serve(backend: Backend, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Blocking server entry point used by the CLI."""
    import uvicorn

    uvicorn.run(create_app(backend), host=host, port=port, log_level="warning")
