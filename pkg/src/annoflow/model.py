"""Pipeline templates: parsing, validation, topological order, instantiation.

A template is a directed acyclic graph of typed elements. Iteration is never
expressed through graph cycles; it exists only via ``loop`` elements that
name an upstream jump target and an optional iteration bound.
"""

from __future__ import annotations

import heapq
import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import (
    BindingError,
    BindingTypeError,
    InvalidTemplateError,
    MissingBindingError,
    TemplateParseError,
)


class ElementKind(str, Enum):
    DATASOURCE = "datasource"
    SCRIPT = "script"
    ANNO_TASK = "anno_task"
    LOOP = "loop"
    DATA_EXPORT = "data_export"
    VISUALIZATION = "visualization"


SIA = "sia"
MIA = "mia"

ALL_TOOLS = ("point", "line", "polygon", "bbox")
ALL_ACTIONS = ("create", "edit", "delete", "assign_label")


@dataclass(frozen=True)
class DatasourceSpec:
    collection: str | None = None  # bound at instantiation when absent


@dataclass(frozen=True)
class ScriptSpec:
    entrypoint: str | None = None
    arguments: tuple[tuple[str, Any], ...] = ()

    def argument_map(self) -> dict[str, Any]:
        return dict(self.arguments)


@dataclass(frozen=True)
class AnnoTaskSpec:
    interface: str | None = None  # "sia" | "mia"
    allowed_tools: tuple[str, ...] = ALL_TOOLS
    allowed_actions: tuple[str, ...] = ALL_ACTIONS
    proposal_source: str | None = None
    # optional pre-bound parameters; usually supplied at instantiation
    assignees: tuple[str, ...] = ()
    label_tree: str | None = None
    label_subtrees: tuple[str, ...] = ()


@dataclass(frozen=True)
class LoopSpec:
    jump_target: str | None = None
    max_iteration: int | None = None  # None = unbounded, terminated by worker break


@dataclass(frozen=True)
class ElementSpec:
    id: str
    kind: ElementKind
    datasource: DatasourceSpec | None = None
    script: ScriptSpec | None = None
    anno_task: AnnoTaskSpec | None = None
    loop: LoopSpec | None = None


@dataclass(frozen=True)
class PipelineTemplate:
    name: str
    description: str
    elements: tuple[ElementSpec, ...]
    connections: tuple[tuple[str, str], ...]

    def element(self, element_id: str) -> ElementSpec:
        for el in self.elements:
            if el.id == element_id:
                return el
        raise KeyError(element_id)

    def element_ids(self) -> list[str]:
        return [el.id for el in self.elements]

    def predecessors(self) -> dict[str, tuple[str, ...]]:
        preds: dict[str, list[str]] = {el.id: [] for el in self.elements}
        for src, dst in self.connections:
            if dst in preds and src not in preds[dst]:
                preds[dst].append(src)
        return {k: tuple(sorted(v)) for k, v in preds.items()}

    def successors(self) -> dict[str, tuple[str, ...]]:
        succ: dict[str, list[str]] = {el.id: [] for el in self.elements}
        for src, dst in self.connections:
            if src in succ and dst not in succ[src]:
                succ[src].append(dst)
        return {k: tuple(sorted(v)) for k, v in succ.items()}


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    elements: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineInstance:
    """A parameterized, runnable copy of a template.

    Runtime element state is not stored here; it is derived by folding the
    instance's event log (see :mod:`annoflow.engine`). Parameters are bound
    exactly once, at instantiation.
    """

    instance_id: str
    template: PipelineTemplate
    params: Mapping[str, Mapping[str, Any]]
    owner: str
    created_at: datetime


# ---------------------------------------------------------------------------
# parsing

_TOP_LEVEL_KEYS = {"name", "description", "elements", "connections"}

_CONFIG_KEYS = {
    ElementKind.DATASOURCE: {"collection"},
    ElementKind.SCRIPT: {"entrypoint", "arguments"},
    ElementKind.ANNO_TASK: {
        "interface",
        "allowed_tools",
        "allowed_actions",
        "proposal_source",
        "assignees",
        "label_tree",
        "label_subtrees",
    },
    ElementKind.LOOP: {"jump_target", "max_iteration"},
    ElementKind.DATA_EXPORT: set(),
    ElementKind.VISUALIZATION: set(),
}


def parse_template(document: str) -> PipelineTemplate:
    """Parse a UTF-8 JSON template document.

    Only structural problems are errors here (syntax, unknown element kind,
    duplicate ids, unknown keys). Semantic rules such as acyclicity are the
    business of :func:`validate_template`.
    """
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as exc:
        raise TemplateParseError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
            line=exc.lineno,
            column=exc.colno,
        ) from exc
    return template_from_obj(obj)


def template_from_obj(obj: Any) -> PipelineTemplate:
    if not isinstance(obj, dict):
        raise TemplateParseError("template document must be a JSON object")
    unknown = set(obj) - _TOP_LEVEL_KEYS
    if unknown:
        raise TemplateParseError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("name", "elements", "connections"):
        if key not in obj:
            raise TemplateParseError(f"missing top-level key {key!r}")
    name = obj["name"]
    description = obj.get("description", "")
    if not isinstance(name, str) or not isinstance(description, str):
        raise TemplateParseError("name and description must be strings")
    if not isinstance(obj["elements"], list) or not isinstance(obj["connections"], list):
        raise TemplateParseError("elements and connections must be arrays")

    elements: list[ElementSpec] = []
    seen: set[str] = set()
    for raw in obj["elements"]:
        el = _element_from_obj(raw)
        if el.id in seen:
            raise TemplateParseError(f"duplicate element id {el.id!r}")
        seen.add(el.id)
        elements.append(el)

    connections: list[tuple[str, str]] = []
    for raw in obj["connections"]:
        if not (isinstance(raw, (list, tuple)) and len(raw) == 2 and all(isinstance(x, str) for x in raw)):
            raise TemplateParseError(f"connection must be a [from, to] pair of ids, got {raw!r}")
        connections.append((raw[0], raw[1]))

    return PipelineTemplate(
        name=name,
        description=description,
        elements=tuple(elements),
        connections=tuple(connections),
    )


def _element_from_obj(raw: Any) -> ElementSpec:
    if not isinstance(raw, dict):
        raise TemplateParseError(f"element must be an object, got {raw!r}")
    el_id = raw.get("id")
    if not isinstance(el_id, str) or not el_id:
        raise TemplateParseError(f"element is missing a string id: {raw!r}")
    kind_raw = raw.get("kind")
    try:
        kind = ElementKind(kind_raw)
    except ValueError:
        raise TemplateParseError(f"unknown element kind {kind_raw!r} for element {el_id!r}") from None
    config = raw.get("config", {})
    if not isinstance(config, dict):
        raise TemplateParseError(f"config of element {el_id!r} must be an object")
    unknown = set(config) - _CONFIG_KEYS[kind]
    if unknown:
        raise TemplateParseError(f"unknown config keys for element {el_id!r}: {sorted(unknown)}")

    spec = ElementSpec(id=el_id, kind=kind)
    if kind is ElementKind.DATASOURCE:
        spec = ElementSpec(el_id, kind, datasource=DatasourceSpec(collection=config.get("collection")))
    elif kind is ElementKind.SCRIPT:
        args = config.get("arguments", {})
        if not isinstance(args, dict):
            raise TemplateParseError(f"arguments of script {el_id!r} must be an object")
        spec = ElementSpec(
            el_id,
            kind,
            script=ScriptSpec(entrypoint=config.get("entrypoint"), arguments=tuple(sorted(args.items()))),
        )
    elif kind is ElementKind.ANNO_TASK:
        spec = ElementSpec(
            el_id,
            kind,
            anno_task=AnnoTaskSpec(
                interface=config.get("interface"),
                allowed_tools=tuple(config.get("allowed_tools", ALL_TOOLS)),
                allowed_actions=tuple(config.get("allowed_actions", ALL_ACTIONS)),
                proposal_source=config.get("proposal_source"),
                assignees=tuple(config.get("assignees", ())),
                label_tree=config.get("label_tree"),
                label_subtrees=tuple(config.get("label_subtrees", ())),
            ),
        )
    elif kind is ElementKind.LOOP:
        max_it = config.get("max_iteration")
        if max_it is not None and not isinstance(max_it, int):
            raise TemplateParseError(f"max_iteration of loop {el_id!r} must be an integer or null")
        spec = ElementSpec(el_id, kind, loop=LoopSpec(jump_target=config.get("jump_target"), max_iteration=max_it))
    return spec


def serialize_template(t: PipelineTemplate) -> dict:
    """Inverse of :func:`template_from_obj` on semantic content."""
    elements = []
    for el in t.elements:
        config: dict[str, Any] = {}
        if el.kind is ElementKind.DATASOURCE and el.datasource:
            if el.datasource.collection is not None:
                config["collection"] = el.datasource.collection
        elif el.kind is ElementKind.SCRIPT and el.script:
            if el.script.entrypoint is not None:
                config["entrypoint"] = el.script.entrypoint
            if el.script.arguments:
                config["arguments"] = el.script.argument_map()
        elif el.kind is ElementKind.ANNO_TASK and el.anno_task:
            at = el.anno_task
            config["interface"] = at.interface
            config["allowed_tools"] = list(at.allowed_tools)
            config["allowed_actions"] = list(at.allowed_actions)
            if at.proposal_source is not None:
                config["proposal_source"] = at.proposal_source
            if at.assignees:
                config["assignees"] = list(at.assignees)
            if at.label_tree is not None:
                config["label_tree"] = at.label_tree
            if at.label_subtrees:
                config["label_subtrees"] = list(at.label_subtrees)
        elif el.kind is ElementKind.LOOP and el.loop:
            config["jump_target"] = el.loop.jump_target
            if el.loop.max_iteration is not None:
                config["max_iteration"] = el.loop.max_iteration
        elements.append({"id": el.id, "kind": el.kind.value, "config": config})
    return {
        "name": t.name,
        "description": t.description,
        "elements": elements,
        "connections": [list(c) for c in t.connections],
    }


# ---------------------------------------------------------------------------
# validation

def validate_template(t: PipelineTemplate) -> list[Violation]:
    """Check every template invariant; an empty report means valid."""
    report: list[Violation] = []
    ids = t.element_ids()
    id_set = set(ids)

    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        report.append(Violation("duplicate_id", f"duplicate element ids: {dupes}", tuple(dupes)))

    bad_endpoints = sorted(
        {e for conn in t.connections for e in conn if e not in id_set}
    )
    if bad_endpoints:
        report.append(
            Violation(
                "unknown_endpoint",
                f"connections reference unknown elements: {bad_endpoints}",
                tuple(bad_endpoints),
            )
        )

    cyclic = _nodes_on_cycles(id_set, t.connections)
    if cyclic:
        report.append(
            Violation("cycle", f"connection graph contains a cycle through: {sorted(cyclic)}", tuple(sorted(cyclic)))
        )

    preds = t.predecessors()
    sources = [
        el.id
        for el in t.elements
        if el.kind is ElementKind.DATASOURCE and not preds.get(el.id)
    ]
    if not sources:
        report.append(
            Violation("no_datasource", "template needs at least one datasource with no incoming connections")
        )

    for el in t.elements:
        if el.kind is ElementKind.ANNO_TASK:
            interface = el.anno_task.interface if el.anno_task else None
            if interface not in (SIA, MIA):
                report.append(
                    Violation(
                        "bad_interface",
                        f"annotation task {el.id!r} must name interface '{SIA}' or '{MIA}', got {interface!r}",
                        (el.id,),
                    )
                )
            at = el.anno_task
            if at is not None:
                if not set(at.allowed_tools) <= set(ALL_TOOLS):
                    report.append(Violation("bad_tools", f"task {el.id!r} has unknown tools", (el.id,)))
                if not at.allowed_actions or not set(at.allowed_actions) <= set(ALL_ACTIONS):
                    report.append(
                        Violation("bad_actions", f"task {el.id!r} needs a nonempty subset of known actions", (el.id,))
                    )
                elif set(at.allowed_actions) == {"assign_label"} and at.proposal_source is None:
                    report.append(
                        Violation(
                            "label_only_without_proposals",
                            f"task {el.id!r} permits only label assignment but names no proposal source",
                            (el.id,),
                        )
                    )
        elif el.kind is ElementKind.SCRIPT:
            if not el.script or not el.script.entrypoint:
                report.append(Violation("missing_entrypoint", f"script {el.id!r} declares no entrypoint", (el.id,)))
        elif el.kind is ElementKind.LOOP:
            report.extend(_validate_loop(t, el, id_set, cyclic))

    return report


def _validate_loop(
    t: PipelineTemplate, el: ElementSpec, id_set: set[str], cyclic: set[str]
) -> list[Violation]:
    out: list[Violation] = []
    loop = el.loop or LoopSpec()
    if loop.max_iteration is not None and loop.max_iteration <= 0:
        out.append(Violation("bad_max_iteration", f"loop {el.id!r} max_iteration must be positive", (el.id,)))
    target = loop.jump_target
    if target is None:
        out.append(Violation("missing_jump_target", f"loop {el.id!r} declares no jump target", (el.id,)))
        return out
    if target not in id_set:
        out.append(Violation("unknown_jump_target", f"loop {el.id!r} jump target {target!r} does not exist", (el.id,)))
        return out
    if cyclic:
        return out  # ancestry is undefined on a cyclic graph
    ancestors = _ancestors(el.id, t.connections)
    if target not in ancestors:
        out.append(
            Violation(
                "jump_target_not_ancestor",
                f"loop {el.id!r} jump target {target!r} is not an ancestor of the loop",
                (el.id, target),
            )
        )
        return out
    scope = loop_scope(t, el.id)
    nested = sorted(
        other.id for other in t.elements if other.kind is ElementKind.LOOP and other.id != el.id and other.id in scope
    )
    if nested:
        out.append(
            Violation(
                "nested_loop",
                f"loop {el.id!r} contains loop elements {nested} in its scope; nesting is unsupported",
                (el.id, *nested),
            )
        )
    return out


def _nodes_on_cycles(ids: set[str], connections: Iterable[tuple[str, str]]) -> set[str]:
    # Tarjan-free approach: iteratively strip nodes with zero in-degree; whatever
    # survives lies on, or downstream-and-upstream of, a cycle. Then keep only
    # nodes that can reach themselves.
    adj: dict[str, set[str]] = {i: set() for i in ids}
    for src, dst in connections:
        if src in ids and dst in ids:
            adj[src].add(dst)

    def reaches(start: str, goal: str) -> bool:
        stack, seen = [start], set()
        while stack:
            n = stack.pop()
            for m in adj[n]:
                if m == goal:
                    return True
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return False

    return {n for n in ids if reaches(n, n)}


def ancestors(t: PipelineTemplate, element_id: str) -> frozenset[str]:
    """Every element from which a connection path reaches the given element."""
    return frozenset(_ancestors(element_id, t.connections))


def _ancestors(node: str, connections: Iterable[tuple[str, str]]) -> set[str]:
    back: dict[str, set[str]] = {}
    for src, dst in connections:
        back.setdefault(dst, set()).add(src)
    seen: set[str] = set()
    stack = list(back.get(node, ()))
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        stack.extend(back.get(n, ()))
    return seen


def loop_scope(t: PipelineTemplate, loop_id: str) -> frozenset[str]:
    """Elements on a path from the loop's jump target to the loop, inclusive.

    These are the elements reset to PENDING when the loop iterates.
    """
    el = t.element(loop_id)
    if el.kind is not ElementKind.LOOP or not el.loop or el.loop.jump_target is None:
        raise InvalidTemplateError(f"element {loop_id!r} is not a loop with a jump target")
    target = el.loop.jump_target
    ancestors = _ancestors(loop_id, t.connections) | {loop_id}
    descendants = _descendants(target, t.connections) | {target}
    return frozenset(ancestors & descendants)


def _descendants(node: str, connections: Iterable[tuple[str, str]]) -> set[str]:
    fwd: dict[str, set[str]] = {}
    for src, dst in connections:
        fwd.setdefault(src, set()).add(dst)
    seen: set[str] = set()
    stack = list(fwd.get(node, ()))
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        stack.extend(fwd.get(n, ()))
    return seen


def scope_of_elements(t: PipelineTemplate) -> dict[str, str | None]:
    """Map each element id to the id of the loop whose scope contains it."""
    scopes: dict[str, str | None] = {el.id: None for el in t.elements}
    for el in t.elements:
        if el.kind is ElementKind.LOOP and el.loop and el.loop.jump_target in {e.id for e in t.elements}:
            try:
                members = loop_scope(t, el.id)
            except InvalidTemplateError:
                continue
            for m in members:
                scopes[m] = el.id
    return scopes


# ---------------------------------------------------------------------------
# ordering and instantiation

def topological_order(t: PipelineTemplate) -> list[str]:
    """Deterministic topological order; ties broken by lexicographic id."""
    violations = [v for v in validate_template(t) if v.code == "cycle"]
    if violations:
        raise InvalidTemplateError("cannot order a cyclic template", violations)
    indeg: dict[str, int] = {el.id: 0 for el in t.elements}
    adj: dict[str, set[str]] = {el.id: set() for el in t.elements}
    for src, dst in set(t.connections):
        if src in adj and dst in indeg and dst not in adj[src]:
            adj[src].add(dst)
            indeg[dst] += 1
    ready = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in sorted(adj[n]):
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    if len(order) != len(indeg):
        raise InvalidTemplateError("cannot order a cyclic template")
    return order


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


def instantiate(
    t: PipelineTemplate,
    bindings: Mapping[str, Mapping[str, Any]],
    owner: str = "anonymous",
    instance_id: str | None = None,
    created_at: datetime | None = None,
) -> PipelineInstance:
    """Bind parameters and produce a runnable instance.

    ``bindings`` maps element ids to parameter maps. Datasources require a
    ``collection``; annotation tasks require ``assignees``, ``label_tree``
    and ``label_subtrees`` unless the template pre-binds them.
    """
    violations = validate_template(t)
    if violations:
        raise InvalidTemplateError(
            f"template {t.name!r} has {len(violations)} violation(s); fix before instantiating", violations
        )
    known = set(t.element_ids())
    for el_id in bindings:
        if el_id not in known:
            raise BindingError(f"binding references unknown element {el_id!r}")

    params: dict[str, dict[str, Any]] = {}
    for el in t.elements:
        supplied = dict(bindings.get(el.id, {}))
        resolved: dict[str, Any] = {}
        if el.kind is ElementKind.DATASOURCE:
            collection = supplied.pop("collection", None) or (el.datasource.collection if el.datasource else None)
            if collection is None:
                raise MissingBindingError(el.id, "collection")
            if not isinstance(collection, str):
                raise BindingTypeError(f"collection for {el.id!r} must be a string")
            resolved["collection"] = collection
        elif el.kind is ElementKind.ANNO_TASK:
            at = el.anno_task or AnnoTaskSpec()
            assignees = supplied.pop("assignees", None) or list(at.assignees)
            label_tree = supplied.pop("label_tree", None) or at.label_tree
            label_subtrees = supplied.pop("label_subtrees", None) or list(at.label_subtrees)
            if not assignees:
                raise MissingBindingError(el.id, "assignees")
            if not isinstance(assignees, (list, tuple)) or not all(isinstance(a, str) for a in assignees):
                raise BindingTypeError(f"assignees for {el.id!r} must be a list of annotator ids")
            if label_tree is None:
                raise MissingBindingError(el.id, "label_tree")
            if not isinstance(label_tree, str):
                raise BindingTypeError(f"label_tree for {el.id!r} must be a tree id string")
            if not label_subtrees:
                raise MissingBindingError(el.id, "label_subtrees")
            if not isinstance(label_subtrees, (list, tuple)) or not all(isinstance(s, str) for s in label_subtrees):
                raise BindingTypeError(f"label_subtrees for {el.id!r} must be a list of node ids")
            resolved.update(
                assignees=list(assignees), label_tree=label_tree, label_subtrees=list(label_subtrees)
            )
        elif el.kind is ElementKind.SCRIPT:
            args = dict(el.script.argument_map()) if el.script else {}
            extra = supplied.pop("arguments", {})
            if not isinstance(extra, dict):
                raise BindingTypeError(f"arguments for {el.id!r} must be an object")
            args.update(extra)
            resolved["arguments"] = args
        if supplied:
            raise BindingError(f"unknown parameters for element {el.id!r}: {sorted(supplied)}")
        params[el.id] = resolved

    return PipelineInstance(
        instance_id=instance_id or f"inst-{uuid.uuid4().hex[:12]}",
        template=t,
        params=params,
        owner=owner,
        created_at=created_at or _utc_now(),
    )
