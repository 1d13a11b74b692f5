"""Shared builders for instance-level tests."""
from __future__ import annotations

import random

from annoflow.model import ElementKind, instantiate, template_from_obj

DUMMY_TASK_BINDING = {
    "assignees": ["alice", "bob"],
    "label_tree": "tree-001",
    "label_subtrees": ["tree-001-l0001"],
}


def default_bindings(template):
    """Minimal legal bindings: a collection per datasource, dummies per task."""
    bindings = {}
    for el in template.elements:
        if el.kind is ElementKind.DATASOURCE:
            bindings[el.id] = {"collection": "col-1"}
        elif el.kind is ElementKind.ANNO_TASK:
            bindings[el.id] = dict(DUMMY_TASK_BINDING)
    return bindings


def make_instance(obj, instance_id="inst-t01"):
    template = template_from_obj(obj)
    return instantiate(template, default_bindings(template), instance_id=instance_id)


def chain_obj():
    return {
        "name": "chain",
        "elements": [
            {"id": "ds", "kind": "datasource", "config": {}},
            {"id": "s1", "kind": "script", "config": {"entrypoint": "a.py"}},
            {"id": "task", "kind": "anno_task", "config": {"interface": "sia"}},
            {"id": "s2", "kind": "script", "config": {"entrypoint": "b.py"}},
            {"id": "out", "kind": "data_export", "config": {}},
        ],
        "connections": [["ds", "s1"], ["s1", "task"], ["task", "s2"], ["s2", "out"]],
    }


def looped_obj(max_iteration=3, bounded=True):
    config = {"jump_target": "gen"}
    if bounded:
        config["max_iteration"] = max_iteration
    return {
        "name": "looped",
        "elements": [
            {"id": "ds", "kind": "datasource", "config": {}},
            {"id": "gen", "kind": "script", "config": {"entrypoint": "gen.py"}},
            {"id": "task", "kind": "anno_task", "config": {"interface": "sia"}},
            {"id": "train", "kind": "script", "config": {"entrypoint": "train.py"}},
            {"id": "again", "kind": "loop", "config": config},
            {"id": "out", "kind": "data_export", "config": {}},
        ],
        "connections": [
            ["ds", "gen"],
            ["gen", "task"],
            ["task", "train"],
            ["train", "again"],
            ["again", "out"],
        ],
    }


def random_pipeline_obj(rng: random.Random, max_elements: int = 12):
    """A random valid template: chain backbone, extra forward edges, and
    sometimes one loop whose jump target sits earlier on the backbone."""
    n = rng.randint(3, max_elements - 1)
    ids = [f"n{i:02d}" for i in range(n)]
    kinds = ["datasource"]
    for _ in ids[1:]:
        kinds.append(
            rng.choice(["script", "script", "anno_task", "data_export", "visualization"])
        )

    elements = []
    for el_id, kind in zip(ids, kinds):
        config = {}
        if kind == "script":
            config = {"entrypoint": f"{el_id}.py"}
        elif kind == "anno_task":
            config = {"interface": rng.choice(["sia", "mia"])}
        elements.append({"id": el_id, "kind": kind, "config": config})

    connections = [[ids[i], ids[i + 1]] for i in range(n - 1)]
    for j in range(2, n):
        for i in range(j - 1):
            if rng.random() < 0.15:
                connections.append([ids[i], ids[j]])

    has_loop = rng.random() < 0.6
    loop_bound = None
    if has_loop:
        anchor = rng.randint(1, n - 1)  # loop hangs off this backbone node
        target = rng.randint(1, anchor)  # jump target at or before the anchor
        loop_bound = rng.choice([1, 2, 3, None])
        elements.append(
            {
                "id": "zloop",
                "kind": "loop",
                "config": (
                    {"jump_target": ids[target], "max_iteration": loop_bound}
                    if loop_bound is not None
                    else {"jump_target": ids[target]}
                ),
            }
        )
        connections.append([ids[anchor], "zloop"])
        if anchor < n - 1:
            connections.append(["zloop", ids[anchor + 1]])
    return {
        "name": f"random-{rng.randint(0, 99999)}",
        "elements": elements,
        "connections": connections,
    }
