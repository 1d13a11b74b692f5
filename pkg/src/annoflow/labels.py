"""Hierarchical label trees and subtree selection for annotation tasks."""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .errors import ConflictError, DuplicateError, InvalidTemplateError, UnknownEntityError


@dataclass
class LabelNode:
    label_id: str
    name: str
    parent_id: str | None = None
    description: str = ""
    external_ref: str = ""
    children: list[str] = field(default_factory=list)


class LabelTree:
    """A single rooted hierarchy of labels.

    Edits serialize through an internal lock; reads return snapshots. Sibling
    names must be unique case-insensitively, ids unique across the tree.
    """

    def __init__(self, tree_id: str, name: str, root_name: str = "root") -> None:
        self.tree_id = tree_id
        self.name = name
        self._lock = threading.RLock()
        self._counter = 0
        self._nodes: dict[str, LabelNode] = {}
        self.root_id = self._new_id()
        self._nodes[self.root_id] = LabelNode(self.root_id, root_name)

    def _new_id(self) -> str:
        self._counter += 1
        return f"{self.tree_id}-l{self._counter:04d}"

    # -- reads ------------------------------------------------------------

    def node(self, label_id: str) -> LabelNode:
        try:
            return self._nodes[label_id]
        except KeyError:
            raise UnknownEntityError(f"no label {label_id!r} in tree {self.tree_id!r}") from None

    def __contains__(self, label_id: str) -> bool:
        return label_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def nodes(self) -> list[LabelNode]:
        with self._lock:
            return [self._nodes[i] for i in self._preorder(self.root_id)]

    def name_of(self, label_id: str) -> str:
        return self.node(label_id).name

    def find_by_name(self, name: str) -> list[str]:
        lowered = name.lower()
        with self._lock:
            return [i for i in self._preorder(self.root_id) if self._nodes[i].name.lower() == lowered]

    def _preorder(self, start: str) -> list[str]:
        out: list[str] = []
        stack = [start]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self._nodes[nid].children))
        return out

    def subtree_ids(self, node_id: str) -> frozenset[str]:
        with self._lock:
            self.node(node_id)
            return frozenset(self._preorder(node_id))

    def is_ancestor(self, maybe_ancestor: str, node_id: str) -> bool:
        with self._lock:
            cur = self.node(node_id).parent_id
            while cur is not None:
                if cur == maybe_ancestor:
                    return True
                cur = self._nodes[cur].parent_id
            return False

    # -- edits ------------------------------------------------------------

    def add_node(
        self,
        parent_id: str,
        name: str,
        description: str = "",
        external_ref: str = "",
        label_id: str | None = None,
    ) -> str:
        if not name:
            raise DuplicateError("label name must be nonempty")
        with self._lock:
            parent = self.node(parent_id)
            lowered = name.lower()
            for sibling_id in parent.children:
                if self._nodes[sibling_id].name.lower() == lowered:
                    raise DuplicateError(
                        f"label {name!r} already exists under {parent.name!r} in tree {self.tree_id!r}"
                    )
            if label_id is None:
                label_id = self._new_id()
            elif label_id in self._nodes:
                raise DuplicateError(f"label id {label_id!r} already used in tree {self.tree_id!r}")
            self._nodes[label_id] = LabelNode(
                label_id, name, parent_id=parent_id, description=description, external_ref=external_ref
            )
            parent.children.append(label_id)
            return label_id

    def delete_subtree(
        self, node_id: str, references: Callable[[str], list[str]] | None = None
    ) -> frozenset[str]:
        """Atomically remove a node and its descendants.

        ``references`` reports external usages of a label id (annotations,
        task bindings); any usage blocks the whole deletion.
        """
        with self._lock:
            if node_id == self.root_id:
                raise ConflictError(f"cannot delete the root of tree {self.tree_id!r}")
            node = self.node(node_id)
            doomed = self._preorder(node_id)
            if references is not None:
                blocking = {i: references(i) for i in doomed}
                blocking = {i: refs for i, refs in blocking.items() if refs}
                if blocking:
                    details = "; ".join(f"{i} used by {refs}" for i, refs in sorted(blocking.items()))
                    raise ConflictError(f"labels still referenced: {details}")
            for i in doomed:
                del self._nodes[i]
            self._nodes[node.parent_id].children.remove(node_id)
            return frozenset(doomed)

    # -- selection --------------------------------------------------------

    def select_subtrees(self, node_ids: Iterable[str]) -> frozenset[str]:
        """Flatten a composition of subtrees into the assignable label set.

        Internal nodes count as assignable labels. Selected roots must not
        be nested inside one another, otherwise membership would be counted
        twice and the selection is almost certainly a mistake.
        """
        ids = list(node_ids)
        with self._lock:
            for nid in ids:
                self.node(nid)
            for a in ids:
                for b in ids:
                    if a != b and self.is_ancestor(a, b):
                        raise ConflictError(f"selected node {b!r} lies inside selected subtree {a!r}")
            out: set[str] = set()
            for nid in ids:
                out.update(self._preorder(nid))
            return frozenset(out)


# ---------------------------------------------------------------------------
# CSV import/export

_CSV_COLUMNS = ["label_id", "parent_id", "name", "description", "external_ref"]


def export_tree_csv(tree: LabelTree) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for node in tree.nodes():
        writer.writerow([node.label_id, node.parent_id or "", node.name, node.description, node.external_ref])
    return buf.getvalue()


def import_tree_csv(document: str, tree_id: str, tree_name: str) -> LabelTree:
    """Build a tree from its CSV form; inverse of :func:`export_tree_csv`."""
    reader = csv.reader(io.StringIO(document))
    rows = list(reader)
    if not rows or rows[0] != _CSV_COLUMNS:
        raise InvalidTemplateError(f"label CSV must start with header {','.join(_CSV_COLUMNS)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(_CSV_COLUMNS):
            raise InvalidTemplateError(f"label CSV line {lineno}: expected {len(_CSV_COLUMNS)} fields, got {len(row)}")
        records.append(dict(zip(_CSV_COLUMNS, row)))

    roots = [r for r in records if r["parent_id"] == ""]
    if len(roots) != 1:
        raise InvalidTemplateError(f"label CSV must contain exactly one root row, found {len(roots)}")
    ids = [r["label_id"] for r in records]
    if len(set(ids)) != len(ids):
        raise InvalidTemplateError("label CSV contains duplicate label ids")

    tree = LabelTree(tree_id, tree_name, root_name=roots[0]["name"])
    # preserve the file's ids so exports round-trip byte for byte
    tree._nodes.clear()
    root = roots[0]
    tree.root_id = root["label_id"]
    tree._nodes[tree.root_id] = LabelNode(
        tree.root_id, root["name"], description=root["description"], external_ref=root["external_ref"]
    )
    pending = [r for r in records if r is not root]
    while pending:
        progressed = False
        remaining = []
        for r in pending:
            if r["parent_id"] in tree._nodes:
                tree.add_node(
                    r["parent_id"],
                    r["name"],
                    description=r["description"],
                    external_ref=r["external_ref"],
                    label_id=r["label_id"],
                )
                progressed = True
            else:
                remaining.append(r)
        if not progressed:
            orphans = sorted(r["label_id"] for r in remaining)
            raise InvalidTemplateError(f"label CSV rows unreachable from root: {orphans}")
        pending = remaining
    tree._counter = len(tree._nodes)
    return tree


def build_tree(
    tree_id: str, name: str, root_name: str, children: Mapping[str, Iterable[str] | Mapping] | Iterable[str] = ()
) -> LabelTree:
    """Convenience constructor from a nested name mapping.

    ``children`` maps a child name to its own children (mapping for further
    nesting, iterable of leaf names otherwise).
    """
    tree = LabelTree(tree_id, name, root_name=root_name)

    def grow(parent_id: str, spec) -> None:
        if isinstance(spec, Mapping):
            for child_name, grandchildren in spec.items():
                cid = tree.add_node(parent_id, child_name)
                grow(cid, grandchildren)
        else:
            for child_name in spec:
                tree.add_node(parent_id, child_name)

    grow(tree.root_id, children)
    return tree
