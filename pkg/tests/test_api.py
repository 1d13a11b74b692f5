"""HTTP service layer, driven end to end through an in-process test client."""
from __future__ import annotations

from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from annoflow.annotations import AnnoSource, BBox, TwoDAnno
from annoflow.api import create_app
from annoflow.backend import Backend
from annoflow.clock import VirtualClock
from annoflow.labels import build_tree, export_tree_csv
from annoflow.storage import CSV_HEADER, Store

DESIGNER = {"X-Annotator": "dana", "X-Role": "designer"}
ALICE = {"X-Annotator": "alice"}
BOB = {"X-Annotator": "bob"}
MALLORY = {"X-Annotator": "mallory"}

# the same tiny client library the protocol tests compile into stub workers
PRELUDE = """\
import json, sys

def recv():
    line = sys.stdin.readline()
    if not line:
        sys.exit(3)
    return json.loads(line)

def send(obj):
    sys.stdout.write(json.dumps(obj) + "\\n")
    sys.stdout.flush()

HELLO = recv()["hello"]
_n = 0

def call(method, params=None):
    global _n
    _n += 1
    send({"id": _n, "method": method, "params": params or {}})
    while True:
        msg = recv()
        if msg.get("id") == _n:
            return msg
"""

# attaches one work item per upstream image, with a single seed box on the first
FEED_BODY = """\
media = call("get_media")["result"]["media"]
items = []
for i, m in enumerate(media):
    proposals = []
    if i == 0:
        proposals.append({"kind": "bbox", "coords": [0.5, 0.5, 0.2, 0.2], "score": 0.9, "label": "dog"})
    items.append({"image_ref": m["ref"], "proposals": proposals})
call("request_annotations", {"items": items})
call("finish", {"status": "success", "message": "items attached"})
"""

# groups every input annotation into one cluster proposed as "dog"
GROUP_BODY = """\
annos = call("get_input_annotations")["result"]["annotations"]
assignments = {a["anno_id"]: "g0" for a in annos}
call("request_annotations", {"clusters": {
    "assignments": assignments,
    "proposed_labels": {"g0": "dog"},
    "member_kind": "annotation",
}})
call("finish", {"status": "success"})
"""


def write_worker(tmp_path, name: str, body: str) -> str:
    path = tmp_path / name
    path.write_text(PRELUDE + body)
    return str(path)


def sia_template_obj(feed_path: str) -> dict:
    return {
        "name": "boxes",
        "description": "box drawing over a small image set",
        "elements": [
            {"id": "images", "kind": "datasource", "config": {}},
            {"id": "feed", "kind": "script", "config": {"entrypoint": feed_path}},
            {"id": "draw", "kind": "anno_task", "config": {"interface": "sia"}},
            {"id": "out", "kind": "data_export", "config": {}},
        ],
        "connections": [["images", "feed"], ["feed", "draw"], ["draw", "out"]],
    }


def mia_template_obj(group_path: str) -> dict:
    return {
        "name": "triage",
        "description": "cluster review over pre-produced boxes",
        "elements": [
            {"id": "images", "kind": "datasource", "config": {}},
            {"id": "group", "kind": "script", "config": {"entrypoint": group_path}},
            {"id": "review", "kind": "anno_task", "config": {"interface": "mia"}},
            {"id": "out", "kind": "data_export", "config": {}},
        ],
        "connections": [["images", "group"], ["group", "review"], ["review", "out"]],
    }


@pytest.fixture
def ctx(tmp_path):
    clock = VirtualClock()
    store = Store(clock=clock)
    backend = Backend(store=store, clock=clock, worker_timeout=30.0)
    tree = build_tree("tree-001", "animals", "animal", {"mammal": ["dog", "cat"]})
    store.add_label_tree(tree)
    by_name = {n.name: n.label_id for n in tree.nodes()}

    media_root = tmp_path / "media"
    media_root.mkdir()
    (media_root / "a.jpg").write_bytes(b"JPEG-A")
    (media_root / "b.jpg").write_bytes(b"JPEG-B")
    store.register_media_collection("col-1", media_root, ["a.jpg", "b.jpg"])

    client = TestClient(create_app(backend))
    return SimpleNamespace(
        client=client,
        backend=backend,
        store=store,
        clock=clock,
        tree=tree,
        labels=by_name,
        tmp=tmp_path,
    )


def task_bindings(ctx, element_id: str, assignees=("alice", "bob")) -> dict:
    return {
        "images": {"collection": "col-1"},
        element_id: {
            "assignees": list(assignees),
            "label_tree": ctx.tree.tree_id,
            "label_subtrees": [ctx.labels["mammal"]],
        },
    }


def launch(ctx, obj: dict, bindings: dict) -> str:
    """Register a template, instantiate it, and run the first advance."""
    r = ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
    assert r.status_code == 201, r.text
    r = ctx.client.post(f"/pipelines/{obj['name']}/instantiate", json={"bindings": bindings}, headers=DESIGNER)
    assert r.status_code == 201, r.text
    instance_id = r.json()["instance_id"]
    r = ctx.client.post(f"/instances/{instance_id}/tick", headers=DESIGNER)
    assert r.status_code == 200, r.text
    return instance_id


def open_task_id(ctx, instance_id: str) -> str:
    detail = ctx.client.get(f"/instances/{instance_id}").json()
    open_tasks = [tid for tid, p in detail["tasks"].items() if p["accepting"]]
    assert len(open_tasks) == 1
    return open_tasks[0]


def seed_input_boxes(ctx, instance_id: str, count: int) -> list[str]:
    """Plant proposal rows as if an upstream producer had made them."""
    ids = []
    for i in range(count):
        row = TwoDAnno(
            anno_id=ctx.store.new_anno_id(),
            image_ref="col-1/a.jpg",
            geometry=BBox(0.3 + 0.05 * i, 0.4, 0.1, 0.1),
            source=AnnoSource.PROPOSAL,
            iteration=0,
            instance_id=instance_id,
            producer_element="images",
            created_at=ctx.clock.now(),
        )
        ctx.store.apply_annotation_batch([row], [], [])
        ids.append(row.anno_id)
    return ids


class TestSessions:
    def test_reads_are_open(self, ctx):
        assert ctx.client.get("/pipelines").status_code == 200
        assert ctx.client.get("/label_trees").status_code == 200

    def test_writes_need_a_session(self, ctx):
        r = ctx.client.post("/pipelines", json={"template": sia_template_obj("x.py")})
        assert r.status_code == 401
        body = r.json()
        assert body["code"] == "session_required"
        assert "X-Annotator" in body["message"]

    def test_unknown_role_rejected(self, ctx):
        r = ctx.client.post(
            "/pipelines",
            json={"template": sia_template_obj("x.py")},
            headers={"X-Annotator": "eve", "X-Role": "admin"},
        )
        assert r.status_code == 401
        assert "admin" in r.json()["message"]

    def test_designer_gating(self, ctx):
        for call in (
            lambda h: ctx.client.post("/pipelines", json={"template": sia_template_obj("x.py")}, headers=h),
            lambda h: ctx.client.post("/pipelines/boxes/instantiate", json={"bindings": {}}, headers=h),
            lambda h: ctx.client.post("/instances/inst-0001/tick", headers=h),
            lambda h: ctx.client.post("/label_trees", json={"name": "t"}, headers=h),
        ):
            r = call(ALICE)
            assert r.status_code == 401
            assert "designer" in r.json()["message"]

    def test_next_item_requires_identity(self, ctx):
        r = ctx.client.post("/tasks/task-0001/next_item")
        assert r.status_code == 401


class TestPipelineEndpoints:
    def test_register_and_list(self, ctx):
        obj = sia_template_obj(write_worker(ctx.tmp, "feed.py", FEED_BODY))
        r = ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        assert r.status_code == 201
        assert r.json() == {"name": "boxes", "violations": []}

        listing = ctx.client.get("/pipelines").json()
        assert [t["name"] for t in listing["templates"]] == ["boxes"]
        assert listing["templates"][0]["elements"] == 4
        assert listing["instances"] == []

    def test_detail_round_trips_the_template(self, ctx):
        obj = sia_template_obj("feed.py")
        ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        detail = ctx.client.get("/pipelines/boxes").json()
        assert detail["template"]["name"] == "boxes"
        assert [e["id"] for e in detail["template"]["elements"]] == ["images", "feed", "draw", "out"]
        assert sorted(map(tuple, detail["template"]["connections"])) == sorted(
            map(tuple, obj["connections"])
        )

    def test_duplicate_name_conflicts(self, ctx):
        obj = sia_template_obj("feed.py")
        ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        r = ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        assert r.status_code == 409
        assert r.json()["code"] == "duplicate"

    def test_unparseable_template(self, ctx):
        obj = {"name": "bad", "elements": [{"id": "x", "kind": "sorcery", "config": {}}], "connections": []}
        r = ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        assert r.status_code == 400
        assert r.json()["code"] == "template_parse"

    def test_violations_are_advisory(self, ctx):
        # structurally parseable but flagged: nothing feeds the export
        obj = {
            "name": "headless",
            "elements": [
                {"id": "s", "kind": "script", "config": {"entrypoint": "s.py"}},
                {"id": "out", "kind": "data_export", "config": {}},
            ],
            "connections": [["s", "out"]],
        }
        r = ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        assert r.status_code == 201
        assert "no_datasource" in [v["code"] for v in r.json()["violations"]]
        assert ctx.client.get("/pipelines/headless").status_code == 200

    def test_unknown_template_404(self, ctx):
        r = ctx.client.get("/pipelines/ghost")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_entity"

    def test_instantiate_missing_binding(self, ctx):
        obj = sia_template_obj(write_worker(ctx.tmp, "feed.py", FEED_BODY))
        ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        r = ctx.client.post("/pipelines/boxes/instantiate", json={"bindings": {}}, headers=DESIGNER)
        assert r.status_code == 400
        assert r.json()["code"] == "missing_binding"


class TestSiaFlow:
    def start(self, ctx):
        obj = sia_template_obj(write_worker(ctx.tmp, "feed.py", FEED_BODY))
        instance_id = launch(ctx, obj, task_bindings(ctx, "draw"))
        return instance_id, open_task_id(ctx, instance_id)

    def test_feed_script_opens_the_task(self, ctx):
        instance_id, task_id = self.start(ctx)
        detail = ctx.client.get(f"/instances/{instance_id}").json()
        assert detail["elements"]["feed"]["state"] == "finished"
        assert detail["elements"]["draw"]["state"] == "in_progress"
        progress = detail["tasks"][task_id]
        assert progress["total_items"] == 2 and progress["finished_items"] == 0

    def test_task_listing_respects_assignment(self, ctx):
        _, task_id = self.start(ctx)
        assert [t["task_id"] for t in ctx.client.get("/tasks", headers=ALICE).json()["tasks"]] == [task_id]
        assert ctx.client.get("/tasks", headers=MALLORY).json()["tasks"] == []
        assert len(ctx.client.get("/tasks", headers=DESIGNER).json()["tasks"]) == 1
        # anonymous browsing is read-only monitoring, so nothing is filtered
        assert len(ctx.client.get("/tasks").json()["tasks"]) == 1

    def test_task_detail_exposes_config_and_labels(self, ctx):
        _, task_id = self.start(ctx)
        detail = ctx.client.get(f"/tasks/{task_id}").json()
        assert detail["assignees"] == ["alice", "bob"]
        assert {l["name"] for l in detail["labels"]} == {"mammal", "dog", "cat"}
        assert "bbox" in detail["config"]["allowed_tools"]

    def test_unknown_task_404(self, ctx):
        r = ctx.client.get("/tasks/task-9999")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_entity"

    def test_next_item_payload(self, ctx):
        _, task_id = self.start(ctx)
        r = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE)
        assert r.status_code == 200
        payload = r.json()
        assert payload["status"] == "leased"
        assert payload["interface"] == "sia"
        assert payload["lease"]["annotator"] == "alice"
        assert payload["item"]["image_ref"] in ("col-1/a.jpg", "col-1/b.jpg")
        labels = {l["name"] for l in payload["labels"]}
        assert labels == {"mammal", "dog", "cat"}

    def test_seed_proposal_travels_with_its_item(self, ctx):
        _, task_id = self.start(ctx)
        seen = []
        for headers in (ALICE, BOB):
            payload = ctx.client.post(f"/tasks/{task_id}/next_item", headers=headers).json()
            seen.append(payload["item"])
        by_ref = {item["image_ref"]: item["proposals"] for item in seen}
        assert len(by_ref["col-1/a.jpg"]) == 1
        proposal = by_ref["col-1/a.jpg"][0]
        assert proposal["labels"] == [ctx.labels["dog"]]
        assert proposal["source"] == "proposal"
        assert by_ref["col-1/b.jpg"] == []

    def test_none_remaining_when_every_item_is_leased(self, ctx):
        obj = sia_template_obj(write_worker(ctx.tmp, "feed.py", FEED_BODY))
        instance_id = launch(ctx, obj, task_bindings(ctx, "draw", assignees=("alice", "bob", "carol")))
        task_id = open_task_id(ctx, instance_id)
        for headers in (ALICE, BOB):
            assert ctx.client.post(f"/tasks/{task_id}/next_item", headers=headers).json()["status"] == "leased"
        r = ctx.client.post(f"/tasks/{task_id}/next_item", headers={"X-Annotator": "carol"})
        assert r.status_code == 200
        assert r.json() == {"status": "none_remaining"}

    def test_unassigned_annotator_cannot_lease(self, ctx):
        _, task_id = self.start(ctx)
        r = ctx.client.post(f"/tasks/{task_id}/next_item", headers=MALLORY)
        assert r.status_code == 403
        assert r.json()["code"] == "not_assigned"

    def test_foreign_lease_cannot_submit(self, ctx):
        _, task_id = self.start(ctx)
        lease = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE).json()["lease"]
        r = ctx.client.post(
            f"/tasks/{task_id}/submit_sia",
            json={"lease_id": lease["lease_id"], "operations": []},
            headers=BOB,
        )
        assert r.status_code == 403

    def test_expired_lease_conflicts(self, ctx):
        _, task_id = self.start(ctx)
        lease = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE).json()["lease"]
        ctx.clock.advance(601.0)
        r = ctx.client.post(
            f"/tasks/{task_id}/submit_sia",
            json={"lease_id": lease["lease_id"], "operations": []},
            headers=ALICE,
        )
        assert r.status_code == 409
        assert r.json()["code"] == "lease_expired"

    def test_bad_geometry_maps_to_400(self, ctx):
        _, task_id = self.start(ctx)
        lease = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE).json()["lease"]
        r = ctx.client.post(
            f"/tasks/{task_id}/submit_sia",
            json={
                "lease_id": lease["lease_id"],
                "operations": [{"op": "create", "kind": "bbox", "coords": [0.5, 0.5, 0.0, 0.1]}],
            },
            headers=ALICE,
        )
        assert r.status_code == 400
        assert r.json()["code"] == "bad_geometry"

    def test_out_of_scope_label_maps_to_400(self, ctx):
        _, task_id = self.start(ctx)
        lease = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE).json()["lease"]
        r = ctx.client.post(
            f"/tasks/{task_id}/submit_sia",
            json={
                "lease_id": lease["lease_id"],
                "operations": [
                    {"op": "create", "kind": "bbox", "coords": [0.5, 0.5, 0.1, 0.1], "labels": ["lbl-alien"]}
                ],
            },
            headers=ALICE,
        )
        assert r.status_code == 400
        assert r.json()["code"] == "label_out_of_scope"

    def test_submission_idempotency_over_http(self, ctx):
        _, task_id = self.start(ctx)
        lease = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE).json()["lease"]
        body = {
            "lease_id": lease["lease_id"],
            "operations": [
                {"op": "create", "kind": "bbox", "coords": [0.2, 0.2, 0.1, 0.1], "labels": [ctx.labels["cat"]]}
            ],
            "idempotency_key": "alice-submit-1",
        }
        first = ctx.client.post(f"/tasks/{task_id}/submit_sia", json=body, headers=ALICE)
        rows_after_first = len(ctx.store.annotations)
        again = ctx.client.post(f"/tasks/{task_id}/submit_sia", json=body, headers=ALICE)
        assert first.status_code == again.status_code == 200
        assert first.json() == again.json()
        assert len(ctx.store.annotations) == rows_after_first

    def test_full_round_trip_to_export(self, ctx):
        instance_id, task_id = self.start(ctx)
        results = []
        for _ in range(2):
            payload = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE).json()
            ops = [{"op": "create", "kind": "bbox", "coords": [0.6, 0.6, 0.2, 0.2], "labels": [ctx.labels["dog"]]}]
            if payload["item"]["proposals"]:
                anno_id = payload["item"]["proposals"][0]["anno_id"]
                ops.append({"op": "assign_label", "anno_id": anno_id, "labels": [ctx.labels["dog"]]})
            r = ctx.client.post(
                f"/tasks/{task_id}/submit_sia",
                json={"lease_id": payload["lease"]["lease_id"], "operations": ops},
                headers=ALICE,
            )
            assert r.status_code == 200
            results.append(r.json())
        assert [x["round_complete"] for x in results] == [False, True]

        # the round closed with the last submission, so polling reports that
        r = ctx.client.post(f"/tasks/{task_id}/next_item", headers=ALICE)
        assert r.status_code == 409
        assert r.json()["code"] == "invalid_state"

        detail = ctx.client.get(f"/instances/{instance_id}").json()
        assert detail["all_finished"] is True
        assert [e["element_id"] for e in detail["exports"]] == ["out"]

        export_id = detail["exports"][0]["export_id"]
        r = ctx.client.get(f"/exports/{export_id}")
        assert r.status_code == 200
        assert r.headers["content-type"].startswith("text/csv")
        assert "attachment" in r.headers["content-disposition"]
        lines = r.text.splitlines()
        assert lines[0] == CSV_HEADER
        # two drawn boxes plus the labelled seed proposal
        assert len(lines) == 4
        assert "dog" in r.text

    def test_events_and_integrity_views(self, ctx):
        instance_id, task_id = self.start(ctx)
        events = ctx.client.get(f"/instances/{instance_id}/events").json()["events"]
        assert events[0]["kind"] == "activated"
        assert {e["instance_id"] for e in events} == {instance_id}

        report = ctx.client.get(f"/instances/{instance_id}/integrity").json()
        assert report == {"violations": []}

    def test_unknown_instance_404(self, ctx):
        for path in ("/instances/inst-9999", "/instances/inst-9999/events", "/instances/inst-9999/integrity"):
            assert ctx.client.get(path).status_code == 404


class TestMiaFlow:
    def start(self, ctx, seed=3):
        obj = mia_template_obj(write_worker(ctx.tmp, "group.py", GROUP_BODY))
        r = ctx.client.post("/pipelines", json={"template": obj}, headers=DESIGNER)
        assert r.status_code == 201, r.text
        r = ctx.client.post(
            "/pipelines/triage/instantiate",
            json={"bindings": task_bindings(ctx, "review", assignees=("alice",))},
            headers=DESIGNER,
        )
        assert r.status_code == 201, r.text
        instance_id = r.json()["instance_id"]
        member_ids = seed_input_boxes(ctx, instance_id, seed)
        r = ctx.client.post(f"/instances/{instance_id}/tick", headers=DESIGNER)
        assert r.status_code == 200, r.text
        return instance_id, open_task_id(ctx, instance_id), member_ids

    def test_cluster_payload(self, ctx):
        _, task_id, member_ids = self.start(ctx)
        r = ctx.client.get(f"/tasks/{task_id}/clusters/next", headers=ALICE)
        assert r.status_code == 200
        payload = r.json()
        assert payload["status"] == "leased"
        assert payload["interface"] == "mia"
        cluster = payload["cluster"]
        assert cluster["member_kind"] == "annotation"
        assert cluster["proposed_label"] == ctx.labels["dog"]
        assert sorted(m["anno_id"] for m in cluster["members"]) == sorted(member_ids)

    def test_clusters_next_rejected_on_sia_task(self, ctx):
        obj = sia_template_obj(write_worker(ctx.tmp, "feed.py", FEED_BODY))
        instance_id = launch(ctx, obj, task_bindings(ctx, "draw"))
        task_id = open_task_id(ctx, instance_id)
        r = ctx.client.get(f"/tasks/{task_id}/clusters/next", headers=ALICE)
        assert r.status_code == 409
        assert r.json()["code"] == "invalid_state"

    def test_review_completes_the_instance(self, ctx):
        instance_id, task_id, member_ids = self.start(ctx)
        payload = ctx.client.get(f"/tasks/{task_id}/clusters/next", headers=ALICE).json()
        cluster_id = payload["cluster"]["cluster_id"]
        removed = payload["cluster"]["members"][0]["anno_id"]
        r = ctx.client.post(
            f"/clusters/{cluster_id}/review",
            json={"lease_id": payload["lease"]["lease_id"], "removed": [removed], "label": ctx.labels["dog"]},
            headers=ALICE,
        )
        assert r.status_code == 200
        assert r.json()["round_complete"] is True

        detail = ctx.client.get(f"/instances/{instance_id}").json()
        assert detail["all_finished"] is True

        survivors = [
            a for a in ctx.store.annotations.values() if not a.superseded and not a.deleted and a.labels
        ]
        assert sorted(a.labels[0] for a in survivors) == [ctx.labels["dog"]] * 2
        assert ctx.client.get(f"/instances/{instance_id}/integrity").json() == {"violations": []}

    def test_contradictory_review_conflicts(self, ctx):
        _, task_id, member_ids = self.start(ctx)
        payload = ctx.client.get(f"/tasks/{task_id}/clusters/next", headers=ALICE).json()
        r = ctx.client.post(
            f"/clusters/{payload['cluster']['cluster_id']}/review",
            json={
                "lease_id": payload["lease"]["lease_id"],
                "removed": member_ids,
                "label": ctx.labels["dog"],
            },
            headers=ALICE,
        )
        assert r.status_code == 409
        assert r.json()["code"] == "conflict"


class TestLabelTreeEndpoints:
    def test_create_grow_and_fetch(self, ctx):
        r = ctx.client.post("/label_trees", json={"name": "things", "root_name": "thing"}, headers=DESIGNER)
        assert r.status_code == 201
        tree_id, root_id = r.json()["tree_id"], r.json()["root_id"]

        r = ctx.client.post(
            f"/label_trees/{tree_id}/nodes",
            json={"parent_id": root_id, "name": "tool", "description": "hand tools"},
            headers=DESIGNER,
        )
        assert r.status_code == 201
        node_id = r.json()["label_id"]

        detail = ctx.client.get(f"/label_trees/{tree_id}").json()
        assert [n["name"] for n in detail["nodes"]] == ["thing", "tool"]
        assert detail["nodes"][1]["label_id"] == node_id

        listing = ctx.client.get("/label_trees").json()["trees"]
        assert {t["tree_id"] for t in listing} == {"tree-001", tree_id}

    def test_duplicate_sibling_400(self, ctx):
        root_id = ctx.tree.root_id
        r = ctx.client.post(
            f"/label_trees/{ctx.tree.tree_id}/nodes",
            json={"parent_id": root_id, "name": "MAMMAL"},
            headers=DESIGNER,
        )
        assert r.status_code == 409
        assert r.json()["code"] == "duplicate"

    def test_delete_subtree(self, ctx):
        r = ctx.client.delete(
            f"/label_trees/{ctx.tree.tree_id}/nodes/{ctx.labels['mammal']}", headers=DESIGNER
        )
        assert r.status_code == 200
        assert sorted(r.json()["removed"]) == sorted(
            [ctx.labels["mammal"], ctx.labels["dog"], ctx.labels["cat"]]
        )
        assert len(ctx.tree) == 1

    def test_delete_referenced_label_conflicts(self, ctx):
        row = TwoDAnno(
            anno_id=ctx.store.new_anno_id(),
            image_ref="col-1/a.jpg",
            geometry=BBox(0.5, 0.5, 0.1, 0.1),
            labels=(ctx.labels["dog"],),
            source=AnnoSource.HUMAN,
            instance_id="inst-x",
            created_at=ctx.clock.now(),
        )
        ctx.store.apply_annotation_batch([row], [], [])
        r = ctx.client.delete(
            f"/label_trees/{ctx.tree.tree_id}/nodes/{ctx.labels['mammal']}", headers=DESIGNER
        )
        assert r.status_code == 409
        assert r.json()["code"] == "conflict"
        assert len(ctx.tree) == 4

    def test_csv_export_and_reimport(self, ctx):
        r = ctx.client.get(f"/label_trees/{ctx.tree.tree_id}/export")
        assert r.status_code == 200
        assert r.headers["content-type"].startswith("text/csv")
        assert r.text == export_tree_csv(ctx.tree)

        r = ctx.client.post("/label_trees", json={"name": "animals-copy", "csv": r.text}, headers=DESIGNER)
        assert r.status_code == 201
        copied = r.json()
        assert copied["tree_id"] != ctx.tree.tree_id
        assert [n["name"] for n in copied["nodes"]] == ["animal", "mammal", "dog", "cat"]

    def test_unknown_tree_404(self, ctx):
        assert ctx.client.get("/label_trees/tree-999").status_code == 404


class TestFileEndpoints:
    def test_media_bytes(self, ctx):
        r = ctx.client.get("/media/col-1/a.jpg")
        assert r.status_code == 200
        assert r.content == b"JPEG-A"
        assert r.headers["content-type"] == "image/jpeg"

    def test_unlisted_media_404(self, ctx):
        r = ctx.client.get("/media/col-1/ghost.jpg")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown_entity"

    def test_media_traversal_refused(self, ctx):
        secret = ctx.tmp / "secret.txt"
        secret.write_text("top secret")
        r = ctx.client.get("/media/col-1/%2E%2E%2Fsecret.txt")
        assert r.status_code == 404
        assert "top secret" not in r.text

    def test_unknown_collection_404(self, ctx):
        assert ctx.client.get("/media/col-9/a.jpg").status_code == 404

    def test_unknown_export_404(self, ctx):
        assert ctx.client.get("/exports/exp-999999").status_code == 404
