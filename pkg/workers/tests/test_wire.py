"""Wire conformance at the process boundary.

Each worker runs as a real subprocess; the test plays host over its
stdio pipes and checks framing: one JSON object per line, request ids
strictly increasing from 1, exactly one request in flight, finish last.
"""
from __future__ import annotations

import json
import subprocess
import sys
import threading
from typing import Any

HELLO = {"instance_id": "inst-9", "element_id": "el-3", "iteration": 1, "inputs": ["el-2"]}

MEDIA = {
    "media": [
        {"ref": "col-1/a.jpg", "collection": "col-1", "path": "a.jpg"},
        {"ref": "col-1/b.jpg", "collection": "col-1", "path": "b.jpg"},
    ]
}


def drive(module: str, args: list[str], results: dict[str, Any], hello: dict | None = None):
    """Run one worker to completion, answering every request it sends."""
    proc = subprocess.Popen(
        [sys.executable, "-m", f"annoflow_workers.{module}", *args],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    # safety net so a framing bug cannot hang the suite
    killer = threading.Timer(20.0, proc.kill)
    killer.start()
    requests: list[dict] = []
    try:
        proc.stdin.write(json.dumps({"hello": hello or HELLO}) + "\n")
        proc.stdin.flush()
        while True:
            line = proc.stdout.readline()
            if not line:
                break
            msg = json.loads(line)
            assert set(msg) == {"id", "method", "params"}, msg
            assert msg["id"] == len(requests) + 1  # ids count up from 1
            assert isinstance(msg["params"], dict)
            requests.append(msg)
            response = {"id": msg["id"], "result": results.get(msg["method"], {})}
            proc.stdin.write(json.dumps(response) + "\n")
            proc.stdin.flush()
        returncode = proc.wait(timeout=10)
    finally:
        killer.cancel()
        proc.kill()
    stderr = proc.stderr.read()
    return requests, returncode, stderr


def methods(requests: list[dict]) -> list[str]:
    return [r["method"] for r in requests]


def finish_of(requests: list[dict]) -> dict:
    assert requests[-1]["method"] == "finish"
    return requests[-1]["params"]


def test_request_annos_over_pipes():
    requests, returncode, stderr = drive("request_annos", [], {"get_media": MEDIA})
    assert returncode == 0
    assert stderr == ""
    assert methods(requests) == ["get_media", "request_annotations", "report_progress", "finish"]
    items = requests[1]["params"]["items"]
    assert [i["image_ref"] for i in items] == ["col-1/a.jpg", "col-1/b.jpg"]
    assert finish_of(requests) == {"status": "success", "message": "queued 2 items"}


def test_cluster_over_pipes():
    annos = {
        "annotations": [
            {"anno_id": f"a{i}", "kind": "bbox", "coords": [0.1 * i + 0.1, 0.5, 0.1, 0.1], "labels": ["dog"]}
            for i in range(6)
        ]
    }
    requests, returncode, stderr = drive(
        "cluster", ["--groups", "2", "--seed", "7"], {"get_input_annotations": annos}
    )
    assert returncode == 0
    assert stderr == ""
    assert methods(requests) == ["get_input_annotations", "request_annotations", "finish"]
    assert requests[0]["params"] == {"iteration": 1}
    clusters = requests[1]["params"]["clusters"]
    assert sorted(clusters["assignments"]) == [f"a{i}" for i in range(6)]
    assert set(clusters["assignments"].values()) == set(clusters["proposed_labels"])
    assert clusters["member_kind"] == "annotation"
    assert finish_of(requests)["status"] == "success"


def test_propose_over_pipes(tmp_path):
    sidecar = tmp_path / "proposals.json"
    sidecar.write_text(
        json.dumps(
            {
                "images": {
                    "col-1/a.jpg": [
                        {"bbox": [0.5, 0.5, 0.2, 0.2], "score": 0.39, "label": "dog"},
                        {"bbox": [0.4, 0.4, 0.1, 0.1], "score": 0.41, "label": "cat"},
                    ]
                }
            }
        )
    )
    requests, returncode, stderr = drive(
        "propose", ["--sidecar", str(sidecar), "--min-score", "0.4"], {"get_media": MEDIA}
    )
    assert returncode == 0
    assert stderr == ""
    assert methods(requests) == ["get_media", "request_annotations", "report_progress", "finish"]
    items = {i["image_ref"]: i["proposals"] for i in requests[1]["params"]["items"]}
    assert [p["score"] for p in items["col-1/a.jpg"]] == [0.41]
    assert items["col-1/b.jpg"] == []
    assert finish_of(requests) == {"status": "success", "message": "queued 2 items with 1 proposals"}


def test_loop_break_over_pipes():
    hello = {**HELLO, "iteration": 2}
    requests, returncode, stderr = drive("loop_break", ["--break-after", "2"], {}, hello=hello)
    assert returncode == 0
    assert stderr == ""
    assert methods(requests) == ["set_loop_break", "finish"]
    assert finish_of(requests) == {"status": "success", "message": "break requested at iteration 2"}


def test_vanished_host_kills_the_worker():
    proc = subprocess.Popen(
        [sys.executable, "-m", "annoflow_workers.request_annos"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    proc.stdin.write(json.dumps({"hello": HELLO}) + "\n")
    proc.stdin.close()  # host goes away before answering anything
    first = proc.stdout.readline()
    assert json.loads(first)["method"] == "get_media"
    assert proc.wait(timeout=10) != 0
