"""Clustering worker against a scripted host."""
from __future__ import annotations

import functools
import random

from annoflow_workers.cluster import propose_label, run

from .helpers import ErrorSpec, ScriptedHost, assert_replays_identically


def anno(i: int, labels=(), kind="bbox", coords=None) -> dict:
    rng = random.Random(i)
    return {
        "anno_id": f"a{i:04d}",
        "kind": kind,
        "coords": coords or [rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.2],
        "labels": list(labels),
    }


def cluster_host(annotations, iteration=0) -> ScriptedHost:
    return ScriptedHost(
        hello={"iteration": iteration},
        results={
            "get_input_annotations": {"annotations": annotations},
            "request_annotations": {"accepted": True},
        },
    )


def test_partitions_boxes_into_requested_groups():
    host = cluster_host([anno(i) for i in range(540)])
    run(host.connection(), groups=20, seed=7)
    (request,) = host.calls("request_annotations")
    clusters = request["clusters"]
    assert clusters["member_kind"] == "annotation"
    assert sorted(clusters["assignments"]) == [f"a{i:04d}" for i in range(540)]
    assert len(set(clusters["assignments"].values())) == 20
    assert set(clusters["proposed_labels"]) == set(clusters["assignments"].values())
    assert host.finish_params()["message"] == "20 groups over 540 boxes"


def test_requests_current_iteration_annotations():
    host = cluster_host([anno(0)], iteration=3)
    run(host.connection(), groups=2, seed=7)
    assert host.calls("get_input_annotations") == [{"iteration": 3}]


def test_majority_label_proposed_per_group():
    rows = [anno(i, labels=["lbl-dog"] if i else ["lbl-cat"]) for i in range(5)]
    host = cluster_host(rows)
    run(host.connection(), groups=1, seed=7)
    clusters = host.calls("request_annotations")[0]["clusters"]
    assert list(clusters["proposed_labels"].values()) == ["lbl-dog"]


def test_label_tie_breaks_lexicographically():
    assert propose_label(["lbl-dog", "lbl-cat"]) == "lbl-cat"
    assert propose_label([]) is None


def test_unlabeled_group_proposes_nothing():
    host = cluster_host([anno(i) for i in range(4)])
    run(host.connection(), groups=2, seed=7)
    clusters = host.calls("request_annotations")[0]["clusters"]
    assert set(clusters["proposed_labels"].values()) == {None}


def test_non_box_annotations_are_ignored():
    rows = [anno(0), anno(1, kind="point", coords=[0.5, 0.5])]
    host = cluster_host(rows)
    run(host.connection(), groups=3, seed=7)
    clusters = host.calls("request_annotations")[0]["clusters"]
    assert list(clusters["assignments"]) == ["a0000"]


def test_no_input_still_submits_empty_grouping():
    host = cluster_host([])
    run(host.connection(), groups=4, seed=7)
    clusters = host.calls("request_annotations")[0]["clusters"]
    assert clusters["assignments"] == {} and clusters["proposed_labels"] == {}
    assert host.finish_params()["status"] == "success"


def test_upstream_error_reports_failure():
    host = ScriptedHost(results={"get_input_annotations": ErrorSpec(-32000, "no rows upstream")})
    run(host.connection(), groups=2, seed=7)
    assert host.finish_params() == {"status": "failure", "message": "no rows upstream"}


def test_rejected_grouping_reports_failure():
    host = ScriptedHost(
        results={
            "get_input_annotations": {"annotations": [anno(0)]},
            "request_annotations": ErrorSpec(-32000, "invalid_state: task closed"),
        }
    )
    run(host.connection(), groups=1, seed=7)
    assert host.finish_params()["status"] == "failure"


def test_recorded_session_replays_identically():
    host = cluster_host([anno(i, labels=["lbl-dog"]) for i in range(30)])
    bound = functools.partial(run, groups=5, seed=11)
    bound(host.connection())
    assert_replays_identically(bound, host)
