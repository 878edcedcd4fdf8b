"""HTTP annotation service, exercised through the ASGI test client."""
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from virreq.cli import main
from virreq.server import create_app
from virreq.synth import SceneSpec, generate_scene, save_corpus
from virreq.tree import RecognitionTree


@pytest.fixture()
def corpus(tmp_path, mini_kb):
    data = tmp_path / "data"
    trees = [generate_scene(SceneSpec(kb=mini_kb, seed=s, levels=2,
                                      max_instances=3),
                            image_id=f"img-{s}")[0] for s in range(2)]
    save_corpus(data, trees)
    return data, {t.image_id: t for t in trees}


@pytest.fixture()
def client(corpus):
    data, _ = corpus
    return TestClient(create_app(data))


def make_session(client, image_id="img-0", **body):
    r = client.post("/sessions", json={"image_id": image_id, **body})
    assert r.status_code == 200, r.text
    return r.json()


def thing_region_and_probe(gt):
    """A countable root child plus a pixel inside one of its instances."""
    kb = gt.kb
    for rid in gt.root.children:
        region = gt.nodes[rid]
        if not kb.concept(region.class_id).countable or not region.children:
            continue
        inst = gt.nodes[region.children[0]]
        b, a = np.argwhere(inst.mask.bits)[0]
        return region, (int(a), int(b))
    raise AssertionError("corpus scene has no countable region")


def session_region_id(client, sid, class_id):
    tree = client.get(f"/sessions/{sid}/tree").json()
    return next(n["id"] for n in tree["nodes"] if n["class"] == class_id
                and not n["is_instance"])


def test_create_session_and_rejections(client, corpus, mini_kb):
    _, scenes = corpus
    doc = make_session(client)
    assert set(doc) == {"session_id", "etag", "kb_version"}
    assert doc["kb_version"] == mini_kb.version_id

    r = client.post("/sessions", json={"image_id": "nope"})
    assert r.status_code == 404 and r.json()["code"] == "unknown_image"
    r = client.post("/sessions", json={"image_id": "img-0",
                                       "kb_version": "bogus"})
    assert r.status_code == 404 and r.json()["code"] == "unknown_kb_version"
    r = client.post("/sessions", json={"image_id": "img-0",
                                       "backend": "psychic"})
    assert r.status_code == 422 and r.json()["code"] == "unknown_backend"


def test_root_expansion_and_etag_cycle(client, corpus):
    _, scenes = corpus
    doc = make_session(client)
    sid, etag0 = doc["session_id"], doc["etag"]

    r = client.get(f"/sessions/{sid}/tree")
    assert r.headers["etag"] == etag0
    assert client.get(f"/sessions/{sid}/tree",
                      headers={"If-None-Match": etag0}).status_code == 304

    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "I", "node": 0})
    assert r.status_code == 200
    body = r.json()
    assert len(body["applied"]) == len(scenes["img-0"].root.children)
    assert body["etag"] != etag0
    assert body["lost"] is False

    r = client.get(f"/sessions/{sid}/tree",
                   headers={"If-None-Match": etag0})
    assert r.status_code == 200
    assert r.headers["etag"] == body["etag"]


def test_probe_request_and_validation(client, corpus):
    _, scenes = corpus
    gt = scenes["img-0"]
    region, probe = thing_region_and_probe(gt)
    sid = make_session(client)["session_id"]
    client.post(f"/sessions/{sid}/requests", json={"kind": "I", "node": 0})
    rid = session_region_id(client, sid, region.class_id)

    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "II", "node": rid, "probe": list(probe)})
    assert r.status_code == 200
    body = r.json()
    assert len(body["applied"]) == 1
    assert body["applied"][0]["is_instance"] is True
    assert body["applied"][0]["class"] == region.class_id

    # a pixel the region does not cover
    off = np.argwhere(~region.mask.bits)[0]
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "II", "node": rid,
                          "probe": [int(off[1]), int(off[0])]})
    assert r.status_code == 422 and r.json()["code"] == "probe_outside"

    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "II", "node": rid, "probe": [1.5, 2]})
    assert r.status_code == 422 and r.json()["code"] == "bad_probe"
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "II", "node": rid,
                          "probe": [gt.width + 5, 0]})
    assert r.status_code == 422 and r.json()["code"] == "probe_outside"
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "?", "node": rid})
    assert r.status_code == 400 and r.json()["code"] == "wrong_kind"
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "I", "node": 999})
    assert r.status_code == 404 and r.json()["code"] == "unknown_node"


def test_kind_node_conflicts_are_409(client):
    sid = make_session(client)["session_id"]
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "II", "node": 0, "probe": [1, 1]})
    assert r.status_code == 409
    assert r.json()["code"] == "alternation_violation"

    client.post(f"/sessions/{sid}/requests", json={"kind": "I", "node": 0})
    tree = client.get(f"/sessions/{sid}/tree").json()
    some_region = next(n["id"] for n in tree["nodes"]
                       if not n["is_instance"])
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "I", "node": some_region})
    assert r.status_code == 409
    assert r.json()["code"] == "alternation_violation"


def test_lost_probe_keeps_etag(client, corpus, mini_kb):
    _, scenes = corpus
    gt = scenes["img-0"]
    stuff = next(gt.nodes[rid] for rid in gt.root.children
                 if not mini_kb.concept(gt.nodes[rid].class_id).countable)
    b, a = np.argwhere(stuff.mask.bits)[0]
    sid = make_session(client)["session_id"]
    client.post(f"/sessions/{sid}/requests", json={"kind": "I", "node": 0})
    etag = client.get(f"/sessions/{sid}/tree").headers["etag"]
    rid = session_region_id(client, sid, stuff.class_id)

    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "II", "node": rid,
                          "probe": [int(a), int(b)]})
    assert r.status_code == 200
    assert r.json()["lost"] is True
    assert r.json()["applied"] == []
    assert r.json()["etag"] == etag


def test_undo_round_trip(client):
    doc = make_session(client)
    sid, etag0 = doc["session_id"], doc["etag"]
    before = client.get(f"/sessions/{sid}/tree").json()

    client.post(f"/sessions/{sid}/requests", json={"kind": "I", "node": 0})
    r = client.post(f"/sessions/{sid}/undo")
    assert r.status_code == 200
    assert r.json()["undone"] is True
    assert r.json()["etag"] == etag0
    assert r.json()["tree"] == before

    r = client.post(f"/sessions/{sid}/undo")
    assert r.json()["undone"] is False


def test_idempotency_key_replays_response(client):
    sid = make_session(client)["session_id"]
    headers = {"Idempotency-Key": "abc123"}
    r1 = client.post(f"/sessions/{sid}/requests",
                     json={"kind": "I", "node": 0}, headers=headers)
    nodes_after = len(client.get(f"/sessions/{sid}/tree").json()["nodes"])
    r2 = client.post(f"/sessions/{sid}/requests",
                     json={"kind": "I", "node": 0}, headers=headers)
    assert r1.json() == r2.json()
    assert len(client.get(f"/sessions/{sid}/tree").json()["nodes"]) \
        == nodes_after


def test_session_flow_exports_a_cli_replayable_log(client, corpus, tmp_path):
    data, scenes = corpus
    gt = scenes["img-0"]
    region, probe = thing_region_and_probe(gt)
    sid = make_session(client)["session_id"]

    client.post(f"/sessions/{sid}/requests", json={"kind": "I", "node": 0})
    rid = session_region_id(client, sid, region.class_id)
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "II", "node": rid, "probe": list(probe)})
    inst = r.json()["applied"][0]["id"]
    r = client.post(f"/sessions/{sid}/requests",
                    json={"kind": "I", "node": inst})
    assert r.status_code == 200 and r.json()["applied"]
    assert client.post(f"/sessions/{sid}/undo").json()["undone"] is True

    r = client.post(f"/sessions/{sid}/export")
    assert r.status_code == 200
    export = r.json()
    assert len(export["log"]) == 1 + 2  # header plus the two surviving pairs

    replayed = tmp_path / "replayed.json"
    code = main(["run", "--backend", "oracle",
                 "--gt", str(data / "trees" / "img-0.json"),
                 "--kb", str(data / "kb" / f"{gt.kb_version}.json"),
                 "--stream", export["paths"]["requests"],
                 "--out", str(replayed)])
    assert code == 0
    tree = RecognitionTree.parse(replayed.read_bytes())
    assert tree.hash() == export["etag"]
    assert (data / "exports" / sid / "tree.json").exists()


def test_unknown_session_is_404_everywhere(client):
    assert client.get("/sessions/zzz/tree").status_code == 404
    assert client.post("/sessions/zzz/requests",
                       json={"kind": "I", "node": 0}).status_code == 404
    assert client.post("/sessions/zzz/undo").status_code == 404
    assert client.post("/sessions/zzz/export").status_code == 404


def test_image_and_kb_routes(client, corpus, mini_kb):
    r = client.get("/images/img-0")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert r.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert client.get("/images/ghost").status_code == 404

    r = client.get(f"/kb/{mini_kb.version_id}")
    assert r.status_code == 200
    doc = r.json()
    assert doc["version_id"] == mini_kb.version_id
    assert any(c["label"] == "scene" for c in doc["concepts"])
    assert client.get("/kb/bogus").status_code == 404
