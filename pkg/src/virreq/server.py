"""HTTP session service for interactive annotation.

Sessions live in memory, one mutex per session; every mutation snapshots
the session tree to disk as JSON. Mutating routes accept an
``Idempotency-Key`` header and replay the stored response on repeats.
"""
from __future__ import annotations

import io
import json
import threading
import uuid
from pathlib import Path
from typing import Dict, Optional, Union

from fastapi import FastAPI, Request as HttpRequest, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .errors import VirreqError
from .executor import Session, step
from .predictors import FilesBackend, OracleBackend
from .requests import (
    TYPE1,
    TYPE2,
    Answer,
    AnswerChild,
    Request,
    RequestStream,
    write_stream,
)
from .synth import load_corpus
from .tree import RecognitionTree, new_tree

_STATUS = {
    "alternation_violation": 409,
    "overlap_violation": 409,
    "not_a_subclass": 409,
    "session_closed": 409,
    "unknown_concept": 404,
    "unknown_kb_version": 404,
    "invalid_tree": 404,
    "malformed_tree": 400,
    "malformed_rle": 400,
    "wrong_kind": 400,
}


def _http_error(status: int, code: str, message: str, **detail):
    return JSONResponse(status_code=status, content={
        "code": code, "message": message, "detail": detail})


class _SessionBox:
    def __init__(self, session: Session, image_id: str, backend: str) -> None:
        self.session = session
        self.image_id = image_id
        self.backend_name = backend
        self.lock = threading.Lock()
        self.idempotent: Dict[str, dict] = {}


def create_app(data_dir: Union[str, Path]) -> FastAPI:
    data_dir = Path(data_dir)
    trees, registry = load_corpus(data_dir)
    gt_by_image = {t.image_id: t for t in trees}
    boxes: Dict[str, _SessionBox] = {}
    app = FastAPI(title="virreq annotation service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(VirreqError)
    async def _virreq_error(_req: HttpRequest, exc: VirreqError):
        status = _STATUS.get(exc.code, 400)
        return JSONResponse(status_code=status, content=exc.payload())

    def _snapshot(box: _SessionBox, session_id: str) -> None:
        out = data_dir / "sessions"
        out.mkdir(exist_ok=True)
        (out / f"{session_id}.json").write_bytes(box.session.tree.serialize())

    def _node_json(tree: RecognitionTree, nid: int) -> dict:
        return [n for n in tree.to_json()["nodes"] if n["id"] == nid][0]

    @app.post("/sessions")
    async def create_session(body: dict):
        image_id = body.get("image_id")
        backend_name = body.get("backend", "oracle")
        if image_id not in gt_by_image:
            return _http_error(404, "unknown_image",
                               f"no image {image_id!r} in the corpus")
        gt = gt_by_image[image_id]
        version = body.get("kb_version") or gt.kb_version
        if not registry.has(version):
            return _http_error(404, "unknown_kb_version",
                               f"no knowledge base {version!r}")
        kb = registry.get(version)
        if backend_name == "oracle":
            backend = OracleBackend(gt)
        elif backend_name == "files":
            bundle = data_dir / "preds" / image_id
            if not bundle.exists():
                return _http_error(404, "missing_prediction",
                                   f"no prediction bundle for {image_id!r}")
            backend = FilesBackend(bundle, kb)
        else:
            return _http_error(422, "unknown_backend",
                               f"backend {backend_name!r} not supported")
        tree = new_tree(image_id, gt.width, gt.height, kb)
        session_id = uuid.uuid4().hex[:12]
        boxes[session_id] = _SessionBox(Session(tree=tree, backend=backend),
                                        image_id, backend_name)
        return {"session_id": session_id, "etag": tree.hash(),
                "kb_version": version}

    def _box(session_id: str) -> Optional[_SessionBox]:
        return boxes.get(session_id)

    @app.get("/sessions/{session_id}/tree")
    async def get_tree(session_id: str, request: HttpRequest):
        box = _box(session_id)
        if box is None:
            return _http_error(404, "unknown_session",
                               f"no session {session_id!r}")
        with box.lock:
            payload = box.session.tree.to_json()
            etag = box.session.tree.hash()
        # the tree mutates across requests: clients must revalidate
        headers = {"ETag": etag, "Cache-Control": "no-cache"}
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers=headers)
        return JSONResponse(content=payload, headers=headers)

    @app.post("/sessions/{session_id}/requests")
    async def post_request(session_id: str, body: dict,
                           request: HttpRequest):
        box = _box(session_id)
        if box is None:
            return _http_error(404, "unknown_session",
                               f"no session {session_id!r}")
        key = request.headers.get("idempotency-key")
        with box.lock:
            if key and key in box.idempotent:
                return box.idempotent[key]

            kind = body.get("kind")
            if kind not in (TYPE1, TYPE2):
                return _http_error(400, "wrong_kind",
                                   'kind must be "I" or "II"')
            node_id = body.get("node")
            tree = box.session.tree
            if not isinstance(node_id, int) or node_id not in tree.nodes:
                return _http_error(404, "unknown_node",
                                   f"no node {node_id!r} in the tree")
            node = tree.nodes[node_id]
            probe = None
            if kind == TYPE2:
                raw = body.get("probe")
                if (not isinstance(raw, (list, tuple)) or len(raw) != 2
                        or not all(isinstance(v, int) for v in raw)):
                    return _http_error(422, "bad_probe",
                                       "probe must be [a, b] integers")
                a, b = raw
                if not (0 <= a < tree.width and 0 <= b < tree.height) \
                        or not node.mask.get(a, b):
                    return _http_error(422, "probe_outside",
                                       "probe pixel is outside the node mask",
                                       probe=[a, b], node=node_id)
                probe = (a, b)
            req = Request(
                kind=kind, node_id=node_id, class_id=node.class_id,
                active_classes=tuple(body.get("active_classes") or ()),
                probe=probe)
            applied = step(box.session, req)
            etag = tree.hash()
            payload = {
                "applied": [_node_json(tree, nid) for nid in applied],
                "lost": not applied and kind == TYPE2,
                "etag": etag,
            }
            _snapshot(box, session_id)
            if key:
                box.idempotent[key] = payload
            return payload

    @app.post("/sessions/{session_id}/undo")
    async def undo(session_id: str, request: HttpRequest):
        box = _box(session_id)
        if box is None:
            return _http_error(404, "unknown_session",
                               f"no session {session_id!r}")
        key = request.headers.get("idempotency-key")
        with box.lock:
            if key and key in box.idempotent:
                return box.idempotent[key]
            undone = box.session.undo()
            payload = {"undone": undone, "etag": box.session.tree.hash(),
                       "tree": box.session.tree.to_json()}
            _snapshot(box, session_id)
            if key:
                box.idempotent[key] = payload
            return payload

    @app.post("/sessions/{session_id}/export")
    async def export(session_id: str):
        box = _box(session_id)
        if box is None:
            return _http_error(404, "unknown_session",
                               f"no session {session_id!r}")
        with box.lock:
            session = box.session
            tree = session.tree
            pairs = []
            for entry in session.log:
                children = []
                for nid in entry.applied:
                    n = tree.nodes[nid]
                    children.append({
                        "mask": n.mask, "class_id": n.class_id,
                        "is_instance": n.is_instance, "node_id": nid})
                pairs.append((entry.request, children))
            stream = RequestStream(
                image_id=box.image_id, kb_version=tree.kb_version,
                width=tree.width, height=tree.height,
                probe_policy="interactive")
            for req, children in pairs:
                stream.pairs.append((req, Answer(children=tuple(
                    AnswerChild(c["mask"], c["class_id"], c["is_instance"],
                                c["node_id"]) for c in children))))
            out_dir = data_dir / "exports" / session_id
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "tree.json").write_bytes(tree.serialize())
            buf = io.StringIO()
            write_stream(stream, buf)
            (out_dir / "requests.jsonl").write_text(buf.getvalue())
            return {
                "etag": tree.hash(),
                "tree": tree.to_json(),
                "log": [json.loads(line) for line in
                        buf.getvalue().splitlines()],
                "paths": {"tree": str(out_dir / "tree.json"),
                          "requests": str(out_dir / "requests.jsonl")},
            }

    @app.get("/images/{image_id}")
    async def get_image(image_id: str):
        path = data_dir / "images" / f"{image_id}.png"
        if not path.exists():
            return _http_error(404, "unknown_image",
                               f"no image {image_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/kb/{version}")
    async def get_kb(version: str):
        if not registry.has(version):
            return _http_error(404, "unknown_kb_version",
                               f"no knowledge base {version!r}")
        return registry.get(version).to_json()

    return app


def serve(data_dir: Union[str, Path], port: int = 8080,
          host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(data_dir), host=host, port=port,
                log_level="warning")
