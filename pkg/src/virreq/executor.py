"""Session execution: sequential request application and batch inference.

A session owns one mutable tree plus a backend. ``step`` applies a single
request; ``run_all`` replays a parsed stream (remapping the stream's node
ids onto the live tree); ``non_probing_instances`` covers a semantic region
with grid probes and keeps NMS survivors as instance children.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    AlternationViolation,
    BackendError,
    MissingPrediction,
    NoCandidate,
    SessionClosed,
    VirreqError,
)
from .masks import BinaryMask, iou
from .probes import DEFAULT_GAMMA, GammaPolicy, GridPolicy, grid_probes
from .requests import TYPE1, TYPE2, Answer, Request, RequestStream
from .tree import ChildSpec, RecognitionTree

NMS_IOU = 0.6


@dataclass
class LogEntry:
    request: Request
    applied: Tuple[int, ...]
    lost: bool = False
    error: Optional[str] = None


@dataclass
class Session:
    tree: RecognitionTree
    backend: Optional[object] = None
    gamma_policy: GammaPolicy = field(default_factory=GammaPolicy)
    grid_policy: GridPolicy = field(default_factory=GridPolicy)
    log: List[LogEntry] = field(default_factory=list)
    closed: bool = False
    _snapshots: List[Tuple[RecognitionTree, int]] = field(default_factory=list)

    def close(self) -> None:
        self.closed = True

    def snapshot(self) -> None:
        self._snapshots.append((self.tree.clone(), len(self.log)))

    def undo(self) -> bool:
        """Restore the exact tree and log from before the last mutation."""
        if not self._snapshots:
            return False
        tree, log_len = self._snapshots.pop()
        self.tree = tree
        del self.log[log_len:]
        return True


def step(session: Session, request: Request,
         answer: Optional[Answer] = None) -> List[int]:
    """Apply one request to the live tree; returns new node ids.

    The answer comes from the session backend unless a recorded one is
    passed in. A lost Type-II answer attaches nothing and logs the loss.
    """
    if session.closed:
        raise SessionClosed("session is closed")
    node = session.tree.node(request.node_id)
    if request.kind == TYPE1 and not node.is_instance:
        raise AlternationViolation(
            "Type-I requests target instance nodes", node=request.node_id)
    if request.kind == TYPE2 and node.is_instance:
        raise AlternationViolation(
            "Type-II requests target semantic regions", node=request.node_id)

    if answer is None:
        if session.backend is None:
            raise BackendError("session has no backend and no recorded answer")
        if request.kind == TYPE1:
            answer = session.backend.answer_type1(node, request)
        else:
            answer = session.backend.answer_type2(node, request)

    session.snapshot()
    if request.kind == TYPE2:
        if answer.lost or not answer.children:
            session.log.append(LogEntry(request, (), lost=True))
            return []
        child = answer.children[0]
        clipped = child.mask.intersection(node.mask)
        if clipped.is_empty():
            session.log.append(LogEntry(request, (), lost=True))
            return []
        specs = [ChildSpec(child.mask, child.class_id, True,
                           probe=request.probe)]
    else:
        specs = [ChildSpec(c.mask, c.class_id, False)
                 for c in answer.children
                 if not c.mask.intersection(node.mask).is_empty()]
        if not specs:
            session.log.append(LogEntry(request, ()))
            return []
    try:
        new_ids = session.tree.attach_children(request.node_id, specs)
    except VirreqError:
        session._snapshots.pop()
        raise
    session.log.append(LogEntry(request, tuple(new_ids)))
    return new_ids


def run_all(source: Union[RequestStream, Sequence[Tuple[Request, Answer]]],
            session: Session) -> RecognitionTree:
    """Apply a whole stream in order, remapping stream node ids to live ids.

    Structural errors abort; predictor misses (missing files, no candidate)
    are logged per request and skipped.
    """
    pairs = source.pairs if isinstance(source, RequestStream) else list(source)
    id_map: Dict[int, int] = {0: 0}
    use_recorded = session.backend is None

    for req, recorded in pairs:
        if req.node_id not in id_map:
            # Target never materialized (its probe was lost earlier).
            session.log.append(LogEntry(req, (), lost=True,
                                        error="target unavailable"))
            continue
        live = Request(kind=req.kind, node_id=id_map[req.node_id],
                       class_id=req.class_id,
                       active_classes=req.active_classes, probe=req.probe)
        try:
            new_ids = step(session, live,
                           answer=recorded if use_recorded else None)
        except (MissingPrediction, NoCandidate) as exc:
            session.log.append(LogEntry(live, (), error=exc.code))
            continue

        if req.kind == TYPE2:
            src = recorded.children[0].node_id if recorded.children else None
            if src is not None and new_ids:
                id_map[src] = new_ids[0]
        else:
            by_class = {}
            for nid in new_ids:
                by_class[session.tree.nodes[nid].class_id] = nid
            for child in recorded.children:
                if child.node_id is not None and child.class_id in by_class:
                    id_map[child.node_id] = by_class[child.class_id]
    return session.tree


def _nms(candidates: List[Tuple[BinaryMask, float, Tuple[int, int]]],
         threshold: float) -> List[Tuple[BinaryMask, float, Tuple[int, int]]]:
    """Greedy mask NMS; ties in score keep probe row-major order (the
    input order), so the outcome is deterministic."""
    ranked = sorted(enumerate(candidates), key=lambda t: (-t[1][1], t[0]))
    kept: List[Tuple[BinaryMask, float, Tuple[int, int]]] = []
    for _, cand in ranked:
        mask = cand[0]
        suppressed = False
        for k in kept:
            if iou(mask, k[0]) > threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(cand)
    return kept


def non_probing_instances(session: Session, region_node: int, *,
                          nms_iou: float = NMS_IOU,
                          disjoint: bool = False) -> List[int]:
    """Dense grid probing over one semantic region, then greedy mask NMS.

    Kept instances may overlap unless ``disjoint`` assigns contested
    pixels to the higher-scoring one.
    """
    if session.closed:
        raise SessionClosed("session is closed")
    node = session.tree.node(region_node)
    if node.is_instance:
        raise AlternationViolation(
            "non-probing inference targets semantic regions",
            node=region_node)
    if session.backend is None:
        raise BackendError("non-probing inference needs a backend")

    candidates: List[Tuple[BinaryMask, float, Tuple[int, int]]] = []
    for probe in grid_probes(node.mask, session.grid_policy):
        req = Request(kind=TYPE2, node_id=region_node,
                      class_id=node.class_id, probe=probe)
        try:
            ans = session.backend.answer_type2(node, req)
        except (NoCandidate, MissingPrediction):
            continue
        if ans.lost or not ans.children:
            continue
        mask = ans.children[0].mask.intersection(node.mask)
        if mask.is_empty():
            continue
        score = ans.score if ans.score is not None else 0.0
        candidates.append((mask, float(score), probe))

    kept = _nms(candidates, nms_iou)
    if disjoint and kept:
        taken = np.zeros(node.mask.shape, dtype=bool)
        resolved = []
        for mask, score, probe in kept:
            bits = mask.bits & ~taken
            if not bits.any():
                continue
            taken |= bits
            resolved.append((BinaryMask(bits), score, probe))
        kept = resolved

    session.snapshot()
    specs = [ChildSpec(mask, node.class_id, True, probe=probe)
             for mask, _, probe in kept]
    try:
        new_ids = session.tree.attach_children(region_node, specs)
    except VirreqError:
        session._snapshots.pop()
        raise
    for (_, _, probe), nid in zip(kept, new_ids):
        session.log.append(LogEntry(
            Request(kind=TYPE2, node_id=region_node,
                    class_id=node.class_id, probe=probe), (nid,)))
    return new_ids
