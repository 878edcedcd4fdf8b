"""Requests and answers: the (Q_k, A_k) stream parsed from an annotated tree.

Type-I asks an instance node for its semantic children; Type-II asks a
semantic node which instance occupies a probe pixel. ``parse_requests``
turns a ground-truth tree into an ordered, replayable stream of both,
honoring incomplete annotations: only labeled child classes appear in a
Type-I request's ``active_classes``; instances with no labeled parts emit
no Type-I request at all.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import InvalidTree, MalformedTree, WrongKind
from .kb import KbVersion
from .masks import BinaryMask, mask_from_json, mask_to_json, mass_center
from .tree import RecognitionTree

TYPE1 = "I"
TYPE2 = "II"


@dataclass(frozen=True)
class Request:
    kind: str
    node_id: int
    class_id: int
    active_classes: Tuple[int, ...] = ()
    probe: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        if self.kind not in (TYPE1, TYPE2):
            raise WrongKind(f"unknown request kind {self.kind!r}")
        if self.kind == TYPE2 and self.probe is None:
            raise WrongKind("a Type-II request needs a probe pixel")


@dataclass(frozen=True)
class AnswerChild:
    mask: BinaryMask
    class_id: int
    is_instance: bool
    node_id: Optional[int] = None  # source node in the originating tree


@dataclass(frozen=True)
class Answer:
    children: Tuple[AnswerChild, ...] = ()
    lost: bool = False
    score: Optional[float] = None


@dataclass
class RequestStream:
    image_id: str
    kb_version: str
    width: int
    height: int
    pairs: List[Tuple[Request, Answer]] = field(default_factory=list)
    probe_policy: str = "mass_center"


def _check_structure(gt: RecognitionTree) -> None:
    # Structural soundness only. Geometric slack (a child mask leaking past
    # its parent) is tolerated here: the probe fallback below handles it.
    if 0 not in gt.nodes or not gt.nodes[0].is_instance:
        raise InvalidTree("stream source needs an instance root with id 0")
    for nid, node in gt.nodes.items():
        for cid in node.children:
            child = gt.nodes.get(cid)
            if child is None:
                raise InvalidTree(f"node {nid} lists missing child {cid}")
            if child.is_instance == node.is_instance:
                raise InvalidTree(f"nodes {nid} and {cid} break alternation")


def parse_requests(gt: RecognitionTree) -> List[Tuple[Request, Answer]]:
    """Emit (request, answer) pairs in breadth-first order from the root.

    Probes for Type-II answers use the recorded probe when the ground truth
    has one. Generated probes must survive a replay: a simulated click lands
    on the smallest same-class instance covering the pixel (ties to the
    lower node id), so the probe is drawn from the pixels this instance wins
    under that rule, preferring those inside the parent region. When every
    pixel is claimed by a smaller twin the probe degrades to the mass center
    of instance ∩ region, then of the instance alone.
    """
    _check_structure(gt)

    instances_by_class: dict = {}
    areas: dict = {}
    for nid in gt.bfs_ids():
        node = gt.nodes[nid]
        if node.is_instance and nid != 0:
            instances_by_class.setdefault(node.class_id, []).append(node)
            areas[nid] = node.mask.count()

    def pick_probe(region, inst) -> Tuple[int, int]:
        rank = (areas[inst.node_id], inst.node_id)
        own = inst.mask.bits.copy()
        for rival in instances_by_class[inst.class_id]:
            if rival.node_id != inst.node_id \
                    and (areas[rival.node_id], rival.node_id) < rank:
                own &= ~rival.mask.bits
        for bits in (own & region.mask.bits, own):
            if bits.any():
                return mass_center(BinaryMask(bits)).inside
        overlap = inst.mask.intersection(region.mask)
        source = inst.mask if overlap.is_empty() else overlap
        return mass_center(source).inside

    pairs: List[Tuple[Request, Answer]] = []
    for nid in gt.bfs_ids():
        node = gt.nodes[nid]
        kids = [gt.nodes[c] for c in node.children]
        if node.is_instance:
            semantic = [k for k in kids if not k.is_instance]
            if not semantic:
                continue
            active = tuple(sorted(k.class_id for k in semantic))
            req = Request(kind=TYPE1, node_id=nid, class_id=node.class_id,
                          active_classes=active)
            ans = Answer(children=tuple(
                AnswerChild(k.mask, k.class_id, False, k.node_id)
                for k in semantic))
            pairs.append((req, ans))
        else:
            for k in kids:
                probe = k.probe if k.probe is not None \
                    else pick_probe(node, k)
                req = Request(kind=TYPE2, node_id=nid, class_id=k.class_id,
                              probe=probe)
                ans = Answer(children=(AnswerChild(k.mask, k.class_id, True,
                                                   k.node_id),))
                pairs.append((req, ans))
    return pairs


def active_class_mask(req: Request, kb: KbVersion) -> List[bool]:
    """Supervision flags over sub-knowledge order for a Type-I request."""
    if req.kind != TYPE1:
        raise WrongKind("active_class_mask applies to Type-I requests only")
    order = kb.concept(req.class_id).children
    if not req.active_classes:
        warnings.warn("Type-I request with an empty active set; it should "
                      "not have been emitted", stacklevel=2)
        return [False] * len(order)
    active = set(req.active_classes)
    return [cid in active for cid in order]


# -- JSON Lines stream --------------------------------------------------------

def _pair_to_json(req: Request, ans: Answer) -> dict:
    obj: dict = {"kind": req.kind, "node": req.node_id, "class": req.class_id}
    if req.kind == TYPE1:
        obj["active_classes"] = list(req.active_classes)
    else:
        obj["probe"] = [req.probe[0], req.probe[1]]
    answer = []
    for c in ans.children:
        entry = {"rle": mask_to_json(c.mask), "class": c.class_id,
                 "is_instance": c.is_instance}
        if c.node_id is not None:
            entry["node"] = c.node_id
        answer.append(entry)
    obj["answer"] = answer
    if ans.lost:
        obj["lost"] = True
    return obj


def _pair_from_json(obj: dict) -> Tuple[Request, Answer]:
    kind = obj["kind"]
    probe = obj.get("probe")
    req = Request(
        kind=kind, node_id=int(obj["node"]), class_id=int(obj["class"]),
        active_classes=tuple(int(c) for c in obj.get("active_classes", ())),
        probe=None if probe is None else (int(probe[0]), int(probe[1])),
    )
    children = tuple(
        AnswerChild(mask_from_json(c["rle"]), int(c["class"]),
                    bool(c["is_instance"]),
                    None if c.get("node") is None else int(c["node"]))
        for c in obj.get("answer", ())
    )
    return req, Answer(children=children, lost=bool(obj.get("lost", False)))


def write_stream(stream: RequestStream, fp: IO[str]) -> None:
    header = {"image_id": stream.image_id, "kb_version": stream.kb_version,
              "width": stream.width, "height": stream.height,
              "probe_policy": stream.probe_policy}
    fp.write(json.dumps(header, sort_keys=True) + "\n")
    for req, ans in stream.pairs:
        fp.write(json.dumps(_pair_to_json(req, ans), sort_keys=True) + "\n")


def read_stream(source: Union[IO[str], Iterable[str]]) -> RequestStream:
    lines = iter(source)
    try:
        first = next(lines)
    except StopIteration:
        raise MalformedTree("empty request stream") from None
    try:
        header = json.loads(first)
        stream = RequestStream(
            image_id=str(header["image_id"]),
            kb_version=str(header["kb_version"]),
            width=int(header["width"]), height=int(header["height"]),
            probe_policy=str(header.get("probe_policy", "mass_center")),
        )
        for line in lines:
            line = line.strip()
            if not line:
                continue
            stream.pairs.append(_pair_from_json(json.loads(line)))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise MalformedTree(f"bad request stream: {exc}") from exc
    return stream


def stream_from_tree(gt: RecognitionTree) -> RequestStream:
    return RequestStream(image_id=gt.image_id, kb_version=gt.kb_version,
                         width=gt.width, height=gt.height,
                         pairs=parse_requests(gt))
