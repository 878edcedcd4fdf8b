"""Recognition trees: alternating instance / semantic-region hierarchies.

Both ground truth and predictions use this structure. Node 0 is always the
root: an instance of the ``scene`` concept whose mask covers the whole
image. Children of an instance are semantic regions (one per class,
pairwise disjoint); children of a semantic region are instances of that
region's class and may overlap each other (independent probe results).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AlternationViolation,
    DimensionMismatch,
    InvalidTree,
    MalformedRle,
    MalformedTree,
    NotASubclass,
    OverlapViolation,
    UnknownConcept,
)
from .kb import KbRegistry, KbVersion
from .masks import BinaryMask, canonical_json_bytes, clip, mask_from_json, mask_to_json


@dataclass
class TreeNode:
    node_id: int
    mask: BinaryMask
    class_id: int
    is_instance: bool
    children: List[int] = field(default_factory=list)
    probe: Optional[Tuple[int, int]] = None


@dataclass(frozen=True)
class ChildSpec:
    """One child to attach: mask, class, kind, and (for instances) the probe."""

    mask: BinaryMask
    class_id: int
    is_instance: bool
    probe: Optional[Tuple[int, int]] = None


class RecognitionTree:
    def __init__(self, image_id: str, width: int, height: int,
                 kb: Optional[KbVersion] = None,
                 kb_version: Optional[str] = None) -> None:
        if width < 1 or height < 1:
            raise DimensionMismatch("image dimensions must be positive",
                                    width=width, height=height)
        if kb is None and kb_version is None:
            raise InvalidTree("a knowledge-base version is required")
        self.image_id = image_id
        self.width = width
        self.height = height
        self.kb = kb
        self.kb_version = kb_version if kb_version is not None else kb.version_id
        self.nodes: Dict[int, TreeNode] = {}

    # -- construction -----------------------------------------------------

    @classmethod
    def new(cls, image_id: str, width: int, height: int,
            kb: KbVersion) -> "RecognitionTree":
        tree = cls(image_id, width, height, kb=kb)
        root = TreeNode(node_id=0, mask=BinaryMask.ones(width, height),
                        class_id=kb.scene_id, is_instance=True)
        tree.nodes[0] = root
        return tree

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def node(self, node_id: int) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise InvalidTree(f"node {node_id} does not exist",
                              node=node_id) from None

    def _require_kb(self) -> KbVersion:
        if self.kb is None:
            raise InvalidTree("tree has no resolved knowledge-base version "
                              f"({self.kb_version!r}); parse with a registry")
        return self.kb

    def attach_children(self, parent: int,
                        children: Sequence[ChildSpec]) -> List[int]:
        """Attach children, clipping each mask to the parent (top-down filter).

        Enforces alternation, sub-knowledge membership for semantic children,
        class equality for instance children, and disjointness of semantic
        siblings. Returns the new node ids in input order.
        """
        kb = self._require_kb()
        parent_node = self.node(parent)
        sub_ids = {c for c in kb.concept(parent_node.class_id).children}

        existing_semantic = [self.nodes[c] for c in parent_node.children
                             if not self.nodes[c].is_instance]
        taken_classes = {n.class_id for n in existing_semantic}
        occupied = np.zeros((self.height, self.width), dtype=bool)
        for n in existing_semantic:
            occupied |= n.mask.bits

        prepared: List[TreeNode] = []
        next_id = max(self.nodes) + 1
        for spec in children:
            if spec.is_instance == parent_node.is_instance:
                raise AlternationViolation(
                    "child kind must alternate with the parent "
                    f"(parent is_instance={parent_node.is_instance})",
                    parent=parent)
            if not kb.has(spec.class_id):
                raise UnknownConcept(f"class {spec.class_id} not in version "
                                     f"{self.kb_version[:12]}", concept=spec.class_id)
            if spec.mask.shape != (self.height, self.width):
                raise DimensionMismatch("child mask does not match image dims",
                                        mask=list(spec.mask.shape))
            if spec.is_instance:
                if spec.class_id != parent_node.class_id:
                    raise NotASubclass(
                        f"instance class {spec.class_id} differs from its "
                        f"semantic region's class {parent_node.class_id}",
                        parent=parent)
            else:
                if spec.class_id not in sub_ids:
                    raise NotASubclass(
                        f"class {spec.class_id} is not in the sub-knowledge of "
                        f"{kb.concept(parent_node.class_id).label!r}",
                        parent=parent, child_class=spec.class_id)
                if spec.probe is not None:
                    raise InvalidTree("probes belong to instance nodes only")

            clipped = clip(spec.mask, parent_node.mask)
            if not spec.is_instance:
                if spec.class_id in taken_classes:
                    raise OverlapViolation(
                        f"semantic sibling of class {spec.class_id} already "
                        "present under this instance", parent=parent)
                if (occupied & clipped.bits).any():
                    raise OverlapViolation(
                        "semantic sibling masks overlap after clipping",
                        parent=parent, child_class=spec.class_id)
                taken_classes.add(spec.class_id)
                occupied |= clipped.bits

            prepared.append(TreeNode(node_id=next_id, mask=clipped,
                                     class_id=spec.class_id,
                                     is_instance=spec.is_instance,
                                     probe=spec.probe))
            next_id += 1

        for node in prepared:
            self.nodes[node.node_id] = node
            parent_node.children.append(node.node_id)
        return [n.node_id for n in prepared]

    # -- traversal --------------------------------------------------------

    def bfs_ids(self) -> List[int]:
        order, queue = [], [0]
        while queue:
            nid = queue.pop(0)
            order.append(nid)
            queue.extend(self.nodes[nid].children)
        return order

    def parent_map(self) -> Dict[int, int]:
        return {c: n.node_id for n in self.nodes.values() for c in n.children}

    def depth_of(self, node_id: int) -> int:
        parents = self.parent_map()
        depth, cur = 0, node_id
        while cur != 0:
            cur = parents[cur]
            depth += 1
        return depth

    def subtree_ids(self, node_id: int) -> List[int]:
        ids, queue = [], [node_id]
        while queue:
            nid = queue.pop(0)
            ids.append(nid)
            queue.extend(self.nodes[nid].children)
        return ids

    def remove_subtree(self, node_id: int) -> None:
        """Drop a node and its descendants (used by annotation subsampling)."""
        if node_id == 0:
            raise InvalidTree("cannot remove the root")
        parents = self.parent_map()
        if node_id not in parents:
            raise InvalidTree(f"node {node_id} does not exist", node=node_id)
        for nid in self.subtree_ids(node_id):
            del self.nodes[nid]
        parent = self.nodes[parents[node_id]]
        parent.children.remove(node_id)

    def instance_nodes(self) -> List[TreeNode]:
        return [n for n in self.nodes.values() if n.is_instance]

    def semantic_nodes(self) -> List[TreeNode]:
        return [n for n in self.nodes.values() if not n.is_instance]

    def clone(self) -> "RecognitionTree":
        out = RecognitionTree(self.image_id, self.width, self.height,
                              kb=self.kb, kb_version=self.kb_version)
        for nid, n in self.nodes.items():
            out.nodes[nid] = TreeNode(n.node_id, n.mask, n.class_id,
                                      n.is_instance, list(n.children), n.probe)
        return out

    # -- validation -------------------------------------------------------

    def validate(self) -> List[str]:
        """Structural violations; empty for trees built via attach_children."""
        problems: List[str] = []
        if 0 not in self.nodes:
            return ["missing root node 0"]
        root = self.nodes[0]
        if not root.is_instance:
            problems.append("root must be an instance")
        if not np.all(root.mask.bits):
            problems.append("root mask must cover the whole image")
        if self.kb is not None and root.class_id != self.kb.scene_id:
            problems.append("root class must be the scene concept")

        seen_as_child: Dict[int, int] = {}
        for n in self.nodes.values():
            for c in n.children:
                if c not in self.nodes:
                    problems.append(f"node {n.node_id} references missing child {c}")
                    continue
                if c in seen_as_child:
                    problems.append(f"node {c} has multiple parents")
                seen_as_child[c] = n.node_id
        if 0 in seen_as_child:
            problems.append("root appears as a child")

        reachable = set(self.bfs_ids()) if not problems else None
        if reachable is not None:
            unreachable = set(self.nodes) - reachable
            for nid in sorted(unreachable):
                problems.append(f"node {nid} unreachable from root")

        for n in self.nodes.values():
            semantic_children = []
            for c in n.children:
                ch = self.nodes.get(c)
                if ch is None:
                    continue
                if ch.is_instance == n.is_instance:
                    problems.append(f"node {c} violates instance/semantic "
                                    "alternation")
                if not n.mask.contains(ch.mask):
                    problems.append(f"node {c} mask exceeds its parent")
                if ch.is_instance and ch.class_id != n.class_id:
                    problems.append(f"instance node {c} class differs from its "
                                    "semantic region")
                if not ch.is_instance:
                    semantic_children.append(ch)
                if self.kb is not None:
                    if not self.kb.has(ch.class_id):
                        problems.append(f"node {c} class {ch.class_id} not in "
                                        "knowledge base")
                    elif not ch.is_instance and ch.class_id not in \
                            self.kb.concept(n.class_id).children:
                        problems.append(f"node {c} class is not a sub-class of "
                                        f"its parent's class")
            classes = [ch.class_id for ch in semantic_children]
            if len(classes) != len(set(classes)):
                problems.append(f"node {n.node_id} has semantic children with "
                                "duplicate classes")
            cover = np.zeros((self.height, self.width), dtype=bool)
            for ch in semantic_children:
                if (cover & ch.mask.bits).any():
                    problems.append(f"semantic children of node {n.node_id} overlap")
                    break
                cover |= ch.mask.bits
        return problems

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        nodes = []
        full = self.width * self.height
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            entry = {
                "id": n.node_id,
                "class": n.class_id,
                "is_instance": n.is_instance,
                "rle": None if n.mask.count() == full else mask_to_json(n.mask),
                "children": list(n.children),
            }
            if n.probe is not None:
                entry["probe"] = [n.probe[0], n.probe[1]]
            nodes.append(entry)
        return {"image_id": self.image_id, "width": self.width,
                "height": self.height, "kb_version": self.kb_version,
                "nodes": nodes}

    def serialize(self) -> bytes:
        return canonical_json_bytes(self.to_json())

    def hash(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    @classmethod
    def from_json(cls, obj: dict, registry: Optional[KbRegistry] = None,
                  strict: bool = False) -> "RecognitionTree":
        try:
            image_id = str(obj["image_id"])
            width, height = int(obj["width"]), int(obj["height"])
            version = str(obj["kb_version"])
            raw_nodes = obj["nodes"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedTree(f"bad tree object: {exc}") from exc

        kb = None
        if registry is not None and registry.has(version):
            kb = registry.get(version)
        if strict and kb is None:
            raise MalformedTree(f"kb_version {version!r} is not resolvable",
                                version=version)

        tree = cls(image_id, width, height, kb=kb, kb_version=version)
        for raw in raw_nodes:
            try:
                nid = int(raw["id"])
                rle = raw["rle"]
                mask = (BinaryMask.ones(width, height) if rle is None
                        else mask_from_json(rle))
                probe = raw.get("probe")
                node = TreeNode(
                    node_id=nid, mask=mask, class_id=int(raw["class"]),
                    is_instance=bool(raw["is_instance"]),
                    children=[int(c) for c in raw["children"]],
                    probe=None if probe is None else (int(probe[0]), int(probe[1])),
                )
            except MalformedRle as exc:
                raise MalformedTree(f"bad RLE in node: {exc}") from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedTree(f"bad node object: {exc}") from exc
            if mask.shape != (height, width):
                raise MalformedTree("node mask dimensions differ from image",
                                    node=nid)
            if nid in tree.nodes:
                raise MalformedTree(f"duplicate node id {nid}", node=nid)
            tree.nodes[nid] = node

        if 0 not in tree.nodes:
            raise MalformedTree("missing root node 0")
        root = tree.nodes[0]
        if not np.all(root.mask.bits):
            raise MalformedTree("root rle must be null (full mask)")
        if not root.is_instance:
            raise MalformedTree("root must be an instance")
        for n in tree.nodes.values():
            for c in n.children:
                if c not in tree.nodes:
                    raise MalformedTree(f"dangling child id {c}", node=n.node_id)
        if strict:
            assert kb is not None
            if root.class_id != kb.scene_id:
                raise MalformedTree("root class is not the scene concept")
            for n in tree.nodes.values():
                if not kb.has(n.class_id):
                    raise MalformedTree(f"node {n.node_id} class {n.class_id} "
                                        "not in knowledge base", node=n.node_id)
        return tree

    @classmethod
    def parse(cls, data, registry: Optional[KbRegistry] = None,
              strict: bool = False) -> "RecognitionTree":
        if isinstance(data, (bytes, bytearray)):
            data = data.decode("utf-8")
        if isinstance(data, str):
            try:
                data = json.loads(data)
            except json.JSONDecodeError as exc:
                raise MalformedTree(f"invalid JSON: {exc}") from exc
        return cls.from_json(data, registry=registry, strict=strict)


def new_tree(image_id: str, width: int, height: int,
             kb: KbVersion) -> RecognitionTree:
    return RecognitionTree.new(image_id, width, height, kb)


def attach_children(tree: RecognitionTree, parent: int,
                    children: Sequence[ChildSpec]) -> List[int]:
    return tree.attach_children(parent, children)


def validate(tree: RecognitionTree) -> List[str]:
    return tree.validate()


def serialize(tree: RecognitionTree) -> bytes:
    return tree.serialize()


def parse(data, registry: Optional[KbRegistry] = None,
          strict: bool = False) -> RecognitionTree:
    return RecognitionTree.parse(data, registry=registry, strict=strict)


def _node_key(tree: RecognitionTree, nid: int) -> tuple:
    n = tree.nodes[nid]
    return (n.class_id, n.is_instance, n.mask.bits.tobytes())


def isomorphic(a: RecognitionTree, b: RecognitionTree) -> bool:
    """Same masks, classes, and topology; node ids are free to differ."""
    if (a.width, a.height) != (b.width, b.height):
        return False

    def eq(na: int, nb: int) -> bool:
        if _node_key(a, na) != _node_key(b, nb):
            return False
        ca = sorted(a.nodes[na].children, key=lambda i: _node_key(a, i))
        cb = sorted(b.nodes[nb].children, key=lambda i: _node_key(b, i))
        if len(ca) != len(cb):
            return False
        return all(eq(x, y) for x, y in zip(ca, cb))

    return eq(0, 0)
