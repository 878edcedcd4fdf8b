"""Versioned knowledge base: a DAG of text-labeled concepts.

A concept's ordered children are its named parts or sub-classes (its
"sub-knowledge"). Versions are immutable snapshots identified by a content
hash of the concept table, so a version id stays valid across file moves
and derived versions never disturb their ancestors. Labels may repeat under
different parents (e.g. both ``person`` and ``rider`` have a ``leg``), but
never under the same parent.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Optional, Tuple

from .errors import DuplicateLabel, MalformedKb, UnknownConcept, UnknownKbVersion
from .masks import canonical_json_bytes

ROOT_LABEL = "scene"


@dataclass(frozen=True)
class Concept:
    id: int
    label: str
    countable: bool
    children: Tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {"id": self.id, "label": self.label, "countable": self.countable,
                "children": list(self.children)}


def _content_hash(concepts: Iterable[Concept]) -> str:
    table = [c.to_json() for c in sorted(concepts, key=lambda c: c.id)]
    return hashlib.sha256(canonical_json_bytes(table)).hexdigest()


class KbVersion:
    """Immutable snapshot of the concept graph."""

    __slots__ = ("version_id", "parent_version", "created_at", "_concepts",
                 "_by_id", "_scene_id")

    def __init__(self, concepts: Iterable[Concept],
                 parent_version: Optional[str] = None,
                 created_at: Optional[str] = None) -> None:
        table = tuple(sorted(concepts, key=lambda c: c.id))
        by_id = {c.id: c for c in table}
        if len(by_id) != len(table):
            raise MalformedKb("duplicate concept ids")
        _validate_graph(table, by_id)
        object.__setattr__(self, "_concepts", table)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_scene_id", _find_root(table, by_id))
        object.__setattr__(self, "version_id", _content_hash(table))
        object.__setattr__(self, "parent_version", parent_version)
        object.__setattr__(self, "created_at",
                           created_at or datetime.now(timezone.utc).isoformat())

    def __setattr__(self, name: str, value) -> None:
        raise AttributeError("KbVersion is immutable")

    @property
    def concepts(self) -> Tuple[Concept, ...]:
        return self._concepts

    @property
    def scene_id(self) -> int:
        return self._scene_id

    def concept(self, cid: int) -> Concept:
        try:
            return self._by_id[cid]
        except KeyError:
            raise UnknownConcept(f"concept id {cid} not in version "
                                 f"{self.version_id[:12]}", concept=cid) from None

    def has(self, cid: int) -> bool:
        return cid in self._by_id

    def find_by_label(self, label: str) -> List[Concept]:
        return [c for c in self._concepts if c.label == label]

    def resolve_label(self, label: str) -> Concept:
        hits = self.find_by_label(label)
        if not hits:
            raise UnknownConcept(f"no concept labeled {label!r}", label=label)
        if len(hits) > 1:
            raise UnknownConcept(f"label {label!r} is ambiguous "
                                 f"({len(hits)} concepts)", label=label)
        return hits[0]

    def parent_of(self, cid: int) -> Optional[int]:
        self.concept(cid)
        for c in self._concepts:
            if cid in c.children:
                return c.id
        return None

    def label_path(self, cid: int) -> Tuple[str, ...]:
        """Root-to-concept label path; follows the lowest-id parent."""
        path = [self.concept(cid).label]
        cur = cid
        while cur != self._scene_id:
            parents = [c.id for c in self._concepts if cur in c.children]
            cur = min(parents)
            path.append(self._by_id[cur].label)
        return tuple(reversed(path))

    def depth_of(self, cid: int) -> int:
        """Levels below the root: scene is 0, top classes 1, parts 2, ..."""
        return len(self.label_path(cid)) - 1

    def to_json(self) -> dict:
        return {
            "version_id": self.version_id,
            "parent_version": self.parent_version,
            "created_at": self.created_at,
            "concepts": [c.to_json() for c in self._concepts],
        }

    def serialize(self) -> bytes:
        return canonical_json_bytes(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> "KbVersion":
        try:
            concepts = [Concept(id=int(c["id"]), label=str(c["label"]),
                                countable=bool(c["countable"]),
                                children=tuple(int(x) for x in c["children"]))
                        for c in obj["concepts"]]
            version = cls(concepts, parent_version=obj.get("parent_version"),
                          created_at=obj.get("created_at"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedKb(f"bad knowledge-base object: {exc}") from exc
        stated = obj.get("version_id")
        if stated is not None and stated != version.version_id:
            raise MalformedKb("version_id does not match concept table",
                              stated=stated, computed=version.version_id)
        return version

    def __repr__(self) -> str:
        return f"KbVersion({self.version_id[:12]}, {len(self._concepts)} concepts)"


def _validate_graph(table: Tuple[Concept, ...], by_id: Dict[int, Concept]) -> None:
    for c in table:
        seen_labels = set()
        for ch in c.children:
            if ch not in by_id:
                raise MalformedKb(f"child id {ch} of {c.label!r} unresolved",
                                  concept=c.id, child=ch)
            label = by_id[ch].label
            if label in seen_labels:
                raise DuplicateLabel(f"{label!r} appears twice under {c.label!r}",
                                     parent=c.id)
            seen_labels.add(label)
    # cycle check via iterative DFS colors
    state: Dict[int, int] = {}
    for start in by_id:
        if state.get(start):
            continue
        stack = [(start, iter(by_id[start].children))]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                continue
            if state.get(nxt) == 1:
                raise MalformedKb("concept graph has a cycle", at=nxt)
            if not state.get(nxt):
                state[nxt] = 1
                stack.append((nxt, iter(by_id[nxt].children)))


def _find_root(table: Tuple[Concept, ...], by_id: Dict[int, Concept]) -> int:
    referenced = {ch for c in table for ch in c.children}
    roots = [c for c in table if c.id not in referenced]
    if len(roots) != 1:
        raise MalformedKb(f"expected exactly one root, found {len(roots)}")
    root = roots[0]
    if root.label != ROOT_LABEL:
        raise MalformedKb(f"root concept must be labeled {ROOT_LABEL!r}, "
                          f"got {root.label!r}")
    if not root.countable:
        raise MalformedKb("the scene root must be countable (the whole image "
                          "is one instance of it)")
    return root.id


def sub_knowledge(v: KbVersion, class_id: int) -> List[Concept]:
    """Ordered child concepts of ``class_id`` (empty for leaves)."""
    return [v.concept(ch) for ch in v.concept(class_id).children]


def add_concept(v: KbVersion, parent: int, label: str,
                countable: bool = False) -> KbVersion:
    """Derive a new version with ``label`` inserted under ``parent``."""
    parent_concept = v.concept(parent)
    for ch in parent_concept.children:
        if v.concept(ch).label == label:
            raise DuplicateLabel(f"{label!r} already under {parent_concept.label!r}",
                                 parent=parent)
    new_id = max(c.id for c in v.concepts) + 1
    concepts = [c if c.id != parent else
                Concept(c.id, c.label, c.countable, c.children + (new_id,))
                for c in v.concepts]
    concepts.append(Concept(new_id, label, countable))
    return KbVersion(concepts, parent_version=v.version_id)


def copy_sub_knowledge(v: KbVersion, from_id: int, to_id: int) -> KbVersion:
    """Copy ``from_id``'s descendant structure under ``to_id`` with fresh ids.

    Transfers part vocabulary between sibling classes (e.g. car parts to a
    newly added bus) without touching the source. A childless source yields
    an identical graph — and, versions being content-addressed, the same
    version_id.
    """
    src = v.concept(from_id)
    dst = v.concept(to_id)
    dst_labels = {v.concept(ch).label for ch in dst.children}
    for ch in src.children:
        if v.concept(ch).label in dst_labels:
            raise DuplicateLabel(f"{v.concept(ch).label!r} already under "
                                 f"{dst.label!r}", parent=to_id)

    table = {c.id: c for c in v.concepts}
    next_id = max(table) + 1

    def clone(cid: int) -> int:
        nonlocal next_id
        original = v.concept(cid)
        new_id = next_id
        next_id += 1
        table[new_id] = Concept(new_id, original.label, original.countable,
                                tuple(clone(ch) for ch in original.children))
        return new_id

    new_children = tuple(clone(ch) for ch in src.children)
    table[to_id] = Concept(dst.id, dst.label, dst.countable,
                           dst.children + new_children)
    return KbVersion(table.values(), parent_version=v.version_id)


@dataclass(frozen=True)
class KbDiff:
    """Symmetric difference of two versions, keyed by label paths."""

    added_concepts: Tuple[str, ...]
    removed_concepts: Tuple[str, ...]
    added_edges: Tuple[Tuple[str, str], ...]
    removed_edges: Tuple[Tuple[str, str], ...]

    def is_empty(self) -> bool:
        return not (self.added_concepts or self.removed_concepts
                    or self.added_edges or self.removed_edges)

    def to_json(self) -> dict:
        return {
            "added_concepts": list(self.added_concepts),
            "removed_concepts": list(self.removed_concepts),
            "added_edges": [list(e) for e in self.added_edges],
            "removed_edges": [list(e) for e in self.removed_edges],
        }


def _path_str(path: Tuple[str, ...]) -> str:
    return "/".join(path)


def _paths_and_edges(v: KbVersion):
    paths = {_path_str(v.label_path(c.id)) for c in v.concepts}
    edges = {(_path_str(v.label_path(c.id)), v.concept(ch).label)
             for c in v.concepts for ch in c.children}
    return paths, edges


def diff(a: KbVersion, b: KbVersion) -> KbDiff:
    pa, ea = _paths_and_edges(a)
    pb, eb = _paths_and_edges(b)
    return KbDiff(
        added_concepts=tuple(sorted(pb - pa)),
        removed_concepts=tuple(sorted(pa - pb)),
        added_edges=tuple(sorted(eb - ea)),
        removed_edges=tuple(sorted(ea - eb)),
    )


class KbRegistry:
    """Maps version_id to version; single writer, many readers."""

    def __init__(self) -> None:
        self._versions: Dict[str, KbVersion] = {}
        self._lock = threading.Lock()

    def put(self, v: KbVersion) -> KbVersion:
        with self._lock:
            return self._versions.setdefault(v.version_id, v)

    def get(self, version_id: str) -> KbVersion:
        try:
            return self._versions[version_id]
        except KeyError:
            raise UnknownKbVersion(f"unknown knowledge-base version {version_id!r}",
                                   version=version_id) from None

    def has(self, version_id: str) -> bool:
        return version_id in self._versions

    def __len__(self) -> int:
        return len(self._versions)

    def versions(self) -> List[KbVersion]:
        return list(self._versions.values())


@dataclass
class KbBuilder:
    """Convenience builder for fixture graphs; freezes into a KbVersion."""

    _labels: List[Tuple[int, str, bool]] = field(default_factory=list)
    _children: Dict[int, List[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._labels.append((0, ROOT_LABEL, True))
        self._children[0] = []

    def add(self, label: str, parent: int = 0, countable: bool = False) -> int:
        cid = len(self._labels)
        self._labels.append((cid, label, countable))
        self._children[cid] = []
        self._children[parent].append(cid)
        return cid

    def freeze(self, registry: Optional[KbRegistry] = None) -> KbVersion:
        concepts = [Concept(cid, label, countable, tuple(self._children[cid]))
                    for cid, label, countable in self._labels]
        version = KbVersion(concepts)
        if registry is not None:
            registry.put(version)
        return version


def save_kb(v: KbVersion, path) -> None:
    with open(path, "wb") as fh:
        fh.write(v.serialize())


def load_kb(path) -> KbVersion:
    with open(path, "r", encoding="utf-8") as fh:
        return KbVersion.from_json(json.load(fh))
