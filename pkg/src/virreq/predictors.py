"""Prediction backends: ground-truth oracle, file-backed bundles, and a
linear embedding classifier over precomputed feature maps.

No network runs here. Feature maps and text embeddings arrive precomputed;
the linear backend only takes inner products against an embedding table,
with an extra implicit all-zero row whose win means "others" (unknown).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .blob import load_blob, save_blob
from .errors import (
    BackendError,
    DimMismatch,
    MissingPrediction,
    NoCandidate,
    UnknownLabel,
    WrongKind,
)
from .kb import KbVersion, sub_knowledge
from .masks import BinaryMask, LabelMap, load_label_png, mask_from_json, mask_to_json
from .requests import TYPE1, TYPE2, Answer, AnswerChild, Request
from .tree import RecognitionTree, TreeNode

TAU_TYPE1 = 0.07
TAU_TYPE2 = 1.0
PYRAMID_STRIDES = (8, 16, 32, 64, 128)


@dataclass
class FeatureMap:
    """Dense f32 features at reduced resolution, row-major (h', w', d)."""

    data: np.ndarray
    level_stride: Optional[int] = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise DimMismatch("feature map must be (height', width', dim)",
                              ndim=self.data.ndim)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass
class EmbeddingTable:
    """Per-concept text embeddings with a softmax temperature.

    ``bias`` is an optional per-row additive term (the probe-answer scorer
    is usually run with temperature 1.0 plus bias).
    """

    labels: Tuple[str, ...]
    vectors: np.ndarray
    temperature: float = 1.0
    bias: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.labels = tuple(self.labels)
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.labels):
            raise DimMismatch("embedding matrix must be (len(labels), dim)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32)
            if self.bias.shape != (len(self.labels),):
                raise DimMismatch("bias must hold one scalar per label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate embedding labels")
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def has(self, label: str) -> bool:
        return label in self._index

    def row(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownLabel(f"no embedding for label {label!r}",
                               label=label) from None

    def vector(self, label: str) -> np.ndarray:
        return self.vectors[self.row(label)]

    def bias_for(self, label: str) -> float:
        if self.bias is None:
            return 0.0
        return float(self.bias[self.row(label)])


def save_embeddings(path: Union[str, Path], table: EmbeddingTable) -> None:
    path = Path(path)
    blob_name = path.stem + ".vrtb"
    header = {"labels": list(table.labels), "dim": table.dim,
              "temperature": table.temperature, "blob": blob_name}
    if table.bias is not None:
        header["bias"] = [float(x) for x in table.bias]
    path.write_text(json.dumps(header, indent=2, sort_keys=True))
    save_blob(path.parent / blob_name, table.vectors)


def load_embeddings(path: Union[str, Path]) -> EmbeddingTable:
    path = Path(path)
    try:
        header = json.loads(path.read_text())
        labels = [str(x) for x in header["labels"]]
        dim = int(header["dim"])
        temperature = float(header["temperature"])
        bias = header.get("bias")
        blob_name = str(header.get("blob", path.stem + ".vrtb"))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise BackendError(f"bad embedding header {path}: {exc}") from exc
    vectors = load_blob(path.parent / blob_name)
    if vectors.shape != (len(labels), dim):
        raise DimMismatch("embedding blob shape disagrees with its header",
                          shape=list(vectors.shape))
    return EmbeddingTable(labels=tuple(labels), vectors=vectors,
                          temperature=temperature,
                          bias=None if bias is None else np.asarray(bias))


# -- candidate store -----------------------------------------------------

@dataclass
class CandidateEntry:
    mask: BinaryMask
    feature: np.ndarray
    confidence: float


class CandidateStore:
    """Instance proposals keyed by (stride, y_f, x_f) feature locations."""

    def __init__(self, strides: Sequence[int] = PYRAMID_STRIDES) -> None:
        self.strides = tuple(strides)
        self.entries: Dict[Tuple[int, int, int], CandidateEntry] = {}

    def put(self, stride: int, y: int, x: int, entry: CandidateEntry) -> None:
        if stride not in self.strides:
            raise BackendError(f"stride {stride} outside the configured "
                               f"pyramid {self.strides}")
        self.entries[(stride, y, x)] = entry

    def at(self, stride: int, y: int, x: int) -> Optional[CandidateEntry]:
        return self.entries.get((stride, y, x))

    def lookup(self, probe: Tuple[int, int]) -> List[Tuple[int, CandidateEntry]]:
        """Entries at the probe's mapped feature location, one per level."""
        a, b = probe
        found = []
        for s in self.strides:
            entry = self.entries.get((s, b // s, a // s))
            if entry is not None:
                found.append((s, entry))
        return found


def save_candidates(dirpath: Union[str, Path], store: CandidateStore) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    keys = sorted(store.entries)
    features = np.stack([store.entries[k].feature for k in keys]) \
        if keys else np.zeros((0, 0), dtype=np.float32)
    save_blob(dirpath / "features.vrtb", features)
    with open(dirpath / "candidates.jsonl", "w") as fp:
        fp.write(json.dumps({"strides": list(store.strides)}) + "\n")
        for offset, key in enumerate(keys):
            stride, y, x = key
            e = store.entries[key]
            fp.write(json.dumps({
                "level": stride, "y": y, "x": x,
                "confidence": e.confidence,
                "rle": mask_to_json(e.mask),
                "feature": offset,
            }, sort_keys=True) + "\n")


def load_candidates(dirpath: Union[str, Path]) -> CandidateStore:
    dirpath = Path(dirpath)
    index_path = dirpath / "candidates.jsonl"
    if not index_path.exists():
        raise MissingPrediction(f"no candidate store under {dirpath}")
    features = load_blob(dirpath / "features.vrtb")
    with open(index_path) as fp:
        lines = [ln for ln in fp.read().splitlines() if ln.strip()]
    try:
        header = json.loads(lines[0])
        store = CandidateStore(strides=tuple(int(s) for s in header["strides"]))
        for ln in lines[1:]:
            obj = json.loads(ln)
            entry = CandidateEntry(
                mask=mask_from_json(obj["rle"]),
                feature=features[int(obj["feature"])],
                confidence=float(obj["confidence"]),
            )
            store.put(int(obj["level"]), int(obj["y"]), int(obj["x"]), entry)
    except (KeyError, TypeError, ValueError, IndexError,
            json.JSONDecodeError) as exc:
        raise BackendError(f"bad candidate store {dirpath}: {exc}") from exc
    return store


# -- classification ------------------------------------------------------

def classify_pixels(f: FeatureMap, e: EmbeddingTable,
                    classes: Sequence[str]) -> LabelMap:
    """Argmax class per feature cell; 0 means "others" (all scores < 0).

    Returns a label map at feature resolution whose values are 1-based
    indices into ``classes``. The implicit extra zero entry wins only
    strictly; ties among classes break toward the lower index.
    """
    if f.dim != e.dim:
        raise DimMismatch("feature dim differs from embedding dim",
                          feature=f.dim, embedding=e.dim)
    rows = [e.row(label) for label in classes]
    matrix = e.vectors[rows]
    scores = f.data.reshape(-1, f.dim) @ matrix.T
    scores /= e.temperature
    if e.bias is not None:
        scores += e.bias[rows]
    best = np.argmax(scores, axis=1)
    best_scores = scores[np.arange(len(best)), best]
    labels = np.where(best_scores < 0, 0, best + 1).astype(np.int32)
    return LabelMap(labels.reshape(f.height, f.width))


def _upsample_labels(values: np.ndarray, stride: int,
                     width: int, height: int) -> np.ndarray:
    up = np.repeat(np.repeat(values, stride, axis=0), stride, axis=1)
    up = up[:height, :width]
    if up.shape != (height, width):
        up = np.pad(up, ((0, height - up.shape[0]), (0, width - up.shape[1])),
                    mode="edge")
    return up


# -- backends ------------------------------------------------------------

class OracleBackend:
    """Answers from the ground-truth tree; node ids are never trusted.

    The target node is located in the ground truth by geometry (same class
    and kind, maximal mask IoU), so oracle answers work both for replayed
    streams and for interactive sessions with fresh node ids.
    """

    def __init__(self, gt: RecognitionTree) -> None:
        self.gt = gt

    def _match_instance(self, node: TreeNode) -> Optional[TreeNode]:
        best, best_overlap = None, 0
        for cand in self.gt.instance_nodes():
            if cand.class_id != node.class_id:
                continue
            overlap = int((cand.mask.bits & node.mask.bits).sum())
            if overlap > best_overlap:
                best, best_overlap = cand, overlap
        return best

    def answer_type1(self, node: TreeNode, req: Request) -> Answer:
        target = self._match_instance(node)
        if target is None:
            return Answer()
        active = set(req.active_classes) if req.active_classes else None
        children = []
        for cid in target.children:
            child = self.gt.nodes[cid]
            if child.is_instance:
                continue
            if active is not None and child.class_id not in active:
                continue
            children.append(AnswerChild(child.mask, child.class_id, False))
        return Answer(children=tuple(children), score=1.0)

    def answer_type2(self, node: TreeNode, req: Request) -> Answer:
        a, b = req.probe
        hits = [n for n in self.gt.instance_nodes()
                if n.class_id == req.class_id and n.node_id != 0
                and n.mask.get(a, b)]
        if not hits:
            return Answer(lost=True)
        # Overlapping same-class instances: prefer the most specific one.
        hits.sort(key=lambda n: (n.mask.count(), n.node_id))
        chosen = hits[0]
        return Answer(children=(AnswerChild(chosen.mask, chosen.class_id,
                                            True),), score=1.0)


def _score_candidates(found: List[Tuple[int, CandidateEntry]],
                      embeddings: Optional[EmbeddingTable],
                      label: str) -> List[float]:
    scores = []
    for _, entry in found:
        if embeddings is not None and embeddings.has(label):
            raw = float(np.dot(embeddings.vector(label), entry.feature))
            scores.append(raw / embeddings.temperature
                          + embeddings.bias_for(label))
        else:
            scores.append(entry.confidence)
    return scores


def _candidate_answer(node: TreeNode, req: Request,
                      store: CandidateStore,
                      embeddings: Optional[EmbeddingTable],
                      label: str) -> Answer:
    found = store.lookup(req.probe)
    if not found:
        raise NoCandidate(
            f"no stored candidate at any level for probe {req.probe}",
            probe=list(req.probe))
    scores = _score_candidates(found, embeddings, label)
    best = int(np.argmax(scores))
    mask = found[best][1].mask.intersection(node.mask)
    if mask.is_empty():
        return Answer(lost=True, score=float(scores[best]))
    return Answer(children=(AnswerChild(mask, req.class_id, True),),
                  score=float(scores[best]))


class FilesBackend:
    """Reads one image's prediction bundle: per-level label maps (16-bit
    PNGs of class ids) plus a candidate store for probe answers."""

    def __init__(self, bundle: Union[str, Path], kb: KbVersion,
                 embeddings: Optional[EmbeddingTable] = None) -> None:
        self.bundle = Path(bundle)
        self.kb = kb
        self.embeddings = embeddings
        self._store: Optional[CandidateStore] = None

    def _level_of(self, node: TreeNode) -> int:
        return self.kb.depth_of(node.class_id) + 1

    def answer_type1(self, node: TreeNode, req: Request) -> Answer:
        path = self.bundle / f"labels_{self._level_of(node)}.png"
        if not path.exists():
            raise MissingPrediction(f"no label map {path.name} in "
                                    f"{self.bundle}", path=str(path))
        label_map = load_label_png(path)
        allowed = [c.id for c in sub_knowledge(self.kb, node.class_id)]
        if req.active_classes:
            wanted = set(req.active_classes)
            allowed = [cid for cid in allowed if cid in wanted]
        children = []
        for cid in allowed:
            mask = label_map.mask_for(cid).intersection(node.mask)
            if not mask.is_empty():
                children.append(AnswerChild(mask, cid, False))
        return Answer(children=tuple(children))

    def answer_type2(self, node: TreeNode, req: Request) -> Answer:
        if self._store is None:
            self._store = load_candidates(self.bundle)
        label = self.kb.concept(req.class_id).label
        return _candidate_answer(node, req, self._store, self.embeddings,
                                 label)


class LinearBackend:
    """Classifies precomputed feature cells against text embeddings."""

    def __init__(self, kb: KbVersion, embeddings: EmbeddingTable,
                 feature: Optional[FeatureMap] = None,
                 features_by_level: Optional[Dict[int, FeatureMap]] = None,
                 candidates: Optional[CandidateStore] = None) -> None:
        if feature is None and not features_by_level:
            raise BackendError("a feature map is required")
        self.kb = kb
        self.embeddings = embeddings
        self.feature = feature
        self.features_by_level = features_by_level or {}
        self.candidates = candidates

    def _feature_for(self, node: TreeNode) -> FeatureMap:
        level = self.kb.depth_of(node.class_id) + 1
        fm = self.features_by_level.get(level, self.feature)
        if fm is None:
            raise MissingPrediction(f"no feature map for level {level}",
                                    level=level)
        return fm

    def answer_type1(self, node: TreeNode, req: Request) -> Answer:
        fm = self._feature_for(node)
        height, width = node.mask.shape
        stride = fm.level_stride or max(1, round(width / fm.width))

        class_ids = [c.id for c in sub_knowledge(self.kb, node.class_id)]
        if req.active_classes:
            wanted = set(req.active_classes)
            class_ids = [cid for cid in class_ids if cid in wanted]
        if not class_ids:
            return Answer()
        labels = [self.kb.concept(cid).label for cid in class_ids]

        cell_labels = classify_pixels(fm, self.embeddings, labels)
        # Silence cells whose center pixel falls outside the node mask.
        cx = np.minimum(np.arange(fm.width) * stride + stride // 2, width - 1)
        cy = np.minimum(np.arange(fm.height) * stride + stride // 2, height - 1)
        inside = node.mask.bits[np.ix_(cy, cx)]
        values = np.where(inside, cell_labels.labels, 0)

        up = _upsample_labels(values, stride, width, height)
        up = np.where(node.mask.bits, up, 0)
        children = []
        for i, cid in enumerate(class_ids):
            bits = up == (i + 1)
            if bits.any():
                children.append(AnswerChild(BinaryMask(bits), cid, False))
        return Answer(children=tuple(children))

    def answer_type2(self, node: TreeNode, req: Request) -> Answer:
        if self.candidates is None:
            raise NoCandidate("this backend has no candidate store")
        label = self.kb.concept(req.class_id).label
        return _candidate_answer(node, req, self.candidates, self.embeddings,
                                 label)


Backend = Union[OracleBackend, FilesBackend, LinearBackend]


def answer_type1(node: TreeNode, req: Request, backend: Backend) -> Answer:
    if req.kind != TYPE1:
        raise WrongKind("answer_type1 needs a Type-I request")
    return backend.answer_type1(node, req)


def answer_type2(node: TreeNode, req: Request, backend: Backend) -> Answer:
    if req.kind != TYPE2:
        raise WrongKind("answer_type2 needs a Type-II request")
    return backend.answer_type2(node, req)
