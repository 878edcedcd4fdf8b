"""Hierarchical panoptic quality and friends.

HPQ scores a matched (gt, pred) node pair recursively: leaves score mask
IoU; internal nodes average, over the child classes labeled in the ground
truth, a PQ-style ratio whose true positives are child pairs that match by
mask IoU and then certify with recursive score >= 0.5. A node's own mask
IoU only gates matching; it is not folded into the internal score.

On flat trees (no children below the root-level units) the dataset
aggregation reduces exactly to panoptic quality, including its void rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ClassMismatch, DepthExceeded, VersionMismatch
from .kb import KbRegistry, KbVersion
from .masks import iou
from .tree import RecognitionTree, TreeNode

MATCH_IOU = 0.5
TP_GATE = 0.5
VOID_FRACTION = 0.5


@dataclass
class MatchedPair:
    gt_id: int
    pred_id: int
    iou: float
    score: float


@dataclass
class ClassMatch:
    """Match sets for one class: TP pairs, FP pred ids, FN gt ids."""

    class_id: int
    tp: List[MatchedPair] = field(default_factory=list)
    fp: List[int] = field(default_factory=list)
    fn: List[int] = field(default_factory=list)

    @property
    def sum_tp(self) -> float:
        return sum(p.score for p in self.tp)

    def ratio(self) -> float:
        denom = len(self.tp) + 0.5 * len(self.fp) + 0.5 * len(self.fn)
        if denom == 0:
            return 0.0
        return self.sum_tp / denom


@dataclass
class ClassScore:
    class_id: int
    score: float
    tp: int
    fp: int
    fn: int

    def to_json(self) -> dict:
        return {"class": self.class_id, "score": self.score,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass
class MetricReport:
    metric: str
    per_class: Dict[int, ClassScore]
    aggregate: float
    subsets: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    thresholds: Dict[str, float] = field(default_factory=dict)
    kb_versions: Tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "metric": self.metric,
            "aggregate": self.aggregate,
            "per_class": [self.per_class[c].to_json()
                          for c in sorted(self.per_class)],
            "subsets": self.subsets,
            "counts": self.counts,
            "thresholds": self.thresholds,
            "kb_versions": list(self.kb_versions),
        }


def _pair_iou(gt: TreeNode, pred: TreeNode) -> float:
    if gt.mask.is_empty() and pred.mask.is_empty():
        return 0.0
    return iou(gt.mask, pred.mask)


def _greedy_match(gt_units: Sequence[TreeNode], pred_units: Sequence[TreeNode],
                  match_iou: float) -> Tuple[List[Tuple[int, int, float]],
                                             List[int], List[int]]:
    """Unique pairs with IoU > threshold, greedily by descending IoU.

    With disjoint units per side the greedy step is vacuous (the PQ
    uniqueness argument applies); it only arbitrates when instance
    siblings overlap.
    """
    candidates = []
    for i, g in enumerate(gt_units):
        for j, p in enumerate(pred_units):
            v = _pair_iou(g, p)
            if v > match_iou:
                candidates.append((i, j, v))
    candidates.sort(key=lambda t: (-t[2], t[0], t[1]))
    used_g, used_p, pairs = set(), set(), []
    for i, j, v in candidates:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        pairs.append((i, j, v))
    fn = [i for i in range(len(gt_units)) if i not in used_g]
    fp = [j for j in range(len(pred_units)) if j not in used_p]
    return pairs, fn, fp


def match_units(gt_tree: RecognitionTree, gt_units: Sequence[TreeNode],
                pred_tree: RecognitionTree, pred_units: Sequence[TreeNode],
                class_id: int, *, match_iou: float = MATCH_IOU,
                tp_gate: float = TP_GATE,
                strict_fp: bool = False) -> ClassMatch:
    """Match one class's units and certify TPs by recursive score.

    A pair that matches by mask IoU but scores below the gate is demoted:
    its gt becomes FN and its pred FP.
    """
    out = ClassMatch(class_id=class_id)
    pairs, fn_idx, fp_idx = _greedy_match(gt_units, pred_units, match_iou)
    for i, j, v in pairs:
        score = node_hpq(gt_tree, gt_units[i].node_id,
                         pred_tree, pred_units[j].node_id,
                         match_iou=match_iou, tp_gate=tp_gate,
                         strict_fp=strict_fp)
        if score >= tp_gate:
            out.tp.append(MatchedPair(gt_units[i].node_id,
                                      pred_units[j].node_id, v, score))
        else:
            out.fn.append(gt_units[i].node_id)
            out.fp.append(pred_units[j].node_id)
    out.fn.extend(gt_units[i].node_id for i in fn_idx)
    out.fp.extend(pred_units[j].node_id for j in fp_idx)
    return out


def node_hpq(gt_tree: RecognitionTree, gt_id: int,
             pred_tree: RecognitionTree, pred_id: int, *,
             match_iou: float = MATCH_IOU, tp_gate: float = TP_GATE,
             strict_fp: bool = False) -> float:
    """Recursive score for a matched (gt, pred) node pair of one class."""
    gt = gt_tree.nodes[gt_id]
    pred = pred_tree.nodes[pred_id]
    if gt.class_id != pred.class_id:
        raise ClassMismatch(
            f"gt class {gt.class_id} vs pred class {pred.class_id}",
            gt=gt_id, pred=pred_id)

    gt_kids = [gt_tree.nodes[c] for c in gt.children]
    if not gt_kids:
        return _pair_iou(gt, pred)
    pred_kids = [pred_tree.nodes[c] for c in pred.children]

    active = sorted({k.class_id for k in gt_kids})
    if strict_fp:
        extra = {k.class_id for k in pred_kids} - set(active)
        active = sorted(set(active) | extra)

    total = 0.0
    for cid in active:
        g_units = [k for k in gt_kids if k.class_id == cid]
        p_units = [k for k in pred_kids if k.class_id == cid]
        match = match_units(gt_tree, g_units, pred_tree, p_units, cid,
                            match_iou=match_iou, tp_gate=tp_gate,
                            strict_fp=strict_fp)
        total += match.ratio()
    return total / len(active)


# -- dataset-level aggregation --------------------------------------------

def _resolve_kb(gt: RecognitionTree,
                kb: Union[KbRegistry, KbVersion, None]) -> KbVersion:
    if isinstance(kb, KbVersion):
        return kb
    if isinstance(kb, KbRegistry):
        if not kb.has(gt.kb_version):
            raise VersionMismatch(f"kb_version {gt.kb_version!r} not in the "
                                  "registry", version=gt.kb_version)
        return kb.get(gt.kb_version)
    if gt.kb is None:
        raise VersionMismatch("ground truth carries no resolved knowledge "
                              "base; pass one")
    return gt.kb


def _root_units(tree: RecognitionTree,
                kb: KbVersion) -> Dict[int, List[TreeNode]]:
    """Root-level scoring units per class.

    Countable classes contribute their instance nodes (collapsing the
    region/instance nesting); non-countable classes contribute the single
    semantic region.
    """
    units: Dict[int, List[TreeNode]] = {}
    for cid in tree.root.children:
        sem = tree.nodes[cid]
        if sem.is_instance:
            continue
        c = sem.class_id
        if kb.has(c) and kb.concept(c).countable:
            bucket = units.setdefault(c, [])
            bucket.extend(tree.nodes[i] for i in sem.children
                          if tree.nodes[i].is_instance)
        else:
            units.setdefault(c, []).append(sem)
    return units


def _void_mask(tree: RecognitionTree) -> np.ndarray:
    """Pixels outside every root-level semantic region."""
    covered = np.zeros((tree.height, tree.width), dtype=bool)
    for cid in tree.root.children:
        sem = tree.nodes[cid]
        if not sem.is_instance:
            covered |= sem.mask.bits
    return ~covered


def _drop_void_preds(preds: List[TreeNode], void: np.ndarray) -> List[TreeNode]:
    """PQ void rule: unmatched-pool preds mostly over void do not count."""
    kept = []
    for p in preds:
        area = p.mask.count()
        if area == 0:
            continue
        void_part = int((p.mask.bits & void).sum())
        if void_part / area > VOID_FRACTION:
            continue
        kept.append(p)
    return kept


Pairs = Sequence[Tuple[RecognitionTree, RecognitionTree]]


def _score_pair(gt_tree: RecognitionTree, pred_tree: RecognitionTree,
                kb: KbVersion, *, pair_score, match_iou: float,
                tp_gate: Optional[float], strict_fp: bool,
                exclude_partless_gt: bool) -> Dict[int, ClassMatch]:
    """Per-class match sets for one image at the root level."""
    if pred_tree.kb_version != gt_tree.kb_version:
        raise VersionMismatch(
            "prediction was made against a different knowledge-base version",
            gt=gt_tree.kb_version, pred=pred_tree.kb_version)
    gt_units = _root_units(gt_tree, kb)
    pred_units = _root_units(pred_tree, kb)
    void = _void_mask(gt_tree)

    out: Dict[int, ClassMatch] = {}
    for cid in sorted(set(gt_units) | set(pred_units)):
        if not kb.has(cid):
            continue  # class absent from this image's vocabulary: ignored
        g = gt_units.get(cid, [])
        p = pred_units.get(cid, [])
        match = ClassMatch(class_id=cid)
        pairs, fn_idx, fp_idx = _greedy_match(g, p, match_iou)
        for i, j, v in pairs:
            score = pair_score(gt_tree, g[i], pred_tree, p[j])
            if tp_gate is None or score >= tp_gate:
                match.tp.append(MatchedPair(g[i].node_id, p[j].node_id, v,
                                            score))
            else:
                match.fn.append(g[i].node_id)
                match.fp.append(p[j].node_id)
        match.fn.extend(g[i].node_id for i in fn_idx)
        fp_nodes = [p[j] for j in fp_idx]
        # Demoted preds stay FP; only never-matched preds get the void test.
        match.fp.extend(n.node_id for n in _drop_void_preds(fp_nodes, void))
        if exclude_partless_gt:
            _exclude_partless(gt_tree, match)
        if match.tp or match.fp or match.fn:
            out[cid] = match
    return out


def _exclude_partless(gt_tree: RecognitionTree, match: ClassMatch) -> None:
    """Drop gt units without labeled children from the match sets entirely.

    Matching ran on the full pool first, so a prediction that landed on a
    part-less gt instance disappears with it rather than turning into FP.
    """
    def partless(nid: int) -> bool:
        return not gt_tree.nodes[nid].children

    dropped_pairs = [p for p in match.tp if partless(p.gt_id)]
    match.tp = [p for p in match.tp if not partless(p.gt_id)]
    match.fn = [nid for nid in match.fn if not partless(nid)]
    del dropped_pairs  # their preds are neither TP nor FP


def _aggregate(per_image: List[Dict[int, ClassMatch]],
               metric: str, *, thresholds: Dict[str, float],
               kb_versions: Tuple[str, ...],
               class_filter=None) -> MetricReport:
    classes: Dict[int, ClassScore] = {}
    totals: Dict[int, List[float]] = {}
    for image_matches in per_image:
        for cid, match in image_matches.items():
            if class_filter is not None and not class_filter(cid):
                continue
            row = totals.setdefault(cid, [0.0, 0, 0, 0])
            row[0] += match.sum_tp
            row[1] += len(match.tp)
            row[2] += len(match.fp)
            row[3] += len(match.fn)
    for cid, (s, tp, fp, fn) in sorted(totals.items()):
        denom = tp + 0.5 * fp + 0.5 * fn
        score = s / denom if denom > 0 else 0.0
        classes[cid] = ClassScore(cid, score, tp, fp, fn)
    aggregate = (sum(c.score for c in classes.values()) / len(classes)
                 if classes else 0.0)
    counts = {
        "images": len(per_image),
        "classes": len(classes),
        "tp": sum(c.tp for c in classes.values()),
        "fp": sum(c.fp for c in classes.values()),
        "fn": sum(c.fn for c in classes.values()),
    }
    return MetricReport(metric=metric, per_class=classes, aggregate=aggregate,
                        counts=counts, thresholds=thresholds,
                        kb_versions=kb_versions)


def dataset_hpq(pairs: Pairs, kb: Union[KbRegistry, KbVersion, None] = None,
                *, match_iou: float = MATCH_IOU, tp_gate: float = TP_GATE,
                strict_fp: bool = False) -> MetricReport:
    """Dataset HPQ with All/NP/P/P-dagger subset aggregates."""

    def recursive_score(gt_tree, g, pred_tree, p):
        return node_hpq(gt_tree, g.node_id, pred_tree, p.node_id,
                        match_iou=match_iou, tp_gate=tp_gate,
                        strict_fp=strict_fp)

    per_image: List[Dict[int, ClassMatch]] = []
    per_image_dagger: List[Dict[int, ClassMatch]] = []
    versions: List[str] = []
    resolved: Optional[KbVersion] = None
    for gt_tree, pred_tree in pairs:
        resolved = _resolve_kb(gt_tree, kb)
        if gt_tree.kb_version not in versions:
            versions.append(gt_tree.kb_version)
        per_image.append(_score_pair(
            gt_tree, pred_tree, resolved, pair_score=recursive_score,
            match_iou=match_iou, tp_gate=tp_gate, strict_fp=strict_fp,
            exclude_partless_gt=False))
        per_image_dagger.append(_score_pair(
            gt_tree, pred_tree, resolved, pair_score=recursive_score,
            match_iou=match_iou, tp_gate=tp_gate, strict_fp=strict_fp,
            exclude_partless_gt=True))

    thresholds = {"match_iou": match_iou, "tp_gate": tp_gate}
    report = _aggregate(per_image, "hpq", thresholds=thresholds,
                        kb_versions=tuple(versions))
    if resolved is not None:
        has_parts = _part_class_filter(resolved)
        report.subsets["all"] = report.aggregate
        report.subsets["np"] = _aggregate(
            per_image, "hpq", thresholds=thresholds, kb_versions=(),
            class_filter=lambda c: not has_parts(c)).aggregate
        report.subsets["p"] = _aggregate(
            per_image, "hpq", thresholds=thresholds, kb_versions=(),
            class_filter=has_parts).aggregate
        report.subsets["pdagger"] = _aggregate(
            per_image_dagger, "hpq", thresholds=thresholds, kb_versions=(),
            class_filter=has_parts).aggregate
    return report


def _part_class_filter(kb: KbVersion):
    def has_parts(cid: int) -> bool:
        return kb.has(cid) and bool(kb.concept(cid).children)
    return has_parts


def dataset_pq(pairs: Pairs, kb: Union[KbRegistry, KbVersion, None] = None,
               *, match_iou: float = MATCH_IOU) -> MetricReport:
    """Plain panoptic quality over root-level units (children ignored)."""

    def mask_score(gt_tree, g, pred_tree, p):
        return _pair_iou(g, p)

    per_image = []
    versions: List[str] = []
    for gt_tree, pred_tree in pairs:
        resolved = _resolve_kb(gt_tree, kb)
        if gt_tree.kb_version not in versions:
            versions.append(gt_tree.kb_version)
        per_image.append(_score_pair(
            gt_tree, pred_tree, resolved, pair_score=mask_score,
            match_iou=match_iou, tp_gate=None, strict_fp=False,
            exclude_partless_gt=False))
    return _aggregate(per_image, "pq",
                      thresholds={"match_iou": match_iou},
                      kb_versions=tuple(versions))


def part_pq(pairs: Pairs, kb: Union[KbRegistry, KbVersion, None] = None,
            *, match_iou: float = MATCH_IOU) -> MetricReport:
    """Two-level PartPQ: mask IoU both matches and certifies; part classes
    score as the ungated mean of part IoUs over gt-labeled part classes."""

    def depth_ok(tree: RecognitionTree) -> bool:
        # instances -> semantic parts, and parts stay leaves
        for n in tree.nodes.values():
            if not n.is_instance and tree.depth_of(n.node_id) >= 3 \
                    and n.children:
                return False
        return True

    def part_score(gt_tree, g, pred_tree, p):
        if not g.is_instance:
            return _pair_iou(g, p)
        gt_parts = {gt_tree.nodes[c].class_id: gt_tree.nodes[c]
                    for c in g.children}
        if not gt_parts:
            return _pair_iou(g, p)
        pred_parts = {pred_tree.nodes[c].class_id: pred_tree.nodes[c]
                      for c in p.children}
        total = 0.0
        for cid, gpart in sorted(gt_parts.items()):
            ppart = pred_parts.get(cid)
            if ppart is None or ppart.mask.is_empty():
                continue
            total += _pair_iou(gpart, ppart)
        return total / len(gt_parts)

    per_image = []
    versions: List[str] = []
    for gt_tree, pred_tree in pairs:
        if not depth_ok(gt_tree) or not depth_ok(pred_tree):
            raise DepthExceeded("PartPQ is defined for two-level trees only")
        resolved = _resolve_kb(gt_tree, kb)
        if gt_tree.kb_version not in versions:
            versions.append(gt_tree.kb_version)
        per_image.append(_score_pair(
            gt_tree, pred_tree, resolved, pair_score=part_score,
            match_iou=match_iou, tp_gate=None, strict_fp=False,
            exclude_partless_gt=False))
    return _aggregate(per_image, "partpq",
                      thresholds={"match_iou": match_iou},
                      kb_versions=tuple(versions))


# -- semantic mIoU ---------------------------------------------------------

def miou_per_level(pairs: Pairs, level: int) -> Tuple[Dict[int, float], float]:
    """Dataset-pooled per-class IoU over one semantic level's label maps.

    Level k reads semantic nodes at tree depth 2k-1. Prediction pixels
    outside the level's labeled support (instances that actually carry
    level-k children in the gt) are ignored.
    """
    if level < 1:
        raise ValueError("level is 1-based")
    depth = 2 * level - 1
    inter: Dict[int, int] = {}
    union: Dict[int, int] = {}

    for gt_tree, pred_tree in pairs:
        support = np.zeros((gt_tree.height, gt_tree.width), dtype=bool)
        gt_bits: Dict[int, np.ndarray] = {}
        for n in gt_tree.semantic_nodes():
            if gt_tree.depth_of(n.node_id) != depth:
                continue
            acc = gt_bits.setdefault(
                n.class_id, np.zeros_like(support))
            acc |= n.mask.bits
            parent = gt_tree.nodes[gt_tree.parent_map()[n.node_id]]
            support |= parent.mask.bits
        pred_bits: Dict[int, np.ndarray] = {}
        for n in pred_tree.semantic_nodes():
            if pred_tree.depth_of(n.node_id) != depth:
                continue
            acc = pred_bits.setdefault(
                n.class_id, np.zeros_like(support))
            acc |= n.mask.bits

        for cid in set(gt_bits) | set(pred_bits):
            g = gt_bits.get(cid)
            p = pred_bits.get(cid)
            if p is not None:
                p = p & support
            if g is None:
                g = np.zeros_like(support)
            if p is None:
                p = np.zeros_like(support)
            inter[cid] = inter.get(cid, 0) + int((g & p).sum())
            union[cid] = union.get(cid, 0) + int((g | p).sum())

    per_class = {cid: (inter[cid] / union[cid] if union[cid] else 0.0)
                 for cid in union}
    present = {cid: v for cid, v in per_class.items() if union[cid] > 0}
    mean = sum(present.values()) / len(present) if present else 0.0
    return per_class, mean
