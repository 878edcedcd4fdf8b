"""Synthetic hierarchical scenes for tests and demos.

Scenes place rectangle/ellipse instances over stuff bands; parts are
axis-aligned bands inside each instance, so part overlaps under
perturbation stay analytically checkable. Corpora (trees + KB versions +
rendered images) round-trip through a plain directory layout.

Also holds the two annotation subsamplers: keep a ratio of part masks
(setting 1), or a ratio of top-level masks and then parts within the
survivors, deriving a per-image knowledge-base version (setting 2).
"""
from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InfeasibleSpec, MalformedKb
from .kb import Concept, KbRegistry, KbVersion, load_kb, save_kb
from .masks import BinaryMask
from .tree import ChildSpec, RecognitionTree, new_tree


@dataclass
class PerturbSpec:
    """Controlled damage applied to a cloned gt tree."""

    morph_radius: int = 0
    class_flip_p: float = 0.0
    drop_p: float = 0.0
    seed: int = 0


@dataclass
class SceneSpec:
    kb: KbVersion
    width: int = 96
    height: int = 96
    min_instances: int = 1
    max_instances: int = 3
    levels: int = 2  # 1: no parts; 2: parts; 3: sub-parts where the KB has them
    shapes: Tuple[str, ...] = ("rect", "ellipse")
    min_size: int = 12
    require_parts: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8:
            raise InfeasibleSpec("image too small", width=self.width,
                                 height=self.height)
        if self.min_instances > self.max_instances:
            raise InfeasibleSpec("min_instances exceeds max_instances")
        if self.min_size > min(self.width, self.height) // 2:
            raise InfeasibleSpec("min_size leaves no room to place instances")


def _shape_bits(kind: str, width: int, height: int, x0: int, y0: int,
                w: int, h: int) -> np.ndarray:
    bits = np.zeros((height, width), dtype=bool)
    if kind == "rect":
        bits[y0:y0 + h, x0:x0 + w] = True
    else:
        yy, xx = np.mgrid[0:height, 0:width]
        cx, cy = x0 + (w - 1) / 2.0, y0 + (h - 1) / 2.0
        bits = (((xx - cx) / (w / 2.0)) ** 2
                + ((yy - cy) / (h / 2.0)) ** 2) <= 1.0
    return bits


def _part_bands(mask: BinaryMask, n: int) -> List[BinaryMask]:
    """Split a mask into n bands along its longer bounding-box axis."""
    a0, b0, a1, b1 = mask.bounding_box()
    bands = []
    if (a1 - a0) >= (b1 - b0):
        edges = np.linspace(a0, a1 + 1, n + 1).round().astype(int)
        for i in range(n):
            bits = mask.bits.copy()
            bits[:, :edges[i]] = False
            bits[:, edges[i + 1]:] = False
            bands.append(BinaryMask(bits))
    else:
        edges = np.linspace(b0, b1 + 1, n + 1).round().astype(int)
        for i in range(n):
            bits = mask.bits.copy()
            bits[:edges[i], :] = False
            bits[edges[i + 1]:, :] = False
            bands.append(BinaryMask(bits))
    return bands


def _attach_parts(tree: RecognitionTree, instance_id: int, kb: KbVersion,
                  levels_left: int, require_parts: bool) -> None:
    node = tree.nodes[instance_id]
    part_ids = kb.concept(node.class_id).children
    if not part_ids or levels_left < 1:
        return
    bands = _part_bands(node.mask, len(part_ids))
    specs, kept_classes = [], []
    for cid, band in zip(part_ids, bands):
        if band.is_empty():
            if require_parts:
                raise InfeasibleSpec(
                    f"part band for class {cid} came out empty",
                    instance=instance_id)
            continue
        specs.append(ChildSpec(band, cid, False))
        kept_classes.append(cid)
    if not specs:
        return
    new_ids = tree.attach_children(instance_id, specs)
    if levels_left >= 2:
        for cid, sem_id in zip(kept_classes, new_ids):
            if not kb.concept(cid).children:
                continue
            sem = tree.nodes[sem_id]
            inst_ids = tree.attach_children(
                sem_id, [ChildSpec(sem.mask, cid, True)])
            _attach_parts(tree, inst_ids[0], kb, levels_left - 1,
                          require_parts)


def generate_scene(spec: SceneSpec,
                   perturb: Optional[PerturbSpec] = None,
                   image_id: str = "scene-0",
                   ) -> Tuple[RecognitionTree, Optional[RecognitionTree]]:
    """Build one gt tree (and optionally a perturbed prediction).

    Deterministic for a fixed spec: all randomness comes from spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    kb = spec.kb
    top = [kb.concept(c) for c in kb.concept(kb.scene_id).children]
    things = [c for c in top if c.countable]
    stuff = [c for c in top if not c.countable]
    if not things and spec.max_instances > 0:
        raise InfeasibleSpec("the palette has no countable top-level class")

    n = int(rng.integers(spec.min_instances, spec.max_instances + 1))
    shapes = []
    for _ in range(n):
        cls = things[int(rng.integers(len(things)))]
        kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
        w = int(rng.integers(spec.min_size, max(spec.min_size + 1,
                                                spec.width // 2)))
        h = int(rng.integers(spec.min_size, max(spec.min_size + 1,
                                                spec.height // 2)))
        x0 = int(rng.integers(0, spec.width - w + 1))
        y0 = int(rng.integers(0, spec.height - h + 1))
        shapes.append((cls.id, _shape_bits(kind, spec.width, spec.height,
                                           x0, y0, w, h)))

    # Later shapes occlude earlier ones across classes; overlaps between
    # same-class instances are kept (instance siblings may overlap).
    owner = np.full((spec.height, spec.width), -1, dtype=np.int32)
    for i, (_, bits) in enumerate(shapes):
        owner[bits] = i
    owner_class = np.full_like(owner, -1)
    for i, (cid, _) in enumerate(shapes):
        owner_class[owner == i] = cid

    tree = new_tree(image_id, spec.width, spec.height, kb)
    region_specs, instance_masks = [], {}
    for cid in sorted({cid for cid, _ in shapes}):
        region_bits = owner_class == cid
        if not region_bits.any():
            continue
        members = []
        for i, (icid, bits) in enumerate(shapes):
            if icid != cid:
                continue
            visible = bits & region_bits
            if visible.any():
                members.append(BinaryMask(visible))
        if not members:
            continue
        region_specs.append(ChildSpec(BinaryMask(region_bits), cid, False))
        instance_masks[cid] = members

    free = owner < 0
    if free.any() and stuff:
        ys = np.nonzero(free.any(axis=1))[0]
        split = int(ys[0] + (ys[-1] - ys[0] + 1) // 2) if len(stuff) > 1 else 0
        upper = free.copy()
        upper[split:, :] = False
        lower = free & ~upper
        if len(stuff) > 1 and upper.any() and lower.any():
            region_specs.append(ChildSpec(BinaryMask(upper), stuff[0].id,
                                          False))
            region_specs.append(ChildSpec(BinaryMask(lower), stuff[1].id,
                                          False))
        else:
            region_specs.append(ChildSpec(BinaryMask(free), stuff[0].id,
                                          False))

    if not region_specs:
        raise InfeasibleSpec("no region ended up visible")
    region_ids = tree.attach_children(0, region_specs)

    total_instances = 0
    for rid, spec_ in zip(region_ids, region_specs):
        cid = spec_.class_id
        if cid not in instance_masks:
            continue
        inst_specs = [ChildSpec(m, cid, True) for m in instance_masks[cid]]
        inst_ids = tree.attach_children(rid, inst_specs)
        total_instances += len(inst_ids)
        if spec.levels >= 2:
            for iid in inst_ids:
                _attach_parts(tree, iid, kb, spec.levels - 1,
                              spec.require_parts)
    if total_instances < spec.min_instances:
        raise InfeasibleSpec(
            f"only {total_instances} instances stayed visible; "
            f"spec requires {spec.min_instances}", seed=spec.seed)

    pred = perturb_tree(tree, perturb) if perturb is not None else None
    return tree, pred


# -- perturbation ----------------------------------------------------------

def _shift(bits: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(bits)
    h, w = bits.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = bits[ys_src, xs_src]
    return out


def _dilate(bits: np.ndarray, r: int) -> np.ndarray:
    out = bits.copy()
    for _ in range(r):
        out = out | _shift(out, 1, 0) | _shift(out, -1, 0) \
                  | _shift(out, 0, 1) | _shift(out, 0, -1)
    return out


def _erode(bits: np.ndarray, r: int) -> np.ndarray:
    return ~_dilate(~bits, r)


def perturb_tree(gt: RecognitionTree, spec: PerturbSpec) -> RecognitionTree:
    """Damaged copy of gt: instance drops, mask morphs, and class flips.

    The output still validates: morphed masks get re-clipped to their
    parent, flipped classes only move to unoccupied sibling classes, and
    nodes whose mask vanishes are dropped with their subtree.
    """
    rng = np.random.default_rng(spec.seed)
    pred = gt.clone()

    if spec.drop_p > 0:
        for nid in [n.node_id for n in pred.instance_nodes()
                    if n.node_id != 0]:
            if nid in pred.nodes and rng.random() < spec.drop_p:
                pred.remove_subtree(nid)

    if spec.morph_radius > 0:
        for nid in pred.bfs_ids():
            if nid == 0 or nid not in pred.nodes:
                continue
            node = pred.nodes[nid]
            r = int(rng.integers(0, spec.morph_radius + 1))
            grow = bool(rng.integers(2))
            if r == 0:
                continue
            bits = _dilate(node.mask.bits, r) if grow \
                else _erode(node.mask.bits, r)
            parent = pred.nodes[pred.parent_map()[nid]]
            node.mask = BinaryMask(bits & parent.mask.bits)
        for nid in list(reversed(pred.bfs_ids())):
            if nid != 0 and nid in pred.nodes \
                    and pred.nodes[nid].mask.is_empty():
                pred.remove_subtree(nid)
        # Top-down repair: clip children to their (possibly shrunk) parent
        # and re-separate semantic siblings that dilation pushed together.
        for nid in pred.bfs_ids():
            node = pred.nodes[nid]
            taken = np.zeros((pred.height, pred.width), dtype=bool)
            for cid in node.children:
                child = pred.nodes[cid]
                bits = child.mask.bits & node.mask.bits
                if not child.is_instance:
                    bits = bits & ~taken
                    taken |= bits
                child.mask = BinaryMask(bits)
        for nid in list(reversed(pred.bfs_ids())):
            if nid != 0 and nid in pred.nodes \
                    and pred.nodes[nid].mask.is_empty():
                pred.remove_subtree(nid)

    if spec.class_flip_p > 0:
        kb = pred.kb
        for node in list(pred.semantic_nodes()):
            if node.node_id not in pred.nodes:
                continue  # removed when an earlier flip dropped its subtree
            if rng.random() >= spec.class_flip_p:
                continue
            parent = pred.nodes[pred.parent_map()[node.node_id]]
            options = [c for c in kb.concept(parent.class_id).children]
            taken = {pred.nodes[c].class_id for c in parent.children
                     if not pred.nodes[c].is_instance}
            options = [c for c in options if c not in taken]
            if not options:
                continue
            new_cid = options[int(rng.integers(len(options)))]
            node.class_id = new_cid
            for child_id in node.children:
                child = pred.nodes[child_id]
                if child.is_instance:
                    _reclass_subtree(pred, child_id, new_cid, kb)
    return pred


def _reclass_subtree(tree: RecognitionTree, inst_id: int, new_cid: int,
                     kb: KbVersion) -> None:
    """Instance children must share their region's class; parts whose class
    no longer belongs to the new sub-knowledge are dropped."""
    inst = tree.nodes[inst_id]
    inst.class_id = new_cid
    allowed = set(kb.concept(new_cid).children)
    for child_id in list(inst.children):
        child = tree.nodes[child_id]
        if child.class_id not in allowed:
            tree.remove_subtree(child_id)


# -- rendering and corpora ---------------------------------------------------

def class_color(class_id: int) -> Tuple[int, int, int]:
    hue = (class_id * 0.6180339887) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


def render_image(tree: RecognitionTree) -> np.ndarray:
    """Flat color render, deepest node wins per pixel; uint8 (h, w, 3)."""
    img = np.zeros((tree.height, tree.width, 3), dtype=np.uint8)
    for nid in tree.bfs_ids():
        node = tree.nodes[nid]
        if nid == 0:
            img[:, :] = class_color(node.class_id)
            continue
        img[node.mask.bits] = class_color(node.class_id)
    return img


def save_corpus(root: Union[str, Path], trees: Sequence[RecognitionTree],
                registry: Optional[KbRegistry] = None,
                render: bool = True) -> None:
    from PIL import Image

    root = Path(root)
    (root / "trees").mkdir(parents=True, exist_ok=True)
    (root / "kb").mkdir(exist_ok=True)
    if render:
        (root / "images").mkdir(exist_ok=True)
    seen = set()
    for tree in trees:
        (root / "trees" / f"{tree.image_id}.json").write_bytes(
            tree.serialize())
        if tree.kb_version not in seen:
            kb = tree.kb if tree.kb is not None else (
                registry.get(tree.kb_version) if registry else None)
            if kb is None:
                raise MalformedKb(f"cannot persist unresolved version "
                                  f"{tree.kb_version!r}")
            save_kb(kb, root / "kb" / f"{tree.kb_version}.json")
            seen.add(tree.kb_version)
        if render:
            Image.fromarray(render_image(tree)).save(
                root / "images" / f"{tree.image_id}.png")


def load_corpus(root: Union[str, Path]
                ) -> Tuple[List[RecognitionTree], KbRegistry]:
    root = Path(root)
    registry = KbRegistry()
    for path in sorted((root / "kb").glob("*.json")):
        registry.put(load_kb(path))
    trees = []
    for path in sorted((root / "trees").glob("*.json")):
        trees.append(RecognitionTree.parse(path.read_bytes(),
                                           registry=registry, strict=True))
    return trees, registry


# -- incomplete-annotation subsampling ---------------------------------------

def _part_node_ids(tree: RecognitionTree) -> List[int]:
    return [n.node_id for n in tree.semantic_nodes()
            if tree.depth_of(n.node_id) >= 3]


def subsample_parts(trees: Sequence[RecognitionTree], ratio: float,
                    seed: int = 0) -> List[RecognitionTree]:
    """Setting 1: keep each part mask with probability ``ratio``; all
    top-level semantic and instance annotations survive."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for tree in trees:
        clone = tree.clone()
        for nid in _part_node_ids(clone):
            if nid in clone.nodes and rng.random() >= ratio:
                clone.remove_subtree(nid)
        out.append(clone)
    return out


def _derive_image_kb(tree: RecognitionTree, base: KbVersion,
                     registry: Optional[KbRegistry]) -> KbVersion:
    active = {n.class_id for n in tree.semantic_nodes()}
    active.add(base.scene_id)
    concepts = []
    for c in base.concepts:
        if c.id not in active:
            continue
        kept_children = tuple(ch for ch in c.children if ch in active)
        concepts.append(Concept(id=c.id, label=c.label,
                                countable=c.countable,
                                children=kept_children))
    derived = KbVersion(concepts, parent_version=base.version_id)
    if registry is not None:
        derived = registry.put(derived)
    return derived


def subsample_semantic_and_parts(trees: Sequence[RecognitionTree],
                                 ratio: float, seed: int = 0,
                                 registry: Optional[KbRegistry] = None,
                                 ) -> List[RecognitionTree]:
    """Setting 2: keep each top-level mask with probability ``ratio``, then
    each part mask within the survivors; every output image gets a derived
    knowledge-base version without its never-labeled classes."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for tree in trees:
        clone = tree.clone()
        base = clone.kb
        if base is None:
            raise MalformedKb("subsampling needs resolved kb versions")
        for nid in list(clone.root.children):
            if rng.random() >= ratio:
                clone.remove_subtree(nid)
        for nid in _part_node_ids(clone):
            if nid in clone.nodes and rng.random() >= ratio:
                clone.remove_subtree(nid)
        derived = _derive_image_kb(clone, base, registry)
        clone.kb = derived
        clone.kb_version = derived.version_id
        out.append(clone)
    return out
