"""Prediction backends: embedding classification, candidate stores, oracle."""
import numpy as np
import pytest

from conftest import box_mask, class_id
from virreq.errors import (DimMismatch, MissingPrediction, NoCandidate,
                           UnknownLabel, WrongKind)
from virreq.kb import KbBuilder
from virreq.masks import BinaryMask, LabelMap, save_label_png
from virreq.predictors import (PYRAMID_STRIDES, TAU_TYPE1, CandidateEntry,
                               CandidateStore, EmbeddingTable, FeatureMap,
                               FilesBackend, LinearBackend, OracleBackend,
                               answer_type1, answer_type2, classify_pixels,
                               load_candidates, load_embeddings,
                               save_candidates, save_embeddings)
from virreq.requests import TYPE1, TYPE2, Request, parse_requests
from virreq.tree import ChildSpec, RecognitionTree, TreeNode


def feature_of(rows):
    """(h', w', d) float32 feature map from nested per-cell vectors."""
    return FeatureMap(np.array(rows, dtype=np.float32))


def table(labels, vectors, **kw):
    return EmbeddingTable(labels=tuple(labels),
                          vectors=np.array(vectors, dtype=np.float32), **kw)


# -- classify_pixels ----------------------------------------------------------

def test_classify_argmax_and_others():
    e = table(["a", "b"], [[1, 0], [0, 1]])
    f = feature_of([[[2.0, 1.0], [-1.0, 3.0]],
                    [[-0.5, -0.5], [0.0, 0.0]]])
    lm = classify_pixels(f, e, ["a", "b"])
    # cell (0,0): a wins; (0,1): b wins; (1,0): all < 0 -> others;
    # (1,1): scores 0 and 0, not strictly < 0, tie -> lower index
    assert lm.labels.tolist() == [[1, 2], [0, 1]]


def test_classify_tie_breaks_to_lower_index():
    e = table(["a", "b", "c"], np.eye(3))
    f = feature_of([[[0.0, 4.0, 4.0]]])
    lm = classify_pixels(f, e, ["a", "b", "c"])
    assert lm.labels[0, 0] == 2  # b, the first of the tied pair


def test_classify_respects_class_order_not_table_order():
    e = table(["a", "b"], [[1, 0], [0, 1]])
    f = feature_of([[[5.0, 1.0]]])
    assert classify_pixels(f, e, ["b", "a"]).labels[0, 0] == 2


def test_classify_temperature_does_not_change_labels():
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(3, 4)).astype(np.float32)
    f = FeatureMap(rng.normal(size=(5, 6, 4)).astype(np.float32))
    out = [classify_pixels(f, table(["a", "b", "c"], vecs, temperature=t),
                           ["a", "b", "c"]).labels.tolist()
           for t in (0.07, 1.0, 13.0)]
    assert out[0] == out[1] == out[2]


def test_classify_appended_duplicate_class_is_inert():
    rng = np.random.default_rng(1)
    vecs = rng.normal(size=(2, 4)).astype(np.float32)
    f = FeatureMap(rng.normal(size=(4, 4, 4)).astype(np.float32))
    base = classify_pixels(f, table(["a", "b"], vecs), ["a", "b"])
    # a trailing copy of "a" always ties it and must lose every tie
    ext = table(["a", "b", "z"], np.vstack([vecs, vecs[:1]]))
    extended = classify_pixels(f, ext, ["a", "b", "z"])
    assert np.array_equal(base.labels, extended.labels)


def test_classify_bias_shifts_the_zero_line():
    e = table(["a"], [[1.0]], bias=np.array([0.5], dtype=np.float32))
    f = feature_of([[[-0.4], [-0.6]]])
    lm = classify_pixels(f, e, ["a"])
    assert lm.labels.tolist() == [[1, 0]]  # -0.4+0.5 >= 0; -0.6+0.5 < 0


def test_classify_dim_mismatch():
    with pytest.raises(DimMismatch):
        classify_pixels(feature_of([[[1.0, 2.0]]]), table(["a"], [[1.0]]),
                        ["a"])


def test_embedding_table_lookup_errors():
    e = table(["a"], [[1.0]])
    with pytest.raises(UnknownLabel):
        e.row("zzz")
    assert e.has("a") and not e.has("zzz")


# -- embeddings and candidate persistence ------------------------------------

def test_embeddings_file_round_trip(tmp_path):
    e = table(["cat", "dog"], [[0.1, 0.2], [0.3, 0.4]], temperature=0.07,
              bias=np.array([0.0, -1.0], dtype=np.float32))
    path = tmp_path / "emb.json"
    save_embeddings(path, e)
    back = load_embeddings(path)
    assert back.labels == e.labels
    assert back.temperature == e.temperature
    assert np.allclose(back.vectors, e.vectors)
    assert np.allclose(back.bias, e.bias)


def test_candidate_store_probe_keys():
    store = CandidateStore()
    placed = {}
    for s in PYRAMID_STRIDES:
        entry = CandidateEntry(mask=BinaryMask.ones(4, 4),
                               feature=np.zeros(2, dtype=np.float32),
                               confidence=float(s))
        store.put(s, 60 // s, 100 // s, entry)
        placed[s] = entry
    found = dict(store.lookup((100, 60)))
    assert set(found) == set(PYRAMID_STRIDES)
    assert all(found[s] is placed[s] for s in PYRAMID_STRIDES)
    # the mapped cells really are floor-division tables
    assert [(s, 60 // s, 100 // s) for s in PYRAMID_STRIDES] == [
        (8, 7, 12), (16, 3, 6), (32, 1, 3), (64, 0, 1), (128, 0, 0)]
    assert store.lookup((0, 0)) == [] or (8, 0, 0) not in store.entries


def test_candidate_store_round_trip(tmp_path):
    store = CandidateStore()
    rng = np.random.default_rng(5)
    for i, s in enumerate((8, 16)):
        store.put(s, i, i + 1, CandidateEntry(
            mask=box_mask(16, 16, i, i, i + 4, i + 4),
            feature=rng.normal(size=3).astype(np.float32),
            confidence=0.25 * i))
    save_candidates(tmp_path, store)
    back = load_candidates(tmp_path)
    assert set(back.entries) == set(store.entries)
    for key, entry in store.entries.items():
        assert back.entries[key].mask == entry.mask
        assert np.allclose(back.entries[key].feature, entry.feature)
        assert back.entries[key].confidence == entry.confidence
    with pytest.raises(MissingPrediction):
        load_candidates(tmp_path / "elsewhere")


# -- oracle backend -----------------------------------------------------------

def oracle_scene(kb):
    person = class_id(kb, "person")
    t = RecognitionTree.new("img", 24, 16, kb)
    region = t.attach_children(0, [
        ChildSpec(box_mask(24, 16, 0, 0, 15, 15), person, False),
        ChildSpec(box_mask(24, 16, 16, 0, 23, 15), class_id(kb, "road"),
                  False)])[0]
    insts = t.attach_children(region, [
        ChildSpec(box_mask(24, 16, 0, 0, 7, 15), person, True),
        ChildSpec(box_mask(24, 16, 8, 0, 15, 15), person, True)])
    t.attach_children(insts[0], [
        ChildSpec(box_mask(24, 16, 0, 0, 7, 7), class_id(kb, "head"), False),
        ChildSpec(box_mask(24, 16, 0, 8, 7, 15), class_id(kb, "torso"),
                  False)])
    return t, region, insts


def test_oracle_type2_picks_probe_owner(mini_kb):
    t, region, insts = oracle_scene(mini_kb)
    backend = OracleBackend(t)
    req = Request(kind=TYPE2, node_id=region,
                  class_id=class_id(mini_kb, "person"), probe=(10, 5))
    ans = answer_type2(t.nodes[region], req, backend)
    assert not ans.lost
    assert ans.children[0].mask == t.nodes[insts[1]].mask

    missed = Request(kind=TYPE2, node_id=region,
                     class_id=class_id(mini_kb, "person"), probe=(20, 5))
    assert answer_type2(t.nodes[region], missed, backend).lost


def test_oracle_type2_overlap_prefers_smaller(mini_kb):
    person = class_id(mini_kb, "person")
    t = RecognitionTree.new("img", 12, 12, mini_kb)
    region = t.attach_children(0, [
        ChildSpec(BinaryMask.ones(12, 12), person, False)])[0]
    big = box_mask(12, 12, 0, 0, 11, 11)
    small = box_mask(12, 12, 4, 4, 7, 7)
    t.attach_children(region, [ChildSpec(big, person, True),
                               ChildSpec(small, person, True)])
    backend = OracleBackend(t)
    req = Request(kind=TYPE2, node_id=region, class_id=person, probe=(5, 5))
    ans = answer_type2(t.nodes[region], req, backend)
    assert ans.children[0].mask == small


def test_oracle_type1_matches_by_geometry(mini_kb):
    t, region, insts = oracle_scene(mini_kb)
    backend = OracleBackend(t)
    # fresh node with a different id but (nearly) the gt mask
    foreign = TreeNode(node_id=500, mask=box_mask(24, 16, 0, 0, 7, 14),
                       class_id=class_id(mini_kb, "person"),
                       is_instance=True)
    head = class_id(mini_kb, "head")
    req = Request(kind=TYPE1, node_id=500,
                  class_id=class_id(mini_kb, "person"),
                  active_classes=(head, class_id(mini_kb, "torso")))
    ans = answer_type1(foreign, req, backend)
    assert {c.class_id for c in ans.children} == set(req.active_classes)

    # restricting active classes restricts the answer
    only_head = Request(kind=TYPE1, node_id=500,
                        class_id=class_id(mini_kb, "person"),
                        active_classes=(head,))
    assert [c.class_id for c in answer_type1(foreign, only_head,
                                             backend).children] == [head]


def test_kind_guards(mini_kb):
    t, region, _ = oracle_scene(mini_kb)
    backend = OracleBackend(t)
    t1 = Request(kind=TYPE1, node_id=0, class_id=mini_kb.scene_id)
    t2 = Request(kind=TYPE2, node_id=region,
                 class_id=class_id(mini_kb, "person"), probe=(1, 1))
    with pytest.raises(WrongKind):
        answer_type1(t.nodes[region], t2, backend)
    with pytest.raises(WrongKind):
        answer_type2(t.nodes[0], t1, backend)


def test_oracle_replays_own_stream(mini_kb):
    t, _, _ = oracle_scene(mini_kb)
    backend = OracleBackend(t)
    for req, recorded in parse_requests(t):
        node = t.nodes[req.node_id]
        if req.kind == TYPE1:
            ans = answer_type1(node, req, backend)
        else:
            ans = answer_type2(node, req, backend)
        got = sorted((c.class_id, c.mask) for c in ans.children)
        want = sorted((c.class_id, c.mask) for c in recorded.children)
        assert got == want


# -- files backend ------------------------------------------------------------

def test_files_backend_reads_label_maps(tmp_path, mini_kb):
    t, region, insts = oracle_scene(mini_kb)
    head = class_id(mini_kb, "head")
    torso = class_id(mini_kb, "torso")
    level2 = LabelMap.from_masks(24, 16, {
        head: box_mask(24, 16, 0, 0, 7, 7),
        torso: box_mask(24, 16, 0, 8, 7, 15)})
    save_label_png(level2, tmp_path / "labels_2.png")

    backend = FilesBackend(tmp_path, mini_kb)
    inst_node = t.nodes[insts[0]]
    req = Request(kind=TYPE1, node_id=insts[0],
                  class_id=class_id(mini_kb, "person"),
                  active_classes=(head, torso))
    ans = backend.answer_type1(inst_node, req)
    assert {c.class_id for c in ans.children} == {head, torso}
    for c in ans.children:
        assert inst_node.mask.contains(c.mask)

    with pytest.raises(MissingPrediction):  # root Type-I needs labels_1.png
        backend.answer_type1(t.nodes[0], Request(
            kind=TYPE1, node_id=0, class_id=mini_kb.scene_id))


def test_files_backend_candidates(tmp_path, mini_kb):
    t, region, insts = oracle_scene(mini_kb)
    person = class_id(mini_kb, "person")
    store = CandidateStore()
    weak = CandidateEntry(mask=box_mask(24, 16, 8, 0, 14, 15),
                          feature=np.array([0.4], dtype=np.float32),
                          confidence=0.4)
    strong = CandidateEntry(mask=box_mask(24, 16, 8, 0, 15, 15),
                            feature=np.array([2.1], dtype=np.float32),
                            confidence=2.1)
    probe = (10, 5)
    store.put(8, probe[1] // 8, probe[0] // 8, weak)
    store.put(16, probe[1] // 16, probe[0] // 16, strong)
    save_candidates(tmp_path, store)

    backend = FilesBackend(tmp_path, mini_kb)
    req = Request(kind=TYPE2, node_id=region, class_id=person, probe=probe)
    ans = backend.answer_type2(t.nodes[region], req)
    assert ans.score == pytest.approx(2.1)  # argmax over levels
    assert ans.children[0].mask == strong.mask

    with pytest.raises(NoCandidate):  # every level's cell is unpopulated
        backend.answer_type2(t.nodes[region], Request(
            kind=TYPE2, node_id=region, class_id=person, probe=(23, 15)))


# -- linear backend -----------------------------------------------------------

def striped_setup():
    """Two vertical stripes of one-hot cells; stride 4 over a 16x8 image."""
    b = KbBuilder()
    inst = b.add("object", countable=True)
    b.add("left", parent=inst)
    b.add("right", parent=inst)
    kb = b.freeze()
    left = kb.resolve_label("left").id
    right = kb.resolve_label("right").id

    cells = np.zeros((2, 4, 2), dtype=np.float32)
    cells[:, :2, 0] = 1.0   # left halves score class "left"
    cells[:, 2:, 1] = 1.0   # right halves score class "right"
    fm = FeatureMap(cells, level_stride=4)
    emb = table(["left", "right"], np.eye(2, dtype=np.float32))

    t = RecognitionTree.new("img", 16, 8, kb)
    region = t.attach_children(0, [
        ChildSpec(BinaryMask.ones(16, 8), inst, False)])[0]
    node = t.attach_children(region, [
        ChildSpec(BinaryMask.ones(16, 8), inst, True)])[0]
    return kb, t, node, fm, emb, left, right


def test_linear_backend_recovers_stripes():
    kb, t, node, fm, emb, left, right = striped_setup()
    backend = LinearBackend(kb, emb, feature=fm)
    req = Request(kind=TYPE1, node_id=node,
                  class_id=kb.resolve_label("object").id,
                  active_classes=(left, right))
    ans = backend.answer_type1(t.nodes[node], req)
    by_class = {c.class_id: c.mask for c in ans.children}
    assert by_class[left] == box_mask(16, 8, 0, 0, 7, 7)
    assert by_class[right] == box_mask(16, 8, 8, 0, 15, 7)


def test_linear_backend_clips_to_node():
    kb, t, node, fm, emb, left, right = striped_setup()
    # shrink the instance: cells centered outside it go silent
    t.nodes[node].mask = box_mask(16, 8, 0, 0, 7, 7)
    backend = LinearBackend(kb, emb, feature=fm)
    req = Request(kind=TYPE1, node_id=node,
                  class_id=kb.resolve_label("object").id,
                  active_classes=(left, right))
    ans = backend.answer_type1(t.nodes[node], req)
    by_class = {c.class_id: c.mask for c in ans.children}
    assert set(by_class) == {left}
    assert by_class[left] == box_mask(16, 8, 0, 0, 7, 7)


def test_linear_backend_type2_needs_candidates():
    kb, t, node, fm, emb, left, right = striped_setup()
    backend = LinearBackend(kb, emb, feature=fm)
    req = Request(kind=TYPE2, node_id=node,
                  class_id=kb.resolve_label("object").id, probe=(3, 3))
    with pytest.raises(NoCandidate):
        backend.answer_type2(t.nodes[node], req)


def test_type2_answers_are_clipped(mini_kb):
    t, region, insts = oracle_scene(mini_kb)
    person = class_id(mini_kb, "person")
    store = CandidateStore()
    oversized = CandidateEntry(mask=BinaryMask.ones(24, 16),
                               feature=np.array([1.0], dtype=np.float32),
                               confidence=1.0)
    store.put(8, 0, 0, oversized)
    backend = LinearBackend(mini_kb, table(["x"], [[1.0]]),
                            feature=FeatureMap(
                                np.zeros((2, 3, 1), dtype=np.float32)),
                            candidates=store)
    req = Request(kind=TYPE2, node_id=region, class_id=person, probe=(3, 3))
    ans = backend.answer_type2(t.nodes[region], req)
    assert t.nodes[region].mask.contains(ans.children[0].mask)
    assert ans.children[0].mask == t.nodes[region].mask


def test_default_constants():
    assert PYRAMID_STRIDES == (8, 16, 32, 64, 128)
    assert TAU_TYPE1 == pytest.approx(0.07)
