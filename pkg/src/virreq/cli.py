"""Command-line entry point.

Subcommands: kb, parse-requests, run, sample-probes, eval, gen, subsample,
serve. Every command is deterministic given --seed; --json emits one
machine-readable document (to stdout with "-", or to a file).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import kb as kbmod
from .errors import VirreqError
from .executor import NMS_IOU, Session, non_probing_instances, run_all, step
from .kb import KbBuilder, KbRegistry, load_kb, save_kb
from .metrics import dataset_hpq, dataset_pq, miou_per_level, part_pq
from .predictors import FilesBackend, LinearBackend, OracleBackend, load_embeddings
from .probes import GammaPolicy, GridPolicy, grid_probes, sample_probe
from .requests import (
    TYPE1,
    Request,
    read_stream,
    stream_from_tree,
    write_stream,
)
from .synth import (
    PerturbSpec,
    SceneSpec,
    generate_scene,
    load_corpus,
    save_corpus,
    subsample_parts,
    subsample_semantic_and_parts,
)
from .tree import RecognitionTree


def _data_dir(flag: Optional[str]) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get("VIRREQ_DATA_DIR")
    if env:
        return Path(env)
    raise SystemExit("no data directory: pass --data or set VIRREQ_DATA_DIR")


def _emit_json(doc: dict, target: Optional[str]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if target is None:
        return
    if target == "-":
        print(text)
    else:
        Path(target).write_text(text + "\n")


def _load_tree(path: str, kb_path: Optional[str]) -> RecognitionTree:
    registry = KbRegistry()
    if kb_path:
        registry.put(load_kb(kb_path))
    data = Path(path).read_bytes()
    return RecognitionTree.parse(data, registry=registry,
                                 strict=bool(kb_path))


# -- kb ---------------------------------------------------------------------

def _cmd_kb(args) -> int:
    if args.action == "show":
        version = load_kb(args.file)
        doc = version.to_json()
        if args.json:
            _emit_json(doc, args.json)
        else:
            print(f"version {version.version_id}")
            for c in version.concepts:
                kids = ",".join(str(k) for k in c.children)
                kind = "thing" if c.countable else "stuff"
                print(f"  [{c.id:3d}] {c.label} ({kind}) -> [{kids}]")
        return 0
    if args.action == "diff":
        a, b = load_kb(args.file), load_kb(args.other)
        d = kbmod.diff(a, b)
        doc = {"added": sorted(d.added_concepts),
               "removed": sorted(d.removed_concepts),
               "added_edges": sorted(d.added_edges),
               "removed_edges": sorted(d.removed_edges)}
        if args.json:
            _emit_json(doc, args.json)
        else:
            for key, rows in doc.items():
                for row in rows:
                    print(f"{key}: {row}")
        return 0
    if args.action == "add":
        version = load_kb(args.file)
        out = kbmod.add_concept(version, args.parent, args.label,
                                countable=args.countable)
        save_kb(out, args.out or args.file)
        print(out.version_id)
        return 0
    if args.action == "copy":
        version = load_kb(args.file)
        out = kbmod.copy_sub_knowledge(version, args.src, args.dst)
        save_kb(out, args.out or args.file)
        print(out.version_id)
        return 0
    raise SystemExit(f"unknown kb action {args.action!r}")


# -- parse-requests -----------------------------------------------------------

def _cmd_parse_requests(args) -> int:
    gt = _load_tree(args.tree, args.kb)
    stream = stream_from_tree(gt)
    if args.out == "-":
        write_stream(stream, sys.stdout)
    else:
        with open(args.out, "w") as fp:
            write_stream(stream, fp)
    return 0


# -- run ----------------------------------------------------------------------

def _make_backend(args, gt: RecognitionTree):
    if args.backend == "oracle":
        return OracleBackend(gt)
    kb = gt.kb
    embeddings = load_embeddings(args.embeddings) if args.embeddings else None
    if args.backend == "files":
        if not args.bundle:
            raise SystemExit("--bundle is required for the files backend")
        return FilesBackend(args.bundle, kb, embeddings=embeddings)
    if args.backend == "linear":
        if not args.embeddings:
            raise SystemExit("--embeddings is required for the linear backend")
        from .blob import load_blob
        from .predictors import CandidateStore, FeatureMap, load_candidates
        feature = None
        if args.features:
            feature = FeatureMap(load_blob(args.features),
                                 level_stride=args.feature_stride)
        candidates = load_candidates(args.bundle) if args.bundle else None
        return LinearBackend(kb, embeddings, feature=feature,
                             candidates=candidates)
    raise SystemExit(f"unknown backend {args.backend!r}")


def _run_nonprobing(session: Session, nms_iou: float, disjoint: bool) -> None:
    frontier = [0]
    while frontier:
        new_regions: List[int] = []
        for iid in frontier:
            node = session.tree.nodes[iid]
            req = Request(kind=TYPE1, node_id=iid, class_id=node.class_id)
            try:
                new_regions.extend(step(session, req))
            except VirreqError:
                continue
        frontier = []
        for sid in new_regions:
            try:
                frontier.extend(non_probing_instances(
                    session, sid, nms_iou=nms_iou, disjoint=disjoint))
            except VirreqError:
                continue


def _cmd_run(args) -> int:
    gt = _load_tree(args.gt, args.kb)
    backend = _make_backend(args, gt)
    tree = RecognitionTree.new(gt.image_id, gt.width, gt.height, gt.kb)
    session = Session(tree=tree, backend=backend,
                      gamma_policy=GammaPolicy(gamma=args.gamma,
                                               seed=args.seed),
                      grid_policy=GridPolicy(stride=args.stride))
    if args.mode == "probing":
        if args.stream:
            with open(args.stream) as fp:
                stream = read_stream(fp)
        else:
            stream = stream_from_tree(gt)
        run_all(stream, session)
    else:
        _run_nonprobing(session, args.nms, args.disjoint)
    out = Path(args.out)
    out.write_bytes(session.tree.serialize())
    lost = sum(1 for e in session.log if e.lost)
    if args.json:
        _emit_json({"out": str(out), "nodes": len(session.tree.nodes),
                    "requests": len(session.log), "lost": lost}, args.json)
    else:
        print(f"wrote {out} ({len(session.tree.nodes)} nodes, "
              f"{len(session.log)} requests, {lost} lost)")
    return 0


# -- sample-probes ------------------------------------------------------------

def _cmd_sample_probes(args) -> int:
    tree = _load_tree(args.tree, args.kb)
    node = tree.node(args.node)
    lines = []
    if args.stride:
        for a, b in grid_probes(node.mask, GridPolicy(stride=args.stride)):
            lines.append({"a": a, "b": b})
    else:
        rng = np.random.default_rng(args.seed)
        policy = GammaPolicy(gamma=args.gamma, seed=args.seed)
        for _ in range(args.count):
            p = sample_probe(node.mask, policy, rng=rng)
            lines.append({"a": p.a, "b": p.b, "in_region": p.in_region})
    for line in lines:
        print(json.dumps(line, sort_keys=True))
    return 0


# -- eval ----------------------------------------------------------------------

def _paired_corpora(gt_dir: Path, pred_dir: Path):
    gt_trees, gt_registry = load_corpus(gt_dir)
    pred_trees, _ = load_corpus(pred_dir)
    preds = {t.image_id: t for t in pred_trees}
    pairs = []
    for gt in gt_trees:
        if gt.image_id not in preds:
            raise SystemExit(f"prediction missing for image {gt.image_id!r}")
        pairs.append((gt, preds[gt.image_id]))
    return pairs, gt_registry


def _cmd_eval(args) -> int:
    gt_dir = Path(args.gt) if args.gt else _data_dir(None) / "gt"
    pred_dir = Path(args.pred) if args.pred else _data_dir(None) / "pred"
    pairs, registry = _paired_corpora(gt_dir, pred_dir)
    if args.metric == "hpq":
        report = dataset_hpq(pairs, registry, strict_fp=args.strict_fp)
    elif args.metric == "pq":
        report = dataset_pq(pairs, registry)
    elif args.metric == "partpq":
        report = part_pq(pairs, registry)
    elif args.metric == "miou":
        per_class, mean = miou_per_level(pairs, args.level)
        doc = {"metric": "miou", "level": args.level, "aggregate": mean,
               "per_class": {str(k): v for k, v in sorted(per_class.items())}}
        if args.json:
            _emit_json(doc, args.json)
        print(f"miou level-{args.level} {mean:.4f}")
        return 0
    else:
        raise SystemExit(f"unknown metric {args.metric!r}")

    doc = report.to_json()
    if args.metric == "hpq" and args.subset != "all":
        value = report.subsets.get(args.subset, 0.0)
    else:
        value = report.aggregate
    if args.json:
        _emit_json(doc, args.json)
    print(f"{args.metric} {args.subset} {value:.4f}")
    return 0


# -- gen ------------------------------------------------------------------------

def _kb_from_palette(palette: dict):
    builder = KbBuilder()
    for entry in palette["classes"]:
        cid = builder.add(entry["label"],
                          countable=bool(entry.get("countable", False)))
        for part in entry.get("parts", ()):
            if isinstance(part, str):
                builder.add(part, parent=cid)
            else:
                pid = builder.add(part["label"], parent=cid,
                                  countable=bool(part.get("countable", False)))
                for sub in part.get("parts", ()):
                    builder.add(sub, parent=pid)
    return builder.freeze()


def _cmd_gen(args) -> int:
    spec_doc = json.loads(Path(args.spec).read_text())
    if "kb_file" in spec_doc:
        version = load_kb(spec_doc["kb_file"])
    else:
        version = _kb_from_palette(spec_doc["palette"])
    perturb = None
    if args.pred_out:
        perturb = PerturbSpec(morph_radius=args.morph,
                              class_flip_p=args.flip,
                              drop_p=args.drop, seed=args.seed)
    gts, preds = [], []
    for i in range(args.n):
        child_seed = int(np.random.SeedSequence([args.seed, i])
                         .generate_state(1)[0])
        spec = SceneSpec(
            kb=version,
            width=int(spec_doc.get("width", 96)),
            height=int(spec_doc.get("height", 96)),
            min_instances=int(spec_doc.get("min_instances", 1)),
            max_instances=int(spec_doc.get("max_instances", 3)),
            levels=int(spec_doc.get("levels", 2)),
            min_size=int(spec_doc.get("min_size", 12)),
            seed=child_seed)
        p = None if perturb is None else PerturbSpec(
            morph_radius=perturb.morph_radius,
            class_flip_p=perturb.class_flip_p,
            drop_p=perturb.drop_p, seed=child_seed + 1)
        gt, pred = generate_scene(spec, perturb=p, image_id=f"scene-{i:04d}")
        gts.append(gt)
        if pred is not None:
            preds.append(pred)
    save_corpus(args.out, gts)
    if preds:
        save_corpus(args.pred_out, preds, render=False)
    if args.json:
        _emit_json({"out": args.out, "images": len(gts),
                    "kb_version": version.version_id}, args.json)
    else:
        print(f"wrote {len(gts)} scenes to {args.out} "
              f"(kb {version.version_id[:12]})")
    return 0


# -- subsample -------------------------------------------------------------------

def _cmd_subsample(args) -> int:
    trees, registry = load_corpus(Path(args.input))
    if args.setting == 1:
        out = subsample_parts(trees, args.ratio, seed=args.seed)
    else:
        out = subsample_semantic_and_parts(trees, args.ratio, seed=args.seed,
                                           registry=registry)
    save_corpus(args.out, out, registry=registry, render=False)
    kept = sum(len(t.nodes) for t in out)
    total = sum(len(t.nodes) for t in trees)
    if args.json:
        _emit_json({"out": args.out, "setting": args.setting,
                    "ratio": args.ratio, "nodes_kept": kept,
                    "nodes_total": total}, args.json)
    else:
        print(f"kept {kept}/{total} nodes under setting {args.setting} "
              f"at ratio {args.ratio}")
    return 0


# -- serve ----------------------------------------------------------------------

def _cmd_serve(args) -> int:
    from .server import serve

    serve(_data_dir(args.data), port=args.port, host=args.host)
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="virreq",
        description="request-driven hierarchical segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kb", help="inspect and edit knowledge-base versions")
    p.add_argument("action", choices=["show", "diff", "add", "copy"])
    p.add_argument("--file", required=True)
    p.add_argument("--other", help="second version for diff")
    p.add_argument("--parent", type=int, default=0)
    p.add_argument("--label")
    p.add_argument("--countable", action="store_true")
    p.add_argument("--src", type=int, help="copy sub-knowledge from this id")
    p.add_argument("--dst", type=int, help="copy sub-knowledge onto this id")
    p.add_argument("--out")
    p.add_argument("--json", nargs="?", const="-")
    p.set_defaults(func=_cmd_kb)

    p = sub.add_parser("parse-requests",
                       help="turn an annotated tree into a request stream")
    p.add_argument("--tree", required=True)
    p.add_argument("--kb", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_parse_requests)

    p = sub.add_parser("run", help="execute requests against a backend")
    p.add_argument("--backend", choices=["oracle", "files", "linear"],
                   default="oracle")
    p.add_argument("--mode", choices=["probing", "nonprobing"],
                   default="probing")
    p.add_argument("--gt", required=True,
                   help="ground-truth tree (canvas, stream source, oracle)")
    p.add_argument("--kb", required=True)
    p.add_argument("--stream", help="replay this stream instead of parsing "
                                    "the ground truth")
    p.add_argument("--bundle", help="prediction bundle dir (files backend)")
    p.add_argument("--embeddings")
    p.add_argument("--features", help="feature-map blob (linear backend)")
    p.add_argument("--feature-stride", type=int)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--nms", type=float, default=NMS_IOU)
    p.add_argument("--disjoint", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--json", nargs="?", const="-")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sample-probes", help="draw probe pixels from a node")
    p.add_argument("--tree", required=True)
    p.add_argument("--kb")
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int,
                   help="grid sampling instead of gamma sampling")
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=_cmd_sample_probes)

    p = sub.add_parser("eval", help="score prediction trees against gt")
    p.add_argument("--gt")
    p.add_argument("--pred")
    p.add_argument("--metric", choices=["hpq", "pq", "partpq", "miou"],
                   default="hpq")
    p.add_argument("--subset", choices=["all", "np", "p", "pdagger"],
                   default="all")
    p.add_argument("--level", type=int, default=1, help="miou level")
    p.add_argument("--strict-fp", action="store_true")
    p.add_argument("--json", nargs="?", const="-")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pred-out", help="also write perturbed predictions here")
    p.add_argument("--morph", type=int, default=1)
    p.add_argument("--flip", type=float, default=0.0)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--json", nargs="?", const="-")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("subsample", help="thin annotations for incomplete-"
                                         "supervision experiments")
    p.add_argument("--setting", type=int, choices=[1, 2], required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json", nargs="?", const="-")
    p.set_defaults(func=_cmd_subsample)

    p = sub.add_parser("serve", help="start the annotation HTTP service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VirreqError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
