"""Command line entry point.

Relative output paths resolve against ``$SKETCH3D_ROOT`` (default: the
working directory). Failures exit nonzero and print one JSON object on
stderr::

    {"error": "DatasetError", "message": "...", "command": "verify"}
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import dataset as ds
from . import pipeline

ROOT_ENV = "SKETCH3D_ROOT"


def _root():
    return Path(os.environ.get(ROOT_ENV, "."))


def _path(p):
    p = Path(p)
    return p if p.is_absolute() else _root() / p


def _cfg(args):
    cfg = cfgmod.load_config(_path(args.config) if getattr(args, "config", None) else None)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def _levels(text):
    return [l.strip() for l in text.split(",") if l.strip()]


def cmd_gen_shapes(args):
    out = _path(args.out)
    index = ds.write_shape_set(out, args.classes, args.per_class, args.seed)
    _emit({"shapes": len(index), "out": str(out)})


def cmd_split(args):
    cfg = _cfg(args)
    shape_dir = _path(args.shapes)
    ratios = [float(x) for x in (args.ratios or cfg["dataset.split"]).split(",")]
    assignment = ds.write_split(shape_dir, ratios, cfg["seed"])
    names = list(assignment.values())
    _emit({n: names.count(n) for n in ds.SPLITS})


def cmd_build_dataset(args):
    cfg = _cfg(args)
    levels = cfgmod.parse_levels(args.levels) if args.levels else None
    m = ds.build_dataset(_path(args.shapes), _path(args.out), cfg, levels, views=args.views or None)
    failures = sum(len(r["failures"]) for r in m["items"])
    _emit({"items": len(m["items"]), "levels": m["levels"], "failures": failures})


def cmd_render_views(args):
    m, root = ds.load_manifest(_path(args.manifest))
    cfg = cfgmod.default_config()
    cfg.update(m["config"])
    ds.render_dataset_views(m, root, cfg)
    ds.write_manifest(m, root)
    _emit({"items": len(m["items"]), "views": cfg["render.views"]})


def cmd_train(args):
    cfg = _cfg(args)
    out = _path(args.out)

    def log(rec):
        if not args.quiet:
            print(json.dumps(rec, sort_keys=True), file=sys.stderr)

    pipeline.train_from_manifest(_path(args.manifest), cfg, args.level, args.variant, out, log)
    _emit({"checkpoint": str(out / "model.ckpt")})


def cmd_eval(args):
    out = _path(args.out) if args.out else None
    rec = pipeline.evaluate_checkpoint(_path(args.checkpoint), _path(args.manifest), args.level, args.split, out)
    _emit(rec)


def cmd_study(args):
    cfg = _cfg(args)
    report = pipeline.run_study(_path(args.manifest), _levels(args.train_levels), _levels(args.eval_levels),
                                cfg, args.variant, _path(args.out))
    _emit(report)


def cmd_retrieve(args):
    ranked = pipeline.retrieve(_path(args.checkpoint), _path(args.query), _path(args.manifest),
                               args.top_n, args.split)
    _emit({"query": args.query, "results": [{"id": i, "distance": d} for i, d in ranked]})


def cmd_verify(args):
    problems = ds.verify_manifest(_path(args.manifest))
    if problems:
        raise ds.DatasetError(f"{len(problems)} problem(s): " + "; ".join(problems[:20]))
    _emit({"ok": True})


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        err = {"error": "UsageError", "message": message, "usage": self.format_usage().strip()}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        sys.exit(2)


def build_parser():
    p = _Parser(prog="sketch3d", description="Synthetic sketch datasets and sketch-to-shape retrieval.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-shapes", help="generate a procedural shape set")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--per-class", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_shapes)

    s = sub.add_parser("split", help="write a stratified train/val/test split for a shape set")
    s.add_argument("--shapes", required=True)
    s.add_argument("--ratios", help="comma-separated train,val,test fractions")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("build-dataset", help="build sketches and point clouds at several abstraction levels")
    s.add_argument("--shapes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--levels", help="comma-separated l_a values, e.g. 0,0.25,0.5,0.75,1.0")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--views", action="store_true", help="also render depth views")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("render-views", help="render depth views for a built dataset")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_render_views)

    s = sub.add_parser("train", help="train the toy encoder on a dataset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variant", help="loss variant, e.g. cl+tl or cl+tcl+rec")
    s.add_argument("--level", help="sketch level: a number, 'all' or 'middle'")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on one sketch level")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--level", default="0.5")
    s.add_argument("--split", default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("study", help="train per level and evaluate across levels")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--train-levels", default="0.0,0.25,0.5,0.75,1.0,all,middle")
    s.add_argument("--eval-levels", default="0.0,0.25,0.5,0.75,1.0")
    s.add_argument("--variant")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("retrieve", help="rank gallery shapes for a query sketch")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--top-n", type=int, default=10)
    s.add_argument("--split", help="restrict the gallery to one split")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("verify", help="check a dataset manifest against its files")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
