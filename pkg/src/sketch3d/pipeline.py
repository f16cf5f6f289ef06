"""Train, evaluate, study and retrieve on top of a built dataset."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import metric_learning as ml
from .dataset import DatasetError, level_key, load_items, load_manifest
from .abstraction import rng_stream
from .geomcore import PointCloud, load_point_cloud, load_sketch
from .sampling import sample_sketch, subsample
from .toy_encoder import (
    TrainItem,
    config_from_dict,
    embed,
    load_checkpoint,
    retrieval_run,
    save_checkpoint,
    sparse_eval_clouds,
    train,
)

__all__ = [
    "train_from_manifest",
    "evaluate_model",
    "evaluate_checkpoint",
    "run_study",
    "retrieve",
    "format_metrics",
]


def _write_lines(path, lines):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(line + "\n" for line in lines)
    os.replace(tmp, path)


def train_from_manifest(manifest, cfg, level=None, variant=None, out_dir=None, log_fn=None):
    """Train on the manifest's train split at one sketch level.

    With ``out_dir`` the run writes ``model.ckpt``, ``train_log.jsonl`` and
    the effective ``config.txt``.
    """
    level = cfg["train.level"] if level is None else level
    tcfg = cfgmod.train_config(cfg, variant)
    m, _ = load_manifest(manifest)
    items = load_items(manifest, "train", level)
    val = load_items(manifest, "val", level) or None
    if not items:
        raise DatasetError(f"no training items at level {level}")
    classes = 1 + max(int(r["label"]) for r in m["items"])
    result = train(items, tcfg, val_items=val, classes=classes, log_fn=log_fn)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        eff = dict(cfg)
        eff["train.level"] = str(level)
        eff["loss.variant"] = tcfg.loss.variant
        cfgmod.save_config(eff, out / "config.txt")
        _write_lines(out / "train_log.jsonl", [json.dumps(r, sort_keys=True) for r in result.log])
        extra = {"level": str(level), "dataset_config_hash": m["config_hash"]}
        save_checkpoint(out / "model.ckpt", result, extra)
    return result


def evaluate_model(encoder, tcfg, manifest, level, split="test"):
    """Metrics for sketch queries at ``level`` against the split's shapes."""
    items = load_items(manifest, split, level)
    if not items:
        raise DatasetError(f"no {split} items at level {level}")
    run = retrieval_run(encoder, items, items, tcfg)
    return ml.evaluate(run), run


def format_metrics(metrics, meta=None):
    """Key-value text report."""
    lines = [f"{k} = {v}" for k, v in sorted((meta or {}).items())]
    lines += [f"{k} = {v:.6f}" for k, v in metrics.items()]
    return "\n".join(lines) + "\n"


def evaluate_checkpoint(checkpoint, manifest, level, split="test", out_dir=None):
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    encoder, _, meta = load_checkpoint(checkpoint)
    tcfg = config_from_dict(meta["config"])
    metrics, _ = evaluate_model(encoder, tcfg, manifest, level, split)
    record = {
        "variant": tcfg.loss.variant,
        "m_tl": tcfg.loss.m_tl,
        "m_tcl": tcfg.loss.m_tcl,
        "lambda_cls": tcfg.loss.lambda_cls,
        "lambda_tl": tcfg.loss.lambda_tl,
        "lambda_tcl": tcfg.loss.lambda_tcl,
        "lambda_ch": tcfg.loss.lambda_ch,
        "seed": tcfg.seed,
        "train_level": meta.get("level"),
        "eval_level": str(level),
        "split": split,
        "metrics": metrics,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_lines(out / "metrics.json", [json.dumps(record, sort_keys=True)])
        meta_kv = {k: v for k, v in record.items() if k != "metrics"}
        _write_lines(out / "metrics.txt", format_metrics(metrics, meta_kv).splitlines())
    return record


def run_study(manifest, train_levels, eval_levels, cfg, variant=None, out_dir=None, log_fn=None):
    """Train one model per training level and evaluate it on every eval level.

    Returns ``{"train_levels", "eval_levels", "metrics": {name: matrix}}``
    with rows indexed by training level.
    """
    train_levels = [str(l) for l in train_levels]
    eval_levels = [str(l) for l in eval_levels]
    matrices = {}
    for i, tl in enumerate(train_levels):
        sub = None if out_dir is None else Path(out_dir) / f"train_{_dirname(tl)}"
        result = train_from_manifest(manifest, cfg, tl, variant, sub, log_fn)
        for j, el in enumerate(eval_levels):
            metrics, _ = evaluate_model(result.encoder, result.config, manifest, el)
            for k, v in metrics.items():
                matrices.setdefault(k, np.zeros((len(train_levels), len(eval_levels))))[i, j] = v
    report = {
        "train_levels": train_levels,
        "eval_levels": eval_levels,
        "metrics": {k: v.tolist() for k, v in matrices.items()},
    }
    if out_dir is not None:
        _write_lines(Path(out_dir) / "study.json", [json.dumps(report, sort_keys=True, indent=1)])
    return report


def _dirname(level):
    return level if level in ("all", "middle") else level_key(level)


def _gallery_cache(checkpoint, manifest_path, split):
    h = hashlib.sha256()
    h.update(Path(checkpoint).read_bytes())
    h.update(Path(manifest_path).read_bytes())
    h.update(str(split).encode())
    return Path(f"{checkpoint}.gallery-{h.hexdigest()[:16]}.npz")


def _gallery_items(m, root, split):
    # shape clouds do not depend on the sketch level
    return [
        TrainItem(rec["id"], int(rec["label"]), None,
                  load_point_cloud(root / rec["files"]["shape_cloud"]).points, None)
        for rec in m["items"]
        if (split is None or rec["split"] == split) and "shape_cloud" in rec["files"]
    ]


def retrieve(checkpoint, query, manifest, top_n=10, split=None):
    """Rank gallery shapes for one sketch file (``.txt`` strokes or ``.xyz`` cloud).

    Gallery embeddings are cached next to the checkpoint, keyed by the
    checkpoint, manifest and split, so later queries skip re-encoding.
    Returns a list of ``(shape_id, distance)`` pairs, closest first.
    """
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    m, root = load_manifest(manifest)
    manifest_path = root / "manifest.json"
    encoder, _, meta = load_checkpoint(checkpoint)
    tcfg = config_from_dict(meta["config"])
    cache = _gallery_cache(checkpoint, manifest_path, split)
    if cache.exists():
        with np.load(cache) as z:
            ids, fg = [str(x) for x in z["ids"]], z["features"]
    else:
        items = _gallery_items(m, root, split)
        if not items:
            raise DatasetError(f"empty gallery for split {split}")
        ids = [it.item_id for it in items]
        fg = embed(encoder, sparse_eval_clouds(items, tcfg, "shape"))
        tmp = cache.with_suffix(".tmp.npz")
        np.savez(tmp, ids=np.array(ids), features=fg)
        os.replace(tmp, cache)
    if str(query).endswith(".xyz"):
        dense = PointCloud(load_point_cloud(query).points)
    else:
        dense = sample_sketch(load_sketch(query), tcfg.sampling.dense_count)
    sparse = subsample(dense, tcfg.sampling.sparse_count, tcfg.sampling.mode, rng_stream(tcfg.seed, 7, 0, 0))
    fq = embed(encoder, [sparse.points])
    if not tcfg.loss.uses_tcl:
        fq, fg = ml.l2_normalize(fq), ml.l2_normalize(fg)
    d = ml.sq_dists(fq, fg)[0]
    order = np.argsort(d, kind="stable")[:max(0, int(top_n))]
    return [(ids[j], float(d[j])) for j in order]
