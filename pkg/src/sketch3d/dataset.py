"""On-disk sketch/shape datasets: shape sets, splits, builds and manifests.

A shape set directory holds raw procedural shapes::

    shapes.json              ids, labels, families, generator seed
    <id>.obj, <id>_net.txt   mesh and curve network (un-normalized)
    split.json               optional split assignment

A dataset directory holds everything derived from one shape set::

    manifest.json
    mesh/<id>.obj            normalized mesh
    network/<id>.txt         normalized network
    prepared/<id>.txt        filtered and consolidated network
    target/<id>.xyz          reconstruction target samples
    cloud/<id>_shape.xyz     dense mesh samples
    sketch/la<level>/<id>.txt and <id>.xyz (dense sketch samples)
    views/...                optional depth renders

The manifest lists every file with its SHA-256 and carries no timestamps,
so rebuilding with the same inputs reproduces it byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .abstraction import EmptySketchError, generate_sketch, rng_stream
from .chain_ops import prepare_network
from .depth_render import make_cameras, render_depth, save_depth_pgm, sketch_tubes
from .geomcore import (
    GeometryError,
    load_curve_network,
    load_mesh,
    load_point_cloud,
    load_sketch,
    normalization,
    normalize,
    normalize_mesh,
    save_curve_network,
    save_mesh,
    save_point_cloud,
    save_sketch,
)
from .procgen import proc_generate
from .sampling import largest_remainder, sample_mesh, sample_polylines, sample_sketch
from .toy_encoder import TrainItem

__all__ = [
    "MANIFEST_VERSION",
    "MIDDLE_LEVELS",
    "DatasetError",
    "ClassTooSmallError",
    "stable_seed",
    "level_key",
    "stratified_split",
    "write_shape_set",
    "read_shape_set",
    "write_split",
    "build_dataset",
    "render_dataset_views",
    "write_manifest",
    "load_manifest",
    "verify_manifest",
    "select_level",
    "load_items",
]

MANIFEST_VERSION = 1
MIDDLE_LEVELS = (0.25, 0.5, 0.75)
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


class ClassTooSmallError(DatasetError):
    pass


def stable_seed(global_seed, item_id):
    """64-bit seed from ``(global_seed, item_id)``; independent of item order."""
    h = hashlib.blake2b(f"{int(global_seed)}:{item_id}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def level_key(level):
    """Canonical text form of an abstraction level (``0.5`` -> ``"0.50"``)."""
    return f"{float(level):.2f}"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# splits

def stratified_split(labels, ratios=(0.72, 0.08, 0.20), seed=0):
    """Per-class proportional train/val/test assignment.

    Within each class the members are shuffled by a seeded draw and cut by
    largest-remainder rounding of ``ratios``. Returns one split name per item.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if len(ratios) != 3 or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("ratios must be three nonnegative numbers summing to 1")
    labels = np.asarray(labels)
    out = np.empty(len(labels), dtype=object)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < 3:
            raise ClassTooSmallError(f"class {c} has {len(members)} items; at least 3 are needed")
        order = rng_stream(seed, 21, int(c)).permutation(len(members))
        counts = largest_remainder(ratios, len(members))
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for s, name in enumerate(SPLITS):
            out[members[order[bounds[s]:bounds[s + 1]]]] = name
    return out.tolist()


# ---------------------------------------------------------------------------
# shape sets

def write_shape_set(out_dir, classes, per_class, seed):
    """Generate procedural shapes and write them with a ``shapes.json`` index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapes = proc_generate(classes, per_class, seed)
    index = []
    for s in shapes:
        save_mesh(s.mesh, out / f"{s.shape_id}.obj")
        save_curve_network(s.network, out / f"{s.shape_id}_net.txt")
        index.append({"id": s.shape_id, "label": s.label, "family": s.family})
    _write_json(out / "shapes.json", {"seed": int(seed), "classes": classes, "shapes": index})
    return index


def read_shape_set(shape_dir):
    path = Path(shape_dir) / "shapes.json"
    if not path.exists():
        raise DatasetError(f"{shape_dir}: no shapes.json (run gen-shapes first)")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_split(shape_dir, ratios, seed):
    """Stratified split of a shape set, saved as ``split.json``; returns id -> split."""
    index = read_shape_set(shape_dir)["shapes"]
    names = stratified_split([s["label"] for s in index], ratios, seed)
    assignment = {s["id"]: n for s, n in zip(index, names)}
    _write_json(Path(shape_dir) / "split.json",
                {"ratios": list(ratios), "seed": int(seed), "assignment": assignment})
    return assignment


def _split_for(shape_dir, index, cfg):
    path = Path(shape_dir) / "split.json"
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)["assignment"]
    ratios = [float(x) for x in cfg["dataset.split"].split(",")]
    names = stratified_split([s["label"] for s in index], ratios, cfg["seed"])
    return {s["id"]: n for s, n in zip(index, names)}


# ---------------------------------------------------------------------------
# builds

def _mixed_choice(item_seed, levels, which):
    pool = list(levels) if which == "all" else [l for l in levels if l in MIDDLE_LEVELS]
    if not pool:
        return None
    r = rng_stream(item_seed, 31 if which == "all" else 32)
    return level_key(pool[int(r.integers(len(pool)))])


def build_dataset(shape_dir, out_dir, cfg=None, levels=None, seed=None, views=None):
    """Derive normalized geometry, sketches and point clouds for a shape set.

    Per-item failures (for instance a sketch whose strokes are all filtered
    out) are recorded in the manifest instead of aborting the build.
    Returns the manifest dict, which is also written to
    ``<out_dir>/manifest.json``.
    """
    cfg = dict(cfgmod.default_config() if cfg is None else cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if levels is not None:
        cfg["dataset.levels"] = ",".join(level_key(l) for l in levels)
    if views is not None:
        cfg["dataset.render_views"] = bool(views)
    levels = cfgmod.parse_levels(cfg["dataset.levels"])
    if any(not 0.0 <= l <= 1.0 for l in levels):
        raise DatasetError("abstraction levels must lie in [0, 1]")
    gseed = cfg["seed"]
    dense = cfg["sampling.dense_count"]
    target_points = cfg["train.recon_points"]
    cons = cfgmod.consolidation_config(cfg)

    shape_dir, out = Path(shape_dir), Path(out_dir)
    index = read_shape_set(shape_dir)["shapes"]
    split = _split_for(shape_dir, index, cfg)
    for sub in ("mesh", "network", "prepared", "target", "cloud"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for l in levels:
        (out / "sketch" / f"la{level_key(l)}").mkdir(parents=True, exist_ok=True)

    items = []
    for entry in index:
        sid = entry["id"]
        item_seed = stable_seed(gseed, sid)
        rec = {"id": sid, "label": entry["label"], "family": entry["family"], "seed": item_seed,
               "split": split.get(sid, "train"), "files": {}, "sketches": {}, "failures": []}
        items.append(rec)
        try:
            net = load_curve_network(shape_dir / f"{sid}_net.txt")
            mesh = load_mesh(shape_dir / f"{sid}.obj")
            center, scale = normalization(net.points)
            net = normalize(net)
            mesh = normalize_mesh(mesh, center, scale)
            prepared = prepare_network(net, cons)
        except GeometryError as exc:
            rec["failures"].append({"stage": "prepare", "error": str(exc)})
            continue
        files = {
            "mesh": f"mesh/{sid}.obj",
            "network": f"network/{sid}.txt",
            "prepared": f"prepared/{sid}.txt",
            "target": f"target/{sid}.xyz",
            "shape_cloud": f"cloud/{sid}_shape.xyz",
        }
        save_mesh(mesh, out / files["mesh"])
        save_curve_network(net, out / files["network"])
        save_curve_network(prepared, out / files["prepared"])
        save_point_cloud(sample_polylines(prepared.chains, target_points), out / files["target"])
        save_point_cloud(sample_mesh(mesh, dense, rng_stream(item_seed, 1)), out / files["shape_cloud"])
        rec["files"] = files
        for k, l in enumerate(levels):
            key = level_key(l)
            sk_seed = stable_seed(item_seed, f"la{key}")
            try:
                sk = generate_sketch(prepared, cfgmod.abstraction_params(cfg, l), sk_seed, sid)
            except EmptySketchError as exc:
                rec["failures"].append({"stage": f"sketch {key}", "error": str(exc)})
                continue
            base = f"sketch/la{key}/{sid}"
            save_sketch(sk, out / f"{base}.txt")
            save_point_cloud(sample_sketch(sk, dense), out / f"{base}.xyz")
            rec["sketches"][key] = {"sketch": f"{base}.txt", "cloud": f"{base}.xyz", "seed": sk_seed}
        built = [float(k) for k in rec["sketches"]]
        rec["mixed"] = {w: _mixed_choice(item_seed, built, w) for w in ("all", "middle")}

    manifest = {
        "version": MANIFEST_VERSION,
        "seed": gseed,
        "levels": [level_key(l) for l in levels],
        "config": {k: cfg[k] for k in sorted(cfg)},
        "config_hash": cfgmod.config_hash(cfg),
        "items": items,
    }
    if cfg["dataset.render_views"]:
        render_dataset_views(manifest, out, cfg)
    _finalize(manifest, out)
    return manifest


def render_dataset_views(manifest, root, cfg=None):
    """Depth views for every shape and sketch in ``manifest`` (updated in place)."""
    cfg = manifest["config"] if cfg is None else cfg
    root = Path(root)
    cams = make_cameras(cfg["render.views"], cfg["render.elevation_deg"], cfg["render.image_size"])
    (root / "views").mkdir(exist_ok=True)

    def render(mesh, stem):
        names = []
        for k, cam in enumerate(cams):
            # shapes and sketches share the unit-normalized bounding sphere
            rel = f"views/{stem}_view{k}.pgm"
            save_depth_pgm(render_depth(mesh, cam, radius=0.5 * np.sqrt(3.0)), root / rel)
            names.append(rel)
        return names

    for rec in manifest["items"]:
        if "mesh" not in rec["files"]:
            continue
        rec["views"] = {"shape": render(load_mesh(root / rec["files"]["mesh"]), rec["id"])}
        for key, sk in rec["sketches"].items():
            # normalized data has s_max == 1, so the factor is the radius
            tubes = sketch_tubes(load_sketch(root / sk["sketch"]), radius=cfg["render.tube_radius_factor"])
            rec["views"][key] = render(tubes, f"{rec['id']}_la{key}")
    return manifest


def _all_files(manifest):
    for rec in manifest["items"]:
        yield from rec["files"].values()
        for sk in rec["sketches"].values():
            yield sk["sketch"]
            yield sk["cloud"]
        for names in rec.get("views", {}).values():
            yield from names


def _finalize(manifest, root):
    manifest["hashes"] = {rel: _sha256(Path(root) / rel) for rel in sorted(_all_files(manifest))}
    _write_json(Path(root) / "manifest.json", manifest)


def write_manifest(manifest, root):
    """Rehash all referenced files and rewrite ``manifest.json``."""
    _finalize(manifest, root)


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DatasetError(f"{path}: manifest not found")
    with open(path, encoding="utf-8") as fh:
        m = json.load(fh)
    if m.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {m.get('version')}")
    return m, path.parent


def verify_manifest(path):
    """List of problems (missing files, hash or seed mismatches); empty when valid."""
    m, root = load_manifest(path)
    problems = []
    for rel, digest in m["hashes"].items():
        p = root / rel
        if not p.exists():
            problems.append(f"missing file {rel}")
        elif _sha256(p) != digest:
            problems.append(f"hash mismatch {rel}")
    listed = set(_all_files(m))
    problems += [f"unhashed file {rel}" for rel in sorted(listed - set(m["hashes"]))]
    for rec in m["items"]:
        if rec["seed"] != stable_seed(m["seed"], rec["id"]):
            problems.append(f"seed mismatch for {rec['id']}")
    cfg = cfgmod.default_config()
    cfg.update(m["config"])
    if cfgmod.config_hash(cfg) != m["config_hash"]:
        problems.append("config hash mismatch")
    return problems


def select_level(rec, level):
    """Level key used for ``rec`` under a level spec (a number, ``all`` or ``middle``)."""
    if str(level) in ("all", "middle"):
        return rec.get("mixed", {}).get(str(level))
    key = level_key(level)
    return key if key in rec["sketches"] else None


def load_items(manifest_path, split=None, level="0.5"):
    """:class:`TrainItem` list for one split and sketch level.

    Items whose build failed at that level are skipped.
    """
    m, root = load_manifest(manifest_path)
    out = []
    for rec in m["items"]:
        if split is not None and rec["split"] != split:
            continue
        key = select_level(rec, level)
        if key is None or "shape_cloud" not in rec["files"]:
            continue
        out.append(TrainItem(
            rec["id"], int(rec["label"]),
            load_point_cloud(root / rec["sketches"][key]["cloud"]).points,
            load_point_cloud(root / rec["files"]["shape_cloud"]).points,
            load_point_cloud(root / rec["files"]["target"]).points,
        ))
    return out
