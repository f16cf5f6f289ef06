"""Minimal point-set encoder trained with hand-written gradients.

Architecture (shared between sketches and shapes)::

    points (n, 3) -> affine+ReLU (h1) -> affine+ReLU (h2) -> max over points
                  -> affine (D)                         = raw embedding f
    f -> affine (K)                                     = class logits
    f -> affine+ReLU (R) -> affine (3M) -> (M, 3)       = reconstruction

Only the sketch half of a batch is decoded; its Chamfer target is the
prepared curve network sampled at ``M`` equidistant points.

Checkpoint layout (little-endian)::

    8 bytes   magic  b"SK3DCKPT"
    uint32    format version (1)
    uint32    length of the UTF-8 JSON metadata block, then the block
    uint32    number of tensors
    per tensor, in name order:
      uint16 name length, ASCII name, uint8 ndim, uint32 dims[ndim],
      float64 data, row-major
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metric_learning as ml
from .abstraction import rng_stream
from .geomcore import PointCloud
from .sampling import SamplingConfig, subsample

__all__ = [
    "EncoderDims",
    "PointEncoder",
    "TrainConfig",
    "TrainItem",
    "TrainResult",
    "train",
    "embed",
    "retrieval_run",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "batch_objective",
    "config_from_dict",
    "sparse_eval_clouds",
]

CHECKPOINT_MAGIC = b"SK3DCKPT"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "W5", "b5", "W6", "b6")


@dataclass(frozen=True)
class EncoderDims:
    classes: int
    h1: int = 64
    h2: int = 128
    dim: int = 512
    recon_hidden: int = 1024
    recon_points: int = 256
    n_points: int | None = None   # expected cloud cardinality; None accepts any

    def shapes(self):
        return {
            "W1": (3, self.h1), "b1": (self.h1,),
            "W2": (self.h1, self.h2), "b2": (self.h2,),
            "W3": (self.h2, self.dim), "b3": (self.dim,),
            "W4": (self.dim, self.classes), "b4": (self.classes,),
            "W5": (self.dim, self.recon_hidden), "b5": (self.recon_hidden,),
            "W6": (self.recon_hidden, 3 * self.recon_points), "b6": (3 * self.recon_points,),
        }


def _relu(x):
    return np.maximum(x, 0.0)


class PointEncoder:
    """Parameters plus forward/backward passes for a batch of clouds."""

    def __init__(self, dims, params):
        self.dims = dims
        self.params = params

    @classmethod
    def init(cls, dims, rng):
        """Glorot-uniform weights, zero biases."""
        params = {}
        for name, shape in dims.shapes().items():
            if name.startswith("W"):
                lim = math.sqrt(6.0 / (shape[0] + shape[1]))
                params[name] = rng.uniform(-lim, lim, size=shape)
            else:
                params[name] = np.zeros(shape)
        return cls(dims, params)

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        n = self.dims.n_points
        if n is not None and X.shape[1] != n:
            raise ValueError(f"expected clouds of {n} points, got {X.shape[1]}")
        return X

    def encode(self, X):
        """Raw embeddings ``(N, D)`` and the cache needed by :meth:`backward`."""
        P = self.params
        X = self._check(X)
        z1 = X @ P["W1"] + P["b1"]
        a1 = _relu(z1)
        z2 = a1 @ P["W2"] + P["b2"]
        a2 = _relu(z2)
        arg = np.argmax(a2, axis=1)                     # (N, h2), first max on ties
        g = np.take_along_axis(a2, arg[:, None, :], axis=1)[:, 0, :]
        f = g @ P["W3"] + P["b3"]
        return f, {"X": X, "z1": z1, "a1": a1, "z2": z2, "arg": arg, "g": g, "f": f}

    def classify(self, f):
        return f @ self.params["W4"] + self.params["b4"]

    def reconstruct(self, f):
        """Decode raw embeddings into ``(N, M, 3)`` point sets."""
        P = self.params
        r1 = _relu(f @ P["W5"] + P["b5"])
        return (r1 @ P["W6"] + P["b6"]).reshape(len(f), self.dims.recon_points, 3)

    def forward(self, X, n_recon=0):
        f, cache = self.encode(X)
        logits = self.classify(f)
        recon = None
        if n_recon:
            P = self.params
            z5 = f[:n_recon] @ P["W5"] + P["b5"]
            r1 = _relu(z5)
            recon = (r1 @ P["W6"] + P["b6"]).reshape(n_recon, self.dims.recon_points, 3)
            cache.update(z5=z5, r1=r1)
        return f, logits, recon, cache

    def backward(self, cache, d_features, d_logits, d_recon=None):
        """Parameter gradients given upstream gradients on the three heads."""
        P = self.params
        G = {}
        f = cache["f"]
        df = np.array(d_features, dtype=np.float64, copy=True)
        G["W4"] = f.T @ d_logits
        G["b4"] = d_logits.sum(axis=0)
        df += d_logits @ P["W4"].T
        if d_recon is not None:
            n = len(d_recon)
            dout = d_recon.reshape(n, -1)
            G["W6"] = cache["r1"].T @ dout
            G["b6"] = dout.sum(axis=0)
            dz5 = (dout @ P["W6"].T) * (cache["z5"] > 0)
            G["W5"] = f[:n].T @ dz5
            G["b5"] = dz5.sum(axis=0)
            df[:n] += dz5 @ P["W5"].T
        else:
            G["W5"], G["b5"] = np.zeros_like(P["W5"]), np.zeros_like(P["b5"])
            G["W6"], G["b6"] = np.zeros_like(P["W6"]), np.zeros_like(P["b6"])
        G["W3"] = cache["g"].T @ df
        G["b3"] = df.sum(axis=0)
        dg = df @ P["W3"].T
        N, n_pts, h2 = cache["z2"].shape
        da2 = np.zeros((N, n_pts, h2))
        np.put_along_axis(da2, cache["arg"][:, None, :], dg[:, None, :], axis=1)
        dz2 = da2 * (cache["z2"] > 0)
        G["W2"] = np.einsum("nph,npk->hk", cache["a1"], dz2)
        G["b2"] = dz2.sum(axis=(0, 1))
        dz1 = (dz2 @ P["W2"].T) * (cache["z1"] > 0)
        G["W1"] = np.einsum("npc,nph->ch", cache["X"], dz1)
        G["b1"] = dz1.sum(axis=(0, 1))
        return G


def batch_objective(encoder, sketches, shapes, labels, config, centers=None, targets=None):
    """Loss, per-term breakdown and gradients for one batch of pairs.

    ``sketches`` and ``shapes`` are ``(B, n, 3)``; ``labels`` has length B.
    Returns ``(loss, terms, param_grads, center_grads)``.
    """
    B = len(sketches)
    X = np.concatenate([sketches, shapes])
    y = np.concatenate([labels, labels])
    n_recon = B if config.uses_rec else 0
    f, logits, recon, cache = encoder.forward(X, n_recon)
    loss, terms, g = ml.total_loss(f, y, logits, config, centers, recon, targets)
    grads = encoder.backward(cache, g["features"], g["logits"], g.get("recons"))
    return loss, terms, grads, g.get("centers")


@dataclass(frozen=True)
class TrainItem:
    item_id: str
    label: int
    sketch: np.ndarray     # dense sketch samples
    shape: np.ndarray      # dense shape samples
    target: np.ndarray     # (M, 3) reconstruction target


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    k: int = 8
    p: int = 1
    seed: int = 0
    loss: ml.LossConfig = field(default_factory=ml.LossConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    h1: int = 64
    h2: int = 128
    dim: int = 512
    recon_hidden: int = 1024
    recon_points: int = 256
    center_sigma: float = 0.01

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def dims(self, classes):
        return EncoderDims(classes, self.h1, self.h2, self.dim, self.recon_hidden,
                           self.recon_points, self.sampling.sparse_count)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    encoder: PointEncoder
    centers: np.ndarray | None
    log: list
    config: TrainConfig
    classes: int


def _sparse(points, config, rng):
    return subsample(PointCloud(points), config.sampling.sparse_count, config.sampling.mode, rng).points


def embed(encoder, clouds, batch=32):
    out = []
    for i in range(0, len(clouds), batch):
        f, _ = encoder.encode(np.stack(clouds[i:i + batch]))
        out.append(f)
    return np.concatenate(out) if out else np.zeros((0, encoder.dims.dim))


def sparse_eval_clouds(items, config, which):
    """Fixed-seed sparse clouds for evaluation (independent of the epoch)."""
    return [
        _sparse(getattr(it, which), config, rng_stream(config.seed, 7, i, 0 if which == "sketch" else 1))
        for i, it in enumerate(items)
    ]


def retrieval_run(encoder, queries, gallery, config):
    """Build a RetrievalRun from query and gallery :class:`TrainItem` lists.

    Each query's ground truth is the gallery entry with the same item id.
    Distances are squared Euclidean on normalized embeddings, or on raw
    embeddings for triplet-center variants.
    """
    fq = embed(encoder, sparse_eval_clouds(queries, config, "sketch"))
    fg = embed(encoder, sparse_eval_clouds(gallery, config, "shape"))
    if not config.loss.uses_tcl:
        fq, fg = ml.l2_normalize(fq), ml.l2_normalize(fg)
    gid = {it.item_id: j for j, it in enumerate(gallery)}
    return ml.RetrievalRun(
        ml.sq_dists(fq, fg),
        np.array([it.label for it in queries]),
        np.array([it.label for it in gallery]),
        np.array([gid[it.item_id] for it in queries]),
        tuple(it.item_id for it in queries),
        tuple(it.item_id for it in gallery),
    )


def train(items, config, val_items=None, classes=None, log_fn=None):
    """SGD with momentum over balanced batches; sparse clouds redrawn every epoch."""
    labels = np.array([it.label for it in items])
    classes = int(labels.max()) + 1 if classes is None else classes
    if len(items) < config.k * config.p:
        raise ml.InsufficientDataError(f"{len(items)} pairs cannot fill a {config.k}x{config.p} batch")
    encoder = PointEncoder.init(config.dims(classes), rng_stream(config.seed, 0))
    centers = None
    if config.loss.uses_tcl:
        centers = ml.init_centers(classes, config.dim, rng_stream(config.seed, 3), config.center_sigma)
    vel = encoder.zeros_like()
    cvel = None if centers is None else np.zeros_like(centers)
    steps = max(1, math.ceil(len(items) / (config.k * config.p)))
    log = []
    for epoch in range(config.epochs):
        batch_rng = rng_stream(config.seed, 1, epoch)
        cache = {}

        def sparse(i, which):
            key = (i, which)
            if key not in cache:
                r = rng_stream(config.seed, 2, epoch, i, 0 if which == "sketch" else 1)
                cache[key] = _sparse(getattr(items[i], which), config, r)
            return cache[key]

        sums = {}
        for _ in range(steps):
            b = ml.balanced_batch(labels, config.k, config.p, batch_rng)
            sk = np.stack([sparse(i, "sketch") for i in b.pairs])
            sh = np.stack([sparse(i, "shape") for i in b.pairs])
            tg = [items[i].target for i in b.pairs]
            _, terms, grads, dC = batch_objective(encoder, sk, sh, b.labels, config.loss, centers, tg)
            for k in PARAM_NAMES:
                vel[k] = config.momentum * vel[k] - config.lr * grads[k]
                encoder.params[k] = encoder.params[k] + vel[k]
            if centers is not None:
                cvel = config.momentum * cvel - config.lr * dC
                centers = centers + cvel
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v
        rec = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        if val_items:
            run = retrieval_run(encoder, val_items, val_items, config)
            rec.update({f"val_{k}": v for k, v in ml.evaluate(run).items()})
        log.append(rec)
        if log_fn is not None:
            log_fn(rec)
    return TrainResult(encoder, centers, log, config, classes)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, result, extra=None):
    meta = {"classes": result.classes, "config": result.config.to_dict(), **(extra or {})}
    tensors = dict(result.encoder.params)
    if result.centers is not None:
        tensors["centers"] = result.centers
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            a = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode("ascii")
            fh.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path):
    """Return ``(encoder, centers, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(data[pos:pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + ln].decode("ascii")
        pos += ln
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    cfg = meta["config"]
    dims = EncoderDims(meta["classes"], cfg["h1"], cfg["h2"], cfg["dim"], cfg["recon_hidden"],
                       cfg["recon_points"], cfg["sampling"]["sparse_count"])
    centers = tensors.pop("centers", None)
    return PointEncoder(dims, tensors), centers, meta


def config_from_dict(d):
    d = dict(d)
    d["loss"] = ml.LossConfig(**d["loss"])
    d["sampling"] = SamplingConfig(**d["sampling"])
    return TrainConfig(**d)
