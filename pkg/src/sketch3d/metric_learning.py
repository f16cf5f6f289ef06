"""Losses, batch construction, hard-negative mining and retrieval metrics.

Batch layout used throughout: ``B`` sketch-shape pairs give ``2B`` feature
rows, sketches first (rows ``0..B-1``) then their paired shapes (rows
``B..2B-1``). Every loss function returns its value together with the
gradient with respect to each of its array inputs, so the encoder can
chain them by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VARIANTS",
    "LossConfig",
    "BalancedBatch",
    "RetrievalRun",
    "InsufficientDataError",
    "sq_dists",
    "l2_normalize",
    "l2_normalize_backward",
    "triplet_loss",
    "triplet_center_loss",
    "cross_entropy",
    "chamfer",
    "chamfer_with_grad",
    "mine_hard_negatives",
    "batch_triplet_loss",
    "batch_center_loss",
    "batch_chamfer",
    "total_loss",
    "balanced_batch",
    "init_centers",
    "evaluate",
]

VARIANTS = ("cl", "cl+tl", "cl+tcl", "cl+tl+rec", "cl+tcl+rec")


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    variant: str = "cl+tl"
    lambda_cls: float = 1.0
    lambda_tl: float = 0.1
    lambda_tcl: float = 0.1
    lambda_ch: float | None = None  # 8 with TCL, 12 with TL
    m_tl: float = 1.8
    m_tcl: float = 50.0

    def __post_init__(self):
        v = self.variant.lower()
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        object.__setattr__(self, "variant", v)
        if self.lambda_ch is None:
            object.__setattr__(self, "lambda_ch", 8.0 if "tcl" in v else 12.0)
        for name in ("lambda_cls", "lambda_tl", "lambda_tcl", "lambda_ch"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.m_tl <= 0 or self.m_tcl <= 0:
            raise ValueError("margins must be positive")

    @property
    def uses_tl(self):
        return "+tl" in self.variant

    @property
    def uses_tcl(self):
        return "tcl" in self.variant

    @property
    def uses_rec(self):
        return self.variant.endswith("+rec")


def sq_dists(A, B):
    """Squared Euclidean distances between rows, computed by explicit differences."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    diff = A[:, None, :] - B[None, :, :]
    sq = diff * diff
    # accumulate left to right so results do not depend on einsum's ordering
    out = sq[..., 0].copy()
    for k in range(1, sq.shape[-1]):
        out += sq[..., k]
    return out


def l2_normalize(F):
    return F / np.linalg.norm(F, axis=-1, keepdims=True)


def l2_normalize_backward(F, dE):
    """Gradient through ``E = F / |F|`` given ``dL/dE``."""
    n = np.linalg.norm(F, axis=-1, keepdims=True)
    E = F / n
    return (dE - E * np.sum(dE * E, axis=-1, keepdims=True)) / n


def _check_unit(*vs):
    for v in vs:
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("triplet loss expects unit-norm embeddings")


def triplet_loss(anchor, positive, negative, m_tl):
    """Hinge on squared distances: ``max(0, d(a,p) - d(a,n) + m)``."""
    a, p, n = (np.asarray(x, dtype=np.float64) for x in (anchor, positive, negative))
    _check_unit(a, p, n)
    d_pos = float(np.sum((a - p) ** 2))
    d_neg = float(np.sum((a - n) ** 2))
    return max(0.0, d_pos - d_neg + m_tl)


def triplet_center_loss(f, y, centers, m_tcl):
    """Hinge between the own-class center and the nearest other center."""
    C = np.asarray(centers, dtype=np.float64)
    if C.shape[0] < 2:
        raise ValueError("triplet-center loss needs at least two class centers")
    d = np.sum((C - np.asarray(f, dtype=np.float64)) ** 2, axis=1)
    other = np.delete(d, y).min()
    return max(0.0, d[y] - other + m_tcl)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def chamfer(P, Q):
    """Sum of the two mean squared nearest-neighbour distances."""
    return chamfer_with_grad(P, Q)[0]


def chamfer_with_grad(P, Q):
    P = np.asarray(getattr(P, "points", P), dtype=np.float64)
    Q = np.asarray(getattr(Q, "points", Q), dtype=np.float64)
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("chamfer distance of an empty point set")
    D = sq_dists(P, Q)
    jp = np.argmin(D, axis=1)
    iq = np.argmin(D, axis=0)
    # correctly rounded sums make the value independent of summation order
    value = (math.fsum(D[np.arange(len(P)), jp]) / len(P)
             + math.fsum(D[iq, np.arange(len(Q))]) / len(Q))
    dP = np.zeros_like(P)
    dQ = np.zeros_like(Q)
    r = P - Q[jp]
    dP += 2.0 * r / len(P)
    np.add.at(dQ, jp, -2.0 * r / len(P))
    s = Q - P[iq]
    dQ += 2.0 * s / len(Q)
    np.add.at(dP, iq, -2.0 * s / len(Q))
    return float(value), dP, dQ


def mine_hard_negatives(E, labels):
    """``(anchor, positive, negative)`` index triples over a batch.

    Every row is an anchor; each other same-class row is a positive; the
    negative is the closest different-class row (lowest index on ties).
    """
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("hard-negative mining needs at least two classes in the batch")
    D = sq_dists(E, E)
    out = []
    for a in range(len(labels)):
        diff = np.flatnonzero(labels != labels[a])
        neg = int(diff[np.argmin(D[a, diff])])
        for p in np.flatnonzero(labels == labels[a]):
            if p != a:
                out.append((a, int(p), neg))
    return np.asarray(out, dtype=np.int64).reshape(-1, 3)


def batch_triplet_loss(F, labels, margin):
    """Mean triplet loss over mined triplets on L2-normalized features.

    Returns ``(loss, dF, triplets)``.
    """
    E = l2_normalize(F)
    T = mine_hard_negatives(E, labels)
    a, p, n = T.T
    d_pos = np.sum((E[a] - E[p]) ** 2, axis=1)
    d_neg = np.sum((E[a] - E[n]) ** 2, axis=1)
    h = d_pos - d_neg + margin
    active = h > 0
    loss = float(np.where(active, h, 0.0).mean())
    dE = np.zeros_like(E)
    w = active / len(T)
    # d/dEa (|a-p|^2 - |a-n|^2) = 2(n - p); d/dEp = -2(a-p); d/dEn = 2(a-n)
    np.add.at(dE, a, 2.0 * w[:, None] * (E[n] - E[p]))
    np.add.at(dE, p, -2.0 * w[:, None] * (E[a] - E[p]))
    np.add.at(dE, n, 2.0 * w[:, None] * (E[a] - E[n]))
    return loss, l2_normalize_backward(F, dE), T


def batch_center_loss(F, labels, centers, margin):
    """Mean triplet-center loss on raw features. Returns ``(loss, dF, dC)``."""
    labels = np.asarray(labels)
    K = centers.shape[0]
    if K < 2:
        raise ValueError("triplet-center loss needs at least two class centers")
    D = sq_dists(F, centers)
    rows = np.arange(len(F))
    own = D[rows, labels]
    masked = D.copy()
    masked[rows, labels] = np.inf
    j = np.argmin(masked, axis=1)
    h = own - masked[rows, j] + margin
    active = h > 0
    loss = float(np.where(active, h, 0.0).mean())
    w = (active / len(F))[:, None]
    cy, cj = centers[labels], centers[j]
    # d/df (|f-cy|^2 - |f-cj|^2) = 2(cj - cy)
    dF = 2.0 * w * (cj - cy)
    dC = np.zeros_like(centers)
    np.add.at(dC, labels, -2.0 * w * (F - cy))
    np.add.at(dC, j, 2.0 * w * (F - cj))
    return loss, dF, dC


def batch_chamfer(recons, targets):
    """Mean Chamfer distance over the batch; gradient w.r.t. the reconstructions."""
    grads = np.zeros_like(recons)
    total = 0.0
    for i, (R, T) in enumerate(zip(recons, targets)):
        v, dR, _ = chamfer_with_grad(R, T)
        total += v
        grads[i] = dR
    n = len(recons)
    return total / n, grads / n


def total_loss(features, labels, logits, config, centers=None, recons=None, targets=None):
    """Weighted objective for one batch.

    ``features`` and ``logits`` cover all ``2B`` rows; ``recons`` and
    ``targets`` cover the ``B`` sketches only. Returns ``(loss, terms,
    grads)`` where ``grads`` has keys ``features``, ``logits`` and, when
    used, ``centers`` and ``recons``.
    """
    F = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape[0] != F.shape[0] or len(labels) != F.shape[0]:
        raise ValueError("features, logits and labels must share the batch dimension")
    ce, dlogits = cross_entropy(logits, labels)
    terms = {"cls": ce}
    grads = {"logits": config.lambda_cls * dlogits, "features": np.zeros_like(F)}
    total = config.lambda_cls * ce
    if config.uses_tl:
        tl, dF, _ = batch_triplet_loss(F, labels, config.m_tl)
        terms["tl"] = tl
        total += config.lambda_tl * tl
        grads["features"] += config.lambda_tl * dF
    if config.uses_tcl:
        if centers is None:
            raise ValueError(f"variant {config.variant} needs class centers")
        tcl, dF, dC = batch_center_loss(F, labels, centers, config.m_tcl)
        terms["tcl"] = tcl
        total += config.lambda_tcl * tcl
        grads["features"] += config.lambda_tcl * dF
        grads["centers"] = config.lambda_tcl * dC
    if config.uses_rec:
        if recons is None or targets is None:
            raise ValueError(f"variant {config.variant} needs reconstructions and targets")
        if len(recons) != len(targets) or len(recons) * 2 != len(F):
            raise ValueError("reconstructions must match the sketch half of the batch")
        ch, dR = batch_chamfer(recons, targets)
        terms["ch"] = ch
        total += config.lambda_ch * ch
        grads["recons"] = config.lambda_ch * dR
    terms["total"] = float(total)
    return float(total), terms, grads


def init_centers(K, D, rng, sigma=0.01):
    return sigma * rng.standard_normal((K, D))


# ---------------------------------------------------------------------------
# batches

@dataclass(frozen=True)
class BalancedBatch:
    pairs: np.ndarray      # indices into the pair list, class-major
    labels: np.ndarray     # class label per pair
    classes: np.ndarray    # the k sampled classes


def balanced_batch(pair_labels, k, p, rng):
    """Sample ``k`` classes, then ``p`` sketch-shape pairs within each."""
    pair_labels = np.asarray(pair_labels)
    classes = np.unique(pair_labels)
    if len(classes) < k:
        raise InsufficientDataError(f"need {k} classes, dataset has {len(classes)}")
    chosen = rng.choice(classes, size=k, replace=False)
    pairs = []
    for c in chosen:
        members = np.flatnonzero(pair_labels == c)
        if len(members) < p:
            raise InsufficientDataError(f"class {c} has {len(members)} pairs, need {p}")
        pairs.extend(rng.choice(members, size=p, replace=False).tolist())
    pairs = np.asarray(pairs, dtype=np.int64)
    return BalancedBatch(pairs, pair_labels[pairs], np.asarray(chosen))


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class RetrievalRun:
    distances: np.ndarray            # (queries, gallery)
    query_labels: np.ndarray
    gallery_labels: np.ndarray
    query_targets: np.ndarray        # gallery index of each query's paired shape
    query_ids: tuple = field(default=())
    gallery_ids: tuple = field(default=())

    def __post_init__(self):
        D = np.asarray(self.distances, dtype=np.float64)
        if D.shape != (len(self.query_labels), len(self.gallery_labels)):
            raise ValueError("distance matrix shape does not match labels")
        if not np.all(np.isfinite(D)):
            raise ValueError("distance matrix has non-finite entries")
        t = np.asarray(self.query_targets)
        if len(t) != D.shape[0] or np.any((t < 0) | (t >= D.shape[1])):
            raise ValueError("every query needs its paired shape in the gallery")


def evaluate(run, ks=(1, 5, 10)):
    """mAP, NDCG and NN with class relevance; Top-k on the paired shape.

    Ranking is by ascending distance with ties going to the lower gallery
    index. Scores are averaged over queries.
    """
    D = np.asarray(run.distances, dtype=np.float64)
    gl = np.asarray(run.gallery_labels)
    nq, ng = D.shape
    order = np.argsort(D, axis=1, kind="stable")
    rel = (gl[order] == np.asarray(run.query_labels)[:, None]).astype(np.float64)
    n_rel = rel.sum(axis=1)
    ranks = np.arange(1, ng + 1)
    prec = np.cumsum(rel, axis=1) / ranks
    ap = np.where(n_rel > 0, (prec * rel).sum(axis=1) / np.maximum(n_rel, 1), 0.0)
    disc = 1.0 / np.log2(ranks + 1)
    dcg = (rel * disc).sum(axis=1)
    ideal_cum = np.concatenate([[0.0], np.cumsum(disc)])
    idcg = ideal_cum[n_rel.astype(np.int64)]
    ndcg = np.where(idcg > 0, dcg / np.where(idcg > 0, idcg, 1.0), 0.0)
    gt_rank = np.argmax(order == np.asarray(run.query_targets)[:, None], axis=1)
    out = {"mAP": float(ap.mean()), "NDCG": float(ndcg.mean()), "NN": float(rel[:, 0].mean())}
    for k in ks:
        out[f"top{k}"] = float((gt_rank < k).mean())
    return out
