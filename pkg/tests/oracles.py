"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package code paths being checked.
"""

import math

import numpy as np


def point_dist(p, q):
    dx = p[0] - q[0]
    dy = p[1] - q[1]
    dz = p[2] - q[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def frechet_by_couplings(a, b):
    """Min over all monotone couplings of the max coupled distance.

    Depth-first enumeration of coupling sequences with branch-and-bound:
    a partial coupling whose running max already reaches the best complete
    one cannot improve it, so it is abandoned. The answer is still the
    exact minimum over every coupling.
    """
    a = [tuple(map(float, p)) for p in a]
    b = [tuple(map(float, p)) for p in b]
    n, m = len(a), len(b)
    best = [math.inf]

    def walk(i, j, cur):
        cur = max(cur, point_dist(a[i], b[j]))
        if cur >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = cur
            return
        if i < n - 1 and j < m - 1:
            walk(i + 1, j + 1, cur)
        if i < n - 1:
            walk(i + 1, j, cur)
        if j < m - 1:
            walk(i, j + 1, cur)

    walk(0, 0, -math.inf)
    return best[0]


def point_segment(p, a, b):
    p, a, b = (np.asarray(x, dtype=float) for x in (p, a, b))
    ab = b - a
    L2 = ab @ ab
    if L2 == 0:
        return float(np.linalg.norm(p - a))
    t = min(1.0, max(0.0, (p - a) @ ab / L2))
    return float(np.linalg.norm(p - (a + t * ab)))


def point_polyline(p, poly):
    return min(point_segment(p, poly[k], poly[k + 1]) for k in range(len(poly) - 1))


def chamfer_brute(P, Q):
    P = [tuple(map(float, p)) for p in P]
    Q = [tuple(map(float, q)) for q in Q]

    def sq(p, q):
        dx = p[0] - q[0]
        dy = p[1] - q[1]
        dz = p[2] - q[2]
        return dx * dx + dy * dy + dz * dz

    a = math.fsum(min(sq(p, q) for q in Q) for p in P) / len(P)
    b = math.fsum(min(sq(q, p) for p in P) for q in Q) / len(Q)
    return a + b


def naive_metrics(D, qlab, glab, targets, ks=(1, 5, 10)):
    """Rank by counting; class relevance for AP/NDCG/NN, paired shape for top-k."""
    nq, ng = len(D), len(D[0])
    aps, ndcgs, nns = [], [], []
    hits = {k: 0 for k in ks}
    for q in range(nq):
        # rank of gallery item g: number of items that come strictly before it
        rank = []
        for g in range(ng):
            r = 0
            for h in range(ng):
                if D[q][h] < D[q][g] or (D[q][h] == D[q][g] and h < g):
                    r += 1
            rank.append(r)
        ordered = sorted(range(ng), key=lambda g: rank[g])
        rel = [1 if glab[g] == qlab[q] else 0 for g in ordered]
        R = sum(rel)
        if R == 0:
            aps.append(0.0)
            ndcgs.append(0.0)
        else:
            found, ap = 0, 0.0
            for i, r in enumerate(rel):
                if r:
                    found += 1
                    ap += found / (i + 1)
            aps.append(ap / R)
            dcg = sum(r / math.log2(i + 2) for i, r in enumerate(rel))
            idcg = sum(1 / math.log2(i + 2) for i in range(R))
            ndcgs.append(dcg / idcg)
        nns.append(float(rel[0]))
        for k in ks:
            hits[k] += rank[targets[q]] < k
    out = {"mAP": sum(aps) / nq, "NDCG": sum(ndcgs) / nq, "NN": sum(nns) / nq}
    for k in ks:
        out[f"top{k}"] = hits[k] / nq
    return out


def fps_is_greedy(points, selected):
    """Each selected point (after the first) maximizes the min squared distance
    to the earlier selections, with the lowest index winning ties."""
    pts = [tuple(map(float, p)) for p in points]

    def sq(p, q):
        return sum((x - y) ** 2 for x, y in zip(p, q))

    for k in range(1, len(selected)):
        chosen = selected[:k]
        best_i, best_d = None, -1.0
        for i, p in enumerate(pts):
            d = min(sq(p, pts[c]) for c in chosen)
            if d > best_d:
                best_i, best_d = i, d
        if selected[k] != best_i:
            return False
    return True


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences (x restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        o = x[idx]
        x[idx] = o + h
        fp = f()
        x[idx] = o - h
        fm = f()
        x[idx] = o
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    """Symmetric relative error ``|a - b| / (|a| + |b|)`` over whole arrays."""
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = np.linalg.norm(np.ravel(a)) + np.linalg.norm(np.ravel(b))
    return 0.0 if den < 1e-12 else num / den


def _relu(x):
    return np.maximum(x, 0.0)


def _pair_sq(A, B):
    return np.sum((A[..., :, None, :] - B[..., None, :, :]) ** 2, axis=-1)


def objective_reference(P, C, X, y, cfg, targets):
    """Training objective for a stack of S parameter sets at once.

    Every tensor in ``P`` (and ``C``, the class centers) carries a leading
    axis of length S or 1. Written from the loss definitions, independently
    of the library code. Returns the S objective values.
    """
    N = len(X)
    B = N // 2
    z1 = X[None] @ P["W1"][:, None] + P["b1"][:, None, None]
    z2 = _relu(z1) @ P["W2"][:, None] + P["b2"][:, None, None]
    g = _relu(z2).max(axis=2)                                   # (S, N, h2)
    f = g @ P["W3"] + P["b3"][:, None]
    logits = f @ P["W4"] + P["b4"][:, None]
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    total = -cfg.lambda_cls * logp[:, np.arange(N), y].mean(axis=-1)
    same = y[:, None] == y[None, :]
    if cfg.uses_tl:
        E = f / np.linalg.norm(f, axis=-1, keepdims=True)
        D = _pair_sq(E, E)
        d_neg = np.where(same, np.inf, D).min(axis=-1)          # (S, N)
        pos = same & ~np.eye(N, dtype=bool)
        h = _relu(D - d_neg[..., None] + cfg.m_tl)
        total = total + cfg.lambda_tl * (h * pos).sum(axis=(1, 2)) / pos.sum()
    if cfg.uses_tcl:
        Dc = _pair_sq(f, C)                                      # (S, N, K)
        own = Dc[:, np.arange(N), y]
        mask = np.arange(Dc.shape[-1])[None, :] == y[:, None]
        other = np.where(mask, np.inf, Dc).min(axis=-1)
        total = total + cfg.lambda_tcl * _relu(own - other + cfg.m_tcl).mean(axis=-1)
    if cfg.uses_rec:
        r1 = _relu(f[:, :B] @ P["W5"] + P["b5"][:, None])
        out = r1 @ P["W6"] + P["b6"][:, None]
        R = out.reshape(len(out), B, -1, 3)
        ch = 0.0
        for i, T in enumerate(targets):
            Dm = _pair_sq(R[:, i], T[None])                      # (S, M, t)
            ch = ch + Dm.min(axis=2).mean(axis=1) + Dm.min(axis=1).mean(axis=1)
        total = total + cfg.lambda_ch * ch / B
    return total


def _fd_stack(x, h):
    """``2n`` copies of ``x``, each with one entry moved by +h or -h."""
    n = x.size
    S = np.repeat(x.ravel()[None], 2 * n, axis=0)
    S[np.arange(n), np.arange(n)] += h
    S[n + np.arange(n), np.arange(n)] -= h
    return S.reshape((2 * n,) + x.shape), n


def encoder_gradient_errors(variant, seed, n_points=8, dim=16, classes=3, recon=8, h=1e-6):
    """Analytic vs central-difference gradients of the full training objective.

    Builds a random tiny encoder and batch, then returns the relative error
    for every parameter tensor (and the class centers when used).
    """
    from sketch3d.metric_learning import LossConfig
    from sketch3d.toy_encoder import EncoderDims, PointEncoder, batch_objective

    rng = np.random.default_rng(seed)
    dims = EncoderDims(classes, 6, 10, dim, 8, recon, n_points)
    enc = PointEncoder.init(dims, rng)
    for k, v in enc.params.items():
        if k.startswith("b"):
            v[...] = rng.normal(scale=0.1, size=v.shape)
    labels = np.arange(classes)
    sk = rng.normal(size=(classes, n_points, 3))
    sh = rng.normal(size=(classes, n_points, 3))
    targets = [rng.normal(size=(int(rng.integers(3, 10)), 3)) for _ in range(classes)]
    centers = rng.normal(size=(classes, dim))
    cfg = LossConfig(variant=variant, m_tl=float(rng.uniform(0.5, 2.0)), m_tcl=float(rng.uniform(1.0, 10.0)),
                     lambda_tl=float(rng.uniform(0.1, 1.0)), lambda_tcl=float(rng.uniform(0.1, 1.0)))

    X, y = np.concatenate([sk, sh]), np.concatenate([labels, labels])
    base = {k: v[None] for k, v in enc.params.items()}

    def numeric(name):
        src = centers if name == "centers" else enc.params[name]
        stack, n = _fd_stack(src, h)
        if name == "centers":
            vals = objective_reference(base, stack, X, y, cfg, targets)
        else:
            vals = objective_reference({**base, name: stack}, centers[None], X, y, cfg, targets)
        return ((vals[:n] - vals[n:]) / (2 * h)).reshape(src.shape)

    _, _, grads, dC = batch_objective(enc, sk, sh, labels, cfg, centers, targets)
    errs = {}
    for k in sorted(enc.params):
        if not cfg.uses_rec and k in ("W5", "b5", "W6", "b6"):
            # the decoder is not evaluated, so its exact gradient is zero
            errs[k] = float(np.abs(grads[k]).max())
            continue
        errs[k] = relative_error(grads[k], numeric(k))
    if cfg.uses_tcl:
        errs["centers"] = relative_error(dC, numeric("centers"))
    return errs
