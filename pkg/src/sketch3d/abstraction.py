"""Turn a prepared curve network into an abstract sketch at level ``l_a``.

Two knobs are driven by ``l_a``: how many lines survive (level of detail)
and how strongly each stroke is deformed (mechanical inaccuracies).

Randomness comes from :func:`rng_stream`: one root seed per sketch, with a
derived stream per stroke index, so results do not depend on the order in
which strokes are processed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.interpolate import CubicSpline
from scipy.spatial.distance import squareform

from .geomcore import GeometryError, Sketch, Stroke, chain_length

__all__ = [
    "AbstractionParams",
    "EmptySketchError",
    "rng_stream",
    "frechet_distance",
    "frechet_matrix",
    "n_clusters",
    "reduce_cluster",
    "cluster_and_reduce",
    "discrete_curvature",
    "split_into_strokes",
    "global_transform",
    "jitter_vertices",
    "deform_stroke",
    "finalize_stroke",
    "generate_sketch",
    "RNG_ALGORITHM",
]

RNG_ALGORITHM = "numpy.PCG64/SeedSequence"


class EmptySketchError(GeometryError):
    pass


@dataclass(frozen=True)
class AbstractionParams:
    l_a: float = 0.5
    t_max_factor: float = 1.5
    rot_deg_per_t: float = 10.0
    scale_per_t: float = 0.1
    trans_radius_factor: float = 1.0
    jitter_factor: float = 0.1
    extend_factor: float = 0.1
    stroke_min_fraction: float = 0.2
    cluster_keep_fraction: float = 0.8
    cluster_floor: int = 10

    def __post_init__(self):
        if not 0.0 <= self.l_a <= 1.0:
            raise ValueError(f"l_a={self.l_a} outside [0, 1]")
        for k, v in self.__dict__.items():
            if k != "l_a" and v < 0:
                raise ValueError(f"{k} must be nonnegative")


def rng_stream(seed, *keys):
    """Generator for ``(seed, *keys)``; identical inputs give identical draws everywhere."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


# ---------------------------------------------------------------------------
# Frechet distance

@njit(cache=True)
def _dfd(a, b):
    n, m = a.shape[0], b.shape[0]
    ca = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if i == 0 and j == 0:
                ca[i, j] = d
            elif i == 0:
                ca[i, j] = max(ca[i, j - 1], d)
            elif j == 0:
                ca[i, j] = max(ca[i - 1, j], d)
            else:
                ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d)
    return ca[n - 1, m - 1]


def frechet_distance(a, b, aligned=False):
    """Discrete Frechet distance between two polylines.

    With ``aligned=True``, ``b`` is first translated so that one of its
    endpoints sits on an endpoint of ``a`` (reversing ``b`` when its end is
    paired with the start of ``a``), and the smallest distance over the
    endpoint pairings is returned.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if not aligned:
        return float(_dfd(a, b))
    # both chains are expressed relative to their paired endpoints rather than
    # translating b onto a, which keeps the result bit-symmetric in (a, b)
    best = np.inf
    for bb in (b, np.ascontiguousarray(b[::-1])):
        best = min(best, _dfd(a - a[0], bb - bb[0]), _dfd(a - a[-1], bb - bb[-1]))
    return float(best)


def frechet_matrix(chains, aligned=False):
    n = len(chains)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = frechet_distance(chains[i], chains[j], aligned)
    return D


# ---------------------------------------------------------------------------
# level of detail

def n_clusters(n_chains, l_a, keep_fraction=0.8, floor=10):
    """Target cluster count ``max(ceil(n (1 - 0.8 l_a) / 2), floor)``, capped at ``n``."""
    raw = n_chains * (1.0 - keep_fraction * l_a) / 2.0
    # 1e-9 guard: 100 * 0.6 / 2 must not round up to 31
    return min(max(math.ceil(raw - 1e-9), floor), n_chains)


def reduce_cluster(members, dist):
    """Indices (into ``members``) that survive line removal in one cluster.

    ``dist`` is the unaligned Frechet matrix over the members. The two most
    distant members are kept; every other member whose distance to the
    nearer of the two falls below the mean of those distances is dropped.
    """
    m = len(members)
    if m <= 2:
        return list(range(m))
    iu = np.triu_indices(m, 1)
    k = int(np.argmax(dist[iu]))
    A, B = int(iu[0][k]), int(iu[1][k])
    rest = [i for i in range(m) if i not in (A, B)]
    d = np.minimum(dist[rest, A], dist[rest, B])
    d_mean = d.mean()
    dropped = {i for i, di in zip(rest, d) if di < d_mean}
    return [i for i in range(m) if i not in dropped]


def cluster_and_reduce(chains, params=AbstractionParams()):
    """Group chains by aligned Frechet similarity and thin each group."""
    chains = list(chains)
    n = len(chains)
    if n == 0:
        raise ValueError("no chains to cluster")
    k = n_clusters(n, params.l_a, params.cluster_keep_fraction, params.cluster_floor)
    if k >= n:
        return chains
    D = frechet_matrix(chains, aligned=True)
    Z = linkage(squareform(D, checks=False), method="average")
    labels = cut_tree(Z, n_clusters=k).ravel()
    keep = np.zeros(n, dtype=bool)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        sub = frechet_matrix([chains[i] for i in idx], aligned=False)
        keep[idx[reduce_cluster(idx, sub)]] = True
    return [c for c, kk in zip(chains, keep) if kk]


# ---------------------------------------------------------------------------
# strokes

def discrete_curvature(chain):
    """Turning angle over mean adjacent segment length at interior vertices."""
    v = np.asarray(chain, dtype=np.float64)
    e = np.diff(v, axis=0)
    L = np.linalg.norm(e, axis=1)
    cos = np.einsum("ij,ij->i", e[:-1], e[1:]) / (L[:-1] * L[1:])
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    theta[theta < 1e-7] = 0.0  # rounding noise on straight runs
    return theta / (0.5 * (L[:-1] + L[1:]))


def split_into_strokes(chain, s_max, params=AbstractionParams()):
    v = np.asarray(chain, dtype=np.float64)
    pieces = [v]
    if len(v) >= 3:
        kappa = discrete_curvature(v)
        mean = kappa.mean()
        if mean > 0:
            cut = (np.flatnonzero(kappa > 2.0 * mean) + 1).tolist()
            bounds = [0, *cut, len(v) - 1]
            pieces = [v[s:e + 1] for s, e in zip(bounds[:-1], bounds[1:])]
    limit = params.stroke_min_fraction * s_max
    return [Stroke(p) for p in pieces if chain_length(p) >= limit]


def _rotation(angles_deg):
    ax, ay, az = np.radians(angles_deg)
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def global_transform(vertices, t, s_max, params, rng):
    """Scale, rotate (both about the centroid), then translate a stroke."""
    v = np.asarray(vertices, dtype=np.float64)
    scale = rng.uniform(1.0 - params.scale_per_t * t, 1.0 + params.scale_per_t * t, size=3)
    angles = rng.uniform(-params.rot_deg_per_t * t, params.rot_deg_per_t * t, size=3)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    radius = rng.uniform(0.0, params.trans_radius_factor * s_max * t)
    c = v.mean(axis=0)
    local = v - c
    # written as a displacement so that t == 0 leaves v bit-identical
    moved = (local * scale) @ _rotation(angles).T
    return v + (moved - local) + radius * direction


def _tangents(v):
    t = np.empty_like(v)
    t[1:-1] = v[2:] - v[:-2]
    t[0] = v[1] - v[0]
    t[-1] = v[-1] - v[-2]
    n = np.linalg.norm(t, axis=1, keepdims=True)
    fallback = np.vstack([v[1] - v[0], v[1:] - v[:-1]])
    t = np.where(n > 0, t, fallback)
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def _orthonormal_basis(t):
    """Two unit vectors spanning the plane orthogonal to each row of ``t``."""
    helper = np.zeros_like(t)
    helper[np.arange(len(t)), np.argmin(np.abs(t), axis=1)] = 1.0
    u = np.cross(t, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    w = np.cross(t, u)
    return u, w


def jitter_vertices(vertices, max_radius, rng):
    """Displace each vertex inside a disk orthogonal to the local tangent.

    Returns ``(new_vertices, tangents, displacements)``.
    """
    v = np.asarray(vertices, dtype=np.float64)
    n = len(v)
    radius = rng.uniform(0.0, max_radius, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    rho = radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    t = _tangents(v)
    u, w = _orthonormal_basis(t)
    disp = rho[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w)
    return v + disp, t, disp


def deform_stroke(stroke, s_max, params, rng):
    """Global similarity-like deformation plus per-vertex jitter."""
    t = rng.uniform(0.0, params.t_max_factor * params.l_a)
    v = global_transform(stroke.vertices, t, s_max, params, rng)
    l_stroke = min(stroke.arc_length / s_max, 1.0)
    v, _, _ = jitter_vertices(v, params.jitter_factor * params.l_a * l_stroke, rng)
    return Stroke(v)


def _dedupe(v):
    keep = np.concatenate([[True], np.linalg.norm(np.diff(v, axis=0), axis=1) > 1e-12])
    return v[keep]


def finalize_stroke(stroke, s_max, params, rng):
    """Extend both ends by one random length, then spline-smooth and resample.

    Cubic interpolation uses centripetal parameterization; the output is
    sampled at uniform arc length with the stroke's original mean segment
    length as spacing.
    """
    v = _dedupe(np.asarray(stroke.vertices, dtype=np.float64))
    spacing = chain_length(v) / (len(v) - 1)
    p = rng.uniform(0.0, params.extend_factor * s_max)
    if p > 0:
        t0 = v[0] - v[1]
        t1 = v[-1] - v[-2]
        v = np.vstack([v[0] + p * t0 / np.linalg.norm(t0), v, v[-1] + p * t1 / np.linalg.norm(t1)])
    start, end = v[0].copy(), v[-1].copy()
    u = np.concatenate([[0.0], np.cumsum(np.sqrt(np.linalg.norm(np.diff(v, axis=0), axis=1)))])
    spline = CubicSpline(u, v, axis=0)
    dense_u = np.linspace(0.0, u[-1], 32 * (len(v) - 1) + 1)
    dense = spline(dense_u)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    count = max(2, int(round(s[-1] / spacing)) + 1)
    out = spline(np.interp(np.linspace(0.0, s[-1], count), s, dense_u))
    out[0], out[-1] = start, end
    return Stroke(_dedupe(out))


def generate_sketch(net, params=AbstractionParams(), seed=0, source_id=""):
    """Full abstraction pipeline on a prepared network."""
    chains = cluster_and_reduce(net.chains, params)
    strokes = []
    for c in chains:
        strokes.extend(split_into_strokes(c, net.s_max, params))
    if not strokes:
        raise EmptySketchError(f"{source_id or '<network>'}: all strokes were filtered out")
    out = []
    for k, s in enumerate(strokes):
        rng = rng_stream(seed, k)
        s = deform_stroke(s, net.s_max, params, rng)
        out.append(finalize_stroke(s, net.s_max, params, rng))
    return Sketch(tuple(out), params.l_a, source_id, int(seed))
