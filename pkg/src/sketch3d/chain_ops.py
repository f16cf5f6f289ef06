"""Detail filtering and consolidation of a curve network.

Pipeline order used by :func:`prepare_network`::

    split_at_corners -> filter_short -> rdp_resample -> consolidate
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geomcore import EmptyNetworkError, as_chain, chain_length

__all__ = [
    "ConsolidationConfig",
    "vertex_angles",
    "split_at_corners",
    "filter_short",
    "point_segment_distance",
    "point_polyline_distance",
    "rdp_resample",
    "resample_uniform",
    "chain_distance",
    "tangent_alignment",
    "aggregate_chains",
    "consolidate",
    "prepare_network",
]


@dataclass(frozen=True)
class ConsolidationConfig:
    corner_angle_deg: float = 135.0
    min_len_fraction: float = 0.10
    rdp_fraction: float = 0.02
    merge_fraction: float = 0.05
    tangent_align_min_cos: float = 0.9
    max_merge_iterations: int = 10

    def __post_init__(self):
        for name in ("min_len_fraction", "rdp_fraction", "merge_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name}={v} must lie in (0, 1)")
        if not 0.0 < self.corner_angle_deg < 180.0:
            raise ValueError("corner_angle_deg must lie in (0, 180)")


def vertex_angles(chain):
    """Interior angles in degrees, 180 for a straight continuation."""
    v = np.asarray(chain, dtype=np.float64)
    a = v[:-2] - v[1:-1]
    b = v[2:] - v[1:-1]
    cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def split_at_corners(chain, angle_deg=135.0):
    """Split ``chain`` at every interior vertex with angle below ``angle_deg``.

    The split vertex is shared by both pieces, so concatenating the pieces
    (dropping the duplicated joints) gives back the input.
    """
    v = np.asarray(chain, dtype=np.float64)
    if len(v) < 3:
        return [as_chain(v)]
    cut = np.flatnonzero(vertex_angles(v) < angle_deg) + 1
    bounds = [0, *cut.tolist(), len(v) - 1]
    return [as_chain(v[s:e + 1]) for s, e in zip(bounds[:-1], bounds[1:])]


def filter_short(chains, d_min, fraction=0.10):
    """Drop chains strictly shorter than ``fraction * d_min``."""
    if d_min <= 0:
        raise ValueError("d_min must be positive")
    limit = fraction * d_min
    return [c for c in chains if chain_length(c) >= limit]


def point_segment_distance(p, a, b):
    """Distances from points ``p`` (n, 3) to segments ``a``-``b``, broadcasting.

    Also returns the segment parameter in [0, 1] of the closest point.
    """
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.einsum("...i,...i->...", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1), t


def point_polyline_distance(points, poly):
    """Closest distance and segment index from each point to a polyline."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    poly = np.asarray(poly, dtype=np.float64)
    d, _ = point_segment_distance(points[:, None, :], poly[None, :-1], poly[None, 1:])
    seg = np.argmin(d, axis=1)
    return d[np.arange(len(points)), seg], seg


def rdp_resample(chain, epsilon):
    """Ramer-Douglas-Peucker simplification keeping both endpoints.

    Iterative version (explicit stack) so long chains do not hit the
    recursion limit.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = np.asarray(chain, dtype=np.float64)
    n = len(v)
    if n <= 2:
        return as_chain(v)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        s, e = stack.pop()
        if e - s < 2:
            continue
        d, _ = point_segment_distance(v[s + 1:e], v[s], v[e])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            k += s + 1
            keep[k] = True
            stack.append((k, e))
            stack.append((s, k))
    return as_chain(v[keep])


def resample_uniform(chain, n):
    """``n`` points at uniform arc-length spacing, endpoints included."""
    v = np.asarray(chain, dtype=np.float64)
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], n)
    out = np.empty((n, 3))
    for k in range(3):
        out[:, k] = np.interp(targets, s, v[:, k])
    out[0], out[-1] = v[0], v[-1]
    return out


def _segment_dirs(v):
    d = np.diff(v, axis=0)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _vertex_tangents(v):
    t = np.empty_like(v)
    t[1:-1] = v[2:] - v[:-2]
    t[0] = v[1] - v[0]
    t[-1] = v[-1] - v[-2]
    norm = np.linalg.norm(t, axis=1, keepdims=True)
    # a hairpin makes the central difference vanish; fall back to the incoming segment
    bad = norm[:, 0] == 0
    if np.any(bad):
        t[bad] = np.vstack([v[1] - v[0], v[1:] - v[:-1]])[bad]
        norm = np.linalg.norm(t, axis=1, keepdims=True)
    return t / norm


def chain_distance(a, b):
    """Symmetric mean closest-point distance between two polylines."""
    da, _ = point_polyline_distance(a, b)
    db, _ = point_polyline_distance(b, a)
    return 0.5 * (da.mean() + db.mean())


def tangent_alignment(a, b):
    """Mean ``|cos|`` between vertex tangents and the tangent at the closest point.

    Averaged over both directions so the measure is symmetric.
    """
    def one_way(p, q):
        _, seg = point_polyline_distance(p, q)
        return np.abs(np.einsum("ij,ij->i", _vertex_tangents(p), _segment_dirs(q)[seg])).mean()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return 0.5 * (one_way(a, b) + one_way(b, a))


def aggregate_chains(a, b):
    """Pointwise average of two chains after uniform reparameterization.

    Both are resampled to ``max(len(a), len(b))`` points; ``b`` is flipped
    if that brings its endpoints closer to those of ``a``.
    """
    n = max(len(a), len(b))
    ra, rb = resample_uniform(a, n), resample_uniform(b, n)
    direct = np.linalg.norm(ra[0] - rb[0]) + np.linalg.norm(ra[-1] - rb[-1])
    flipped = np.linalg.norm(ra[0] - rb[-1]) + np.linalg.norm(ra[-1] - rb[0])
    if flipped < direct:
        rb = rb[::-1]
    avg = 0.5 * (ra + rb)
    keep = np.concatenate([[True], np.any(avg[1:] != avg[:-1], axis=1)])
    avg = avg[keep]
    if len(avg) < 2:
        # both chains collapsed onto each other reversed; keep the first
        return as_chain(a)
    return as_chain(avg)


def _bbox_gaps(i, lo, hi):
    gap = np.maximum(0.0, np.maximum(lo - hi[i], lo[i] - hi))
    return np.linalg.norm(gap, axis=1)


def _merge_partner(i, chains, lengths, lo, hi, cfg):
    """Closest aligned partner of chain ``i`` if close enough to merge, else None.

    Candidates are visited by increasing bounding-box gap, a lower bound on
    the mean closest-point distance, which lets the scan stop early without
    changing the outcome.
    """
    gaps = _bbox_gaps(i, lo, hi)
    limit = cfg.merge_fraction * max(lengths[i], max(lengths))
    best, best_d = None, np.inf
    for j in np.argsort(gaps, kind="stable"):
        if j == i:
            continue
        if gaps[j] >= best_d or (best is None and gaps[j] >= limit):
            break
        if tangent_alignment(chains[i], chains[j]) < cfg.tangent_align_min_cos:
            continue
        d = chain_distance(chains[i], chains[j])
        if d < best_d:
            best, best_d = int(j), d
    if best is not None and best_d < cfg.merge_fraction * max(lengths[i], lengths[best]):
        return best
    return None


def consolidate(chains, config=ConsolidationConfig()):
    """Greedily merge close, tangentially aligned chains into aggregate curves.

    Chains are visited in order; each is compared with its closest aligned
    partner and replaced (together with the partner) by their aggregate when
    the pair distance is below ``merge_fraction`` of the longer length.
    Repeats until a full pass makes no merge or the iteration cap is hit.
    """
    chains = [as_chain(c) for c in chains]
    for _ in range(config.max_merge_iterations):
        merged = False
        i = 0
        lengths = [chain_length(c) for c in chains]
        lo = np.array([c.min(axis=0) for c in chains])
        hi = np.array([c.max(axis=0) for c in chains])
        while i < len(chains):
            j = _merge_partner(i, chains, lengths, lo, hi, config)
            if j is not None:
                agg = aggregate_chains(chains[i], chains[j])
                chains[i] = agg
                lengths[i] = chain_length(agg)
                lo[i], hi[i] = agg.min(axis=0), agg.max(axis=0)
                del chains[j], lengths[j]
                lo, hi = np.delete(lo, j, axis=0), np.delete(hi, j, axis=0)
                merged = True
                if j < i:
                    i -= 1
            i += 1
        if not merged:
            break
    return chains


def prepare_network(net, config=ConsolidationConfig()):
    """Run split, filter, resample and consolidate on a normalized network."""
    pieces = []
    for c in net.chains:
        pieces.extend(split_at_corners(c, config.corner_angle_deg))
    pieces = filter_short(pieces, net.d_min, config.min_len_fraction)
    if not pieces:
        raise EmptyNetworkError("every chain was shorter than the length threshold")
    eps = config.rdp_fraction * net.d_min
    pieces = [rdp_resample(c, eps) for c in pieces]
    pieces = consolidate(pieces, config)
    return net.with_chains(pieces)
