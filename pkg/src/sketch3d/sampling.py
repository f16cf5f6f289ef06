"""Dense point sampling of meshes and sketches, and sparse subsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .geomcore import DegenerateGeometryError, PointCloud

__all__ = [
    "SamplingConfig",
    "sample_mesh",
    "sample_sketch",
    "sample_polylines",
    "largest_remainder",
    "farthest_point_indices",
    "subsample",
]


@dataclass(frozen=True)
class SamplingConfig:
    dense_count: int = 10000
    sparse_count: int = 1024
    mode: str = "farthest_point"

    def __post_init__(self):
        if self.sparse_count > self.dense_count:
            raise ValueError("sparse_count must not exceed dense_count")
        if self.mode not in ("random", "farthest_point"):
            raise ValueError(f"unknown subsampling mode {self.mode!r}")


def sample_mesh(mesh, n, rng):
    """Monte-Carlo surface sampling: area-weighted triangle, uniform barycentrics."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise DegenerateGeometryError("mesh has zero surface area")
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face]]
    pts = ((1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1]
           + (r1 * r2)[:, None] * tri[:, 2])
    return PointCloud(pts)


def largest_remainder(weights, n):
    """Integer allocation of ``n`` proportional to ``weights`` (Hamilton method).

    Remainder ties go to the lower index.
    """
    w = np.asarray(weights, dtype=np.float64)
    quota = n * w / w.sum()
    base = np.floor(quota).astype(np.int64)
    short = n - int(base.sum())
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:short]] += 1
    return base


def _walk(poly, count):
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], count) if count > 1 else np.zeros(count)
    return np.column_stack([np.interp(targets, s, poly[:, k]) for k in range(3)])


def sample_polylines(polylines, n):
    """Equidistant, endpoint-inclusive samples with length-proportional allocation."""
    polylines = [np.asarray(p, dtype=np.float64) for p in polylines]
    lengths = np.array([np.linalg.norm(np.diff(p, axis=0), axis=1).sum() for p in polylines])
    if not lengths.sum() > 0:
        raise DegenerateGeometryError("polylines have zero total length")
    counts = largest_remainder(lengths, n)
    return PointCloud(np.concatenate([_walk(p, c) for p, c in zip(polylines, counts) if c > 0]))


def sample_sketch(sketch, n):
    return sample_polylines([s.vertices for s in sketch.strokes], n)


@njit(cache=True)
def _fps(points, k, start):
    n = points.shape[0]
    out = np.empty(k, dtype=np.int64)
    best = np.full(n, np.inf)
    cur = start
    for i in range(k):
        out[i] = cur
        far, far_d = 0, -1.0
        for j in range(n):
            dx = points[j, 0] - points[cur, 0]
            dy = points[j, 1] - points[cur, 1]
            dz = points[j, 2] - points[cur, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best[j]:
                best[j] = d
            if best[j] > far_d:
                far, far_d = j, best[j]
        cur = far
    return out


def farthest_point_indices(points, k, start):
    """Greedy farthest-point order from ``start`` (squared distances; argmax ties to lowest index)."""
    return _fps(np.ascontiguousarray(points, dtype=np.float64), int(k), int(start))


def subsample(cloud, k, mode, rng):
    n = cloud.cardinality
    if k > n:
        raise ValueError(f"cannot take {k} points from a cloud of {n}")
    if mode == "random":
        idx = rng.choice(n, size=k, replace=False)
    elif mode == "farthest_point":
        idx = farthest_point_indices(cloud.points, k, rng.integers(n))
    else:
        raise ValueError(f"unknown subsampling mode {mode!r}")
    return PointCloud(cloud.points[idx])
