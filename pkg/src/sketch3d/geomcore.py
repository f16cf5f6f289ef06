"""Core geometry containers, bounding-box scalars and plain-text IO.

Chains and strokes are stored as ``(n, 3)`` float64 arrays. All containers
are frozen dataclasses whose arrays are marked read-only, so they can be
shared freely between threads.

Text formats (6 fractional digits everywhere):

* curve network / sketch: ``v x y z`` vertex lines and ``l i1 i2 ... ik``
  polyline lines with 1-based indices. ``#`` starts a comment. Sketch files
  carry a header ``# la=<value> seed=<value> source=<id>``.
* mesh: ``v x y z`` and ``f i j k`` (triangles only).
* point cloud: one ``x y z`` triple per line.
"""

from __future__ import annotations

import os
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeometryError",
    "FormatError",
    "EmptyNetworkError",
    "DegenerateGeometryError",
    "CurveNetwork",
    "Stroke",
    "Sketch",
    "TriMesh",
    "PointCloud",
    "as_chain",
    "chain_length",
    "bbox_extents",
    "scale_scalars",
    "normalize",
    "normalization",
    "normalize_mesh",
    "load_curve_network",
    "save_curve_network",
    "load_sketch",
    "save_sketch",
    "load_mesh",
    "save_mesh",
    "load_point_cloud",
    "save_point_cloud",
    "DEFAULT_DMIN_AXES",
]

# Y is up: "width" is x and "height" is y.
DEFAULT_DMIN_AXES = (0, 1)
_FMT = "%.6f"


class GeometryError(ValueError):
    pass


class FormatError(GeometryError):
    def __init__(self, path, lineno, msg):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


class EmptyNetworkError(GeometryError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def as_chain(vertices):
    """Validate and freeze a polyline as an ``(n, 3)`` array, ``n >= 2``."""
    v = _frozen(vertices)
    if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 2:
        raise GeometryError(f"chain must be (n>=2, 3), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GeometryError("chain has non-finite coordinates")
    if np.any(np.all(v[1:] == v[:-1], axis=1)):
        raise GeometryError("chain has repeated consecutive vertices")
    return v


def chain_length(vertices):
    v = np.asarray(vertices, dtype=np.float64)
    return float(np.linalg.norm(np.diff(v, axis=0), axis=1).sum())


def bbox_extents(points):
    """Per-axis ``max - min`` of a nonempty point list."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if p.shape[0] == 0:
        raise GeometryError("bbox_extents of empty point set")
    ext = p.max(axis=0) - p.min(axis=0)
    return float(ext[0]), float(ext[1]), float(ext[2])


def scale_scalars(points, axes=DEFAULT_DMIN_AXES):
    """Return ``(d_min, s_max)`` for a point set.

    ``d_min`` is the smaller of the two bounding-box extents named by
    ``axes``; ``s_max`` is the largest of the three extents.
    """
    ext = bbox_extents(points)
    return min(ext[axes[0]], ext[axes[1]]), max(ext)


@dataclass(frozen=True)
class CurveNetwork:
    chains: tuple
    d_min: float
    s_max: float

    @classmethod
    def from_chains(cls, chains, axes=DEFAULT_DMIN_AXES):
        chains = tuple(as_chain(c) for c in chains)
        if not chains:
            raise EmptyNetworkError("curve network has no chains")
        d_min, s_max = scale_scalars(np.concatenate(chains), axes)
        return cls(chains, d_min, s_max)

    def with_chains(self, chains):
        """Same scale scalars, new chain set (scalars describe the source shape)."""
        return CurveNetwork(tuple(as_chain(c) for c in chains), self.d_min, self.s_max)

    @property
    def points(self):
        return np.concatenate(self.chains)

    def __len__(self):
        return len(self.chains)


@dataclass(frozen=True)
class Stroke:
    vertices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices))
        if self.vertices.ndim != 2 or self.vertices.shape[0] < 2:
            raise GeometryError("stroke needs at least 2 vertices")

    @property
    def arc_length(self):
        return chain_length(self.vertices)


@dataclass(frozen=True)
class Sketch:
    strokes: tuple
    abstraction: float
    source_id: str = ""
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.abstraction <= 1.0:
            raise GeometryError(f"abstraction level {self.abstraction} outside [0, 1]")
        object.__setattr__(self, "strokes", tuple(self.strokes))

    @property
    def points(self):
        return np.concatenate([s.vertices for s in self.strokes])

    @property
    def total_length(self):
        return sum(s.arc_length for s in self.strokes)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices).reshape(-1, 3))
        object.__setattr__(self, "faces", _frozen(self.faces, np.int64).reshape(-1, 3))
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")

    def face_areas(self):
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def is_valid(self):
        return bool(len(self.faces) and np.all(self.face_areas() > 0))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        p = _frozen(self.points).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise GeometryError("point cloud has non-finite points")
        object.__setattr__(self, "points", p)

    @property
    def cardinality(self):
        return self.points.shape[0]

    def __len__(self):
        return self.points.shape[0]


def normalization(points):
    """``(center, scale)`` mapping ``points`` to a bbox-centered box with ``s_max == 1``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    s = float((hi - lo).max())
    if not s > 0:
        raise DegenerateGeometryError("cannot normalize: all points coincide")
    return 0.5 * (lo + hi), s


def normalize(net):
    """Center ``net`` on its bounding-box center and scale it so ``s_max == 1``."""
    center, s = normalization(net.points)
    chains = tuple(_frozen((c - center) / s) for c in net.chains)
    return CurveNetwork(chains, net.d_min / s, net.s_max / s)


def normalize_mesh(mesh, center, scale):
    return TriMesh((mesh.vertices - center) / scale, mesh.faces)


# ---------------------------------------------------------------------------
# text IO

def _fmt_xyz(p):
    return " ".join(_FMT % x for x in p)


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            yield lineno, raw


def _parse_vertex(path, lineno, toks):
    if len(toks) != 4:
        raise FormatError(path, lineno, f"vertex needs 3 coordinates, got {len(toks) - 1}")
    try:
        xyz = [float(t) for t in toks[1:]]
    except ValueError:
        raise FormatError(path, lineno, "non-numeric vertex coordinate") from None
    if not all(np.isfinite(xyz)):
        raise FormatError(path, lineno, "non-finite vertex coordinate")
    return xyz


def _parse_indices(path, lineno, toks, nverts):
    try:
        idx = [int(t) - 1 for t in toks[1:]]
    except ValueError:
        raise FormatError(path, lineno, "non-integer index") from None
    for i in idx:
        if not 0 <= i < nverts:
            raise FormatError(path, lineno, f"index {i + 1} out of range (1..{nverts})")
    return idx


def _read_polylines(path):
    verts, lines, comments = [], [], []
    for lineno, raw in _read_lines(path):
        s = raw.strip()
        if not s:
            continue
        if s.startswith("#"):
            comments.append(s[1:].strip())
            continue
        toks = s.split("#", 1)[0].split()
        if toks[0] == "v":
            verts.append(_parse_vertex(path, lineno, toks))
        elif toks[0] == "l":
            if len(toks) < 3:
                raise FormatError(path, lineno, "polyline needs at least 2 indices")
            lines.append((lineno, toks))
        else:
            raise FormatError(path, lineno, f"unknown record {toks[0]!r}")
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    chains = []
    for lineno, toks in lines:
        idx = _parse_indices(path, lineno, toks, len(verts))
        try:
            chains.append(as_chain(verts[idx]))
        except GeometryError as exc:
            raise FormatError(path, lineno, str(exc)) from None
    return chains, comments


def _write_polylines(path, chains, header=()):
    out = [f"# {h}" for h in header]
    base = 1
    idx_lines = []
    for c in chains:
        out.extend("v " + _fmt_xyz(p) for p in c)
        idx_lines.append("l " + " ".join(str(base + i) for i in range(len(c))))
        base += len(c)
    out.extend(idx_lines)
    _atomic_write(path, "\n".join(out) + "\n")


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


_SCALARS = re.compile(r"d_min=(\S+)\s+s_max=(\S+)")


def load_curve_network(path, axes=DEFAULT_DMIN_AXES):
    """Read a network; scale scalars come from a ``# d_min=.. s_max=..`` header
    when present (prepared networks keep the scalars of their source) and are
    recomputed from the chains otherwise."""
    chains, comments = _read_polylines(path)
    if not chains:
        raise EmptyNetworkError(f"{path}: curve network has no chains")
    for c in comments:
        m = _SCALARS.search(c)
        if m:
            return CurveNetwork(tuple(chains), float(m.group(1)), float(m.group(2)))
    return CurveNetwork.from_chains(chains, axes)


def save_curve_network(net, path):
    _write_polylines(path, net.chains, header=[f"d_min={net.d_min!r} s_max={net.s_max!r}"])


_HEADER = re.compile(r"la=(\S+)\s+seed=(\S+)\s+source=(\S*)")


def load_sketch(path):
    chains, comments = _read_polylines(path)
    la, seed, source = None, 0, ""
    for c in comments:
        m = _HEADER.search(c)
        if m:
            la, seed, source = float(m.group(1)), int(m.group(2)), m.group(3)
            break
    if la is None:
        raise FormatError(path, 1, "missing '# la=<value> seed=<value> source=<id>' header")
    return Sketch(tuple(Stroke(c) for c in chains), la, source, seed)


def save_sketch(sketch, path):
    _write_polylines(
        path,
        [s.vertices for s in sketch.strokes],
        header=[f"la={sketch.abstraction!r} seed={sketch.seed} source={sketch.source_id}"],
    )


def load_mesh(path):
    verts, faces = [], []
    for lineno, raw in _read_lines(path):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if toks[0] == "v":
            verts.append(_parse_vertex(path, lineno, toks))
        elif toks[0] == "f":
            if len(toks) != 4:
                raise FormatError(path, lineno, "only triangle faces are supported")
            faces.append(_parse_indices(path, lineno, toks, len(verts)))
        else:
            raise FormatError(path, lineno, f"unknown record {toks[0]!r}")
    return TriMesh(np.asarray(verts).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh(mesh, path):
    out = ["v " + _fmt_xyz(p) for p in mesh.vertices]
    out.extend("f %d %d %d" % tuple(f + 1) for f in mesh.faces)
    _atomic_write(path, "\n".join(out) + "\n")


def load_point_cloud(path):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pts = np.loadtxt(path, dtype=np.float64, comments="#", ndmin=2)
        if pts.shape[1] == 3 and np.all(np.isfinite(pts)):
            return PointCloud(pts)
    except ValueError:
        pass
    # slow path, for a precise error location
    pts = []
    for lineno, raw in _read_lines(path):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        pts.append(_parse_vertex(path, lineno, ["v", *toks]))
    return PointCloud(np.asarray(pts).reshape(-1, 3))


def save_point_cloud(cloud, path):
    _atomic_write(path, "\n".join(_fmt_xyz(p) for p in cloud.points) + "\n")
