"""Procedural furniture-like shape families.

Each instance is built from swept rectangular bars and n-gon cylinders. A
primitive contributes its triangles to the mesh and its feature edges to
the curve network, and both use the same vertices, so mesh and network
share one bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abstraction import rng_stream
from .geomcore import CurveNetwork, TriMesh

__all__ = ["FAMILIES", "Shape", "Builder", "proc_generate", "make_shape"]


@dataclass(frozen=True)
class Shape:
    shape_id: str
    label: int
    family: str
    mesh: TriMesh
    network: CurveNetwork


class Builder:
    """Accumulates mesh triangles and feature polylines."""

    def __init__(self):
        self.verts, self.faces, self.chains = [], [], []
        self._n = 0

    def _add_verts(self, v):
        base = self._n
        self.verts.append(np.asarray(v, dtype=np.float64))
        self._n += len(v)
        return base

    def bar(self, path, width, depth, up=(0.0, 1.0, 0.0), closed=False):
        """Sweep a ``width`` x ``depth`` rectangle along ``path``.

        Mesh: side quads plus end caps. Network: the four long edges and the
        two end rectangles (or just the long edges for a closed path).
        """
        path = np.asarray(path, dtype=np.float64)
        n = len(path)
        t = np.empty_like(path)
        if closed:
            t = np.roll(path, -1, axis=0) - np.roll(path, 1, axis=0)
        else:
            t[1:-1] = path[2:] - path[:-2]
            t[0], t[-1] = path[1] - path[0], path[-1] - path[-2]
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(up, t[0])) > 0.9:
            up = np.array([1.0, 0.0, 0.0]) if abs(t[0][0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        a = np.cross(t, up)
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b = np.cross(a, t)
        hw, hd = 0.5 * width, 0.5 * depth
        corners = [(-hw, -hd), (hw, -hd), (hw, hd), (-hw, hd)]
        ring = np.stack([path + u * a + w * b for u, w in corners], axis=1)   # (n, 4, 3)
        base = self._add_verts(ring.reshape(-1, 3))
        segs = n if closed else n - 1
        for i in range(segs):
            i2 = (i + 1) % n
            for k in range(4):
                p, q = base + 4 * i + k, base + 4 * i + (k + 1) % 4
                p2, q2 = base + 4 * i2 + k, base + 4 * i2 + (k + 1) % 4
                self.faces += [(p, p2, q2), (p, q2, q)]
        if not closed:
            for end in (0, n - 1):
                e = base + 4 * end
                self.faces += [(e, e + 1, e + 2), (e, e + 2, e + 3)]
        for k in range(4):
            edge = ring[:, k]
            self.chains.append(np.vstack([edge, edge[:1]]) if closed else edge)
        if not closed:
            for end in (0, n - 1):
                self.chains.append(np.vstack([ring[end], ring[end][:1]]))
        return self

    def box(self, center, size):
        """Axis-aligned box as a bar along its longest axis."""
        c, s = np.asarray(center, dtype=np.float64), np.asarray(size, dtype=np.float64)
        ax = int(np.argmax(s))
        d = np.zeros(3)
        d[ax] = 0.5 * s[ax]
        others = [i for i in range(3) if i != ax]
        up = np.zeros(3)
        up[others[1]] = 1.0
        # width runs along cross(t, up), which is the remaining axis
        t = np.zeros(3)
        t[ax] = 1.0
        wa = int(np.argmax(np.abs(np.cross(t, up))))
        da = [i for i in others if i != wa][0]
        return self.bar([c - d, c + d], s[wa], s[da], up=up)

    def cylinder(self, center, radius, height, segments=16, verticals=4):
        """Y-axis n-gon prism; network: both rims plus a few vertical lines."""
        c = np.asarray(center, dtype=np.float64)
        ang = 2 * np.pi * np.arange(segments) / segments
        circ = np.column_stack([radius * np.cos(ang), np.zeros(segments), radius * np.sin(ang)])
        lo = c + circ - [0, 0.5 * height, 0]
        hi = c + circ + [0, 0.5 * height, 0]
        base = self._add_verts(np.vstack([lo, hi, [c - [0, 0.5 * height, 0]], [c + [0, 0.5 * height, 0]]]))
        cl, ch = base + 2 * segments, base + 2 * segments + 1
        for k in range(segments):
            k2 = (k + 1) % segments
            self.faces += [(base + k, base + k2, base + segments + k2),
                           (base + k, base + segments + k2, base + segments + k),
                           (cl, base + k2, base + k), (ch, base + segments + k, base + segments + k2)]
        self.chains += [np.vstack([lo, lo[:1]]), np.vstack([hi, hi[:1]])]
        for k in range(0, segments, max(1, segments // verticals)):
            self.chains.append(np.vstack([lo[k], hi[k]]))
        return self

    def build(self, shape_id, label, family):
        verts = np.concatenate(self.verts)
        mesh = TriMesh(verts, np.asarray(self.faces, dtype=np.int64))
        # network scalars come from the mesh bounding box (same vertices)
        net = CurveNetwork.from_chains(self.chains)
        return Shape(shape_id, label, family, mesh, net)


def _arc(center, radius, a0, a1, n, plane="xy"):
    t = np.linspace(a0, a1, n)
    c = np.asarray(center, dtype=np.float64)
    if plane == "xy":
        return c + np.column_stack([radius * np.cos(t), radius * np.sin(t), np.zeros(n)])
    return c + np.column_stack([np.zeros(n), radius * np.sin(t), radius * np.cos(t)])


def _table(b, r):
    w, d, h = r.uniform(0.7, 1.3), r.uniform(0.4, 0.9), r.uniform(0.45, 0.9)
    top, leg = r.uniform(0.04, 0.08), r.uniform(0.04, 0.08)
    b.box([0, h - top / 2, 0], [w, top, d])
    for sx in (-1, 1):
        for sz in (-1, 1):
            b.box([sx * (w / 2 - leg), (h - top) / 2, sz * (d / 2 - leg)], [leg, h - top, leg])


def _chair(b, r):
    w, d = r.uniform(0.4, 0.6), r.uniform(0.4, 0.6)
    sh, bh, leg = r.uniform(0.35, 0.55), r.uniform(0.35, 0.7), r.uniform(0.03, 0.06)
    b.box([0, sh, 0], [w, 0.05, d])
    for sx in (-1, 1):
        for sz in (-1, 1):
            b.box([sx * (w / 2 - leg), sh / 2, sz * (d / 2 - leg)], [leg, sh, leg])
    b.box([0, sh + bh / 2, -d / 2 + 0.025], [w, bh, 0.05])


def _arch(b, r):
    rad, th = r.uniform(0.3, 0.6), r.uniform(0.05, 0.12)
    post = r.uniform(0.2, 0.7)
    arc = _arc([0, post, 0], rad, 0, np.pi, 13)
    path = np.vstack([[rad, 0, 0], arc, [-rad, 0, 0]])
    b.bar(path, th, r.uniform(0.1, 0.3), up=(0, 0, 1))


def _mug(b, r):
    rad, h = r.uniform(0.2, 0.35), r.uniform(0.4, 0.8)
    b.cylinder([0, h / 2, 0], rad, h)
    hr = r.uniform(0.1, 0.2) * h / 0.6
    arc = _arc([rad, h / 2, 0], hr, -np.pi / 2, np.pi / 2, 9)
    b.bar(arc, 0.04, 0.04, up=(0, 0, 1))


def _shelf(b, r):
    w, h, d = r.uniform(0.4, 0.9), r.uniform(0.8, 1.5), r.uniform(0.2, 0.4)
    n = int(r.integers(3, 6))
    th = 0.03
    for sx in (-1, 1):
        b.box([sx * (w / 2 - th / 2), h / 2, 0], [th, h, d])
    for y in np.linspace(th / 2, h - th / 2, n):
        b.box([0, y, 0], [w - 2 * th, th, d])


def _lamp(b, r):
    br, ph, sr = r.uniform(0.12, 0.25), r.uniform(0.5, 1.0), r.uniform(0.15, 0.3)
    b.cylinder([0, 0.02, 0], br, 0.04)
    b.box([0, 0.04 + ph / 2, 0], [0.03, ph, 0.03])
    sh = r.uniform(0.15, 0.3)
    b.cylinder([0, 0.04 + ph + sh / 2 - 0.05, 0], sr, sh)


def _bed(b, r):
    w, l, h = r.uniform(0.6, 1.0), r.uniform(1.2, 1.6), r.uniform(0.15, 0.3)
    b.box([0, h / 2, 0], [w, h, l])
    hh = r.uniform(0.3, 0.6)
    b.box([0, hh / 2, -l / 2 - 0.03], [w, hh, 0.06])
    fh = r.uniform(0.2, 0.9) * hh
    b.box([0, fh / 2, l / 2 + 0.03], [w, fh, 0.06])


def _stool(b, r):
    sr, h = r.uniform(0.15, 0.3), r.uniform(0.4, 0.8)
    b.cylinder([0, h, 0], sr, 0.05)
    for k in range(3):
        a = 2 * np.pi * k / 3
        top = np.array([0.7 * sr * np.cos(a), h - 0.025, 0.7 * sr * np.sin(a)])
        foot = np.array([1.1 * sr * np.cos(a), 0.0, 1.1 * sr * np.sin(a)])
        b.bar([foot, top], 0.035, 0.035, up=(1, 0, 0))


def _monitor(b, r):
    w, h = r.uniform(0.5, 1.0), r.uniform(0.3, 0.6)
    stand = r.uniform(0.1, 0.3)
    b.box([0, 0.01, 0], [r.uniform(0.2, 0.4), 0.02, r.uniform(0.15, 0.25)])
    b.box([0, 0.02 + stand / 2, 0], [0.04, stand, 0.03])
    b.box([0, 0.02 + stand + h / 2, 0], [w, h, 0.03])


def _bathtub(b, r):
    w, l, h = r.uniform(0.5, 0.8), r.uniform(1.0, 1.6), r.uniform(0.3, 0.55)
    th = 0.04
    b.box([0, th / 2, 0], [w, th, l])
    for sx in (-1, 1):
        b.box([sx * (w / 2 - th / 2), h / 2, 0], [th, h, l])
    for sz in (-1, 1):
        b.box([0, h / 2, sz * (l / 2 - th / 2)], [w - 2 * th, h, th])


FAMILIES = {
    "table": _table,
    "chair": _chair,
    "arch": _arch,
    "mug": _mug,
    "shelf": _shelf,
    "lamp": _lamp,
    "bed": _bed,
    "stool": _stool,
    "monitor": _monitor,
    "bathtub": _bathtub,
}


def make_shape(family, label, shape_id, rng):
    b = Builder()
    FAMILIES[family](b, rng)
    return b.build(shape_id, label, family)


def proc_generate(classes, per_class, seed):
    """``classes * per_class`` shapes, class-major, with ids ``<family>_<k>``."""
    if classes < 2:
        raise ValueError("need at least two classes")
    if classes > len(FAMILIES):
        raise ValueError(f"only {len(FAMILIES)} shape families are available")
    names = list(FAMILIES)[:classes]
    out = []
    for label, fam in enumerate(names):
        for k in range(per_class):
            out.append(make_shape(fam, label, f"{fam}_{k:04d}", rng_stream(seed, 11, label, k)))
    return out
