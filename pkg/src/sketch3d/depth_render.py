"""Orthographic depth maps of meshes and tube-rendered sketches.

Conventions: Y is up. A camera with azimuth ``a`` and elevation ``e`` sees
the scene rotated by ``Ry(a)`` then ``Rx(e)`` and looks down ``-z``, so
rotating an object by +30 degrees about Y gives the view of the next
azimuth. Image rows grow downwards from the top-left pixel; pixel centers
sit at half-integer coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geomcore import FormatError, TriMesh

__all__ = [
    "Camera",
    "DepthImage",
    "make_cameras",
    "view_rotation",
    "tube_mesh",
    "sketch_tubes",
    "merge_meshes",
    "render_depth",
    "render_views",
    "save_depth_pgm",
    "load_depth_pgm",
]


@dataclass(frozen=True)
class Camera:
    azimuth_deg: float
    elevation_deg: float = 30.0
    image_size: int = 224
    projection: str = "orthographic"

    def __post_init__(self):
        if self.image_size < 1:
            raise ValueError("image_size must be >= 1")
        if self.projection != "orthographic":
            raise ValueError("only orthographic projection is supported")


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray

    @property
    def size(self):
        return self.depth.shape[0]

    @property
    def covered(self):
        return self.depth < 1.0


def make_cameras(n=12, elevation_deg=30.0, image_size=224):
    """``n`` cameras evenly spaced in azimuth (every 30 degrees for 12)."""
    return [Camera(i * 360.0 / n, elevation_deg, image_size) for i in range(n)]


def view_rotation(camera):
    a, e = math.radians(camera.azimuth_deg), math.radians(camera.elevation_deg)
    ca, sa, ce, se = math.cos(a), math.sin(a), math.cos(e), math.sin(e)
    Ry = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    return Rx @ Ry


# ---------------------------------------------------------------------------
# tubes

def _tangents(v):
    t = np.empty_like(v)
    t[1:-1] = v[2:] - v[:-2]
    t[0] = v[1] - v[0]
    t[-1] = v[-1] - v[-2]
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def _rotation_minimizing_frames(v, t):
    """Double-reflection frames along a polyline."""
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(t[0])))] = 1.0
    r = helper - helper.dot(t[0]) * t[0]
    r /= np.linalg.norm(r)
    frames = [r]
    for i in range(len(v) - 1):
        v1 = v[i + 1] - v[i]
        c1 = v1.dot(v1)
        rl = r - (2.0 / c1) * v1.dot(r) * v1
        tl = t[i] - (2.0 / c1) * v1.dot(t[i]) * v1
        v2 = t[i + 1] - tl
        c2 = v2.dot(v2)
        r = rl - (2.0 / c2) * v2.dot(rl) * v2 if c2 > 1e-30 else rl
        # re-orthogonalize against drift
        r = r - r.dot(t[i + 1]) * t[i + 1]
        r /= np.linalg.norm(r)
        frames.append(r)
    r = np.array(frames)
    return r, np.cross(t, r)


def tube_mesh(vertices, radius, sides=8):
    """Closed ``sides``-gon tube around a polyline, with conical end caps.

    Ring vertices lie exactly ``radius`` from their polyline vertex; each cap
    apex sits ``radius`` beyond the endpoint along the end tangent.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    v = np.asarray(getattr(vertices, "vertices", vertices), dtype=np.float64)
    n = len(v)
    t = _tangents(v)
    r, s = _rotation_minimizing_frames(v, t)
    ang = 2.0 * np.pi * np.arange(sides) / sides
    ring = (np.cos(ang)[None, :, None] * r[:, None, :] + np.sin(ang)[None, :, None] * s[:, None, :])
    verts = (v[:, None, :] + radius * ring).reshape(-1, 3)
    apex0 = v[0] - radius * t[0]
    apex1 = v[-1] + radius * t[-1]
    verts = np.vstack([verts, apex0, apex1])
    a0, a1 = n * sides, n * sides + 1
    faces = []
    for i in range(n - 1):
        for k in range(sides):
            p, q = i * sides + k, i * sides + (k + 1) % sides
            faces.append((p, p + sides, q + sides))
            faces.append((p, q + sides, q))
    for k in range(sides):
        faces.append((a0, (k + 1) % sides, k))
        last = (n - 1) * sides
        faces.append((a1, last + k, last + (k + 1) % sides))
    return TriMesh(verts, np.asarray(faces, dtype=np.int64))


def merge_meshes(meshes):
    verts, faces, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + base)
        base += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def sketch_tubes(sketch, radius=None, s_max=1.0):
    """All strokes of a sketch as one tube mesh (default radius ``0.01 * s_max``)."""
    radius = 0.01 * s_max if radius is None else radius
    return merge_meshes([tube_mesh(s.vertices, radius) for s in sketch.strokes])


# ---------------------------------------------------------------------------
# rasterization

@njit(cache=True)
def _raster(sx, sy, sz, faces, size):
    zbuf = np.ones((size, size))
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        x0, y0, z0 = sx[i0], sy[i0], sz[i0]
        x1, y1, z1 = sx[i1], sy[i1], sz[i1]
        x2, y2, z2 = sx[i2], sy[i2], sz[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        cmin = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        cmax = min(size - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        rmin = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        rmax = min(size - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        for row in range(rmin, rmax + 1):
            py = row + 0.5
            for col in range(cmin, cmax + 1):
                px = col + 0.5
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                z = w0 * z0 + w1 * z1 + w2 * z2
                if 0.0 <= z < zbuf[row, col]:
                    zbuf[row, col] = z
    return zbuf


def render_depth(mesh, camera, radius=None, center=(0.0, 0.0, 0.0)):
    """Z-buffer an orthographic depth map; near = 0, far and background = 1.

    The view volume is the sphere of ``radius`` around ``center``; by default
    the smallest origin-centered sphere holding the mesh.
    """
    c = np.asarray(center, dtype=np.float64)
    v = mesh.vertices - c
    if radius is None:
        radius = float(np.linalg.norm(v, axis=1).max())
    if not radius > 0:
        raise ValueError("degenerate mesh: zero extent")
    p = v @ view_rotation(camera).T
    size = camera.image_size
    scale = size / (2.0 * radius)
    sx = (p[:, 0] + radius) * scale
    sy = (radius - p[:, 1]) * scale
    sz = (radius - p[:, 2]) / (2.0 * radius)
    return DepthImage(_raster(sx, sy, sz, np.ascontiguousarray(mesh.faces), size))


def render_views(mesh, cameras=None, radius=None):
    cameras = make_cameras() if cameras is None else cameras
    return [render_depth(mesh, cam, radius) for cam in cameras]


def save_depth_pgm(image, path):
    """16-bit binary PGM, depth quantized as ``round(d * 65535)``."""
    q = np.round(np.clip(image.depth, 0.0, 1.0) * 65535).astype(">u2")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def load_depth_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 65535:
        raise FormatError(path, 1, "expected 16-bit P5 PGM")
    w, h = int(fields[1]), int(fields[2])
    q = np.frombuffer(data[pos + 1:pos + 1 + 2 * w * h], dtype=">u2").reshape(h, w)
    return DepthImage(q.astype(np.float64) / 65535.0)
