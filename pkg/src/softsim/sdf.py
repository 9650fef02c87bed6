"""Signed distance functions for collision shapes and baked mesh volumes.

Distances are negative inside. All queries accept a single point ``(3,)`` or
a batch ``(N, 3)`` and return matching shapes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose

__all__ = [
    "Shape",
    "SdfVolume",
    "sdf_eval",
    "sdf_gradient",
    "sdf_eval_local",
    "sdf_gradient_local",
    "bake_mesh_sdf",
    "load_mesh",
    "box_mesh",
    "write_sdf_volume",
    "read_sdf_volume",
    "SHAPE_KINDS",
]

SHAPE_KINDS = ("plane", "sphere", "box", "capsule", "volume")
_VOLUME_MAGIC = b"MSSDF1"


@dataclass(frozen=True, eq=False)
class SdfVolume:
    origin: np.ndarray
    voxel: float
    samples: np.ndarray  # (nx, ny, nz) float32, sample (i,j,k) at origin + voxel*(i,j,k)

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.float32)
        if s.ndim != 3 or min(s.shape) < 2:
            raise ValueError("SDF volume needs at least 2 samples per axis")
        if not np.all(np.isfinite(s)):
            raise ValueError("SDF volume contains non-finite samples")
        if not self.voxel > 0:
            raise ValueError("voxel size must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float32).astype(float))
        object.__setattr__(self, "voxel", float(np.float32(self.voxel)))

    @property
    def dims(self):
        return self.samples.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.voxel * (np.array(self.dims) - 1)


@dataclass(frozen=True, eq=False)
class Shape:
    """A collision shape attached to a body.

    ``params`` by kind: plane ``normal, offset``; sphere ``radius``; box
    ``half_extents``; capsule ``half_length, radius`` (axis = local z);
    volume ``volume``.
    """

    kind: str
    params: dict
    local_pose: Pose = field(default_factory=Pose)
    friction: float = 0.5
    k_n: float = 1e3
    k_t: float = 10.0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "plane":
            n = np.asarray(p["normal"], dtype=float)
            p["normal"] = n / np.linalg.norm(n)
            p["offset"] = float(p.get("offset", 0.0))
        elif self.kind == "sphere":
            if not p["radius"] > 0:
                raise ValueError("sphere radius must be positive")
        elif self.kind == "box":
            he = np.asarray(p["half_extents"], dtype=float)
            if he.shape != (3,) or np.any(he <= 0):
                raise ValueError("box half-extents must be three positive numbers")
            p["half_extents"] = he
        elif self.kind == "capsule":
            if not (p["radius"] > 0 and p["half_length"] > 0):
                raise ValueError("capsule radius and half-length must be positive")
        elif not isinstance(p.get("volume"), SdfVolume):
            raise ValueError("volume shape needs an SdfVolume")
        if self.friction < 0:
            raise ValueError("friction coefficient must be non-negative")
        if not (self.k_n > 0 and self.k_t > 0):
            raise ValueError("contact stiffnesses must be positive")
        object.__setattr__(self, "params", p)

    @classmethod
    def plane(cls, normal=(0, 0, 1), offset=0.0, **kw):
        return cls("plane", {"normal": normal, "offset": offset}, **kw)

    @classmethod
    def sphere(cls, radius, **kw):
        return cls("sphere", {"radius": float(radius)}, **kw)

    @classmethod
    def box(cls, half_extents, **kw):
        return cls("box", {"half_extents": half_extents}, **kw)

    @classmethod
    def capsule(cls, half_length, radius, **kw):
        return cls("capsule", {"half_length": float(half_length), "radius": float(radius)}, **kw)

    @classmethod
    def from_volume(cls, volume: SdfVolume, **kw):
        return cls("volume", {"volume": volume}, **kw)

    def bounding_radius(self) -> float:
        """Radius of a local-origin sphere enclosing the shape (inf for planes)."""
        k, p = self.kind, self.params
        if k == "plane":
            return np.inf
        if k == "sphere":
            return p["radius"]
        if k == "box":
            return float(np.linalg.norm(p["half_extents"]))
        if k == "capsule":
            return p["half_length"] + p["radius"]
        v = p["volume"]
        return float(max(np.linalg.norm(v.origin), np.linalg.norm(v.upper)) + v.voxel)


# ---------------------------------------------------------------------------
# local-frame evaluation
# ---------------------------------------------------------------------------
_EX = np.array([1.0, 0.0, 0.0])


def _unit_or_x(g):
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    bad = n[..., 0] < 1e-300
    out = np.where(bad[..., None], _EX, g / np.where(n == 0, 1.0, n))
    return out


def _box_sdf(p, he):
    q = np.abs(p) - he
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def _box_grad(p, he):
    q = np.abs(p) - he
    sgn = np.where(p >= 0.0, 1.0, -1.0)
    qo = np.maximum(q, 0.0)
    out_g = sgn * qo
    is_out = np.any(q > 0.0, axis=-1)
    # inside: nearest face; argmax picks the lowest axis index on ties (x first)
    ax = np.argmax(q, axis=-1)
    in_g = np.zeros_like(p)
    idx = np.arange(p.shape[0])
    in_g[idx, ax] = sgn[idx, ax]
    g = np.where(is_out[:, None], out_g, in_g)
    return _unit_or_x(g)


def _capsule_closest(p, L):
    z = np.clip(p[:, 2], -L, L)
    c = np.zeros_like(p)
    c[:, 2] = z
    return c


def _trilinear(vol: SdfVolume, p):
    u = (p - vol.origin) / vol.voxel
    dims = np.array(vol.dims)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
    f = u - i0
    s = vol.samples
    out = np.zeros(p.shape[0])
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                out += wx * wy * wz * s[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


def _volume_sdf(vol, p):
    c = np.clip(p, vol.origin, vol.upper)
    return _trilinear(vol, c) + np.linalg.norm(p - c, axis=-1)


def sdf_eval_local(shape: Shape, p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    k, prm = shape.kind, shape.params
    if k == "plane":
        return p @ prm["normal"] - prm["offset"]
    if k == "sphere":
        return np.linalg.norm(p, axis=-1) - prm["radius"]
    if k == "box":
        return _box_sdf(p, prm["half_extents"])
    if k == "capsule":
        return np.linalg.norm(p - _capsule_closest(p, prm["half_length"]), axis=-1) - prm["radius"]
    return _volume_sdf(prm["volume"], p)


def sdf_gradient_local(shape: Shape, p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    k, prm = shape.kind, shape.params
    if k == "plane":
        return np.broadcast_to(prm["normal"], p.shape).copy()
    if k == "sphere":
        return _unit_or_x(p)
    if k == "box":
        return _box_grad(p, prm["half_extents"])
    if k == "capsule":
        return _unit_or_x(p - _capsule_closest(p, prm["half_length"]))
    vol = prm["volume"]
    h = 0.5 * vol.voxel
    g = np.empty_like(p)
    for a in range(3):
        d = np.zeros(3)
        d[a] = h
        g[:, a] = _volume_sdf(vol, p + d) - _volume_sdf(vol, p - d)
    return _unit_or_x(g)


def _world_to_local(shape: Shape, p, pose: Pose | None):
    full = shape.local_pose if pose is None else pose @ shape.local_pose
    return full, full.apply_inverse(np.atleast_2d(np.asarray(p, dtype=float)))


def sdf_eval(shape: Shape, p, pose: Pose | None = None):
    """Signed distance of world point(s) ``p``; ``pose`` is the owning body's pose."""
    single = np.ndim(p) == 1
    _, lp = _world_to_local(shape, p, pose)
    d = sdf_eval_local(shape, lp)
    return float(d[0]) if single else d


def sdf_gradient(shape: Shape, p, pose: Pose | None = None):
    """Unit outward normal (direction of increasing distance) in world frame."""
    single = np.ndim(p) == 1
    full, lp = _world_to_local(shape, p, pose)
    g = sdf_gradient_local(shape, lp) @ full.R.T
    return g[0] if single else g


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------
def box_mesh(half_extents=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)):
    """Closed, outward-wound triangle mesh of a box."""
    hx, hy, hz = half_extents
    v = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)]) + np.asarray(center)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return v, np.array(tris, dtype=np.int64)


def load_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    """Read vertices and triangles from ASCII/binary STL or OBJ."""
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".obj":
        verts, faces = [], []
        for line in data.decode().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)
    tris = _read_stl(data)
    verts, inv = np.unique(tris.reshape(-1, 3), axis=0, return_inverse=True)
    return verts, inv.reshape(-1, 3).astype(np.int64)


def _read_stl(data: bytes) -> np.ndarray:
    if len(data) >= 84:
        (n,) = struct.unpack_from("<I", data, 80)
        if 84 + 50 * n == len(data):
            rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]),
                                count=n, offset=84)
            return rec["v"].astype(float)
    tris, cur = [], []
    for line in data.decode(errors="replace").splitlines():
        parts = line.split()
        if parts and parts[0] == "vertex":
            cur.append([float(x) for x in parts[1:4]])
            if len(cur) == 3:
                tris.append(cur)
                cur = []
    return np.array(tris, dtype=float).reshape(-1, 3, 3)


def _point_triangle_distance(p, a, b, c):
    """Exact unsigned distance from points ``p`` (N,3) to triangle abc."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ap @ ab, ap @ ac
    bp = p - b
    d3, d4 = bp @ ab, bp @ ac
    cp = p - c
    d5, d6 = cp @ ab, cp @ ac
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = vb / denom
        w = vc / denom
    closest = a + v[:, None] * ab + w[:, None] * ac

    def pick(mask, val):
        closest[mask] = val[mask] if np.ndim(val) == 2 else val

    with np.errstate(divide="ignore", invalid="ignore"):
        # edge regions
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        pick(m, a + t[:, None] * ab)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        pick(m, a + t[:, None] * ac)
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        pick(m, b + t[:, None] * (c - b))
    # vertex regions
    pick((d1 <= 0) & (d2 <= 0), a)
    pick((d3 >= 0) & (d4 <= d3), b)
    pick((d6 >= 0) & (d5 <= d6), c)
    return np.linalg.norm(p - closest, axis=-1)


def _ray_crossings(p, d, a, b, c):
    """Count ray/triangle hits for rays from ``p`` along unit ``d`` (Moller-Trumbore)."""
    e1, e2 = b - a, c - a
    h = np.cross(d, e2)
    det = e1 @ h
    if abs(det) < 1e-14:
        return np.zeros(p.shape[0], dtype=np.int64)
    inv = 1.0 / det
    s = p - a
    u = (s @ h) * inv
    q = np.cross(s, e1)
    v = (q @ d) * inv
    t = (q @ e2) * inv
    return ((u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)).astype(np.int64)


_RAY_DIRS = [np.array(d) / np.linalg.norm(d) for d in
             ([1.0, 0.0, 0.0], [1.0, 0.0137, 0.0071], [1.0, -0.0093, 0.0119])]


def bake_mesh_sdf(vertices, triangles, voxel: float, padding: float, chunk: int = 200_000) -> SdfVolume:
    """Sample the signed distance of a closed triangle mesh on a regular lattice."""
    V = np.asarray(vertices, dtype=float).reshape(-1, 3)
    T = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(T) == 0 or len(V) == 0:
        raise ValueError("cannot bake an empty mesh")
    tri = V[T]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=-1)
    tri = tri[area > 1e-15]
    if len(tri) == 0:
        raise ValueError("mesh has only degenerate (zero-area) triangles")
    lo = V.min(axis=0) - padding
    hi = V.max(axis=0) + padding
    dims = np.maximum(np.ceil((hi - lo) / voxel).astype(int) + 1, 2)
    grids = np.meshgrid(*[lo[a] + voxel * np.arange(dims[a]) for a in range(3)], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        dist = np.full(len(p), np.inf)
        votes = np.zeros(len(p), dtype=np.int64)
        counts = [np.zeros(len(p), dtype=np.int64) for _ in _RAY_DIRS]
        for a, b, c in tri:
            dist = np.minimum(dist, _point_triangle_distance(p, a, b, c))
            for k, d in enumerate(_RAY_DIRS):
                counts[k] += _ray_crossings(p, d, a, b, c)
        for cnt in counts:
            votes += cnt % 2
        out[s:s + chunk] = np.where(votes >= 2, -dist, dist)
    return SdfVolume(lo, voxel, out.reshape(dims))


def write_sdf_volume(vol: SdfVolume, path) -> None:
    nx, ny, nz = vol.dims
    with open(path, "wb") as f:
        f.write(_VOLUME_MAGIC)
        f.write(struct.pack("<3I", nx, ny, nz))
        f.write(struct.pack("<4f", *vol.origin, vol.voxel))
        f.write(vol.samples.astype("<f4").tobytes(order="C"))


def read_sdf_volume(path) -> SdfVolume:
    data = Path(path).read_bytes()
    if data[:6] != _VOLUME_MAGIC:
        raise ValueError(f"{path}: not an SDF volume file (bad magic)")
    if len(data) < 34:
        raise ValueError(f"{path}: truncated header at byte {len(data)}")
    nx, ny, nz = struct.unpack_from("<3I", data, 6)
    ox, oy, oz, vs = struct.unpack_from("<4f", data, 18)
    need = 34 + 4 * nx * ny * nz
    if len(data) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(data)}")
    s = np.frombuffer(data, dtype="<f4", offset=34).reshape(nx, ny, nz)
    return SdfVolume(np.array([ox, oy, oz]), vs, s.astype(np.float32))
