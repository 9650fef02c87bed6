"""Soft-body task metrics, depth maps, and the small scripted golden scenes."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .golden import GOLDEN_SCENES, golden_config, golden_scenes, golden_trajectory

__all__ = [
    "RegionBox",
    "DepthMap",
    "render_heightmap",
    "indentation_map",
    "metric_fill",
    "metric_write_iou",
    "chamfer_distance",
    "metric_pinch",
    "write_depth_map",
    "read_depth_map",
    "write_pgm",
    "evaluate_metric",
    "GOLDEN_SCENES",
    "golden_config",
    "golden_trajectory",
    "golden_scenes",
    "FILL_FRACTION",
    "FILL_MAX_SPEED",
    "WRITE_IOU",
    "PINCH_RATIO",
]

FILL_FRACTION = 0.9
FILL_MAX_SPEED = 0.05  # m/s
WRITE_IOU = 0.8
PINCH_RATIO = 0.3
WRITE_THRESHOLD = 0.25  # fraction of the stamp depth


@dataclass(frozen=True)
class RegionBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("region box needs positive extents")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)


@dataclass
class DepthMap:
    """Per-cell heights on an ``nx x ny`` raster; ``samples[i, j]`` covers cell (i, j)."""

    samples: np.ndarray
    cell: float
    origin: tuple = (0.0, 0.0)
    threshold: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("depth map samples must be 2-D")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("depth map samples must be finite")
        if not self.cell > 0:
            raise ValueError("cell size must be positive")
        self.origin = tuple(float(v) for v in self.origin)

    @property
    def resolution(self) -> tuple:
        return self.samples.shape

    def occupancy(self) -> np.ndarray:
        return self.samples > self.threshold


def _cells(x, region: RegionBox, resolution):
    nx, ny = resolution
    lo, hi = np.array(region.lo), np.array(region.hi)
    inside = region.contains(x)
    x = np.asarray(x, dtype=float).reshape(-1, 3)[inside]
    size = (hi[:2] - lo[:2]) / np.array([nx, ny])
    ij = np.floor((x[:, :2] - lo[:2]) / size).astype(int)
    ij[:, 0] = np.clip(ij[:, 0], 0, nx - 1)
    ij[:, 1] = np.clip(ij[:, 1], 0, ny - 1)
    return x, ij, size


def render_heightmap(x, region: RegionBox, resolution, threshold: float = 0.0) -> DepthMap:
    """Per-cell maximum particle height above the region floor (0 for empty cells)."""
    nx, ny = (int(r) for r in resolution)
    if nx < 2 or ny < 2:
        raise ValueError("heightmap resolution must be at least 2x2")
    x, ij, size = _cells(x, region, (nx, ny))
    out = np.zeros((nx, ny))
    if len(x):
        np.maximum.at(out, (ij[:, 0], ij[:, 1]), np.maximum(x[:, 2] - region.lo[2], 0.0))
    if not np.isclose(size[0], size[1]):
        raise ValueError("heightmap cells must be square")
    return DepthMap(out, float(size[0]), (region.lo[0], region.lo[1]), threshold)


def indentation_map(initial: DepthMap, current: DepthMap, threshold: float) -> DepthMap:
    """How far each cell's surface sank below its initial height."""
    if initial.resolution != current.resolution:
        raise ValueError("depth maps must share a resolution")
    return DepthMap(np.maximum(initial.samples - current.samples, 0.0), current.cell, current.origin, threshold)


def metric_fill(x, v, region: RegionBox, active=None):
    """``(fraction inside region, max particle speed, success)``."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    v = np.asarray(v, dtype=float).reshape(-1, 3)
    if active is not None:
        x, v = x[active], v[active]
    if not len(x):
        raise ValueError("fill metric needs at least one particle")
    frac = float(np.count_nonzero(region.contains(x))) / len(x)
    speed = float(np.sqrt((v ** 2).sum(axis=1)).max())
    return frac, speed, bool(frac > FILL_FRACTION and speed < FILL_MAX_SPEED)


def metric_write_iou(current: DepthMap, target: DepthMap):
    """IoU of the binarized maps; two empty maps count as a perfect match."""
    if current.resolution != target.resolution:
        raise ValueError("depth maps must share a resolution")
    a, b = current.occupancy(), target.occupancy()
    union = np.count_nonzero(a | b)
    iou = 1.0 if union == 0 else np.count_nonzero(a & b) / union
    return float(iou), bool(iou > WRITE_IOU)


def chamfer_distance(a, b) -> float:
    """``mean_a min_b |a-b| + mean_b min_a |a-b|``"""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if not len(a) or not len(b):
        raise ValueError("chamfer distance needs non-empty point sets")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da) + np.mean(db))


def metric_pinch(current, initial, target):
    """``(ratio, success)`` with ratio = chamfer(current, target) / chamfer(initial, target)."""
    d = chamfer_distance(current, target)
    t = chamfer_distance(initial, target)
    ratio = d / t if t > 0 else (0.0 if d == 0 else np.inf)
    return float(ratio), bool(d < PINCH_RATIO * t)


# ---------------------------------------------------------------------------
# depth map files
# ---------------------------------------------------------------------------
DEP_MAGIC = b"MSDEP1"


def write_depth_map(dm: DepthMap, path) -> None:
    nx, ny = dm.resolution
    head = DEP_MAGIC + struct.pack("<IIdddd", nx, ny, dm.cell, dm.origin[0], dm.origin[1], dm.threshold)
    Path(path).write_bytes(head + dm.samples.astype("<f4").tobytes())


def read_depth_map(path) -> DepthMap:
    data = Path(path).read_bytes()
    if data[:len(DEP_MAGIC)] != DEP_MAGIC:
        raise ValueError("not a depth map file (bad magic)")
    off = len(DEP_MAGIC)
    hsize = struct.calcsize("<IIdddd")
    if len(data) < off + hsize:
        raise ValueError(f"truncated depth map header at byte offset {len(data)}")
    nx, ny, cell, ox, oy, thr = struct.unpack_from("<IIdddd", data, off)
    off += hsize
    if len(data) != off + 4 * nx * ny:
        raise ValueError(f"depth map payload has {len(data) - off} bytes, expected {4 * nx * ny}")
    s = np.frombuffer(data, dtype="<f4", offset=off).reshape(nx, ny).astype(np.float64)
    return DepthMap(s, cell, (ox, oy), thr)


def write_pgm(dm: DepthMap, path) -> None:
    """8-bit ASCII PGM, rows along y (top = max y), brightest = deepest."""
    s = dm.samples
    peak = s.max() if s.size and s.max() > 0 else 1.0
    img = np.rint(255.0 * np.clip(s / peak, 0.0, 1.0)).astype(int).T[::-1]
    lines = ["P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# metric dispatch on worlds
# ---------------------------------------------------------------------------
def _task(world) -> dict:
    task = world.meta.get("task")
    if not task:
        raise ValueError("scene defines no task metric")
    return task


def write_maps(world):
    """``(current indentation map, target map)`` for a write task."""
    task = _task(world)
    region = RegionBox(*task["region"])
    res = tuple(task["resolution"])
    depth = task["stamp_depth"]
    P = world.soft.particles
    init = render_heightmap(world.meta["initial_x"], region, res)
    cur = render_heightmap(P.x[P.active], region, res)
    ind = indentation_map(init, cur, WRITE_THRESHOLD * depth)
    tgt = np.zeros(res)
    lo = np.array(region.lo[:2])
    for x0, y0, x1, y1 in task["target_rects"]:
        # cells whose centers fall inside the stamp footprint
        cx = lo[0] + (np.arange(res[0]) + 0.5) * cur.cell
        cy = lo[1] + (np.arange(res[1]) + 0.5) * cur.cell
        mx = (cx > x0) & (cx < x1)
        my = (cy > y0) & (cy < y1)
        tgt[np.ix_(mx, my)] = depth
    return ind, DepthMap(tgt, cur.cell, cur.origin, WRITE_THRESHOLD * depth)


def pinch_target(world) -> np.ndarray:
    task = _task(world)
    x0 = world.meta["initial_x"]
    c = x0.mean(axis=0)
    return c + (x0 - c) * np.asarray(task["squash"], dtype=float)


def evaluate_metric(world, kind: str | None = None):
    """``(value, success)`` of the scene's task metric (or ``kind`` if given)."""
    task = _task(world)
    kind = kind or task["kind"]
    P = world.soft.particles
    if kind == "fill":
        frac, _, ok = metric_fill(P.x, P.v, RegionBox(*task["region"]), P.active)
        return frac, ok
    if kind == "write":
        return metric_write_iou(*write_maps(world))
    if kind == "pinch":
        return metric_pinch(P.x[P.active], world.meta["initial_x"], pinch_target(world))
    raise ValueError(f"unknown metric {kind!r}")

