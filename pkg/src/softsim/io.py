"""Particle export as ASCII PLY, and trajectory lookup by name."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .demo import Trajectory, read_trajectory

__all__ = ["export_particles", "read_ply", "load_trajectory"]


def export_particles(state, path, active_only: bool = True) -> int:
    """Write particle positions and material ids; returns the vertex count."""
    P = state.particles
    keep = P.active if active_only else np.ones(P.n, dtype=bool)
    x = P.x[keep].astype(np.float32)
    mat = P.material[keep].astype(np.int64)
    head = ["ply", "format ascii 1.0", f"element vertex {len(x)}", "property float x", "property float y",
            "property float z", "property int material", "end_header"]
    # 9 significant digits reproduce any float32 exactly
    rows = [f"{a:.9g} {b:.9g} {c:.9g} {m}" for (a, b, c), m in zip(x.tolist(), mat.tolist())]
    Path(path).write_text("\n".join(head + rows) + "\n")
    return len(x)


def read_ply(path):
    """Inverse of :func:`export_particles`: ``(positions float32 (N, 3), material ids)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    try:
        end = lines.index("end_header")
    except ValueError:
        raise ValueError(f"{path}: missing end_header") from None
    n = None
    for ln in lines[1:end]:
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
    if n is None:
        raise ValueError(f"{path}: no vertex element")
    body = lines[end + 1:end + 1 + n]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} vertices, found {len(body)}")
    if n == 0:
        return np.zeros((0, 3), dtype=np.float32), np.zeros(0, dtype=np.int64)
    data = np.array([ln.split() for ln in body])
    return data[:, :3].astype(np.float32), data[:, 3].astype(np.int64)


def load_trajectory(ref) -> Trajectory:
    """Read a trajectory file, or build a scripted one from ``golden:NAME``."""
    s = str(ref)
    if s.startswith("golden:"):
        from .golden import golden_trajectory

        return golden_trajectory(s.split(":", 1)[1])
    return read_trajectory(s)
