"""Small scripted scenes used for regression and acceptance runs.

Every scene runs on a 0.3 m grid with 1 cm cells, 500 Hz rigid stepping and
20 Hz control, and comes with a 100-step ``joint_pos`` trajectory.
"""
from __future__ import annotations

import copy

import numpy as np

from .geometry import PANDA_HOME

__all__ = ["GOLDEN_SCENES", "golden_config", "golden_trajectory", "golden_scenes", "panda_press_config",
           "reach_press_targets"]

STEPS = 100
FLOOR_Z = 0.03
CENTER = 0.145

_BASE = {
    "seed": 7,
    "deterministic": True,
    "gravity": [0.0, 0.0, -9.81],
    "grid": {"length": 0.01, "dims": [30, 30, 30], "origin": [0.0, 0.0, 0.0]},
    "materials": {"clay": {"preset": "soft-clay"}},
    "coupling": {"mode": "particle", "k_n": 100.0, "k_t": 10.0, "c_d": 10.0},
    "stepping": {"dt_soft": 1e-3, "n_soft": 2, "n_rigid": 25, "control_hz": 20.0},
}

_FLOOR_BODY = {"name": "floor", "mode": "kinematic",
               "shapes": [{"kind": "plane", "normal": [0, 0, 1], "offset": FLOOR_Z, "friction": 0.8}]}


def _prismatic_z(name, base_xy, q0, limits, shapes, v_max, gripper=None, controller=None):
    rc = {
        "name": name,
        "chain": {"joints": [{"type": "prismatic", "axis": [0, 0, 1], "limits": limits}]},
        "base": {"position": [base_xy[0], base_xy[1], 0.0]},
        "q0": [q0],
        "v_max": v_max,
        "link_shapes": {0: shapes},
        "controller": controller or [{"name": "arm", "variant": "joint_pos"}],
    }
    if gripper:
        rc["gripper"] = gripper
    return rc


def _press_plane():
    cfg = copy.deepcopy(_BASE)
    cfg["name"] = "press-plane"
    cfg["particles"] = [{"box": {"lo": [0.115, 0.115, 0.036], "hi": [0.175, 0.175, 0.066]}, "material": "clay"}]
    cfg["bodies"] = [copy.deepcopy(_FLOOR_BODY)]
    plate = [{"kind": "box", "half_extents": [0.045, 0.045, 0.005]}]
    cfg["robot"] = _prismatic_z("press", (CENTER, CENTER), 0.12, [0.04, 0.2], plate, 0.05)
    return cfg


WRITE_RECTS = [[0.12, 0.16, 0.18, 0.18], [0.14, 0.12, 0.16, 0.16]]
WRITE_DEPTH = 0.01
WRITE_INSET = 0.002  # stamp bars sit this far inside their target cells
_SLAB_TOP = 0.052


def _write_mini():
    cfg = copy.deepcopy(_BASE)
    cfg["name"] = "write-mini"
    cfg["particles"] = [{"box": {"lo": [0.10, 0.10, 0.032], "hi": [0.20, 0.20, _SLAB_TOP]}, "material": "clay",
                         "particle_volume": 1.2e-7}]
    cfg["bodies"] = [copy.deepcopy(_FLOOR_BODY)]
    stamp = []
    for x0, y0, x1, y1 in WRITE_RECTS:
        he = [(x1 - x0) / 2 - WRITE_INSET, (y1 - y0) / 2 - WRITE_INSET, 0.01]
        stamp.append({"kind": "box", "half_extents": he,
                      "pose": {"position": [(x0 + x1) / 2 - CENTER, (y0 + y1) / 2 - CENTER, 0.0]}})
    cfg["robot"] = _prismatic_z("stamp", (CENTER, CENTER), 0.08, [0.03, 0.2], stamp, 0.02)
    cfg["task"] = {"kind": "write", "region": {"lo": [0.10, 0.10, FLOOR_Z], "hi": [0.20, 0.20, 0.12]},
                   "resolution": [10, 10], "stamp_depth": WRITE_DEPTH, "target_rects": WRITE_RECTS}
    return cfg


def _pinch_mini():
    cfg = copy.deepcopy(_BASE)
    cfg["name"] = "pinch-mini"
    cfg["particles"] = [{"box": {"lo": [0.125, 0.125, 0.031], "hi": [0.165, 0.165, 0.071]}, "material": "clay",
                         "particle_volume": 1.2e-7}]
    cfg["bodies"] = [copy.deepcopy(_FLOOR_BODY)]
    finger = [{"kind": "box", "half_extents": [0.005, 0.025, 0.02], "friction": 0.8}]
    gripper = {"axis": [1, 0, 0], "lower": 0.0, "upper": 0.05, "grip0": 0.04, "finger_shapes": finger}
    ctrl = [{"name": "arm", "variant": "joint_pos"}, {"name": "gripper", "variant": "gripper_pos"}]
    cfg["robot"] = _prismatic_z("pincher", (CENTER, CENTER), 0.12, [0.04, 0.2], [], 0.05, gripper, ctrl)
    cfg["robot"]["v_max"] = [0.05, 0.02]
    cfg["task"] = {"kind": "pinch", "squash": [0.65, 1.15, 1.3]}
    return cfg


FILL_REGION = {"lo": [0.075, 0.075, 0.025], "hi": [0.215, 0.215, 0.12]}


def _fill_mini():
    cfg = copy.deepcopy(_BASE)
    cfg["name"] = "fill-mini"
    cfg["particles"] = [{"box": {"lo": [0.12, 0.12, 0.167], "hi": [0.17, 0.17, 0.19]}, "material": "clay",
                         "particle_volume": 1.2e-7}]
    wall_t, half_in, h_wall = 0.004, 0.07, 0.035
    beaker = []
    for ax in (0, 1):
        for sgn in (-1, 1):
            he = [half_in + 2 * wall_t, half_in + 2 * wall_t, h_wall]
            he[ax] = wall_t
            pos = [CENTER, CENTER, FLOOR_Z + h_wall]
            pos[ax] += sgn * (half_in + wall_t)
            beaker.append({"kind": "box", "half_extents": he, "pose": {"position": pos}})
    floor = copy.deepcopy(_FLOOR_BODY)
    floor["shapes"] += beaker
    b_half, b_t, b_h = 0.035, 0.004, 0.03
    bucket = [{"kind": "box", "half_extents": [b_half + b_t, b_half + b_t, b_t],
               "pose": {"position": [0, 0, -b_h + b_t]}}]
    for ax in (0, 1):
        for sgn in (-1, 1):
            he = [b_half + b_t, b_half + b_t, b_h]
            he[ax] = b_t
            pos = [0.0, 0.0, 0.0]
            pos[ax] = sgn * b_half
            bucket.append({"kind": "box", "half_extents": he, "pose": {"position": pos}, "friction": 0.3})
    cfg["bodies"] = [floor, {"name": "bucket", "mode": "dynamic", "mass": 0.2, "inertia": [1.5e-4] * 3,
                             "pose": {"position": [CENTER, CENTER, 0.19]}, "shapes": bucket}]
    cfg["robot"] = {
        "name": "pourer",
        "chain": {"joints": [{"type": "revolute", "axis": [1, 0, 0], "limits": [-0.1, 3.2]}]},
        "base": {"position": [CENTER, CENTER, 0.19]},
        "q0": [0.0],
        "v_max": 2.0,
        "controller": [{"name": "arm", "variant": "joint_pos"}],
    }
    cfg["welds"] = [{"body": "bucket", "link": 0}]
    cfg["task"] = {"kind": "fill", "region": FILL_REGION}
    return cfg


_BUILDERS = {
    "fill-mini": _fill_mini,
    "write-mini": _write_mini,
    "pinch-mini": _pinch_mini,
    "press-plane": _press_plane,
}
GOLDEN_SCENES = tuple(_BUILDERS)


def golden_config(name: str) -> dict:
    if name == "panda-press":
        return panda_press_config()
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown golden scene {name!r}; choose from {', '.join(GOLDEN_SCENES)}") from None


def _ramp(a, b, n):
    return list(np.linspace(a, b, n + 1)[1:])


def _script(name: str) -> np.ndarray:
    if name == "press-plane":
        z = [0.12] * 40 + _ramp(0.12, 0.06, 30) + [0.06] * 10 + _ramp(0.06, 0.12, 20)
        return np.array(z)[:, None]
    if name == "write-mini":
        z = [0.08] * 10 + _ramp(0.08, _SLAB_TOP, 30) + [_SLAB_TOP] * 20 + _ramp(_SLAB_TOP, 0.08, 30) + [0.08] * 10
        return np.array(z)[:, None]
    if name == "pinch-mini":
        z = [0.12] * 5 + _ramp(0.12, 0.056, 30) + [0.056] * 65
        # gripper opening in normalized units over [0, 0.05]: 0.04 open, 0.018 closed
        g_open, g_closed = 2 * 0.04 / 0.05 - 1, 2 * 0.018 / 0.05 - 1
        g = [g_open] * 40 + _ramp(g_open, g_closed, 30) + [g_closed] * 20 + _ramp(g_closed, g_open, 10)
        return np.stack([z, g], axis=1)
    if name == "fill-mini":
        q = [0.0] * 5 + _ramp(0.0, 2.6, 30) + [2.6] * 65
        return np.array(q)[:, None]
    raise KeyError(name)


def golden_trajectory(name: str):
    from .config import build_world, parse_config
    from .demo import Trajectory

    w = build_world(parse_config(golden_config(name)))
    return Trajectory(w.controller.id, w.dt_control, _script(name).astype(np.float32), f"golden:{name}")


def golden_scenes() -> dict:
    """Name -> zero-argument constructor of a fresh world."""
    from .config import build_world, parse_config

    return {n: (lambda n=n: build_world(parse_config(golden_config(n)))) for n in GOLDEN_SCENES}


# ---------------------------------------------------------------------------
# Panda scene for action-conversion runs
# ---------------------------------------------------------------------------
PANDA_BASE = [-0.47, 0.145, -0.03]


def panda_press_config(disturbance=None, variant: str = "joint_pos") -> dict:
    cfg = copy.deepcopy(_BASE)
    cfg["name"] = "panda-press"
    cfg["particles"] = [{"box": {"lo": [0.12, 0.12, 0.031], "hi": [0.17, 0.17, 0.046]}, "material": "clay",
                         "particle_volume": 1.2e-7}]
    cfg["bodies"] = [copy.deepcopy(_FLOOR_BODY)]
    cfg["robot"] = {
        "name": "panda",
        "chain": "panda",
        "base": {"position": PANDA_BASE},
        "v_max": 2.0,
        "link_shapes": {6: [{"kind": "sphere", "radius": 0.01, "pose": {"position": [0, 0, 0.2104]}}]},
        "controller": [{"name": "arm", "variant": variant}],
    }
    if disturbance is not None:
        cfg["drive_disturbance"] = list(map(float, disturbance))
    return cfg


def reach_press_targets(rng: np.random.Generator, kind: str, steps: int = 20) -> np.ndarray:
    """Scripted joint_pos actions: a joint-space reach, or a descent toward the clay."""
    q0 = PANDA_HOME.copy()
    if kind == "reach":
        goal = q0 + rng.uniform(-0.3, 0.3, size=7)
    elif kind == "press":
        # joints 2 and 4 lower the flange; small random lateral offset on joint 1
        goal = q0 + np.array([rng.uniform(-0.05, 0.05), 0.17, 0.0, 0.1, 0.0, -0.05, 0.0])
        goal += rng.uniform(-0.02, 0.02, size=7)
    else:
        raise ValueError(kind)
    s = np.linspace(0.0, 1.0, steps + 1)[1:, None]
    return q0 + s * (goal - q0)
