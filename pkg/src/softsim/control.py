"""Controller suite: action normalization, drive-target computation, PD law.

Arm variants follow the usual naming (``joint_pos``, ``ee_delta_pose``, ...).
Every controller turns an action into joint drive targets ``(q_target,
qd_target)``; the PD law is exposed for diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (KinematicChain, Pose, compose, forward_kinematics, inverse_kinematics, pose_from_twist)

__all__ = [
    "ARM_VARIANTS",
    "VARIANTS",
    "ControllerConfig",
    "ControllerState",
    "CompositeController",
    "DriveInfo",
    "make_config",
    "denormalize",
    "normalize",
    "drive_targets",
    "pd_torque",
    "split_action",
    "reset_state",
]

ARM_VARIANTS = (
    "joint_pos",
    "joint_delta_pos",
    "joint_target_delta_pos",
    "ee_delta_pos",
    "ee_delta_pose",
    "ee_target_delta_pos",
    "ee_target_delta_pose",
    "joint_vel",
    "joint_pos_vel",
    "joint_delta_pos_vel",
)
VARIANTS = ARM_VARIANTS + ("gripper_pos",)
JOINT_POSITION_FAMILY = ("joint_pos", "joint_delta_pos", "joint_target_delta_pos")
EE_FAMILY = ("ee_delta_pos", "ee_delta_pose", "ee_target_delta_pos", "ee_target_delta_pose")
# absolute-position variants take raw joint positions, not [-1, 1]
UNNORMALIZED = ("joint_pos", "joint_pos_vel")

DEFAULT_JOINT_DELTA = 0.1
DEFAULT_EE_POS_DELTA = 0.1
DEFAULT_EE_ROT_DELTA = 0.1
DEFAULT_JOINT_VEL = 1.0
DEFAULT_KP = 1000.0
DEFAULT_KD = 100.0


def action_dim(variant: str, dof: int) -> int:
    if variant in ("ee_delta_pos", "ee_target_delta_pos"):
        return 3
    if variant in ("ee_delta_pose", "ee_target_delta_pose"):
        return 6
    if variant in ("joint_pos_vel", "joint_delta_pos_vel"):
        return 2 * dof
    if variant == "gripper_pos":
        return 1
    return dof


@dataclass
class ControllerConfig:
    """One controller: variant, action bounds (physical units) and PD gains."""

    variant: str
    dof: int
    lower: np.ndarray
    upper: np.ndarray
    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown controller variant {self.variant!r}")
        n = action_dim(self.variant, self.dof)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("controller lower bound exceeds upper bound")
        self.kp = np.broadcast_to(np.asarray(self.kp, dtype=float), (self.dof,)).copy()
        self.kd = np.broadcast_to(np.asarray(self.kd, dtype=float), (self.dof,)).copy()
        if self.variant == "joint_vel" and np.any(self.kp != 0):
            raise ValueError("joint_vel controllers have zero stiffness")

    @property
    def action_dim(self) -> int:
        return action_dim(self.variant, self.dof)

    @property
    def normalized(self) -> bool:
        return self.variant not in UNNORMALIZED


def make_config(variant: str, dof: int, joint_lower=None, joint_upper=None, lower=None, upper=None,
                kp=None, kd=None) -> ControllerConfig:
    """Build a controller with the default bounds for its variant."""
    n = action_dim(variant, dof)
    jl = -np.pi * np.ones(dof) if joint_lower is None else np.asarray(joint_lower, dtype=float)
    ju = np.pi * np.ones(dof) if joint_upper is None else np.asarray(joint_upper, dtype=float)
    if lower is None or upper is None:
        if variant == "joint_pos":
            lo, hi = jl, ju
        elif variant in ("joint_delta_pos", "joint_target_delta_pos"):
            lo, hi = -DEFAULT_JOINT_DELTA * np.ones(n), DEFAULT_JOINT_DELTA * np.ones(n)
        elif variant in ("ee_delta_pos", "ee_target_delta_pos"):
            lo, hi = -DEFAULT_EE_POS_DELTA * np.ones(3), DEFAULT_EE_POS_DELTA * np.ones(3)
        elif variant in ("ee_delta_pose", "ee_target_delta_pose"):
            b = np.r_[DEFAULT_EE_POS_DELTA * np.ones(3), DEFAULT_EE_ROT_DELTA * np.ones(3)]
            lo, hi = -b, b
        elif variant == "joint_vel":
            lo, hi = -DEFAULT_JOINT_VEL * np.ones(n), DEFAULT_JOINT_VEL * np.ones(n)
        elif variant == "joint_pos_vel":
            lo = np.r_[jl, -DEFAULT_JOINT_VEL * np.ones(dof)]
            hi = np.r_[ju, DEFAULT_JOINT_VEL * np.ones(dof)]
        elif variant == "joint_delta_pos_vel":
            b = np.r_[DEFAULT_JOINT_DELTA * np.ones(dof), DEFAULT_JOINT_VEL * np.ones(dof)]
            lo, hi = -b, b
        else:
            lo, hi = jl, ju
        lower = lo if lower is None else lower
        upper = hi if upper is None else upper
    if kp is None:
        kp = 0.0 if variant == "joint_vel" else DEFAULT_KP
    if kd is None:
        kd = DEFAULT_KD
    return ControllerConfig(variant, dof, lower, upper, kp, kd)


@dataclass
class ControllerState:
    q_target: np.ndarray
    ee_target: Optional[Pose] = None


def reset_state(cfg: ControllerConfig, q, chain: Optional[KinematicChain] = None) -> ControllerState:
    q = np.asarray(q, dtype=float).copy()
    ee = forward_kinematics(chain, q)[1] if chain is not None and cfg.variant != "gripper_pos" else None
    return ControllerState(q, ee)


@dataclass
class DriveInfo:
    clamped: bool = False
    ik_converged: bool = True


def denormalize(cfg: ControllerConfig, a):
    """Map a normalized action to physical units; returns ``(action, clamped)``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape[0] != cfg.action_dim:
        raise ValueError(f"{cfg.variant}: expected action of dim {cfg.action_dim}, got {a.shape[0]}")
    if not cfg.normalized:
        return a.copy(), False
    c = np.clip(a, -1.0, 1.0)
    clamped = bool(np.any(c != a))
    return cfg.lower + 0.5 * (c + 1.0) * (cfg.upper - cfg.lower), clamped


def normalize(cfg: ControllerConfig, phys):
    """Inverse of :func:`denormalize`; out-of-bound values are clamped and flagged."""
    phys = np.asarray(phys, dtype=float).reshape(-1)
    if not cfg.normalized:
        return phys.copy(), False
    c = np.clip(phys, cfg.lower, cfg.upper)
    span = cfg.upper - cfg.lower
    a = np.where(span > 0, 2.0 * (c - cfg.lower) / np.where(span > 0, span, 1.0) - 1.0, 0.0)
    return a, bool(np.any(c != phys))


def _ik(chain, target, q, rot_weight):
    res = inverse_kinematics(chain, target, q, rot_weight=rot_weight)
    return res.q, res.converged


def drive_targets(cfg: ControllerConfig, state: ControllerState, chain: Optional[KinematicChain], q, qdot,
                  tcp: Optional[Pose], action, normalized: bool = True):
    """Compute ``(q_target, qd_target, new_state, info)`` for one control step.

    With ``normalized=False`` the action is taken in physical units as is.
    """
    q = np.asarray(q, dtype=float)
    if normalized:
        a, clamped = denormalize(cfg, action)
    else:
        a, clamped = np.asarray(action, dtype=float).reshape(-1), False
        if a.shape[0] != cfg.action_dim:
            raise ValueError(f"{cfg.variant}: expected action of dim {cfg.action_dim}, got {a.shape[0]}")
    info = DriveInfo(clamped=clamped)
    n = cfg.dof
    qd_t = np.zeros(n)
    v = cfg.variant
    ee_t = None
    if v in ("joint_pos", "gripper_pos"):
        q_t = a.copy()
    elif v == "joint_delta_pos":
        q_t = q + a
    elif v == "joint_target_delta_pos":
        q_t = state.q_target + a
    elif v == "joint_vel":
        q_t, qd_t = q.copy(), a.copy()
    elif v == "joint_pos_vel":
        q_t, qd_t = a[:n].copy(), a[n:].copy()
    elif v == "joint_delta_pos_vel":
        q_t, qd_t = q + a[:n], a[n:].copy()
    else:
        base = state.ee_target if v.startswith("ee_target") else tcp
        if v in ("ee_delta_pose", "ee_target_delta_pose"):
            ee_t = compose(pose_from_twist(a), base)
            q_t, info.ik_converged = _ik(chain, ee_t, q, 1.0)
        else:
            ee_t = Pose(base.rotation, base.translation + a)
            q_t, info.ik_converged = _ik(chain, ee_t, q, 0.0)
    if ee_t is None and chain is not None and v != "gripper_pos":
        ee_t = forward_kinematics(chain, q_t)[1]
    return q_t, qd_t, ControllerState(q_t.copy(), ee_t), info


def pd_torque(q_target, qd_target, q, qdot, kp, kd) -> np.ndarray:
    """``tau = Kp (q_target - q) + Kd (qd_target - qdot)``"""
    return (np.asarray(kp) * (np.asarray(q_target) - np.asarray(q))
            + np.asarray(kd) * (np.asarray(qd_target) - np.asarray(qdot)))


@dataclass
class CompositeController:
    """Ordered controllers sharing one action vector (e.g. arm then gripper)."""

    components: list = field(default_factory=list)  # [(name, ControllerConfig)]

    def __post_init__(self):
        names = [n for n, _ in self.components]
        if len(set(names)) != len(names):
            raise ValueError("controller component names must be unique")

    @property
    def action_dim(self) -> int:
        return sum(c.action_dim for _, c in self.components)

    def slices(self) -> dict:
        out, s = {}, 0
        for name, c in self.components:
            out[name] = slice(s, s + c.action_dim)
            s += c.action_dim
        return out

    def get(self, name: str) -> Optional[ControllerConfig]:
        for n, c in self.components:
            if n == name:
                return c
        return None

    @property
    def id(self) -> str:
        return "+".join(f"{n}:{c.variant}" for n, c in self.components)

    def with_arm(self, cfg: ControllerConfig) -> "CompositeController":
        return CompositeController([(n, cfg if n == "arm" else c) for n, c in self.components])


def split_action(composite: CompositeController, a) -> dict:
    """Route slices of ``a`` to components; gripper slices become two equal finger targets."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape[0] != composite.action_dim:
        raise ValueError(f"action has dim {a.shape[0]}, controller expects {composite.action_dim}")
    out = {}
    for (name, cfg), (_, sl) in zip(composite.components, composite.slices().items()):
        part = a[sl].copy()
        if cfg.variant == "gripper_pos":
            out[name] = part
            out[name + "/fingers"] = np.array([part[0], part[0]])
        else:
            out[name] = part
    return out
