"""Free rigid bodies, kinematically driven robots, and wrench buffers.

Robot links are kinematic: they follow ``FK(q)`` exactly and record, but do
not react to, soft-body contact wrenches. Free props are dynamic and receive
the accumulated wrench one rigid step later.
"""
from __future__ import annotations

import copy as _copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (KinematicChain, Pose, compose, forward_kinematics, quat_from_rotvec, quat_multiply,
                       quat_to_rotvec, matrix_to_quat)
from .sdf import Shape

__all__ = [
    "WrenchBuffer",
    "RigidBody",
    "Gripper",
    "Robot",
    "Weld",
    "FloorContact",
    "integrate_free_body",
    "robot_drive_step",
    "body_point_velocity",
    "weld_wrench",
    "floor_wrench",
]


@dataclass
class WrenchBuffer:
    """Force (N) and torque about the body COM (N m)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def reset(self):
        self.force = np.zeros(3)
        self.torque = np.zeros(3)

    def add(self, force, torque):
        self.force = self.force + force
        self.torque = self.torque + torque

    def copy(self) -> "WrenchBuffer":
        return WrenchBuffer(self.force.copy(), self.torque.copy())

    def is_zero(self) -> bool:
        return not (np.any(self.force) or np.any(self.torque))


@dataclass
class RigidBody:
    name: str
    pose: Pose = field(default_factory=Pose)
    lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = 1.0
    inertia: np.ndarray = field(default_factory=lambda: np.ones(3))
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    shapes: list = field(default_factory=list)
    mode: str = "dynamic"

    def __post_init__(self):
        if self.mode not in ("dynamic", "kinematic"):
            raise ValueError(f"body mode must be 'dynamic' or 'kinematic', got {self.mode!r}")
        self.lin_vel = np.asarray(self.lin_vel, dtype=float).reshape(3)
        self.ang_vel = np.asarray(self.ang_vel, dtype=float).reshape(3)
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3)
        self.com = np.asarray(self.com, dtype=float).reshape(3)
        if self.mode == "dynamic" and (self.mass <= 0 or np.any(self.inertia <= 0)):
            raise ValueError(f"dynamic body {self.name!r} needs positive mass and inertia")

    @property
    def dynamic(self) -> bool:
        return self.mode == "dynamic"

    def world_com(self) -> np.ndarray:
        return self.pose.apply(self.com)

    def copy(self) -> "RigidBody":
        return _copy.copy(self)


def body_point_velocity(b: RigidBody, p) -> np.ndarray:
    """Velocity of world point(s) ``p`` rigidly attached to ``b``."""
    p = np.asarray(p, dtype=float)
    return b.lin_vel + np.cross(b.ang_vel, p - b.world_com())


def integrate_free_body(b: RigidBody, w: WrenchBuffer, gravity, dt: float) -> RigidBody:
    """Semi-implicit Euler step of the Newton-Euler equations.

    Velocities are updated first and the pose is advanced with the new twist.
    """
    if not b.dynamic:
        raise ValueError(f"body {b.name!r} is kinematic")
    R = b.pose.R
    v = b.lin_vel + dt * (np.asarray(gravity, dtype=float) + w.force / b.mass)
    wb = R.T @ b.ang_vel
    tb = R.T @ w.torque
    Iw = b.inertia * wb
    wb = wb + dt * (tb - np.cross(wb, Iw)) / b.inertia
    omega = R @ wb
    c = b.world_com() + dt * v
    q = quat_multiply(quat_from_rotvec(omega * dt), b.pose.rotation)
    q = q / np.linalg.norm(q)
    R_new = Pose(q).R
    out = b.copy()
    out.pose = Pose(q, c - R_new @ b.com)
    out.lin_vel = v
    out.ang_vel = omega
    return out


# ---------------------------------------------------------------------------
# robots
# ---------------------------------------------------------------------------
@dataclass
class Gripper:
    """Two mirrored prismatic fingers driven to the same target opening."""

    axis: np.ndarray
    lower: float
    upper: float
    offset: Pose = field(default_factory=Pose)
    finger_shapes: list = field(default_factory=list)

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float).reshape(3)
        self.axis = ax / np.linalg.norm(ax)
        if self.lower > self.upper:
            raise ValueError("gripper lower limit exceeds upper limit")

    def mirrored_shapes(self) -> list:
        out = []
        for s in self.finger_shapes:
            t = s.local_pose.translation
            t = t - 2.0 * np.dot(t, self.axis) * self.axis
            out.append(Shape(s.kind, s.params, Pose(s.local_pose.rotation, t), s.friction, s.k_n, s.k_t))
        return out


class Robot:
    """Serial arm with optional gripper, driven kinematically toward targets."""

    def __init__(self, chain: KinematicChain, q0, gripper: Optional[Gripper] = None, grip0: float = 0.0,
                 link_shapes=None, v_max=np.inf, name: str = "robot"):
        self.chain = chain
        self.gripper = gripper
        self.name = name
        n = chain.dof + (1 if gripper else 0)
        q0 = np.asarray(q0, dtype=float).reshape(-1)
        if len(q0) != chain.dof:
            raise ValueError(f"robot needs {chain.dof} initial joint positions, got {len(q0)}")
        self.q = np.concatenate([q0, [grip0]]) if gripper else q0.copy()
        self.qdot = np.zeros(n)
        self.v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (n,)).copy()
        link_shapes = link_shapes or {}
        self.links = [RigidBody(f"{name}/link{i}", mode="kinematic", shapes=list(link_shapes.get(i, [])))
                      for i in range(chain.dof)]
        self.fingers = []
        if gripper:
            self.fingers = [RigidBody(f"{name}/finger_left", mode="kinematic", shapes=list(gripper.finger_shapes)),
                            RigidBody(f"{name}/finger_right", mode="kinematic", shapes=gripper.mirrored_shapes())]
        self.limit_flag = False
        self._set_poses(self.q)

    @property
    def dof(self) -> int:
        return len(self.q)

    @property
    def arm_q(self) -> np.ndarray:
        return self.q[: self.chain.dof]

    @property
    def lower(self) -> np.ndarray:
        lo = self.chain.lower
        return np.concatenate([lo, [self.gripper.lower]]) if self.gripper else lo

    @property
    def upper(self) -> np.ndarray:
        hi = self.chain.upper
        return np.concatenate([hi, [self.gripper.upper]]) if self.gripper else hi

    def bodies(self) -> list:
        return self.links + self.fingers

    def tcp(self) -> Pose:
        return forward_kinematics(self.chain, self.arm_q)[1]

    def _finger_poses(self, last: Pose, grip: float):
        g = self.gripper
        left = compose(last, compose(g.offset, Pose.from_translation(g.axis * grip)))
        right = compose(last, compose(g.offset, Pose.from_translation(-g.axis * grip)))
        return [left, right]

    def _set_poses(self, q):
        links, _ = forward_kinematics(self.chain, q[: self.chain.dof])
        poses = list(links)
        if self.gripper:
            poses += self._finger_poses(links[-1], q[-1])
        for body, pose in zip(self.bodies(), poses):
            body.pose = pose
        return poses

    def copy(self) -> "Robot":
        r = _copy.copy(self)
        r.q = self.q.copy()
        r.qdot = self.qdot.copy()
        r.links = [b.copy() for b in self.links]
        r.fingers = [b.copy() for b in self.fingers]
        return r


def robot_drive_step(r: Robot, q_target, qd_target, dt: float, position_gain: Optional[float] = None,
                     disturbance=None) -> Robot:
    """Move joints toward the drive targets and refresh link poses/twists.

    ``q += clip(k (q_target - q) + qd_target, v_max) dt`` with ``k = 1/dt``
    unless overridden (0 for pure velocity drives). Joint limits clamp the
    result and set ``limit_flag``.
    """
    q_target = np.asarray(q_target, dtype=float).reshape(-1)
    qd_target = np.asarray(qd_target, dtype=float).reshape(-1)
    if q_target.shape[0] != r.dof or qd_target.shape[0] != r.dof:
        raise ValueError(f"drive targets must have {r.dof} entries")
    k = 1.0 / dt if position_gain is None else position_gain
    rate = np.clip(k * (q_target - r.q) + qd_target, -r.v_max, r.v_max)
    q_new = r.q + rate * dt
    if disturbance is not None:
        q_new = q_new + np.asarray(disturbance, dtype=float) * dt
    lo, hi = r.lower, r.upper
    clamped = np.clip(q_new, lo, hi)
    out = r.copy()
    out.limit_flag = bool(np.any(clamped != q_new) or np.any(q_target < lo) or np.any(q_target > hi))
    out.qdot = (clamped - r.q) / dt
    out.q = clamped
    old = [b.pose for b in r.bodies()]
    new = out._set_poses(clamped)
    for body, p0, p1 in zip(out.bodies(), old, new):
        body.lin_vel = (p1.apply(body.com) - p0.apply(body.com)) / dt
        body.ang_vel = quat_to_rotvec(matrix_to_quat(p1.R @ p0.R.T)) / dt
    return out


# ---------------------------------------------------------------------------
# attachments and floor contact for free props
# ---------------------------------------------------------------------------
@dataclass
class Weld:
    """Spring-damper holding a dynamic prop at a fixed pose relative to a robot link."""

    body: int
    link: int
    relative: Pose
    k_lin: float = 2000.0
    c_lin: float = 20.0
    k_ang: float = 1.0
    c_ang: float = 0.02


def weld_wrench(weld: Weld, body: RigidBody, link: RigidBody):
    target = compose(link.pose, weld.relative)
    c_tgt = target.apply(body.com)
    c = body.world_com()
    v_tgt = body_point_velocity(link, c_tgt)
    f = weld.k_lin * (c_tgt - c) + weld.c_lin * (v_tgt - body.lin_vel)
    err = quat_to_rotvec(matrix_to_quat(target.R @ body.pose.R.T))
    tau = weld.k_ang * err + weld.c_ang * (link.ang_vel - body.ang_vel)
    return f, tau


@dataclass
class FloorContact:
    """Penalty contact between dynamic props and a horizontal floor at ``height``."""

    height: float = 0.0
    k: float = 1e4
    c: float = 50.0
    friction: float = 0.5


def _support_points(body: RigidBody) -> np.ndarray:
    pts = []
    for s in body.shapes:
        T = compose(body.pose, s.local_pose)
        if s.kind == "box":
            he = s.params["half_extents"]
            corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]) * he
            pts.append(T.apply(corners))
        elif s.kind == "sphere":
            pts.append(T.translation[None] - [0.0, 0.0, s.params["radius"]])
        elif s.kind == "capsule":
            L, rad = s.params["half_length"], s.params["radius"]
            ends = T.apply(np.array([[0.0, 0.0, -L], [0.0, 0.0, L]]))
            pts.append(ends - [0.0, 0.0, rad])
    return np.concatenate(pts) if pts else np.zeros((0, 3))


def floor_wrench(body: RigidBody, floor: FloorContact):
    f_tot, t_tot = np.zeros(3), np.zeros(3)
    pts = _support_points(body)
    com = body.world_com()
    for p in pts:
        depth = floor.height - p[2]
        if depth <= 0:
            continue
        v = body_point_velocity(body, p)
        fn = max(floor.k * depth - floor.c * v[2], 0.0)
        vt = v - np.array([0.0, 0.0, v[2]])
        nt = np.linalg.norm(vt)
        ft = -min(floor.friction * fn, floor.c * nt) * vt / nt if nt > 0 else np.zeros(3)
        f = ft + np.array([0.0, 0.0, fn])
        f_tot += f
        t_tot += np.cross(p - com, f)
    return f_tot, t_tot
