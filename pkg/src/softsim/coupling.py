"""Two-way rigid/soft coupling and the nested environment step.

One ``env_step`` runs the controller once, then ``n_rigid`` rigid steps, each
followed by ``n_soft`` soft substeps. Contact forces computed during the soft
substeps are accumulated per body and applied to dynamic bodies at the next
rigid step.
"""
from __future__ import annotations

import copy as _copy
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .control import CompositeController, drive_targets, reset_state, split_action
from .geometry import Pose, compose
from .mpm.solver import LostParticleError, SimulationDiverged, SoftState, soft_substep
from .rigid import (FloorContact, Robot, WrenchBuffer, floor_wrench, integrate_free_body, robot_drive_step,
                    weld_wrench)
from .sdf import Shape, sdf_eval, sdf_gradient

__all__ = [
    "CouplingParams",
    "ShapeMirror",
    "StepReport",
    "World",
    "penalty_force",
    "penalty_particle",
    "penalty_grid",
    "sync_rigid_to_soft",
    "env_step",
]


@dataclass
class CouplingParams:
    mode: str = "particle"
    c_d: float = 10.0
    r_c: Optional[float] = None  # None: mode default, see World.r_c
    stability_caps: bool = True

    def __post_init__(self):
        if self.mode not in ("particle", "grid"):
            raise ValueError(f"coupling mode must be 'particle' or 'grid', got {self.mode!r}")
        if self.c_d < 0:
            raise ValueError("damping coefficient must be non-negative")


@dataclass
class ShapeMirror:
    """Soft-side copy of one body's collision shapes and motion."""

    body: int
    shapes: list
    pose: Pose
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    com: np.ndarray

    def shape_pose(self, s: Shape) -> Pose:
        return compose(self.pose, s.local_pose)

    def point_velocity(self, p) -> np.ndarray:
        return self.lin_vel + np.cross(self.ang_vel, np.asarray(p) - self.com)


@dataclass
class StepReport:
    rigid_steps: int = 0
    soft_steps: int = 0
    max_penetration: float = 0.0
    lost: int = 0
    clamped: bool = False
    ik_failed: bool = False
    limit: bool = False
    time: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class World:
    soft: SoftState
    bodies: list = field(default_factory=list)  # free and static props
    robot: Optional[Robot] = None
    controller: CompositeController = field(default_factory=CompositeController)
    n_rigid: int = 25
    n_soft: int = 2
    coupling: CouplingParams = field(default_factory=CouplingParams)
    welds: list = field(default_factory=list)
    floor: Optional[FloorContact] = None
    drive_disturbance: Optional[np.ndarray] = None
    lost_threshold: float = 0.01
    time: float = 0.0
    meta: dict = field(default_factory=dict)
    # instrumentation: on_rigid_step(world) after each sync, on_substep(world, info) after contact forces
    on_rigid_step: Optional[Callable] = None
    on_substep: Optional[Callable] = None

    def __post_init__(self):
        if self.n_rigid < 1 or self.n_soft < 1:
            raise ValueError("n_rigid and n_soft must be at least 1")
        names = [b.name for b in self.all_bodies()]
        if len(set(names)) != len(names):
            raise ValueError("body names must be unique")
        self.ctrl_states = self._reset_controller_states()
        nb = len(self.all_bodies())
        self.buffers = [WrenchBuffer() for _ in range(nb)]
        self.pending = [WrenchBuffer() for _ in range(nb)]
        self.mirrors: list[ShapeMirror] = []
        sync_rigid_to_soft(self)

    @property
    def dt_soft(self) -> float:
        return self.soft.dt

    @property
    def dt_rigid(self) -> float:
        return self.n_soft * self.soft.dt

    @property
    def dt_control(self) -> float:
        return self.n_rigid * self.dt_rigid

    @property
    def r_c(self) -> float:
        """Influence radius: half a cell for particles, zero for fixed grid nodes, unless configured."""
        if self.coupling.r_c is not None:
            return self.coupling.r_c
        return 0.5 * self.soft.grid.h if self.coupling.mode == "particle" else 0.0

    def all_bodies(self) -> list:
        return list(self.bodies) + (self.robot.bodies() if self.robot else [])

    def body_index(self, name: str) -> int:
        for i, b in enumerate(self.all_bodies()):
            if b.name == name:
                return i
        raise KeyError(name)

    def _reset_controller_states(self) -> dict:
        out = {}
        for name, cfg in self.controller.components:
            if self.robot is None:
                raise ValueError("controllers need a robot")
            if cfg.variant == "gripper_pos":
                out[name] = reset_state(cfg, self.robot.q[-1:])
            else:
                out[name] = reset_state(cfg, self.robot.arm_q, self.robot.chain)
        return out

    def reset_controller(self):
        self.ctrl_states = self._reset_controller_states()

    def copy(self) -> "World":
        hooks = self.on_rigid_step, self.on_substep
        self.on_rigid_step = self.on_substep = None
        try:
            w = _copy.deepcopy(self)
        finally:
            self.on_rigid_step, self.on_substep = hooks
        return w


# ---------------------------------------------------------------------------
# sync and contact
# ---------------------------------------------------------------------------
def sync_rigid_to_soft(w: World) -> World:
    """Copy body poses and twists into the shape mirrors and zero the wrench buffers."""
    mirrors = []
    for i, b in enumerate(w.all_bodies()):
        if b.shapes:
            mirrors.append(ShapeMirror(i, list(b.shapes), b.pose, b.lin_vel.copy(), b.ang_vel.copy(),
                                       b.world_com()))
    w.mirrors = mirrors
    for buf in w.buffers:
        buf.reset()
    return w


def penalty_force(phi, normal, v_rel, mass, k_n, k_t, c_d, mu, r_c, dt=None, approach=None):
    """Contact force on soft DOFs with signed distance ``phi`` (arrays over DOFs).

    Normal spring ``k_n (r_c - phi) n``, one-sided normal damping and
    Coulomb-capped viscous friction. With ``dt`` given, the spring stiffness is
    limited to ``m / dt**2`` and damping and friction are limited so that they
    cannot reverse the relative velocity in one step. ``approach`` (speeds
    toward the surface, with ``dt``) further caps the normal force at the
    impulse that just stops that approach.
    """
    phi = np.asarray(phi, dtype=float)
    n = np.asarray(normal, dtype=float)
    v_rel = np.asarray(v_rel, dtype=float)
    depth = np.maximum(r_c - phi, 0.0)
    k_eff = np.broadcast_to(np.asarray(k_n, dtype=float), phi.shape)
    if dt is not None:
        k_eff = np.minimum(k_eff, np.asarray(mass, dtype=float) / dt ** 2)
    fn_mag = k_eff * depth
    vn = np.einsum("ij,ij->i", v_rel, n)
    c_eff = np.broadcast_to(np.asarray(c_d, dtype=float), phi.shape)
    if dt is not None:
        c_eff = np.minimum(c_eff, np.asarray(mass, dtype=float) / dt)
    fn_mag = fn_mag - c_eff * np.minimum(vn, 0.0)
    if dt is not None and approach is not None:
        fn_mag = np.minimum(fn_mag, np.asarray(mass, dtype=float) * np.maximum(approach, 0.0) / dt)
    f = fn_mag[:, None] * n
    vt = v_rel - vn[:, None] * n
    vt_mag = np.sqrt(np.einsum("ij,ij->i", vt, vt))
    ft_mag = np.minimum(mu * fn_mag, k_t * vt_mag)
    if dt is not None:
        ft_mag = np.minimum(ft_mag, np.asarray(mass, dtype=float) * vt_mag / dt)
    safe = np.where(vt_mag > 0, vt_mag, 1.0)
    f -= (ft_mag / safe)[:, None] * vt
    return np.where((phi < r_c)[:, None], f, 0.0)


def _candidates(m: ShapeMirror, s: Shape, x, idx, r_c):
    R = s.bounding_radius()
    if not np.isfinite(R):
        return idx
    c = m.shape_pose(s).translation
    d2 = np.sum((x[idx] - c) ** 2, axis=1)
    return idx[d2 < (R + r_c) ** 2]


def _contact_pass(w: World, x, v, mass, idx, dt, weight, scale=None, v_pred=None):
    """Forces for DOFs ``idx`` at positions ``x``; returns (force array, per-body records, max depth).

    ``scale`` multiplies the contact coefficients per DOF (grid nodes);
    ``v_pred`` is the contact-free end-of-step velocity used for the approach cap.
    """
    out = np.zeros_like(x)
    records = []
    r_c = w.r_c
    caps = dt if w.coupling.stability_caps else None
    max_depth = 0.0
    for m in w.mirrors:
        for s in m.shapes:
            c = _candidates(m, s, x, idx, r_c)
            if not len(c):
                continue
            phi = sdf_eval(s, x[c], m.pose)
            near = phi < r_c
            if not near.any():
                continue
            c, phi = c[near], phi[near]
            max_depth = max(max_depth, float(np.max(-phi, initial=0.0)))
            nrm = sdf_gradient(s, x[c], m.pose)
            v_rel = v[c] - m.point_velocity(x[c])
            k = 1.0 if scale is None else scale[c]
            approach = None
            if v_pred is not None:
                approach = -np.einsum("ij,ij->i", v_pred[c] - m.point_velocity(x[c]), nrm)
            f = penalty_force(phi, nrm, v_rel, mass[c], s.k_n * k, s.k_t * k, w.coupling.c_d * k, s.friction, r_c,
                              caps, approach)
            out[c] += f
            react = -f.sum(axis=0)
            torque = np.cross(x[c] - m.com, -f).sum(axis=0)
            w.buffers[m.body].add(react * weight, torque * weight)
            records.append((m.body, c, f))
    return out, records, max_depth


def _penetration(w: World, x, idx) -> float:
    depth = 0.0
    for m in w.mirrors:
        for s in m.shapes:
            c = _candidates(m, s, x, idx, 0.0)
            if len(c):
                depth = max(depth, float(np.max(-sdf_eval(s, x[c], m.pose), initial=0.0)))
    return depth


def penalty_particle(w: World, dt: float, weight: float = 1.0) -> dict:
    """Add contact forces to particle external forces and accumulate reactions.

    Reactions are added to the wrench buffers scaled by ``weight``.
    """
    P = w.soft.particles
    idx = np.nonzero(P.active)[0]
    f, records, depth = _contact_pass(w, P.x, P.v, P.mass, idx, dt, weight)
    P.fext += f
    return {"records": records, "max_penetration": depth, "mode": "particle"}


def penalty_grid(w: World, dt: float, weight: float = 1.0) -> dict:
    """Contact forces evaluated at grid nodes carrying mass.

    Coefficients are per particle, so each node scales them by its mass over
    the mean particle mass; a node carrying one particle's mass feels exactly
    the particle-mode force. Nodes cannot move out of a surface, so with
    stability caps on the normal force is also limited to what stops the
    node's predicted approach within the step.
    """
    g = w.soft.grid
    flat_m = g.mass.reshape(-1)
    idx = np.nonzero(flat_m > 0)[0]
    nodes = np.indices(g.dims).reshape(3, -1).T
    x = g.origin + g.h * nodes.astype(float)
    vel = np.zeros_like(x)
    vel[idx] = g.momentum.reshape(-1, 3)[idx] / flat_m[idx, None]
    P = w.soft.particles
    m_ref = float(P.mass[P.active].mean()) if P.active.any() else 1.0
    v_pred = None
    if w.coupling.stability_caps:
        v_pred = vel + dt * np.asarray(w.soft.gravity, dtype=float)
        v_pred[idx] += dt * g.force.reshape(-1, 3)[idx] / flat_m[idx, None]
    f, records, _ = _contact_pass(w, x, vel, flat_m, idx, dt, weight, flat_m / m_ref, v_pred)
    g.force += f.reshape(g.force.shape)
    depth = _penetration(w, P.x, np.nonzero(P.active)[0])
    return {"records": records, "max_penetration": depth, "mode": "grid"}


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------
def _drive_targets(w: World, action):
    r = w.robot
    dt = w.dt_rigid
    if r is None:
        if np.size(action):
            raise ValueError("scene has no robot; action must be empty")
        return None, None, None, (False, False)
    parts = split_action(w.controller, action)
    q_t, qd_t = r.q.copy(), np.zeros(r.dof)
    gain = np.full(r.dof, 1.0 / dt)
    clamped = ik_failed = False
    new_states = {}
    for name, cfg in w.controller.components:
        st = w.ctrl_states[name]
        if cfg.variant == "gripper_pos":
            qt, qdt, ns, info = drive_targets(cfg, st, None, r.q[-1:], r.qdot[-1:], None, parts[name])
            q_t[-1], qd_t[-1] = qt[0], qdt[0]
        else:
            na = r.chain.dof
            qt, qdt, ns, info = drive_targets(cfg, st, r.chain, r.arm_q, r.qdot[:na], r.tcp(), parts[name])
            q_t[:na], qd_t[:na] = qt, qdt
            if cfg.variant == "joint_vel":
                gain[:na] = 0.0
        new_states[name] = ns
        clamped |= info.clamped
        ik_failed |= not info.ik_converged
    w.ctrl_states = new_states
    return q_t, qd_t, gain, (clamped, ik_failed)


def _rigid_step(w: World, q_t, qd_t, gain, report: StepReport):
    dt = w.dt_rigid
    if w.robot is not None and q_t is not None:
        w.robot = robot_drive_step(w.robot, q_t, qd_t, dt, position_gain=gain, disturbance=w.drive_disturbance)
        report.limit |= w.robot.limit_flag
    links = w.all_bodies()
    new_bodies = []
    for i, b in enumerate(w.bodies):
        if not b.dynamic:
            new_bodies.append(b)
            continue
        wr = w.pending[i].copy()
        for weld in w.welds:
            if weld.body == i:
                f, t = weld_wrench(weld, b, links[weld.link])
                wr.add(f, t)
        if w.floor is not None:
            f, t = floor_wrench(b, w.floor)
            wr.add(f, t)
        nb = integrate_free_body(b, wr, w.soft.gravity, dt)
        if not (np.all(np.isfinite(nb.pose.translation)) and np.all(np.isfinite(nb.lin_vel))):
            raise SimulationDiverged(-1, f"non-finite state of body {b.name!r}")
        new_bodies.append(nb)
    w.bodies = new_bodies


def env_step(w: World, action) -> tuple[World, StepReport]:
    """Advance the world by one control step (mutates and returns ``w``)."""
    action = np.asarray(action, dtype=float).reshape(-1)
    if action.shape[0] != w.controller.action_dim:
        raise ValueError(f"action has dim {action.shape[0]}, controller expects {w.controller.action_dim}")
    report = StepReport()
    q_t, qd_t, gain, (report.clamped, report.ik_failed) = _drive_targets(w, action)
    penalty = penalty_particle if w.coupling.mode == "particle" else penalty_grid
    weight = 1.0 / w.dt_rigid
    lost0 = w.soft.lost

    def hook(state, dt):
        info = penalty(w, dt, weight * dt)
        info["dt"] = dt
        report.max_penetration = max(report.max_penetration, info["max_penetration"])
        if w.on_substep is not None:
            w.on_substep(w, info)

    for _ in range(w.n_rigid):
        _rigid_step(w, q_t, qd_t, gain, report)
        sync_rigid_to_soft(w)
        if w.on_rigid_step is not None:
            w.on_rigid_step(w)
        for _ in range(w.n_soft):
            if w.coupling.mode == "particle":
                soft_substep(w.soft, particle_hook=hook)
            else:
                soft_substep(w.soft, grid_hook=hook)
            report.soft_steps += 1
        w.pending = [b.copy() for b in w.buffers]
        report.rigid_steps += 1
    w.time += w.n_rigid * w.n_soft * w.soft.dt
    report.time = w.time
    report.lost = w.soft.lost - lost0
    n = w.soft.particles.n
    if n and w.soft.lost > w.lost_threshold * n:
        P = w.soft.particles
        raise LostParticleError(np.nonzero(~P.active)[0])
    return w, report

