"""Demonstration trajectories: storage, closed-loop action conversion, replay.

Conversion re-expresses joint-position demonstrations in another action
space. The target action is computed against the live target world, so
execution errors are corrected at every step rather than accumulated.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .control import (CompositeController, ControllerConfig, JOINT_POSITION_FAMILY, make_config, normalize)
from .coupling import World, env_step
from .geometry import Pose, compose, forward_kinematics, inverse, rotation_error, twist_from_pose
from .mpm.solver import LostParticleError, SimulationDiverged, state_digest

__all__ = [
    "Trajectory",
    "ConversionReport",
    "ReplayResult",
    "TrajectoryFormatError",
    "controller_from_id",
    "source_targets",
    "convert_action",
    "convert_trajectory",
    "record_rollout",
    "replay_verify",
    "write_trajectory",
    "read_trajectory",
]

MAGIC = b"MSTRAJ1"
VERSION = 1
FLAG_STATES = 1


@dataclass
class Trajectory:
    """Actions of one demonstration, plus optional per-step robot states.

    ``scene`` names the world the demonstration starts from (a scene file or
    ``golden:NAME``). ``tcp`` rows are ``[x, y, z, qw, qx, qy, qz]`` after each
    step; ``q`` rows are joint positions after each step.
    """

    controller_id: str
    dt: float
    actions: np.ndarray
    scene: str = ""
    tcp: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=np.float32)
        if a.ndim == 1:
            a = a.reshape(len(a), -1) if len(a) else a.reshape(0, 0)
        self.actions = np.ascontiguousarray(a)
        if (self.tcp is None) != (self.q is None):
            raise ValueError("recorded states need both tcp and q")
        if self.tcp is not None:
            self.tcp = np.ascontiguousarray(self.tcp, dtype=np.float64).reshape(-1, 7)
            self.q = np.ascontiguousarray(self.q, dtype=np.float64)
            self.q = self.q.reshape(len(self.q), -1)
            if len(self.tcp) != len(self.actions) or len(self.q) != len(self.actions):
                raise ValueError("recorded states must align one-to-one with actions")

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def dim(self) -> int:
        return self.actions.shape[1] if self.actions.ndim == 2 else 0

    @property
    def has_states(self) -> bool:
        return self.tcp is not None

    def truncated(self, n: int) -> "Trajectory":
        return Trajectory(self.controller_id, self.dt, self.actions[:n], self.scene,
                          None if self.tcp is None else self.tcp[:n], None if self.q is None else self.q[:n])


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------
class TrajectoryFormatError(ValueError):
    pass


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def write_trajectory(traj: Trajectory, path) -> None:
    flags = FLAG_STATES if traj.has_states else 0
    out = [MAGIC, struct.pack("<II", VERSION, flags), _pack_str(traj.controller_id), _pack_str(traj.scene),
           struct.pack("<IId", traj.dim, traj.steps, traj.dt), traj.actions.astype("<f4").tobytes()]
    if traj.has_states:
        out.append(struct.pack("<I", traj.q.shape[1]))
        out.append(traj.tcp.astype("<f8").tobytes())
        out.append(traj.q.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TrajectoryFormatError(f"truncated trajectory file: {what} needs {n} bytes at byte offset "
                                        f"{self.pos}, only {len(self.data) - self.pos} left")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<I", what + " length")
        return self.take(n, what).decode("utf-8")


def read_trajectory(path) -> Trajectory:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise TrajectoryFormatError("not a trajectory file (bad magic)")
    version, flags = r.unpack("<II", "header")
    if version != VERSION:
        raise TrajectoryFormatError(f"unsupported trajectory version {version}")
    if flags & ~FLAG_STATES:
        raise TrajectoryFormatError(f"unknown header flags {flags:#x}")
    cid = r.string("controller id")
    scene = r.string("scene reference")
    dim, steps, dt = r.unpack("<IId", "header")
    acts = np.frombuffer(r.take(4 * dim * steps, "actions"), dtype="<f4").reshape(steps, dim)
    tcp = q = None
    if flags & FLAG_STATES:
        (nq,) = r.unpack("<I", "state header")
        tcp = np.frombuffer(r.take(8 * 7 * steps, "tcp states"), dtype="<f8").reshape(steps, 7)
        q = np.frombuffer(r.take(8 * nq * steps, "joint states"), dtype="<f8").reshape(steps, nq)
    if r.pos != len(r.data):
        raise TrajectoryFormatError(f"{len(r.data) - r.pos} trailing bytes at byte offset {r.pos}")
    return Trajectory(cid, dt, acts.astype(np.float32), scene, tcp, q)


# ---------------------------------------------------------------------------
# conversion
# ---------------------------------------------------------------------------
def controller_from_id(cid: str, robot) -> CompositeController:
    """Rebuild a composite controller (default bounds) from its id string."""
    comps = []
    for part in cid.split("+") if cid else []:
        name, _, variant = part.partition(":")
        if variant == "gripper_pos":
            g = robot.gripper
            comps.append((name, make_config(variant, 1, lower=[g.lower], upper=[g.upper])))
        else:
            comps.append((name, make_config(variant, robot.chain.dof, robot.chain.lower, robot.chain.upper)))
    return CompositeController(comps)


def source_targets(traj: Trajectory, src: ControllerConfig, q0, arm: slice) -> np.ndarray:
    """Desired arm configurations of a joint-position-family demonstration."""
    if src.variant not in JOINT_POSITION_FAMILY:
        raise ValueError(f"source controller must be joint-position family, got {src.variant}")
    out = np.zeros((traj.steps, src.dof))
    prev_target = np.asarray(q0, dtype=float).copy()
    for t in range(traj.steps):
        a = traj.actions[t, arm].astype(float)
        if src.normalized:
            a = src.lower + 0.5 * (np.clip(a, -1, 1) + 1.0) * (src.upper - src.lower)
        if src.variant == "joint_pos":
            out[t] = a
        elif src.variant == "joint_target_delta_pos":
            out[t] = prev_target + a
        else:
            if not traj.has_states:
                raise ValueError("joint_delta_pos sources need recorded joint states")
            q_prev = np.asarray(q0, dtype=float) if t == 0 else traj.q[t - 1, :src.dof]
            out[t] = q_prev + a
        prev_target = out[t]
    return out


def _physical_target_action(tgt: ControllerConfig, q_des, T_des: Pose, q, T: Pose, prev_q_target,
                            prev_T_target: Optional[Pose], dt_control: float) -> np.ndarray:
    v = tgt.variant
    if v == "joint_pos":
        return q_des.copy()
    if v == "joint_delta_pos":
        return q_des - q
    if v == "joint_target_delta_pos":
        return q_des - prev_q_target
    if v == "joint_vel":
        return (q_des - q) / dt_control
    if v == "joint_pos_vel":
        return np.r_[q_des, np.zeros(tgt.dof)]
    if v == "joint_delta_pos_vel":
        return np.r_[q_des - q, np.zeros(tgt.dof)]
    ref = prev_T_target if v.startswith("ee_target") else T
    if v in ("ee_delta_pose", "ee_target_delta_pose"):
        return twist_from_pose(compose(T_des, inverse(ref))).vector()
    return T_des.translation - ref.translation


def convert_action(src_action, src_cfg: ControllerConfig, tgt_cfg: ControllerConfig, tgt_world: World,
                   q_src_prev=None, src_prev_target=None, reference: Optional[Pose] = None, arm: str = "arm"):
    """Convert one arm action into the target controller's normalized action space.

    ``q_src_prev`` and ``src_prev_target`` supply what delta-family sources
    need to recover the desired configuration. ``reference`` overrides the
    live target TCP (the open-loop variant passes the source TCP here).
    Returns ``(action, saturated, q_des, T_des)``.
    """
    a = np.asarray(src_action, dtype=float).reshape(-1)
    if src_cfg.variant not in JOINT_POSITION_FAMILY:
        raise ValueError(f"source controller must be joint-position family, got {src_cfg.variant}")
    if src_cfg.normalized:
        a = src_cfg.lower + 0.5 * (np.clip(a, -1, 1) + 1.0) * (src_cfg.upper - src_cfg.lower)
    if src_cfg.variant == "joint_pos":
        q_des = a
    elif src_cfg.variant == "joint_delta_pos":
        q_des = np.asarray(q_src_prev, dtype=float) + a
    else:
        q_des = np.asarray(src_prev_target, dtype=float) + a
    r = tgt_world.robot
    T_des = forward_kinematics(r.chain, q_des)[1]
    st = tgt_world.ctrl_states[arm]
    T = r.tcp() if reference is None else reference
    phys = _physical_target_action(tgt_cfg, q_des, T_des, r.arm_q.copy(), T, st.q_target, st.ee_target,
                                   tgt_world.dt_control)
    act, saturated = normalize(tgt_cfg, phys)
    return act, saturated, q_des, T_des


@dataclass
class ConversionReport:
    pos_error: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rot_error: np.ndarray = field(default_factory=lambda: np.zeros(0))
    saturated: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    success: bool = True
    failure_step: Optional[int] = None
    final_pos_error: float = 0.0
    final_rot_error: float = 0.0
    message: str = ""


def convert_trajectory(traj: Trajectory, tgt_cfg: ControllerConfig, world_factory: Callable[[], World],
                       closed_loop: bool = True, pos_tol: float = 5e-3, arm: str = "arm"):
    """Convert ``traj`` to ``tgt_cfg`` by stepping a fresh target world.

    Errors are measured between the target TCP after each step and the
    source's desired pose ``FK(q_des)``. Success means the final position
    error is below ``pos_tol`` (rotation is reported, not gated). The
    open-loop variant references the recorded source TCP instead of the live
    target TCP and therefore needs recorded states.
    """
    world = world_factory()
    src_comp = controller_from_id(traj.controller_id, world.robot)
    src_cfg = src_comp.get(arm)
    sl = src_comp.slices()[arm]
    world.controller = src_comp.with_arm(tgt_cfg)
    world.reset_controller()
    tgt_comp = world.controller
    tgt_sl = tgt_comp.slices()
    if traj.steps and traj.dim != src_comp.action_dim:
        raise ValueError(f"trajectory dim {traj.dim} does not match {traj.controller_id}")
    if not closed_loop and not traj.has_states and traj.steps:
        raise ValueError("open-loop conversion needs recorded source states")
    q0 = world.robot.arm_q.copy()
    T0 = world.robot.tcp()
    q_prev, prev_target = q0.copy(), q0.copy()
    rows, pe, re, sat = [], [], [], []
    report = ConversionReport()
    for t in range(traj.steps):
        ref = None
        if not closed_loop:
            ref = T0 if t == 0 else Pose.from_array(traj.tcp[t - 1])
        a_arm, s, q_des, T_des = convert_action(traj.actions[t, sl], src_cfg, tgt_cfg, world, q_prev,
                                                prev_target, ref, arm)
        full = np.zeros(tgt_comp.action_dim)
        for name, _ in tgt_comp.components:
            full[tgt_sl[name]] = a_arm if name == arm else traj.actions[t, src_comp.slices()[name]]
        try:
            env_step(world, full)
        except (SimulationDiverged, LostParticleError) as e:
            report.success = False
            report.failure_step = t
            report.message = f"diverged at step {t}: {e}"
            break
        rows.append(full)
        tcp = world.robot.tcp()
        pe.append(float(np.linalg.norm(tcp.translation - T_des.translation)))
        re.append(rotation_error(tcp.R, T_des.R))
        sat.append(s)
        q_prev = traj.q[t, :src_cfg.dof] if traj.has_states else q_des
        prev_target = q_des
    out = Trajectory(tgt_comp.id, traj.dt, np.array(rows, dtype=np.float32).reshape(len(rows), tgt_comp.action_dim),
                     traj.scene)
    report.pos_error = np.array(pe)
    report.rot_error = np.array(re)
    report.saturated = np.array(sat, dtype=bool)
    if pe:
        report.final_pos_error = pe[-1]
        report.final_rot_error = re[-1]
        if report.failure_step is None and report.final_pos_error >= pos_tol:
            report.success = False
            report.failure_step = int(np.argmax(report.pos_error >= pos_tol))
            report.message = f"final TCP error {report.final_pos_error:.3g} m"
    return out, report


def record_rollout(world: World, actions, scene: str = "") -> Trajectory:
    """Step ``world`` through ``actions`` and return the trajectory with states."""
    actions = np.asarray(actions, dtype=np.float32)
    tcp, q = [], []
    for a in actions:
        env_step(world, a)
        if world.robot is not None:
            tcp.append(world.robot.tcp().as_array())
            q.append(world.robot.q.copy())
    if world.robot is None:
        return Trajectory(world.controller.id, world.dt_control, actions, scene)
    return Trajectory(world.controller.id, world.dt_control, actions, scene,
                      np.array(tcp).reshape(-1, 7), np.array(q).reshape(len(q), -1))


@dataclass
class ReplayResult:
    success: bool
    value: float
    steps: int
    truncated: bool
    digest: str
    message: str = ""
    world: Optional[World] = None


def replay_verify(traj: Trajectory, world_factory: Callable[[], World], metric: Callable, on_step=None) -> ReplayResult:
    """Replay ``traj`` and evaluate ``metric(world) -> (value, success)`` at the last step reached."""
    world = world_factory()
    if world.controller.id != traj.controller_id:
        raise ValueError(f"trajectory controller {traj.controller_id!r} does not match scene "
                         f"controller {world.controller.id!r}")
    steps, msg = 0, ""
    for t in range(traj.steps):
        try:
            _, rep = env_step(world, traj.actions[t])
        except (SimulationDiverged, LostParticleError) as e:
            msg = f"stopped at step {t}: {e}"
            break
        steps += 1
        if on_step is not None:
            on_step(world, rep)
    value, ok = metric(world)
    return ReplayResult(bool(ok), float(value), steps, steps < traj.steps, state_digest(world.soft), msg, world)
