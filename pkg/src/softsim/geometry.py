"""SE(3) poses, serial kinematic chains, forward and inverse kinematics.

Quaternions are stored scalar-first ``(w, x, y, z)`` and canonicalized to
``w >= 0``. Pose products follow the homogeneous-matrix convention:
``compose(a, b)`` is the transform ``a @ b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Pose",
    "Twist6",
    "Joint",
    "KinematicChain",
    "JointState",
    "compose",
    "inverse",
    "pose_from_twist",
    "twist_from_pose",
    "forward_kinematics",
    "jacobian",
    "inverse_kinematics",
    "IKResult",
    "rotation_error",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_multiply",
    "quat_from_rotvec",
    "quat_to_rotvec",
    "panda_chain",
    "PANDA_HOME",
]


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------
def _canonical(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Rotation matrix to canonical unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return _canonical(q)


def quat_from_rotvec(r):
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta < 1e-8:
        # second-order series keeps the map smooth through zero
        s = 0.5 - theta * theta / 48.0
        return _canonical(np.concatenate([[np.cos(0.5 * theta)], s * r]))
    return _canonical(np.concatenate([[np.cos(0.5 * theta)], np.sin(0.5 * theta) / theta * r]))


def quat_to_rotvec(q):
    q = _canonical(q)
    vn = float(np.linalg.norm(q[1:]))
    if vn < 1e-12:
        return 2.0 * q[1:] / q[0]
    theta = 2.0 * np.arctan2(vn, q[0])
    return theta / vn * q[1:]


# ---------------------------------------------------------------------------
# poses
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotation as a unit quaternion plus translation (m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _canonical(self.rotation))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_translation(cls, p) -> "Pose":
        return cls(translation=p)

    @classmethod
    def from_rotvec(cls, r, p=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(quat_from_rotvec(r), p)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def p(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def apply(self, pts) -> np.ndarray:
        """Transform a point or an (N, 3) array of points."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.R.T + self.translation

    def apply_inverse(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (pts - self.translation) @ self.R

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def as_array(self) -> np.ndarray:
        """``[x, y, z, qw, qx, qy, qz]``"""
        return np.concatenate([self.translation, self.rotation])

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float)
        return cls(a[3:7], a[:3])

    def __repr__(self):
        return f"Pose(rotation={np.round(self.rotation, 6).tolist()}, translation={np.round(self.translation, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(quat_multiply(a.rotation, b.rotation), a.R @ b.translation + a.translation)


def inverse(a: Pose) -> Pose:
    qi = a.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return Pose(qi, -(a.R.T @ a.translation))


def rotation_error(Ra, Rb) -> float:
    """Geodesic angle between two rotation matrices."""
    c = 0.5 * (np.trace(Ra @ Rb.T) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True, eq=False)
class Twist6:
    """A delta pose as translation plus compact axis-angle rotation."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        r = np.array(self.rotation, dtype=float).reshape(3)
        n = np.linalg.norm(r)
        if n > np.pi:
            r = r * (1.0 - 2.0 * np.pi / n)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)

    @classmethod
    def from_vector(cls, a) -> "Twist6":
        a = np.asarray(a, dtype=float)
        return cls(a[:3], a[3:6])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])


def pose_from_twist(t) -> Pose:
    """Delta pose: rotation = exp(axis-angle), translation copied verbatim."""
    if not isinstance(t, Twist6):
        t = Twist6.from_vector(t)
    return Pose(quat_from_rotvec(t.rotation), t.translation)


def twist_from_pose(p: Pose) -> Twist6:
    return Twist6(p.translation, quat_to_rotvec(p.rotation))


# ---------------------------------------------------------------------------
# kinematic chains
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Joint:
    kind: str  # "revolute" | "prismatic"
    offset: Pose
    axis: np.ndarray
    lower: float
    upper: float
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint type {self.kind!r}")
        ax = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(ax)
        if n == 0.0:
            raise ValueError("joint axis must be non-zero")
        object.__setattr__(self, "axis", ax / n)
        if self.lower > self.upper:
            raise ValueError(f"joint {self.name!r}: lower limit exceeds upper limit")

    def motion(self, q: float) -> Pose:
        if self.kind == "revolute":
            return Pose.from_rotvec(self.axis * q)
        return Pose.from_translation(self.axis * q)


@dataclass(frozen=True, eq=False)
class KinematicChain:
    joints: tuple
    tcp: Pose = field(default_factory=Pose)
    base: Pose = field(default_factory=Pose)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    def clamp(self, q) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot must have the same dimension")


def _check_dim(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != chain.dof:
        raise ValueError(f"expected {chain.dof} joint positions, got {q.shape[0]}")
    return q


def _fk_frames(chain: KinematicChain, q):
    T = chain.base
    links, axes, origins = [], [], []
    for joint, qi in zip(chain.joints, q):
        T = compose(T, joint.offset)
        axes.append(T.R @ joint.axis)
        origins.append(T.translation.copy())
        T = compose(T, joint.motion(qi))
        links.append(T)
    return links, axes, origins, compose(T, chain.tcp)


def forward_kinematics(chain: KinematicChain, q):
    """Return ``(link_poses, tcp_pose)`` for joint positions ``q``."""
    q = _check_dim(chain, q)
    links, _, _, tcp = _fk_frames(chain, q)
    return links, tcp


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric 6xN Jacobian of the TCP, linear rows first, world frame."""
    q = _check_dim(chain, q)
    _, axes, origins, tcp = _fk_frames(chain, q)
    J = np.zeros((6, chain.dof))
    for i, (joint, a, o) in enumerate(zip(chain.joints, axes, origins)):
        if joint.kind == "revolute":
            J[:3, i] = np.cross(a, tcp.translation - o)
            J[3:, i] = a
        else:
            J[:3, i] = a
    return J


@dataclass
class IKResult:
    q: np.ndarray
    converged: bool
    iterations: int
    pos_error: float
    rot_error: float


def inverse_kinematics(
    chain: KinematicChain,
    target: Pose,
    q0,
    damping: float = 1e-2,
    max_iter: int = 200,
    tol: float = 1e-5,
    rot_weight: float = 1.0,
    max_step: float = 0.5,
    pos_tol: float = 1e-4,
    rot_tol: float = 1e-3,
) -> IKResult:
    """Damped least-squares IK.

    Never raises on failure: the best iterate found is returned with
    ``converged=False``. With ``rot_weight=0`` only the position is solved.
    """
    q = chain.clamp(_check_dim(chain, q0).copy())
    lam2 = damping * damping
    w = np.array([1.0, 1.0, 1.0, rot_weight, rot_weight, rot_weight])
    Rt = target.R

    def residual(qc):
        _, tcp = forward_kinematics(chain, qc)
        dp = target.translation - tcp.translation
        dr = quat_to_rotvec(matrix_to_quat(Rt @ tcp.R.T))
        return np.concatenate([dp, dr])

    e = residual(q)
    best_q, best_err = q.copy(), np.linalg.norm(w * e)
    it = 0
    for it in range(1, max_iter + 1):
        err = np.linalg.norm(w * e)
        if err < tol:
            it -= 1
            break
        J = jacobian(chain, q) * w[:, None]
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(6), w * e)
        n = np.linalg.norm(dq)
        if n > max_step:
            dq *= max_step / n
        q = chain.clamp(q + dq)
        e = residual(q)
        err = np.linalg.norm(w * e)
        if err < best_err:
            best_q, best_err = q.copy(), err
    pos_err = float(np.linalg.norm(residual(best_q)[:3]))
    rot_err = float(np.linalg.norm(residual(best_q)[3:]))
    ok = pos_err <= pos_tol and (rot_weight == 0.0 or rot_err <= rot_tol)
    return IKResult(best_q, bool(ok), it, pos_err, rot_err)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------
def _rx(a):
    return Pose.from_rotvec([a, 0.0, 0.0])


def panda_chain(base: Pose | None = None) -> KinematicChain:
    """Franka Emika Panda arm (modified DH), TCP between the fingertips."""
    a = [0.0, 0.0, 0.0, 0.0825, -0.0825, 0.0, 0.088]
    d = [0.333, 0.0, 0.316, 0.0, 0.384, 0.0, 0.0]
    alpha = [0.0, -np.pi / 2, np.pi / 2, np.pi / 2, -np.pi / 2, np.pi / 2, np.pi / 2]
    lim = [(-2.8973, 2.8973), (-1.7628, 1.7628), (-2.8973, 2.8973), (-3.0718, -0.0698),
           (-2.8973, 2.8973), (-0.0175, 3.7525), (-2.8973, 2.8973)]
    joints = []
    for i in range(7):
        off = compose(_rx(alpha[i]), Pose.from_translation([a[i], 0.0, d[i]]))
        joints.append(Joint("revolute", off, [0, 0, 1], lim[i][0], lim[i][1], f"panda_joint{i + 1}"))
    tcp = compose(Pose.from_translation([0, 0, 0.107]),
                  compose(Pose.from_rotvec([0, 0, -np.pi / 4]), Pose.from_translation([0, 0, 0.1034])))
    return KinematicChain(joints, tcp, base or Pose())


PANDA_HOME = np.array([0.0, np.pi / 8, 0.0, -5 * np.pi / 8, 0.0, 3 * np.pi / 4, np.pi / 4])


def chain_from_joints(joints: Sequence[dict], tcp: Pose | None = None, base: Pose | None = None) -> KinematicChain:
    out = []
    for i, j in enumerate(joints):
        out.append(Joint(j["type"], j.get("offset", Pose()), j["axis"], j["limits"][0], j["limits"][1],
                         j.get("name", f"joint{i}")))
    return KinematicChain(out, tcp or Pose(), base or Pose())
