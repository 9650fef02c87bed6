"""Particle/grid state and the MLS-MPM substep pipeline."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from . import kernels
from .constitutive import Material

__all__ = [
    "Particles",
    "MpmGrid",
    "SoftState",
    "LostParticleError",
    "SimulationDiverged",
    "CFLViolation",
    "clear_grid",
    "p2g",
    "grid_update",
    "g2p_advect",
    "soft_substep",
    "freeze_lost",
    "find_lost",
    "bspline_weights",
    "kinetic_energy",
    "seed_box",
    "set_threads",
]

FACES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")
CFL_NUMBER = 0.4
MAX_HALVINGS = 4


class LostParticleError(RuntimeError):
    def __init__(self, indices):
        self.indices = np.asarray(indices)
        super().__init__(f"{len(self.indices)} particle(s) outside the grid domain, first index {self.indices[:1].tolist()}")


class SimulationDiverged(RuntimeError):
    def __init__(self, index: int, what: str = "non-finite particle state"):
        self.index = int(index)
        super().__init__(f"simulation diverged: {what} at particle {self.index}")


class CFLViolation(RuntimeError):
    pass


def set_threads(n: Optional[int]) -> int:
    """Set the worker count for compiled kernels (clamped to what numba allows)."""
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


def bspline_weights(fx):
    """Quadratic B-spline weights for offsets ``fx`` in [0.5, 1.5)."""
    fx = np.asarray(fx, dtype=float)
    return np.stack([0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2], axis=-1)


@dataclass
class Particles:
    x: np.ndarray
    v: np.ndarray
    mass: np.ndarray
    vol0: np.ndarray
    F: np.ndarray
    C: np.ndarray
    material: np.ndarray
    tau: np.ndarray = None
    active: np.ndarray = None
    fext: np.ndarray = None

    def __post_init__(self):
        n = len(self.x)
        self.x = np.ascontiguousarray(self.x, dtype=np.float64).reshape(n, 3)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64).reshape(n, 3)
        self.mass = np.ascontiguousarray(self.mass, dtype=np.float64).reshape(n)
        self.vol0 = np.ascontiguousarray(self.vol0, dtype=np.float64).reshape(n)
        self.F = np.ascontiguousarray(self.F, dtype=np.float64).reshape(n, 3, 3)
        self.C = np.ascontiguousarray(self.C, dtype=np.float64).reshape(n, 3, 3)
        self.material = np.ascontiguousarray(self.material, dtype=np.int64).reshape(n)
        self.tau = np.zeros((n, 3, 3)) if self.tau is None else np.ascontiguousarray(self.tau, dtype=np.float64)
        self.active = np.ones(n, dtype=np.bool_) if self.active is None else np.ascontiguousarray(self.active, dtype=np.bool_)
        self.fext = np.zeros((n, 3)) if self.fext is None else np.ascontiguousarray(self.fext, dtype=np.float64)
        if n and np.any(self.mass <= 0):
            raise ValueError("particle masses must be positive")
        if n and np.any(np.linalg.det(self.F) <= 0):
            raise ValueError("deformation gradients must have positive determinant")

    @classmethod
    def create(cls, x, vol0, density, material=0, v=None) -> "Particles":
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        n = len(x)
        vol0 = np.broadcast_to(np.asarray(vol0, dtype=float), (n,)).copy()
        mass = vol0 * np.broadcast_to(np.asarray(density, dtype=float), (n,))
        return cls(x=x, v=np.zeros((n, 3)) if v is None else v, mass=mass, vol0=vol0,
                   F=np.tile(np.eye(3), (n, 1, 1)), C=np.zeros((n, 3, 3)),
                   material=np.broadcast_to(np.asarray(material), (n,)).copy())

    @property
    def n(self) -> int:
        return len(self.x)

    def concat(self, other: "Particles") -> "Particles":
        return Particles(*(np.concatenate([getattr(self, f), getattr(other, f)]) for f in
                           ("x", "v", "mass", "vol0", "F", "C", "material", "tau", "active", "fext")))

    def copy(self) -> "Particles":
        return Particles(**{f: getattr(self, f).copy() for f in
                            ("x", "v", "mass", "vol0", "F", "C", "material", "tau", "active", "fext")})


@dataclass
class MpmGrid:
    h: float
    dims: tuple
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    boundary: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 4:
            raise ValueError("grid needs at least 4 nodes per axis")
        if not self.h > 0:
            raise ValueError("grid length must be positive")
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        bnd = {f: "sticky" for f in FACES}
        for k, val in self.boundary.items():
            if k not in bnd:
                raise ValueError(f"unknown grid face {k!r}")
            if val not in ("sticky", "slip"):
                raise ValueError(f"boundary condition must be 'sticky' or 'slip', got {val!r}")
            bnd[k] = val
        self.boundary = bnd
        self.bc_codes = np.array([kernels.STICKY if bnd[f] == "sticky" else kernels.SLIP for f in FACES], dtype=np.int64)
        shape = self.dims
        self.mass = np.zeros(shape)
        self.momentum = np.zeros(shape + (3,))
        self.velocity = np.zeros(shape + (3,))
        self.force = np.zeros(shape + (3,))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.h * (np.array(self.dims) - 1)

    def node_position(self, idx) -> np.ndarray:
        return self.origin + self.h * np.asarray(idx, dtype=float)

    def clear(self):
        self.mass.fill(0.0)
        self.momentum.fill(0.0)
        self.velocity.fill(0.0)
        self.force.fill(0.0)


@dataclass
class SoftState:
    particles: Particles
    grid: MpmGrid
    materials: list
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    dt: float = 1e-3
    time: float = 0.0
    lost: int = 0
    substeps: int = 0

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        mats = list(self.materials)
        if not mats:
            raise ValueError("at least one material is required")
        self.mu = np.array([m.mu for m in mats])
        self.lam = np.array([m.lam for m in mats])
        self.yield_stress = np.array([m.yield_stress for m in mats])
        self._base = None
        refresh_stress(self)

    def copy(self) -> "SoftState":
        g = self.grid
        s = SoftState(self.particles.copy(), MpmGrid(g.h, g.dims, g.origin.copy(), dict(g.boundary)),
                      list(self.materials), self.gravity.copy(), self.dt, self.time, self.lost, self.substeps)
        return s


def refresh_stress(state: SoftState):
    P = state.particles
    if P.n:
        kernels.stress_kernel(P.F, P.material, P.active, state.mu, state.lam, P.tau)


def clear_grid(state: SoftState) -> SoftState:
    state.grid.clear()
    return state


def _bases(state):
    P, g = state.particles, state.grid
    return kernels.base_indices(P.x, g.origin, 1.0 / g.h, P.active)


def find_lost(state: SoftState) -> np.ndarray:
    """Indices of active particles whose stencil leaves the grid."""
    base = _bases(state)
    hi = np.array(state.grid.dims) - 3
    bad = state.particles.active & (np.any(base < 0, axis=1) | np.any(base > hi, axis=1))
    return np.nonzero(bad)[0]


def freeze_lost(state: SoftState) -> int:
    idx = find_lost(state)
    if len(idx):
        P = state.particles
        P.active[idx] = False
        P.v[idx] = 0.0
        P.C[idx] = 0.0
        state.lost += len(idx)
    return len(idx)


def p2g(state: SoftState) -> SoftState:
    """Scatter mass, APIC momentum, stress and external forces to the grid."""
    P, g = state.particles, state.grid
    base = _bases(state)
    hi = np.array(g.dims) - 3
    act = np.nonzero(P.active)[0]
    b = base[act]
    out = np.any(b < 0, axis=1) | np.any(b > hi, axis=1)
    if np.any(out):
        raise LostParticleError(act[out])
    order = act[np.argsort(b[:, 0], kind="stable")].astype(np.int64)
    counts = np.bincount(b[:, 0], minlength=g.dims[0]) if len(act) else np.zeros(g.dims[0], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    kernels.p2g_kernel(P.x, P.v, P.C, P.tau, P.mass, P.vol0, P.fext, base, order, starts,
                       g.origin, g.h, g.mass, g.momentum, g.force)
    state._base = base
    return state


def grid_update(state: SoftState, dt: Optional[float] = None) -> SoftState:
    g = state.grid
    kernels.grid_update_kernel(g.mass, g.momentum, g.force, g.velocity, state.gravity,
                               state.dt if dt is None else dt, g.bc_codes)
    return state


def g2p_advect(state: SoftState, dt: Optional[float] = None) -> SoftState:
    P, g = state.particles, state.grid
    base = state._base if state._base is not None else _bases(state)
    bad = np.zeros(P.n, dtype=np.bool_)
    kernels.g2p_kernel(P.x, P.v, P.C, P.F, P.tau, P.material, P.active, base, state.mu, state.lam,
                       state.yield_stress, g.origin, g.h, state.dt if dt is None else dt, g.velocity, bad)
    state._base = None
    if bad.any():
        raise SimulationDiverged(int(np.argmax(bad)))
    return state


Hook = Callable[[SoftState, float], None]


def soft_substep(state: SoftState, particle_hook: Optional[Hook] = None,
                 grid_hook: Optional[Hook] = None) -> SoftState:
    """Advance the soft body by ``state.dt``.

    Order: clear grid, freeze lost particles, particle-force hook, p2g,
    grid-force hook, grid update, g2p. If the CFL bound is violated the step
    is split into up to ``2**4`` equal pieces.
    """
    P, g = state.particles, state.grid
    vmax = float(np.sqrt((P.v[P.active] ** 2).sum(axis=1).max())) if P.active.any() else 0.0
    n_sub, halvings = 1, 0
    while vmax * state.dt / n_sub > CFL_NUMBER * g.h:
        if halvings == MAX_HALVINGS:
            raise CFLViolation(f"max speed {vmax:.3g} m/s violates CFL even after {MAX_HALVINGS} halvings")
        n_sub *= 2
        halvings += 1
    dt = state.dt / n_sub
    for _ in range(n_sub):
        clear_grid(state)
        freeze_lost(state)
        P.fext.fill(0.0)
        if particle_hook is not None:
            particle_hook(state, dt)
        p2g(state)
        if grid_hook is not None:
            grid_hook(state, dt)
        grid_update(state, dt)
        g2p_advect(state, dt)
        state.substeps += 1
    state.time += state.dt
    return state


def kinetic_energy(state: SoftState) -> float:
    P = state.particles
    a = P.active
    return float(0.5 * np.sum(P.mass[a] * np.sum(P.v[a] ** 2, axis=1)))


def seed_box(lo, hi, particle_volume: float, rng: np.random.Generator, jitter: float = 0.25) -> np.ndarray:
    """Jittered lattice filling the box ``[lo, hi]`` with spacing ``V0**(1/3)``."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    ext = hi - lo
    if np.any(ext <= 0):
        raise ValueError("particle source box must have positive extents")
    s = particle_volume ** (1.0 / 3.0)
    counts = np.maximum(np.rint(ext / s).astype(int), 1)
    step = ext / counts
    axes = [lo[a] + (np.arange(counts[a]) + 0.5) * step[a] for a in range(3)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return g + rng.uniform(-jitter * s, jitter * s, size=g.shape)


def state_digest(state: SoftState) -> str:
    P = state.particles
    h = hashlib.sha256()
    for a in (P.x, P.v, P.F, P.C, P.active):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()

