"""Hencky-strain elasticity with von Mises radial return.

Everything is evaluated in the principal frame of the left stretch. With
``F = U diag(s) V^T`` the principal directions ``U`` and stretches ``s`` come
from the eigen-decomposition of ``b = F F^T``, so no full SVD is needed: the
projected gradient is ``U diag(s_new / s) U^T F``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = [
    "Material",
    "PRESETS",
    "PARAMETER_RANGES",
    "check_material_ranges",
    "kirchhoff_stress",
    "von_mises_return_map",
    "deviatoric_norm",
    "sym_eig3",
]

# Density, Young's modulus, Poisson ratio, yield stress, grid length, particle volume.
PARAMETER_RANGES = {
    "density": (300.0, 3000.0),
    "youngs_modulus": (1e4, 3e5),
    "poisson_ratio": (0.3, 0.3),
    "yield_stress": (2e3, 1e4),
    "grid_length": (0.005, 0.015),
    "particle_volume": (6.2e-8, 1.2e-7),
}


@dataclass(frozen=True)
class Material:
    density: float
    youngs_modulus: float
    poisson_ratio: float
    yield_stress: float
    name: str = ""

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if not self.yield_stress > 0:
            raise ValueError("yield stress must be positive")
        if not self.density > 0:
            raise ValueError("density must be positive")

    @property
    def mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lam(self) -> float:
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


# Slash-separated table entries paired positionally into two presets.
PRESETS = {
    "soft-clay": dict(material=Material(1000.0, 1e4, 0.3, 2e3, "soft-clay"), particle_volume=6.2e-8),
    "stiff-clay": dict(material=Material(1000.0, 3e5, 0.3, 1e4, "stiff-clay"), particle_volume=1.2e-7),
}


def check_material_ranges(m: Material, strict: bool = False) -> list[str]:
    """Compare a material against the supported parameter envelope.

    Returns the list of violations; emits a warning for each unless ``strict``
    (then raises ``ValueError``).
    """
    msgs = []
    lo, hi = PARAMETER_RANGES["density"]
    if not lo <= m.density <= hi:
        msgs.append(f"density {m.density} outside [{lo}, {hi}]")
    lo, hi = PARAMETER_RANGES["youngs_modulus"]
    if not lo <= m.youngs_modulus <= hi:
        msgs.append(f"Young's modulus {m.youngs_modulus} outside [{lo}, {hi}]")
    if not math.isclose(m.poisson_ratio, 0.3):
        msgs.append(f"Poisson ratio {m.poisson_ratio} differs from 0.3")
    lo, hi = PARAMETER_RANGES["yield_stress"]
    if not lo <= m.yield_stress <= hi:
        msgs.append(f"yield stress {m.yield_stress} outside [{lo}, {hi}]")
    if strict and msgs:
        raise ValueError("; ".join(msgs))
    for s in msgs:
        warnings.warn(f"material {m.name or '?'}: {s}", stacklevel=2)
    return msgs


# ---------------------------------------------------------------------------
# numba helpers
# ---------------------------------------------------------------------------
@nb.njit(cache=True)
def sym_eig3_inplace(a, V, w):
    """Cyclic Jacobi on symmetric ``a`` (destroyed); writes ``a_in = V diag(w) V^T``."""
    for r in range(3):
        for c in range(3):
            V[r, c] = 1.0 if r == c else 0.0
    scale = abs(a[0, 0]) + abs(a[1, 1]) + abs(a[2, 2]) + 1e-300
    for _sweep in range(32):
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        if off <= 1e-36 * scale * scale:
            break
        for pq in range(3):
            if pq == 0:
                p, q = 0, 1
            elif pq == 1:
                p, q = 0, 2
            else:
                p, q = 1, 2
            apq = a[p, q]
            if apq == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
            if theta < 0.0:
                t = -t
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            for k in range(3):
                akp = a[k, p]
                akq = a[k, q]
                a[k, p] = c * akp - s * akq
                a[k, q] = s * akp + c * akq
            for k in range(3):
                apk = a[p, k]
                aqk = a[q, k]
                a[p, k] = c * apk - s * aqk
                a[q, k] = s * apk + c * aqk
            for k in range(3):
                vkp = V[k, p]
                vkq = V[k, q]
                V[k, p] = c * vkp - s * vkq
                V[k, q] = s * vkp + c * vkq
    for i in range(3):
        w[i] = a[i, i]


@nb.njit(cache=True)
def sym_eig3(A):
    """Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix.

    Returns ``(w, V)`` with ``A = V diag(w) V^T`` and ``det(V) = +1``.
    """
    a = A.copy()
    V = np.empty((3, 3))
    w = np.empty(3)
    sym_eig3_inplace(a, V, w)
    return w, V


@nb.njit(cache=True, inline="always")
def matmul3(A, B):
    out = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            out[r, c] = A[r, 0] * B[0, c] + A[r, 1] * B[1, c] + A[r, 2] * B[2, c]
    return out


@nb.njit(cache=True, inline="always")
def det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@nb.njit(cache=True)
def _log_stretch_inplace(F, b, U, eps):
    for r in range(3):
        for c in range(3):
            b[r, c] = F[r, 0] * F[c, 0] + F[r, 1] * F[c, 1] + F[r, 2] * F[c, 2]
    sym_eig3_inplace(b, U, eps)
    for i in range(3):
        eps[i] = 0.5 * math.log(eps[i])


@nb.njit(cache=True)
def _stress_inplace(eps, U, mu, lam, tau):
    tr = eps[0] + eps[1] + eps[2]
    for r in range(3):
        for c in range(3):
            tau[r, c] = 0.0
    for i in range(3):
        t = 2.0 * mu * eps[i] + lam * tr
        for r in range(3):
            for c in range(3):
                tau[r, c] += t * U[r, i] * U[c, i]


@nb.njit(cache=True)
def principal_log_stretch(F):
    b = np.empty((3, 3))
    U = np.empty((3, 3))
    eps = np.empty(3)
    _log_stretch_inplace(F, b, U, eps)
    return eps, U


@nb.njit(cache=True)
def stress_from_principal(eps, U, mu, lam):
    tau = np.empty((3, 3))
    _stress_inplace(eps, U, mu, lam, tau)
    return tau


@nb.njit(cache=True)
def kirchhoff_stress_into(F, mu, lam, b, U, eps, tau):
    _log_stretch_inplace(F, b, U, eps)
    _stress_inplace(eps, U, mu, lam, tau)


@nb.njit(cache=True)
def kirchhoff_stress_nb(F, mu, lam):
    eps, U = principal_log_stretch(F)
    return stress_from_principal(eps, U, mu, lam)


@nb.njit(cache=True)
def return_map_into(F, mu, lam, yield_stress, b, U, eps, F_out, tau_out):
    """Project ``F`` onto the von Mises surface, writing ``F_out`` and ``tau_out``.

    ``b`` (3x3), ``U`` (3x3) and ``eps`` (3) are scratch; ``F_out`` may alias ``F``.
    """
    _log_stretch_inplace(F, b, U, eps)
    mean = (eps[0] + eps[1] + eps[2]) / 3.0
    dev_norm = 0.0
    for i in range(3):
        d = eps[i] - mean
        dev_norm += d * d
    dev_norm = math.sqrt(dev_norm)
    limit = math.sqrt(2.0 / 3.0) * yield_stress
    if 2.0 * mu * dev_norm <= limit:
        for r in range(3):
            for c in range(3):
                F_out[r, c] = F[r, c]
        _stress_inplace(eps, U, mu, lam, tau_out)
        return
    scale = limit / (2.0 * mu * dev_norm)
    # b is reused to hold M = U diag(exp(eps_new - eps)) U^T
    r0 = math.exp((mean + (eps[0] - mean) * scale) - eps[0])
    r1 = math.exp((mean + (eps[1] - mean) * scale) - eps[1])
    r2 = math.exp((mean + (eps[2] - mean) * scale) - eps[2])
    for r in range(3):
        for c in range(3):
            b[r, c] = r0 * U[r, 0] * U[c, 0] + r1 * U[r, 1] * U[c, 1] + r2 * U[r, 2] * U[c, 2]
    for i in range(3):
        eps[i] = mean + (eps[i] - mean) * scale
    for c in range(3):
        f0 = F[0, c]
        f1 = F[1, c]
        f2 = F[2, c]
        for r in range(3):
            F_out[r, c] = b[r, 0] * f0 + b[r, 1] * f1 + b[r, 2] * f2
    _stress_inplace(eps, U, mu, lam, tau_out)


@nb.njit(cache=True)
def return_map_nb(F, mu, lam, yield_stress):
    """Project ``F`` onto the von Mises surface; returns ``(F_new, tau_new)``."""
    b = np.empty((3, 3))
    U = np.empty((3, 3))
    eps = np.empty(3)
    F_out = np.empty((3, 3))
    tau = np.empty((3, 3))
    return_map_into(F, mu, lam, yield_stress, b, U, eps, F_out, tau)
    return F_out, tau


def _check_F(F):
    F = np.asarray(F, dtype=float).reshape(3, 3)
    if not np.linalg.det(F) > 0:
        raise ValueError("deformation gradient must have positive determinant")
    return F


def kirchhoff_stress(F, material: Material) -> np.ndarray:
    """Kirchhoff stress of the Hencky model for deformation gradient ``F``."""
    return kirchhoff_stress_nb(_check_F(F), material.mu, material.lam)


def von_mises_return_map(F_trial, material: Material) -> np.ndarray:
    """Radially return the deviatoric Hencky strain onto the yield surface."""
    F_new, _ = return_map_nb(_check_F(F_trial), material.mu, material.lam, material.yield_stress)
    return F_new


def deviatoric_norm(tau) -> float:
    tau = np.asarray(tau, dtype=float)
    dev = tau - np.trace(tau) / 3.0 * np.eye(3)
    return float(np.linalg.norm(dev))
