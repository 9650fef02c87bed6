"""Compiled MLS-MPM transfer kernels.

The particle-to-grid scatter is run as a node-major gather: each x-layer of
the grid is owned by exactly one worker, and inside a layer particles are
visited in a fixed (bucket, index) order. Every node therefore sums its
contributions in the same order for any worker count, which makes the
result bitwise reproducible.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np
from numba import prange

from .constitutive import det3, kirchhoff_stress_into, return_map_into

STICKY = 0
SLIP = 1
BOUNDARY_WIDTH = 2


@nb.njit(cache=True, inline="always")
def _weights(fx):
    # quadratic B-spline weights for the three nodes base, base+1, base+2
    w0 = 0.5 * (1.5 - fx) ** 2
    w1 = 0.75 - (fx - 1.0) ** 2
    w2 = 0.5 * (fx - 0.5) ** 2
    return w0, w1, w2


@nb.njit(cache=True)
def base_indices(x, origin, inv_h, active):
    n = x.shape[0]
    base = np.empty((n, 3), dtype=np.int64)
    for p in range(n):
        for a in range(3):
            if active[p]:
                base[p, a] = int(math.floor((x[p, a] - origin[a]) * inv_h - 0.5))
            else:
                base[p, a] = -1
    return base


@nb.njit(cache=True, parallel=True)
def p2g_kernel(x, v, C, tau, mass, vol0, fext, base, order, starts,
               origin, h, gmass, gmom, gforce):
    nx, ny, nz = gmass.shape
    inv_h = 1.0 / h
    stress_scale = 4.0 * inv_h * inv_h
    for i in prange(nx):
        for b in range(i - 2, i + 1):
            if b < 0 or b >= nx:
                continue
            dxi = i - b
            for k in range(starts[b], starts[b + 1]):
                p = order[k]
                fx = (x[p, 0] - origin[0]) * inv_h - base[p, 0]
                fy = (x[p, 1] - origin[1]) * inv_h - base[p, 1]
                fz = (x[p, 2] - origin[2]) * inv_h - base[p, 2]
                wxs = _weights(fx)
                wys = _weights(fy)
                wzs = _weights(fz)
                wx = wxs[dxi]
                m = mass[p]
                s = -vol0[p] * stress_scale
                dpx = (dxi - fx) * h
                for dy in range(3):
                    j = base[p, 1] + dy
                    wy = wys[dy]
                    dpy = (dy - fy) * h
                    for dz in range(3):
                        kk = base[p, 2] + dz
                        w = wx * wy * wzs[dz]
                        dpz = (dz - fz) * h
                        gmass[i, j, kk] += w * m
                        for a in range(3):
                            cd = C[p, a, 0] * dpx + C[p, a, 1] * dpy + C[p, a, 2] * dpz
                            td = tau[p, a, 0] * dpx + tau[p, a, 1] * dpy + tau[p, a, 2] * dpz
                            gmom[i, j, kk, a] += w * m * (v[p, a] + cd)
                            gforce[i, j, kk, a] += w * (s * td + fext[p, a])


@nb.njit(cache=True, inline="always")
def _bc_axis(gvel, i, j, k, ia, na, a, bc):
    # face 2a is the low side of axis a, face 2a+1 the high side
    if ia < BOUNDARY_WIDTH:
        if bc[2 * a] == STICKY:
            gvel[i, j, k, 0] = 0.0
            gvel[i, j, k, 1] = 0.0
            gvel[i, j, k, 2] = 0.0
        elif gvel[i, j, k, a] < 0.0:
            gvel[i, j, k, a] = 0.0
    if ia >= na - BOUNDARY_WIDTH:
        if bc[2 * a + 1] == STICKY:
            gvel[i, j, k, 0] = 0.0
            gvel[i, j, k, 1] = 0.0
            gvel[i, j, k, 2] = 0.0
        elif gvel[i, j, k, a] > 0.0:
            gvel[i, j, k, a] = 0.0


@nb.njit(cache=True, parallel=True)
def grid_update_kernel(gmass, gmom, gforce, gvel, gravity, dt, bc):
    nx, ny, nz = gmass.shape
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                m = gmass[i, j, k]
                if m <= 0.0:
                    for a in range(3):
                        gvel[i, j, k, a] = 0.0
                    continue
                for a in range(3):
                    gvel[i, j, k, a] = gmom[i, j, k, a] / m + dt * (gravity[a] + gforce[i, j, k, a] / m)
                _bc_axis(gvel, i, j, k, i, nx, 0, bc)
                _bc_axis(gvel, i, j, k, j, ny, 1, bc)
                _bc_axis(gvel, i, j, k, k, nz, 2, bc)


CHUNK = 256


@nb.njit(cache=True, parallel=True)
def g2p_kernel(x, v, C, F, tau, mat, active, base, mu, lam, yield_stress,
               origin, h, dt, gvel, bad):
    n = x.shape[0]
    inv_h = 1.0 / h
    cscale = 4.0 * inv_h * inv_h
    nchunks = (n + CHUNK - 1) // CHUNK
    for ch in prange(nchunks):
        # per-chunk scratch; results per particle do not depend on chunking
        vn = np.empty(3)
        B = np.empty((3, 3))
        Ft = np.empty((3, 3))
        sb = np.empty((3, 3))
        sU = np.empty((3, 3))
        seps = np.empty(3)
        for p in range(ch * CHUNK, min(n, (ch + 1) * CHUNK)):
            if not active[p]:
                continue
            fx = (x[p, 0] - origin[0]) * inv_h - base[p, 0]
            fy = (x[p, 1] - origin[1]) * inv_h - base[p, 1]
            fz = (x[p, 2] - origin[2]) * inv_h - base[p, 2]
            wxs = _weights(fx)
            wys = _weights(fy)
            wzs = _weights(fz)
            for a in range(3):
                vn[a] = 0.0
                for c in range(3):
                    B[a, c] = 0.0
            for dx in range(3):
                dpx = (dx - fx) * h
                for dy in range(3):
                    dpy = (dy - fy) * h
                    for dz in range(3):
                        dpz = (dz - fz) * h
                        w = wxs[dx] * wys[dy] * wzs[dz]
                        i = base[p, 0] + dx
                        j = base[p, 1] + dy
                        k = base[p, 2] + dz
                        for a in range(3):
                            gv = gvel[i, j, k, a]
                            vn[a] += w * gv
                            B[a, 0] += w * gv * dpx
                            B[a, 1] += w * gv * dpy
                            B[a, 2] += w * gv * dpz
            for a in range(3):
                for c in range(3):
                    B[a, c] *= cscale
            for a in range(3):
                for c in range(3):
                    Ft[a, c] = F[p, a, c] + dt * (B[a, 0] * F[p, 0, c] + B[a, 1] * F[p, 1, c] + B[a, 2] * F[p, 2, c])
            ok = det3(Ft) > 0.0
            if not ok:
                # inverted element: keep the old gradient, report divergence
                for a in range(3):
                    for c in range(3):
                        Ft[a, c] = F[p, a, c]
            m = mat[p]
            return_map_into(Ft, mu[m], lam[m], yield_stress[m], sb, sU, seps, F[p], tau[p])
            for a in range(3):
                if not math.isfinite(vn[a]):
                    ok = False
                for c in range(3):
                    if not (math.isfinite(F[p, a, c]) and math.isfinite(B[a, c])):
                        ok = False
            if not ok:
                bad[p] = True
            for a in range(3):
                v[p, a] = vn[a]
                x[p, a] += dt * vn[a]
                for c in range(3):
                    C[p, a, c] = B[a, c]


@nb.njit(cache=True, parallel=True)
def stress_kernel(F, mat, active, mu, lam, tau):
    n = F.shape[0]
    nchunks = (n + CHUNK - 1) // CHUNK
    for ch in prange(nchunks):
        sb = np.empty((3, 3))
        sU = np.empty((3, 3))
        seps = np.empty(3)
        for p in range(ch * CHUNK, min(n, (ch + 1) * CHUNK)):
            if active[p]:
                m = mat[p]
                kirchhoff_stress_into(F[p], mu[m], lam[m], sb, sU, seps, tau[p])
