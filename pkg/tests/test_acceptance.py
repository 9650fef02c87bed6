"""One check per acceptance criterion; results are summarized at the end of the run."""
import hashlib
import os
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import record
from softsim.bench import GPU_REFERENCE_FPS, bench
from softsim.config import build_world, parse_config
from softsim.control import ARM_VARIANTS, drive_targets, make_config, normalize, reset_state
from softsim.coupling import env_step
from softsim.demo import Trajectory, convert_trajectory, record_rollout
from softsim.geometry import (PANDA_HOME, Pose, compose, forward_kinematics, inverse_kinematics, panda_chain,
                              pose_from_twist, rotation_error)
from softsim.golden import GOLDEN_SCENES, panda_press_config, reach_press_targets
from softsim.mpm import (Material, MpmGrid, Particles, SoftState, g2p_advect, grid_update, kinetic_energy,
                         kirchhoff_stress, p2g, von_mises_return_map)
from softsim.mpm.constitutive import deviatoric_norm
from softsim.rigid import RigidBody, WrenchBuffer, integrate_free_body
from softsim.scenario import evaluate_metric, pinch_target
from softsim.sdf import Shape, sdf_eval, sdf_gradient


def world_digest(w) -> str:
    from softsim.mpm.solver import state_digest

    h = hashlib.sha256(state_digest(w.soft).encode())
    for b in w.all_bodies():
        h.update(b.pose.as_array().tobytes())
    if w.robot is not None:
        h.update(w.robot.q.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# 1. conservation
# ---------------------------------------------------------------------------
def test_1_conservation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    n = 1000
    x = rng.uniform(0.3, 0.75, size=(n, 3))  # clear of the boundary layer
    P = Particles.create(x, 1e-4, 1000.0, 0, rng.normal(size=(n, 3)))
    P.C[:] = 0.1 * rng.normal(size=(n, 3, 3))
    P.mass[:] *= rng.uniform(0.5, 1.5, n)
    s = SoftState(P, MpmGrid(0.1, (12, 12, 12), np.zeros(3), {}), [Material(1000.0, 1e4, 0.3, 1e4)],
                  np.zeros(3), 1e-3)
    m0 = P.mass.sum()
    p0 = (P.mass[:, None] * P.v).sum(axis=0)
    p2g(s)
    mass_err = abs(s.grid.mass.sum() - m0) / m0
    mom_err = np.abs(s.grid.momentum.sum(axis=(0, 1, 2)) - p0).max() / np.abs(p0).max()
    grid_update(s, 1e-3)
    g2p_advect(s, 1e-3)
    drift = np.abs((P.mass[:, None] * P.v).sum(axis=0) - p0).max() / np.abs(p0).max()
    dt = time.perf_counter() - t0
    ok = record(1, "p2g mass", mass_err <= 1e-12, f"relative error {mass_err:.1e} (limit 1e-12)")
    ok &= record(1, "p2g momentum", mom_err <= 1e-10, f"relative error {mom_err:.1e} (limit 1e-10)")
    ok &= record(1, "p2g/g2p cycle", drift <= 1e-8, f"momentum drift {drift:.1e} (limit 1e-8)")
    ok &= record(1, "runtime", dt < 5.0, f"{dt:.2f} s (limit 5 s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. constitutive
# ---------------------------------------------------------------------------
def test_2_constitutive():
    m = Material(1000.0, 1e4, 0.3, 1e9)
    e = 1e-3
    worst = 0.0
    for F, expect in [
        (np.diag([1 + e, 1, 1]), np.diag([2 * m.mu + m.lam, m.lam, m.lam]) * e),
        (np.diag([1 - e, 1, 1]), -np.diag([2 * m.mu + m.lam, m.lam, m.lam]) * e),
        (np.eye(3) + e * np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]]), 2 * m.mu * e * np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])),
    ]:
        tau = kirchhoff_stress(F, m)
        worst = max(worst, np.abs(tau - expect).max() / np.abs(expect).max())
    ok = record(2, "small strain vs linear elasticity", worst < 0.01, f"worst relative error {worst:.2e} at 1e-3")

    rng = np.random.default_rng(2)
    trials, draws, viol, worst_ratio = 0, 0, 0, 0.0
    for ys in (2e3, 1e4):
        mat = Material(1000.0, 1e4, 0.3, ys)
        limit = np.sqrt(2 / 3) * ys
        while trials < (500 if ys == 2e3 else 1000) and draws < 20000:
            draws += 1
            R1 = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
            R2 = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
            eps = rng.uniform(-1.2, 1.2, 3)
            F = R1 @ np.diag(np.exp(eps)) @ R2
            if deviatoric_norm(kirchhoff_stress(F, mat)) <= limit:
                continue  # only trial states beyond the yield surface count
            trials += 1
            r = deviatoric_norm(kirchhoff_stress(von_mises_return_map(F, mat), mat)) / limit
            worst_ratio = max(worst_ratio, r)
            viol += r > 1 + 1e-6
    ok &= record(2, "return map on yield surface", viol == 0 and trials == 1000,
                 f"{trials} overshoot trials, max |dev tau| / (sqrt(2/3) sigma_Y) = {worst_ratio:.9f}")
    assert ok


# ---------------------------------------------------------------------------
# 3. contact and coupling
# ---------------------------------------------------------------------------
def test_3_contact_coupling(golden_run):
    run = golden_run("pinch-mini")
    ok = record(3, "third law on pinch-mini", run.third_force <= 1e-10 and run.third_torque <= 1e-10,
                f"max residual force {run.third_force:.1e} N, torque {run.third_torque:.1e} N m over "
                f"{sum(run.soft_steps)} substeps")

    rng = np.random.default_rng(3)
    shapes = [Shape.plane([0.3, -0.2, 1.0], 0.05), Shape.sphere(0.1), Shape.box([0.1, 0.2, 0.3]),
              Shape.capsule(0.15, 0.05, local_pose=Pose.from_rotvec([0.3, 0.2, 0.1], [0.01, 0, 0]))]
    h, worst, count = 1e-6, 0.0, 0
    while count < 1000:
        s = shapes[count % 4]
        body = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3) * 0.1)
        p = body.apply(rng.uniform(-0.4, 0.4, 3))
        if s.kind == "box":
            # the distance is not differentiable on the medial surface
            q = np.sort(np.abs(body.apply_inverse(p)) - s.params["half_extents"])
            if q[2] <= 0 and q[2] - q[1] < 1e-3:
                continue
        g = sdf_gradient(s, p[None], body)[0]
        fd = np.array([(sdf_eval(s, (p + h * e)[None], body)[0] - sdf_eval(s, (p - h * e)[None], body)[0]) / (2 * h)
                       for e in np.eye(3)])
        worst = max(worst, np.abs(fd - g).max())
        count += 1
    ok &= record(3, "SDF gradient vs finite differences", worst <= 1e-4, f"max deviation {worst:.1e} on {count} queries")

    pp, pg = golden_run("press-plane", "particle"), golden_run("press-plane", "grid")
    ok &= record(3, "press-plane penetration ordering", pp.max_penetration <= pg.max_penetration,
                 f"particle {pp.max_penetration * 1e3:.3f} mm <= grid {pg.max_penetration * 1e3:.3f} mm")
    assert ok


# ---------------------------------------------------------------------------
# 4. kinematics
# ---------------------------------------------------------------------------
def test_4_kinematics():
    ch = panda_chain()
    rng = np.random.default_rng(4)
    good = 0
    for _ in range(100):
        q = np.clip(PANDA_HOME + rng.uniform(-0.5, 0.5, 7), ch.lower, ch.upper)
        T = forward_kinematics(ch, q)[1]
        res = inverse_kinematics(ch, T, PANDA_HOME)
        Tq = forward_kinematics(ch, res.q)[1]
        good += (np.linalg.norm(Tq.translation - T.translation) <= 1e-4 and abs(rotation_error(Tq.R, T.R)) <= 1e-3)
    ok = record(4, "FK/IK round trip", good >= 99, f"{good}/100 within 1e-4 m and 1e-3 rad")

    g, dt, n = np.array([0.0, 0.0, -9.81]), 1e-3, 100
    b = RigidBody("ball", Pose.from_translation([0, 0, 1.0]), mass=1.0, inertia=[1e-3] * 3)
    for _ in range(n):
        b = integrate_free_body(b, WrenchBuffer(), g, dt)
    expect = np.array([0, 0, 1.0]) + g * dt * dt * n * (n + 1) / 2
    err = max(np.abs(b.pose.translation - expect).max(), np.abs(b.lin_vel - n * dt * g).max())
    ok &= record(4, "free fall vs discrete sum", err <= 1e-6, f"max error {err:.1e} after {n} steps")
    assert ok


# ---------------------------------------------------------------------------
# 5. controllers and action conversion
# ---------------------------------------------------------------------------
def _variant_oracle(v, a, q, q_prev_target, tcp, ee_prev):
    n = 7
    if v == "joint_pos":
        return a, np.zeros(n)
    if v == "joint_delta_pos":
        return q + a, np.zeros(n)
    if v == "joint_target_delta_pos":
        return q_prev_target + a, np.zeros(n)
    if v == "joint_vel":
        return q, a
    if v == "joint_pos_vel":
        return a[:n], a[n:]
    if v == "joint_delta_pos_vel":
        return q + a[:n], a[n:]
    base = ee_prev if v.startswith("ee_target") else tcp
    if v.endswith("pose"):
        return compose(pose_from_twist(a), base), None
    return Pose(base.rotation, base.translation + a), None


def test_5_controllers_and_conversion():
    ch = panda_chain()
    rng = np.random.default_rng(5)
    bad = []
    for v in ARM_VARIANTS:
        cfg = make_config(v, 7, ch.lower, ch.upper)
        state = reset_state(cfg, PANDA_HOME + 0.02, ch)
        q = PANDA_HOME + rng.uniform(-0.03, 0.03, 7)
        tcp = forward_kinematics(ch, q)[1]
        a_norm = rng.uniform(-0.3, 0.3, cfg.action_dim)
        if not cfg.normalized:
            a_norm = np.r_[PANDA_HOME + 0.01, rng.uniform(-0.3, 0.3, cfg.action_dim - 7)]
        phys = cfg.lower + 0.5 * (a_norm + 1) * (cfg.upper - cfg.lower) if cfg.normalized else a_norm
        q_t, qd_t, _, info = drive_targets(cfg, state, ch, q, np.zeros(7), tcp, a_norm)
        exp_q, exp_qd = _variant_oracle(v, phys, q, state.q_target, tcp, state.ee_target)
        if isinstance(exp_q, Pose):
            T = forward_kinematics(ch, q_t)[1]
            okv = np.linalg.norm(T.translation - exp_q.translation) < 1e-4
            if v.endswith("pose"):
                okv &= abs(rotation_error(T.R, exp_q.R)) < 1e-3
            okv &= np.array_equal(qd_t, np.zeros(7)) and info.ik_converged
        else:
            okv = np.allclose(q_t, exp_q, atol=1e-12) and np.allclose(qd_t, exp_qd, atol=1e-12)
        if not okv:
            bad.append(v)
    gcfg = make_config("gripper_pos", 1, lower=[0.0], upper=[0.04])
    gq, _, _, _ = drive_targets(gcfg, reset_state(gcfg, [0.02]), None, [0.02], [0.0], None, [0.5])
    if not np.allclose(gq, [0.03]):
        bad.append("gripper_pos")
    ok = record(5, "drive-target formulas", not bad,
                f"{len(ARM_VARIANTS) + 1 - len(bad)}/{len(ARM_VARIANTS) + 1} variants match" + (f"; failing {bad}" if bad else ""))

    w = build_world(parse_config(panda_press_config()))
    _, rep = env_step(w, w.robot.arm_q.copy())
    rate = 1.0 / w.dt_rigid
    ok &= record(5, "rigid steps per control step", rep.rigid_steps == 25 and np.isclose(rate, 500.0)
                 and np.isclose(1 / w.dt_control, 20.0), f"{rep.rigid_steps} rigid steps at {rate:g} Hz per "
                 f"{1 / w.dt_control:g} Hz control step")

    factory = lambda: build_world(parse_config(panda_press_config()))  # noqa: E731
    tgt = make_config("ee_delta_pose", 7, ch.lower, ch.upper)
    crng = np.random.default_rng(55)
    errors = []
    for k in range(100):
        acts = reach_press_targets(crng, "reach" if k % 2 == 0 else "press")
        _, rep = convert_trajectory(Trajectory("arm:joint_pos", 0.05, acts), tgt, factory)
        errors.append(rep.final_pos_error)
    errors = np.array(errors)
    good = int(np.sum(errors < 5e-3))
    ok &= record(5, "closed-loop conversion", good >= 95,
                 f"{good}/100 under 5 mm (median {np.median(errors) * 1e3:.3f} mm, max {errors.max() * 1e3:.3f} mm)")

    src = record_rollout(factory(), reach_press_targets(np.random.default_rng(56), "press"), "golden:panda-press")
    disturbed = lambda: build_world(parse_config(panda_press_config(disturbance=[0.0, 0.05, 0.0, -0.05, 0.0, 0.05, 0.0])))  # noqa: E731
    _, closed = convert_trajectory(src, tgt, disturbed, closed_loop=True)
    _, opened = convert_trajectory(src, tgt, disturbed, closed_loop=False)
    ok &= record(5, "closed vs open loop under disturbance", closed.final_pos_error <= opened.final_pos_error,
                 f"closed {closed.final_pos_error * 1e3:.3f} mm <= open {opened.final_pos_error * 1e3:.3f} mm")
    assert ok


# ---------------------------------------------------------------------------
# 6. scenarios
# ---------------------------------------------------------------------------
ELASTIC_BLOCK = {
    "name": "elastic-block",
    "grid": {"length": 0.01, "dims": [16, 16, 16], "boundary": {"z_min": "sticky", "x_min": "slip", "x_max": "slip",
                                                                "y_min": "slip", "y_max": "slip", "z_max": "slip"}},
    "materials": {"jelly": {"density": 1000.0, "youngs_modulus": 1e4, "poisson_ratio": 0.3, "yield_stress": 1e9}},
    "particles": [{"box": {"lo": [0.06, 0.06, 0.025], "hi": [0.1, 0.1, 0.055]}, "material": "jelly",
                   "particle_volume": 1.2e-7}],
}


def brute_chamfer(a, b):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def test_6_scenarios(golden_run):
    t0 = time.perf_counter()
    w = golden_run("fill-mini").world
    P = w.soft.particles
    frac, ok_fill = evaluate_metric(w, "fill")
    speed = float(np.linalg.norm(P.v[P.active], axis=1).max())
    ok = record(6, "fill-mini", ok_fill and frac > 0.9 and speed < 0.05,
                f"fraction {frac:.3f} (> 0.9), max speed {speed:.2e} m/s (< 0.05)")

    iou, ok_write = evaluate_metric(golden_run("write-mini").world, "write")
    ok &= record(6, "write-mini IoU", ok_write and iou > 0.8, f"IoU {iou:.4f} (> 0.8)")

    wp = golden_run("pinch-mini").world
    x = wp.soft.particles.x[wp.soft.particles.active]
    x0, tgt = wp.meta["initial_x"], pinch_target(wp)
    ratio, _ = evaluate_metric(wp, "pinch")
    brute = brute_chamfer(x, tgt) / brute_chamfer(x0, tgt)
    ok &= record(6, "pinch chamfer vs brute force", abs(ratio - brute) <= 1e-12,
                 f"ratio {ratio:.6f} (task success needs < 0.3; not gated), "
                 f"|kd-tree - brute force| = {abs(ratio - brute):.1e}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # sigma_Y = 1e9 is deliberately outside the clay range
        wb = build_world(parse_config(ELASTIC_BLOCK))
    t_settle = None
    for k in range(40):
        env_step(wb, np.zeros(0))
        ke = kinetic_energy(wb.soft)
        if ke < 1e-6 and t_settle is None:
            t_settle = wb.time
    ok &= record(6, "elastic block settles", ke < 1e-6 and t_settle is not None,
                 f"KE {ke:.1e} J at {wb.time:.1f} s, first below 1e-6 J at {t_settle:.2f} s ({wb.soft.particles.n} particles)")
    dt = time.perf_counter() - t0
    record(6, "suite runtime (info)", True, f"{dt:.1f} s including cached golden runs")
    assert ok


# ---------------------------------------------------------------------------
# 7. determinism
# ---------------------------------------------------------------------------
DIGEST_SCRIPT = r"""
import hashlib, sys, numba
sys.path.insert(0, sys.argv[1])
from test_acceptance import world_digest
from softsim.config import build_world, parse_config
from softsim.coupling import env_step
from softsim.golden import GOLDEN_SCENES, golden_config, golden_trajectory
for name in GOLDEN_SCENES:
    w = build_world(parse_config(golden_config(name)))
    for a in golden_trajectory(name).actions:
        env_step(w, a)
    print(name, numba.get_num_threads(), world_digest(w))
"""


def _subprocess_digests(threads: int) -> dict:
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    here = os.path.dirname(os.path.abspath(__file__))
    out = subprocess.run([sys.executable, "-c", DIGEST_SCRIPT, here], env=env, capture_output=True, text=True,
                         check=True, cwd=here).stdout
    rows = [ln.split() for ln in out.strip().splitlines()]
    return {name: (int(t), d) for name, t, d in rows}


def test_7_determinism(golden_run):
    first = {n: world_digest(golden_run(n).world) for n in GOLDEN_SCENES}
    one = _subprocess_digests(1)
    four = _subprocess_digests(4)
    ok = True
    for n in GOLDEN_SCENES:
        same = first[n] == one[n][1] == four[n][1]
        ok &= record(7, n, same, f"{first[n][:16]} (in process), threads {one[n][0]} and {four[n][0]} "
                                 f"{'identical' if same else 'DIFFER'}")
    assert ok


# ---------------------------------------------------------------------------
# 8. bench report
# ---------------------------------------------------------------------------
def test_8_bench():
    reports = [bench("golden:press-plane", 5, k) for k in (1, 4)]
    ok = True
    for r in reports:
        ok &= record(8, f"{r.worlds} world(s)", r.env_steps_per_s > 0 and len(set(r.digests)) == 1,
                     f"{r.env_steps_per_s:.2f} env steps/s per world, {r.aggregate_env_steps_per_s:.2f} aggregate, "
                     f"{r.particles} particles, {r.threads} thread(s)")
    record(8, "GPU reference (context only)", True,
           f"{GPU_REFERENCE_FPS[0]:g}-{GPU_REFERENCE_FPS[1]:g} env steps/s single world on GPU; not a gate")
    assert ok
