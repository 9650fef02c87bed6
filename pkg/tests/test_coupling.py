import numpy as np
import pytest

from softsim.coupling import (CouplingParams, World, env_step, penalty_force, penalty_grid, penalty_particle,
                              sync_rigid_to_soft)
from softsim.geometry import Pose, compose
from softsim.mpm import PRESETS, MpmGrid, Particles, SoftState
from softsim.rigid import RigidBody
from softsim.sdf import Shape, sdf_eval

CLAY = PRESETS["soft-clay"]["material"]
UP = np.array([[0.0, 0.0, 1.0]])


def make_world(x, body_shapes, v=None, mode="particle", caps=True, r_c=None, gravity=(0, 0, 0), pose=None,
               lin_vel=(0, 0, 0), ang_vel=(0, 0, 0)):
    P = Particles.create(np.asarray(x, float), 1e-6, CLAY.density, 0, v)
    soft = SoftState(P, MpmGrid(0.02, (16, 16, 16), np.zeros(3), {}), [CLAY], np.array(gravity, float), 1e-3)
    body = RigidBody("tool", pose or Pose(), lin_vel=lin_vel, ang_vel=ang_vel, shapes=body_shapes, mode="kinematic",
                     com=[0.01, 0.0, 0.0])
    return World(soft, bodies=[body], coupling=CouplingParams(mode=mode, stability_caps=caps, r_c=r_c))


def test_penalty_force_closed_form():
    phi = np.array([-0.01])
    v = np.array([[0.1, 0.0, -0.2]])
    k_n, k_t, c_d, mu = 1000.0, 10.0, 5.0, 0.5
    f = penalty_force(phi, UP, v, np.array([1.0]), k_n, k_t, c_d, mu, 0.0)
    fn = k_n * 0.01 + c_d * 0.2
    ft = min(mu * fn, k_t * 0.1)
    assert np.allclose(f[0], [-ft, 0.0, fn], atol=1e-15)
    # separating normal velocity adds no damping; static friction saturates at mu fn
    f = penalty_force(phi, UP, np.array([[5.0, 0.0, 0.3]]), np.array([1.0]), k_n, k_t, c_d, mu, 0.0)
    assert np.allclose(f[0], [-mu * k_n * 0.01, 0.0, k_n * 0.01])


def test_penalty_force_zero_outside_radius():
    f = penalty_force(np.array([0.02, 0.011]), np.repeat(UP, 2, 0), np.zeros((2, 3)), np.ones(2), 1e3, 10, 5, 0.5,
                      0.01)
    assert np.array_equal(f, np.zeros((2, 3)))
    f = penalty_force(np.array([0.004]), UP, np.zeros((1, 3)), np.ones(1), 1e3, 10, 5, 0.5, 0.01)
    assert np.allclose(f[0], [0, 0, 1e3 * 0.006])


def test_penalty_force_stability_caps():
    m, dt = np.array([1e-3]), 1e-3
    f = penalty_force(np.array([-0.01]), UP, np.zeros((1, 3)), m, 1e9, 10, 0, 0.5, 0.0, dt=dt)
    assert f[0, 2] == pytest.approx(1e-3 / dt ** 2 * 0.01)
    f = penalty_force(np.array([-0.01]), UP, np.array([[0.0, 0.0, -1.0]]), m, 0.0, 10, 1e9, 0.5, 0.0, dt=dt)
    assert f[0, 2] == pytest.approx(1e-3 / dt)  # damping cannot reverse the approach
    f = penalty_force(np.array([-0.01]), UP, np.array([[2.0, 0, 0]]), m, 1e9, 1e9, 0, 1e9, 0.0, dt=dt)
    assert -f[0, 0] == pytest.approx(1e-3 * 2.0 / dt)  # friction cannot reverse sliding
    f = penalty_force(np.array([-0.01]), UP, np.zeros((1, 3)), m, 1e3, 10, 0, 0.5, 0.0, dt=dt,
                      approach=np.array([-0.5]))
    assert np.array_equal(f[0], np.zeros(3))  # already separating: no push


def test_particle_forces_and_third_law(rng):
    x = rng.uniform(0.1, 0.2, size=(300, 3))
    plane = Shape.plane([0.0, 0.0, 1.0], 0.15)
    w = make_world(x, [plane], v=rng.normal(size=(300, 3)) * 0.01, lin_vel=(0.01, 0, 0), ang_vel=(0, 0.2, 0))
    info = penalty_particle(w, 1e-3)
    P = w.soft.particles
    f = P.fext
    phi = sdf_eval(plane, x)
    assert np.all(f[phi >= w.r_c] == 0) and np.all(f[phi < w.r_c - 1e-3, 2] > 0)
    com = w.mirrors[0].com
    assert np.allclose(w.buffers[0].force, -f.sum(axis=0), atol=1e-14)
    assert np.allclose(w.buffers[0].torque, -np.cross(x - com, f).sum(axis=0), atol=1e-14)
    assert info["max_penetration"] == pytest.approx(max(0.0, -phi.min()))


def test_grid_node_matches_particle_formula():
    w = make_world(np.array([[0.16, 0.16, 0.16]]), [Shape.plane([0, 0, 1], 0.16 + 0.01)], mode="grid", caps=False)
    g = w.soft.grid
    g.mass[...] = 0.0
    g.momentum[...] = 0.0
    m_ref = w.soft.particles.mass[0]
    g.mass[8, 8, 8] = m_ref
    g.momentum[8, 8, 8] = m_ref * np.array([0.05, 0.0, -0.1])
    info = penalty_grid(w, 1e-3)
    s = w.mirrors[0].shapes[0]
    expect = penalty_force(np.array([-0.01]), UP, np.array([[0.05, 0.0, -0.1]]), np.array([m_ref]), s.k_n, s.k_t,
                           w.coupling.c_d, s.friction, 0.0)
    assert np.allclose(g.force[8, 8, 8], expect[0], rtol=1e-12)
    assert np.abs(g.force).sum() == pytest.approx(np.abs(expect).sum())
    assert len(info["records"]) == 1


def test_grid_scaling_and_empty_grid():
    w = make_world(np.array([[0.16, 0.16, 0.16]]), [Shape.plane([0, 0, 1], 0.17)], mode="grid", caps=False)
    g = w.soft.grid
    g.mass[...] = 0.0
    info = penalty_grid(w, 1e-3)
    assert not g.force.any() and info["records"] == [] and w.buffers[0].is_zero()
    g.mass[8, 8, 8] = 3 * w.soft.particles.mass[0]
    penalty_grid(w, 1e-3)
    assert g.force[8, 8, 8, 2] == pytest.approx(3 * 1000.0 * 0.01)


def test_default_influence_radius():
    assert make_world(np.zeros((0, 3)), []).r_c == pytest.approx(0.01)
    assert make_world(np.zeros((0, 3)), [], mode="grid").r_c == 0.0
    assert make_world(np.zeros((0, 3)), [], mode="grid", r_c=0.003).r_c == 0.003
    with pytest.raises(ValueError):
        CouplingParams(mode="mesh")


def test_sync_mirror_composes_poses(rng):
    local = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3) * 0.01)
    shape = Shape.box([0.01, 0.02, 0.03], local_pose=local)
    body_pose = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    w = make_world(np.zeros((0, 3)), [shape], pose=body_pose, lin_vel=(1, 2, 3), ang_vel=(0, 0, 1))
    w.buffers[0].add([1, 1, 1], [0, 0, 0])
    sync_rigid_to_soft(w)
    m = w.mirrors[0]
    assert np.allclose(m.shape_pose(shape).matrix(), body_pose.matrix() @ local.matrix(), atol=1e-12)
    p = np.array([0.3, 0.0, 0.1])
    assert np.allclose(m.point_velocity(p), np.array([1, 2, 3]) + np.cross([0, 0, 1], p - body_pose.apply([0.01, 0, 0])))
    assert w.buffers[0].is_zero()


def test_env_step_counters_and_rest():
    x = np.array([[0.15, 0.15, 0.15], [0.16, 0.15, 0.15]])
    w = make_world(x, [Shape.sphere(0.01)], pose=Pose.from_translation([0.05, 0.05, 0.05]))
    _, rep = env_step(w, np.zeros(0))
    assert (rep.rigid_steps, rep.soft_steps) == (25, 50)
    assert rep.time == pytest.approx(0.05)
    assert np.allclose(w.soft.particles.x, x, atol=1e-12)
    assert w.buffers[0].is_zero() and rep.max_penetration == 0.0
    with pytest.raises(ValueError):
        env_step(w, np.zeros(3))


def test_reactions_reach_pending_buffer():
    x = np.array([[0.15, 0.15, 0.155]])
    w = make_world(x, [Shape.plane([0, 0, 1], 0.16)])
    w.n_rigid = 1
    seen = []
    w.on_rigid_step = lambda w_: seen.append(w_.buffers[0].is_zero())
    _, rep = env_step(w, np.zeros(0))
    assert all(seen)  # buffers zeroed at every sync
    assert rep.max_penetration > 0
    assert np.array_equal(w.pending[0].force, w.buffers[0].force) and w.pending[0].force[2] < 0


def test_golden_press_modes_agree_on_impulse(golden_run):
    ip = golden_run("press-plane", "particle").impulse
    ig = golden_run("press-plane", "grid").impulse
    assert np.linalg.norm(ip - ig) <= 0.2 * np.linalg.norm(ip)


def test_golden_grasp_penetration_bounded(golden_run):
    run = golden_run("pinch-mini")
    assert run.max_penetration <= 2 * run.world.r_c
    assert set(run.rigid_steps) == {25} and set(run.soft_steps) == {50}
