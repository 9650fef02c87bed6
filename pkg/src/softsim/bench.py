"""Throughput benchmark: one or several independent worlds in worker processes."""
from __future__ import annotations

import multiprocessing as mp
import os
import queue as queue_mod
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .control import normalize

__all__ = ["BenchReport", "bench", "hold_action", "GPU_REFERENCE_FPS"]

# single-environment GPU throughput quoted for the reference implementation; context only
GPU_REFERENCE_FPS = (17.0, 18.0)


@dataclass
class BenchReport:
    scene: str
    steps: int
    worlds: int
    particles: int
    threads: int
    deterministic: bool
    wall_s: float
    env_steps_per_s: float
    substeps_per_s: float
    aggregate_env_steps_per_s: float
    digests: list = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("digests")
        d["digest"] = self.digests[0][:16] if self.digests else ""
        return d


def hold_action(world) -> np.ndarray:
    """Normalized action that keeps the robot where it is."""
    r = world.robot
    if r is None:
        return np.zeros(0)
    parts = []
    for _, cfg in world.controller.components:
        if cfg.variant == "gripper_pos":
            phys = r.q[-1:]
        elif cfg.variant == "joint_pos":
            phys = r.arm_q
        elif cfg.variant == "joint_pos_vel":
            phys = np.r_[r.arm_q, np.zeros(cfg.dof)]
        else:
            phys = np.zeros(cfg.action_dim)
        parts.append(normalize(cfg, phys)[0])
    return np.concatenate(parts)


def _actions(world, traj, steps):
    if traj is not None and traj.steps and traj.controller_id == world.controller.id:
        idx = np.arange(steps) % traj.steps
        return traj.actions[idx].astype(float)
    return np.tile(hold_action(world), (steps, 1))


def _worker(scene, traj_ref, steps, threads, barrier, queue):
    from .config import load_scene
    from .coupling import env_step
    from .io import load_trajectory
    from .mpm.solver import set_threads, state_digest

    n_threads = set_threads(threads)
    traj = load_trajectory(traj_ref) if traj_ref else None
    world = load_scene(scene)
    acts = _actions(world, traj, steps)
    # compile kernels outside the timed region
    warm = world.copy()
    env_step(warm, acts[0])
    barrier.wait()
    t0 = time.monotonic()
    sub0 = world.soft.substeps
    for a in acts:
        env_step(world, a)
    t1 = time.monotonic()
    queue.put(dict(t0=t0, t1=t1, substeps=world.soft.substeps - sub0, particles=int(world.soft.particles.n),
                   threads=n_threads, deterministic=bool(world.meta.get("deterministic", True)),
                   digest=state_digest(world.soft)))


def bench(scene: str, steps: int, worlds: int = 1, traj: str | None = None, threads: int | None = None,
          timeout: float = 3600.0) -> BenchReport:
    """Run ``worlds`` copies of ``scene`` for ``steps`` control steps each, in parallel processes.

    Workers use ``threads`` compiled-kernel threads each (default: the CPU
    count divided among the worlds). If ``traj`` names a trajectory with the
    scene's controller its actions are cycled, otherwise the robot holds still.
    """
    if steps < 1 or worlds < 1:
        raise ValueError("steps and worlds must be positive")
    if threads is None:
        threads = max(1, (os.cpu_count() or 1) // worlds)
    ctx = mp.get_context("spawn")
    barrier = ctx.Barrier(worlds)
    queue = ctx.Queue()
    procs = [ctx.Process(target=_worker, args=(scene, traj, steps, threads, barrier, queue)) for _ in range(worlds)]
    for p in procs:
        p.start()
    res, deadline = [], time.monotonic() + timeout
    try:
        while len(res) < worlds:
            try:
                res.append(queue.get(timeout=0.5))
            except queue_mod.Empty:
                failed = [p.exitcode for p in procs if p.exitcode not in (0, None)]
                if failed or time.monotonic() > deadline:
                    barrier.abort()
                    raise RuntimeError(f"bench worker failed (exit codes {failed})" if failed
                                       else "bench timed out")
    finally:
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
    wall = max(r["t1"] for r in res) - min(r["t0"] for r in res)
    per = [steps / (r["t1"] - r["t0"]) for r in res]
    sub = [r["substeps"] / (r["t1"] - r["t0"]) for r in res]
    return BenchReport(scene, steps, worlds, res[0]["particles"], res[0]["threads"], res[0]["deterministic"], wall,
                       float(np.mean(per)), float(np.mean(sub)), worlds * steps / wall, [r["digest"] for r in res])
