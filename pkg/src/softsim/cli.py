"""Command line entry points.

Exit codes: 0 success, 2 configuration or input error, 3 simulation
divergence, 4 metric failure (``replay``) or failed conversion (``convert``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_METRIC = 0, 2, 3, 4

log = logging.getLogger("softsim")


def _step_row(world, step, rep) -> dict:
    from .mpm.solver import kinetic_energy

    row = dict(step=step, time=rep.time, kinetic_energy=kinetic_energy(world.soft),
               max_penetration=rep.max_penetration, lost=rep.lost, clamped=rep.clamped,
               ik_failed=rep.ik_failed, limit=rep.limit)
    if world.robot is not None:
        row.update(zip(("tcp_x", "tcp_y", "tcp_z"), world.robot.tcp().translation.tolist()))
    return row


def _check_controller(world, traj):
    if world.controller.id != traj.controller_id:
        raise ValueError(f"trajectory controller {traj.controller_id!r} does not match scene controller "
                         f"{world.controller.id!r}")


def _write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["step"])
        wr.writeheader()
        wr.writerows(rows)


def cmd_run(args) -> int:
    from .config import load_scene
    from .coupling import env_step
    from .io import load_trajectory

    traj = load_trajectory(args.traj)
    world = load_scene(args.scene)
    _check_controller(world, traj)
    rows = []
    out = open(args.record, "w") if args.record else None
    try:
        for t in range(traj.steps):
            _, rep = env_step(world, traj.actions[t])
            row = _step_row(world, t, rep)
            rows.append(row)
            if out:
                out.write(json.dumps(row) + "\n")
    finally:
        if out:
            out.close()
    last = rows[-1] if rows else {}
    print(f"scene={world.meta.get('name')} steps={len(rows)} particles={world.soft.particles.n} "
          f"time={world.time:.3f} kinetic_energy={last.get('kinetic_energy', 0.0):.3e} "
          f"max_penetration={max((r['max_penetration'] for r in rows), default=0.0):.3e}")
    if args.record and rows:
        from .plotting import plot_series

        fig = Path(args.record).with_suffix(".png")
        plot_series(rows, ["kinetic_energy", "max_penetration"], fig, world.meta.get("name", ""))
        print(f"wrote {args.record} and {fig}")
    return EXIT_OK


def cmd_convert(args) -> int:
    from .config import load_scene
    from .control import make_config
    from .demo import convert_trajectory, write_trajectory
    from .io import load_trajectory

    traj = load_trajectory(args.traj)
    probe = load_scene(args.scene)
    chain = probe.robot.chain
    tgt = make_config(args.to, chain.dof, chain.lower, chain.upper)
    out, rep = convert_trajectory(traj, tgt, lambda: load_scene(args.scene), closed_loop=not args.open_loop,
                                  pos_tol=args.tol)
    out.scene = traj.scene or str(args.scene)
    write_trajectory(out, args.out)
    print(f"controller={out.controller_id} steps={out.steps} final_pos_error={rep.final_pos_error:.3e} "
          f"final_rot_error={rep.final_rot_error:.3e} saturated_steps={int(rep.saturated.sum())} "
          f"success={rep.success}")
    if not rep.success:
        print(f"conversion failed: {rep.message}", file=sys.stderr)
        return EXIT_METRIC
    return EXIT_OK


def cmd_replay(args) -> int:
    from .config import load_scene
    from .demo import replay_verify
    from .io import load_trajectory
    from .plotting import plot_depth_maps, plot_particles, plot_series
    from .scenario import evaluate_metric, pinch_target, write_maps

    traj = load_trajectory(args.traj)
    kind = None if args.metric == "auto" else args.metric
    rows = []
    res = replay_verify(traj, lambda: load_scene(args.scene), lambda w: evaluate_metric(w, kind),
                        on_step=lambda w, rep: rows.append(_step_row(w, len(rows), rep)))
    world = res.world
    kind = kind or world.meta["task"]["kind"]
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(rows, d / "replay.csv")
    if rows:
        plot_series(rows, ["kinetic_energy", "max_penetration"], d / "replay.png", f"replay {kind}")
    P = world.soft.particles
    ref = pinch_target(world) if kind == "pinch" else world.meta["initial_x"]
    plot_particles(P.x[P.active], d / "particles.png", kind, reference=ref)
    if kind == "write":
        plot_depth_maps(*write_maps(world), d / "depth.png", "write")
    print(f"metric={kind} value={res.value:.6g} success={res.success} steps={res.steps} "
          f"truncated={res.truncated} digest={res.digest[:16]}")
    if res.message:
        print(res.message, file=sys.stderr)
    return EXIT_OK if res.success else EXIT_METRIC


def cmd_bench(args) -> int:
    from .bench import GPU_REFERENCE_FPS, bench
    from .plotting import plot_bench

    counts = sorted({1, args.worlds})
    reports = [bench(args.scene, args.steps, k, args.traj, args.threads) for k in counts]
    rows = [r.row() for r in reports]
    for r in rows:
        r["gpu_reference_fps"] = f"{GPU_REFERENCE_FPS[0]:g}-{GPU_REFERENCE_FPS[1]:g}"
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(rows, d / "bench.csv")
    plot_bench(rows, d / "bench.png", GPU_REFERENCE_FPS)
    wr = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    wr.writeheader()
    wr.writerows(rows)
    print(f"# GPU reference {GPU_REFERENCE_FPS[0]:g}-{GPU_REFERENCE_FPS[1]:g} env steps/s is context, not a target; "
          f"wrote {d / 'bench.csv'} and {d / 'bench.png'}", file=sys.stderr)
    return EXIT_OK


def cmd_export(args) -> int:
    from .config import load_scene
    from .coupling import env_step
    from .io import export_particles, load_trajectory

    traj = load_trajectory(args.traj)
    world = load_scene(args.scene)
    _check_controller(world, traj)
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = [export_particles(world.soft, d / "frame_00000.ply")]
    for t in range(traj.steps):
        env_step(world, traj.actions[t])
        if (t + 1) % args.every == 0:
            written.append(export_particles(world.soft, d / f"frame_{t + 1:05d}.ply"))
    print(f"wrote {len(written)} frames to {d}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    scene_help = "scene JSON file or golden:NAME"
    traj_help = "trajectory file or golden:NAME"

    r = sub.add_parser("run", help="step a scene through a trajectory")
    r.add_argument("--scene", required=True, help=scene_help)
    r.add_argument("--traj", required=True, help=traj_help)
    r.add_argument("--record", help="JSON-lines output; a .png figure is written next to it")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("convert", help="convert a joint-position demonstration to another controller")
    c.add_argument("--traj", required=True, help=traj_help)
    c.add_argument("--to", required=True, help="target arm controller variant")
    c.add_argument("--scene", required=True, help=scene_help)
    c.add_argument("--out", required=True)
    c.add_argument("--open-loop", action="store_true", help="reference the recorded source TCP")
    c.add_argument("--tol", type=float, default=5e-3, help="final TCP position tolerance [m]")
    c.set_defaults(func=cmd_convert)

    rp = sub.add_parser("replay", help="replay a trajectory and evaluate the task metric")
    rp.add_argument("--traj", required=True, help=traj_help)
    rp.add_argument("--scene", required=True, help=scene_help)
    rp.add_argument("--metric", default="auto", choices=["auto", "fill", "write", "pinch"])
    rp.add_argument("--out-dir", default="replay_out")
    rp.set_defaults(func=cmd_replay)

    b = sub.add_parser("bench", help="throughput of 1 and K parallel worlds")
    b.add_argument("--scene", required=True, help=scene_help)
    b.add_argument("--steps", type=int, required=True)
    b.add_argument("--worlds", type=int, default=4)
    b.add_argument("--traj", help="cycle this trajectory's actions instead of holding still")
    b.add_argument("--threads", type=int, help="kernel threads per world")
    b.add_argument("--out-dir", default="bench_out")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("export", help="write particle PLY frames while replaying")
    e.add_argument("--scene", required=True, help=scene_help)
    e.add_argument("--traj", required=True, help=traj_help)
    e.add_argument("--every", type=int, default=10)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .demo import TrajectoryFormatError
    from .mpm.solver import CFLViolation, LostParticleError, SimulationDiverged

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "every", 1) < 1:
        print("error: --every must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (SimulationDiverged, LostParticleError, CFLViolation) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, TrajectoryFormatError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
