"""Scene configuration schema and world construction."""
from __future__ import annotations

import json
import logging
import math
import warnings
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .control import CompositeController, make_config
from .coupling import CouplingParams, World
from .geometry import PANDA_HOME, Pose, chain_from_joints, compose, inverse, panda_chain
from .mpm.constitutive import PRESETS, Material, PARAMETER_RANGES, check_material_ranges
from .mpm.solver import MpmGrid, Particles, SoftState, seed_box
from .rigid import FloorContact, Gripper, RigidBody, Robot, Weld
from .sdf import Shape, read_sdf_volume

log = logging.getLogger(__name__)

__all__ = ["SceneConfig", "ConfigError", "load_scene", "load_config", "build_world", "parse_config"]


class ConfigError(ValueError):
    """Invalid scene configuration; the message names the offending field path."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


Vec3 = List[float]


class PoseCfg(_Model):
    position: Vec3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    rotvec: Vec3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)

    def pose(self) -> Pose:
        return Pose.from_rotvec(self.rotvec, self.position)


class GridCfg(_Model):
    length: float = Field(gt=0)
    dims: List[int] = Field(min_length=3, max_length=3)
    origin: Vec3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    boundary: Dict[Literal["x_min", "x_max", "y_min", "y_max", "z_min", "z_max"],
                   Literal["sticky", "slip"]] = Field(default_factory=dict)


class MaterialCfg(_Model):
    preset: Optional[Literal["soft-clay", "stiff-clay"]] = None
    density: Optional[float] = Field(default=None, gt=0)
    youngs_modulus: Optional[float] = Field(default=None, gt=0)
    poisson_ratio: Optional[float] = Field(default=None, gt=0, lt=0.5)
    yield_stress: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _complete(self):
        explicit = [self.density, self.youngs_modulus, self.poisson_ratio, self.yield_stress]
        if self.preset is None and any(v is None for v in explicit):
            raise ValueError("give a preset or all of density, youngs_modulus, poisson_ratio, yield_stress")
        return self

    def material(self, name: str) -> Material:
        base = PRESETS[self.preset]["material"] if self.preset else None
        pick = lambda v, attr: v if v is not None else getattr(base, attr)  # noqa: E731
        return Material(pick(self.density, "density"), pick(self.youngs_modulus, "youngs_modulus"),
                        pick(self.poisson_ratio, "poisson_ratio"), pick(self.yield_stress, "yield_stress"), name)


class BoxCfg(_Model):
    lo: Vec3 = Field(min_length=3, max_length=3)
    hi: Vec3 = Field(min_length=3, max_length=3)


class SourceCfg(_Model):
    box: BoxCfg
    material: str
    particle_volume: Optional[float] = Field(default=None, gt=0)
    velocity: Vec3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)


class ShapeCfg(_Model):
    kind: Literal["plane", "sphere", "box", "capsule", "volume"]
    normal: Optional[Vec3] = None
    offset: float = 0.0
    radius: Optional[float] = None
    half_extents: Optional[Vec3] = None
    half_length: Optional[float] = None
    file: Optional[str] = None
    pose: PoseCfg = Field(default_factory=PoseCfg)
    friction: float = Field(default=0.5, ge=0)
    k_n: Optional[float] = Field(default=None, gt=0)
    k_t: Optional[float] = Field(default=None, gt=0)


class BodyCfg(_Model):
    name: str
    mode: Literal["dynamic", "kinematic"] = "dynamic"
    mass: float = 1.0
    inertia: Vec3 = Field(default_factory=lambda: [1e-3, 1e-3, 1e-3], min_length=3, max_length=3)
    com: Vec3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    pose: PoseCfg = Field(default_factory=PoseCfg)
    velocity: Vec3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    angular_velocity: Vec3 = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    shapes: List[ShapeCfg] = Field(default_factory=list)


class JointCfg(_Model):
    type: Literal["revolute", "prismatic"]
    axis: Vec3 = Field(min_length=3, max_length=3)
    limits: List[float] = Field(min_length=2, max_length=2)
    offset: PoseCfg = Field(default_factory=PoseCfg)
    name: str = ""


class ChainCfg(_Model):
    joints: List[JointCfg] = Field(min_length=1)
    tcp: PoseCfg = Field(default_factory=PoseCfg)


class GripperCfg(_Model):
    axis: Vec3 = Field(min_length=3, max_length=3)
    lower: float
    upper: float
    grip0: float = 0.0
    offset: PoseCfg = Field(default_factory=PoseCfg)
    finger_shapes: List[ShapeCfg] = Field(default_factory=list)


class ControllerCfg(_Model):
    name: str
    variant: Literal["joint_pos", "joint_delta_pos", "joint_target_delta_pos", "ee_delta_pos", "ee_delta_pose",
                     "ee_target_delta_pos", "ee_target_delta_pose", "joint_vel", "joint_pos_vel",
                     "joint_delta_pos_vel", "gripper_pos"]
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    kp: Optional[Union[float, List[float]]] = None
    kd: Optional[Union[float, List[float]]] = None


class RobotCfg(_Model):
    name: str = "robot"
    chain: Union[Literal["panda"], ChainCfg] = "panda"
    base: PoseCfg = Field(default_factory=PoseCfg)
    q0: Optional[List[float]] = None
    v_max: Union[float, List[float]] = 2.0
    gripper: Optional[GripperCfg] = None
    link_shapes: Dict[int, List[ShapeCfg]] = Field(default_factory=dict)
    controller: List[ControllerCfg] = Field(default_factory=lambda: [ControllerCfg(name="arm", variant="joint_pos")])


class WeldCfg(_Model):
    body: str
    link: int
    k_lin: float = Field(default=2000.0, gt=0)
    c_lin: float = Field(default=20.0, ge=0)
    k_ang: float = Field(default=1.0, gt=0)
    c_ang: float = Field(default=0.02, ge=0)


class FloorCfg(_Model):
    height: float = 0.0
    k: float = Field(default=1e4, gt=0)
    c: float = Field(default=50.0, ge=0)
    friction: float = Field(default=0.5, ge=0)


class CouplingCfg(_Model):
    mode: Literal["particle", "grid"] = "particle"
    k_n: float = Field(default=1e3, gt=0)
    k_t: float = Field(default=10.0, gt=0)
    c_d: float = Field(default=10.0, ge=0)
    r_c: Optional[float] = Field(default=None, gt=0)
    lost_threshold: float = Field(default=0.01, ge=0, le=1)


class SteppingCfg(_Model):
    dt_soft: float = Field(default=1e-3, gt=0)
    n_soft: int = Field(default=2, ge=1)
    n_rigid: int = Field(default=25, ge=1)
    control_hz: float = Field(default=20.0, gt=0)


class TaskCfg(_Model):
    kind: Literal["fill", "write", "pinch"]
    region: Optional[BoxCfg] = None
    resolution: Optional[List[int]] = None
    stamp_depth: Optional[float] = None
    target_rects: List[List[float]] = Field(default_factory=list)
    squash: Vec3 = Field(default_factory=lambda: [1.0, 1.0, 1.0])


class SceneConfig(_Model):
    name: str = "scene"
    seed: int = 0
    deterministic: bool = True
    gravity: Vec3 = Field(default_factory=lambda: [0.0, 0.0, -9.81], min_length=3, max_length=3)
    grid: GridCfg
    materials: Dict[str, MaterialCfg] = Field(min_length=1)
    particles: List[SourceCfg] = Field(default_factory=list)
    bodies: List[BodyCfg] = Field(default_factory=list)
    robot: Optional[RobotCfg] = None
    welds: List[WeldCfg] = Field(default_factory=list)
    floor: Optional[FloorCfg] = None
    coupling: CouplingCfg = Field(default_factory=CouplingCfg)
    stepping: SteppingCfg = Field(default_factory=SteppingCfg)
    drive_disturbance: Optional[List[float]] = None
    task: Optional[TaskCfg] = None

    @model_validator(mode="after")
    def _consistent(self):
        s = self.stepping
        prod = s.control_hz * s.n_rigid * s.n_soft * s.dt_soft
        if not math.isclose(prod, 1.0, rel_tol=1e-9):
            raise ValueError(f"control_hz * n_rigid * n_soft * dt_soft must equal 1, got {prod:.6g}")
        for src in self.particles:
            if src.material not in self.materials:
                raise ValueError(f"particle source uses unknown material {src.material!r}")
        return self


def _field_path(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_config(data: dict) -> SceneConfig:
    try:
        return SceneConfig.model_validate(data)
    except ValidationError as e:
        msgs = [f"{_field_path(err)}: {err['msg']}" for err in e.errors()]
        raise ConfigError("invalid scene config: " + "; ".join(msgs)) from None


def load_config(path) -> SceneConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    return parse_config(data)


def _shape(c: ShapeCfg, k_n: float, k_t: float, base_dir: Path) -> Shape:
    kw = dict(local_pose=c.pose.pose(), friction=c.friction, k_n=c.k_n or k_n, k_t=c.k_t or k_t)
    try:
        if c.kind == "plane":
            return Shape.plane(c.normal or [0, 0, 1], c.offset, **kw)
        if c.kind == "sphere":
            return Shape.sphere(c.radius, **kw)
        if c.kind == "box":
            return Shape.box(c.half_extents, **kw)
        if c.kind == "capsule":
            return Shape.capsule(c.half_length, c.radius, **kw)
        return Shape.from_volume(read_sdf_volume(base_dir / c.file), **kw)
    except (TypeError, KeyError) as e:
        raise ConfigError(f"shape of kind {c.kind!r} is missing parameters ({e})") from None


def _check_grid(cfg: SceneConfig):
    lo, hi = PARAMETER_RANGES["grid_length"]
    if not lo <= cfg.grid.length <= hi:
        warnings.warn(f"grid.length {cfg.grid.length} outside [{lo}, {hi}]", stacklevel=3)


def build_world(cfg: SceneConfig, base_dir=".") -> World:
    base_dir = Path(base_dir)
    _check_grid(cfg)
    rng = np.random.default_rng(cfg.seed)
    names = list(cfg.materials)
    mats = [cfg.materials[n].material(n) for n in names]
    for m in mats:
        check_material_ranges(m)
    parts = None
    for src in cfg.particles:
        mcfg = cfg.materials[src.material]
        vol = src.particle_volume or (PRESETS[mcfg.preset]["particle_volume"] if mcfg.preset else None)
        if vol is None:
            raise ConfigError(f"particle source for {src.material!r} needs particle_volume")
        lo, hv = PARAMETER_RANGES["particle_volume"]
        if not lo <= vol <= hv:
            warnings.warn(f"particle volume {vol} outside [{lo}, {hv}]", stacklevel=2)
        x = seed_box(src.box.lo, src.box.hi, vol, rng)
        mi = names.index(src.material)
        p = Particles.create(x, vol, mats[mi].density, mi, np.tile(src.velocity, (len(x), 1)))
        parts = p if parts is None else parts.concat(p)
    if parts is None:
        parts = Particles.create(np.zeros((0, 3)), 1.0, 1.0)
    g = cfg.grid
    grid = MpmGrid(g.length, tuple(g.dims), np.array(g.origin), dict(g.boundary))
    soft = SoftState(parts, grid, mats, np.array(cfg.gravity), cfg.stepping.dt_soft)
    cp = cfg.coupling
    bodies = []
    for b in cfg.bodies:
        shapes = [_shape(s, cp.k_n, cp.k_t, base_dir) for s in b.shapes]
        bodies.append(RigidBody(b.name, b.pose.pose(), np.array(b.velocity), np.array(b.angular_velocity), b.mass,
                                np.array(b.inertia), np.array(b.com), shapes, b.mode))
    robot, controller = None, CompositeController()
    if cfg.robot is not None:
        robot, controller = _build_robot(cfg.robot, cp, base_dir)
    welds = []
    all_names = [b.name for b in bodies]
    for wc in cfg.welds:
        if wc.body not in all_names:
            raise ConfigError(f"welds: unknown body {wc.body!r}")
        if robot is None or not 0 <= wc.link < robot.chain.dof:
            raise ConfigError(f"welds: link index {wc.link} out of range")
        bi = all_names.index(wc.body)
        rel = compose(inverse(robot.links[wc.link].pose), bodies[bi].pose)
        welds.append(Weld(bi, len(bodies) + wc.link, rel, wc.k_lin, wc.c_lin, wc.k_ang, wc.c_ang))
    floor = FloorContact(cfg.floor.height, cfg.floor.k, cfg.floor.c, cfg.floor.friction) if cfg.floor else None
    world = World(soft, bodies, robot, controller, cfg.stepping.n_rigid, cfg.stepping.n_soft,
                  CouplingParams(cp.mode, cp.c_d, cp.r_c), welds, floor,
                  None if cfg.drive_disturbance is None else np.array(cfg.drive_disturbance, dtype=float),
                  cp.lost_threshold)
    world.meta["name"] = cfg.name
    world.meta["deterministic"] = cfg.deterministic
    world.meta["initial_x"] = soft.particles.x.copy()
    log.info("scene %s: %d particles, %d bodies", cfg.name, soft.particles.n, len(bodies))
    if cfg.task is not None:
        t = cfg.task
        world.meta["task"] = dict(kind=t.kind, region=None if t.region is None else (tuple(t.region.lo), tuple(t.region.hi)),
                                  resolution=t.resolution, stamp_depth=t.stamp_depth, target_rects=t.target_rects,
                                  squash=t.squash)
    return world


def _build_robot(rc: RobotCfg, cp: CouplingCfg, base_dir: Path):
    if rc.chain == "panda":
        chain = panda_chain(rc.base.pose())
        q0 = PANDA_HOME if rc.q0 is None else rc.q0
    else:
        joints = [dict(type=j.type, axis=j.axis, limits=j.limits, offset=j.offset.pose(), name=j.name)
                  for j in rc.chain.joints]
        chain = chain_from_joints(joints, rc.chain.tcp.pose(), rc.base.pose())
        q0 = np.zeros(chain.dof) if rc.q0 is None else rc.q0
    gripper, grip0 = None, 0.0
    if rc.gripper is not None:
        gc = rc.gripper
        gripper = Gripper(np.array(gc.axis), gc.lower, gc.upper, gc.offset.pose(),
                          [_shape(s, cp.k_n, cp.k_t, base_dir) for s in gc.finger_shapes])
        grip0 = gc.grip0
    link_shapes = {int(k): [_shape(s, cp.k_n, cp.k_t, base_dir) for s in v] for k, v in rc.link_shapes.items()}
    robot = Robot(chain, q0, gripper, grip0, link_shapes, rc.v_max, rc.name)
    comps = []
    for c in rc.controller:
        if c.variant == "gripper_pos":
            if gripper is None:
                raise ConfigError("robot.controller: gripper_pos needs a gripper")
            cfg = make_config(c.variant, 1, lower=c.lower or [gripper.lower], upper=c.upper or [gripper.upper],
                              kp=c.kp, kd=c.kd)
        else:
            cfg = make_config(c.variant, chain.dof, chain.lower, chain.upper, c.lower, c.upper, c.kp, c.kd)
        comps.append((c.name, cfg))
    return robot, CompositeController(comps)


def load_scene(path) -> World:
    """Build a world from a JSON scene file or ``golden:NAME``."""
    s = str(path)
    if s.startswith("golden:"):
        from .golden import golden_config

        return build_world(parse_config(golden_config(s.split(":", 1)[1])))
    return build_world(load_config(path), Path(path).parent)
