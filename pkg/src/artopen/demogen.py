"""Demonstration generation: grasp sampling on the handle, IK with restarts,
approach planning, opening under a kinematic surrogate, trial filtering and
rank-sum selection, and recording of observation/action datasets.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .assets import (
    ArticulatedObject,
    KinematicChain,
    SceneConfig,
    SceneRanges,
    door_pose_world,
    load_default_chain,
    object_to_dict,
    object_world_boxes,
    randomize_scene,
    scene_object,
)
from .kinematics import (
    CollisionChecker,
    CollisionWorld,
    IKParams,
    fk_batch,
    grasp_closure_check,
    joint_space_distance,
    solve_ik_batch,
    wrap_mask,
)
from .planning import PathQuery, PlannerSuite, PlanningError, edges_valid, path_ee_length, plan_shortest_ee
from .pointcloud import (
    N_OBS_POINTS,
    CameraModel,
    FilterParams,
    PointCloud,
    decode_apc,
    encode_apc,
    estimate_normals,
    farthest_point_sampling,
    look_at,
    observe,
    render_depth,
)
from .se3 import (
    DEFAULT_GRIPPER,
    EEPoints,
    GripperTemplate,
    SE3Pose,
    axis_angle,
    decode_6d,
    encode_6d,
    ee_points_from_pose,
    pose_from_dict,
    pose_to_dict,
)

M1 = 15
M2 = 8
M3 = 80
MAX_PERTURBATION = math.pi / 6.0
REVOLUTE_TARGET = math.radians(90.0)
REVOLUTE_STEP = math.radians(1.0)
PRISMATIC_TARGET = 0.30  # before object scaling
PRISMATIC_STEP = 0.01
REVOLUTE_MIN_OPEN = math.radians(60.0)
PRISMATIC_MIN_FRACTION = 0.6
MAX_DEMO_STEPS = 120
DATASET_SCHEMA = "artopen.dataset/1"
GRIPPER_NAMES = ("hand", "finger_a", "finger_b")

STATUSES = ("success", "ik_fail", "plan_fail", "grasp_fail", "slip")


# -- data types ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    """A grasp: the grasp center sits ``depth`` behind ``position`` along the
    approach axis (z of ``orientation``)."""

    position: np.ndarray
    orientation: np.ndarray
    source_point: int
    perturbation: float
    index: int = 0

    def __post_init__(self):
        if not abs(self.perturbation) < MAX_PERTURBATION:
            raise ValueError("perturbation must be below 30 degrees")

    def hand_pose(self, depth: float, gripper: GripperTemplate = DEFAULT_GRIPPER) -> SE3Pose:
        z = self.orientation[:, 2]
        center = self.position + depth * z
        return SE3Pose(self.orientation, center - gripper.finger_length * z)


@dataclass(frozen=True, eq=False)
class Action:
    delta_translation: np.ndarray
    delta_rotation: np.ndarray
    delta_finger: float

    def __post_init__(self):
        t = np.asarray(self.delta_translation, dtype=float).reshape(3)
        r = np.asarray(self.delta_rotation, dtype=float).reshape(6)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r)) and math.isfinite(self.delta_finger)):
            raise ValueError("action must be finite")
        decode_6d(r)
        object.__setattr__(self, "delta_translation", t)
        object.__setattr__(self, "delta_rotation", r)
        object.__setattr__(self, "delta_finger", float(self.delta_finger))

    @classmethod
    def zero(cls) -> Action:
        return cls(np.zeros(3), encode_6d(np.eye(3)), 0.0)

    @classmethod
    def between(cls, a: SE3Pose, wa: float, b: SE3Pose, wb: float) -> Action:
        """Delta taking (a, wa) to (b, wb): translation in the base frame,
        rotation left-multiplied onto the current rotation."""
        return cls(b.translation - a.translation, encode_6d(b.rotation @ a.rotation.T), wb - wa)

    def to_dict(self) -> dict:
        return {
            "delta_translation": self.delta_translation.tolist(),
            "delta_rotation": self.delta_rotation.tolist(),
            "delta_finger": self.delta_finger,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Action:
        return cls(d["delta_translation"], d["delta_rotation"], d["delta_finger"])


@dataclass(frozen=True, eq=False)
class SubgoalEE:
    ee: EEPoints
    finger_width: float
    pose: SE3Pose | None = None

    def to_dict(self) -> dict:
        d = {"ee": self.ee.points.tolist(), "finger_width": self.finger_width}
        if self.pose is not None:
            d["pose"] = pose_to_dict(self.pose)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SubgoalEE:
        pose = pose_from_dict(d["pose"]) if "pose" in d else None
        return cls(EEPoints(d["ee"], d["finger_width"]), d["finger_width"], pose)

    @classmethod
    def from_pose(cls, pose: SE3Pose, width: float, gripper: GripperTemplate = DEFAULT_GRIPPER) -> SubgoalEE:
        return cls(ee_points_from_pose(pose, width, gripper), width, pose)


@dataclass(frozen=True, eq=False)
class Observation:
    cloud: PointCloud | None
    ee: EEPoints
    finger_width: float
    pose: SE3Pose | None = None
    theta: float = 0.0


@dataclass(eq=False)
class TrialResult:
    index: int
    status: str
    final_theta: float
    stability: int = 0
    approach_ee_length: float = math.inf
    theta_init: float = 0.0
    theta_target: float = 0.0
    approach: np.ndarray | None = None
    opening_q: np.ndarray | None = None
    opening_theta: np.ndarray | None = None
    closed_width: float = 0.0
    trajectory: Demonstration | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.stability < 0:
            raise ValueError("stability must be non-negative")

    def summary(self) -> dict:
        return {
            "index": self.index,
            "status": self.status,
            "final_theta": self.final_theta,
            "stability": self.stability,
            "approach_ee_length": None if not math.isfinite(self.approach_ee_length) else self.approach_ee_length,
        }


@dataclass(eq=False)
class DemoStep:
    q: np.ndarray
    pose: SE3Pose
    finger_width: float
    theta: float
    action: Action
    subgoal: int
    cloud: PointCloud | None = None
    cloud_seed: int = 0

    @property
    def ee(self) -> EEPoints:
        return ee_points_from_pose(self.pose, self.finger_width)


@dataclass(eq=False)
class Demonstration:
    steps: list
    subgoals: tuple
    subgoal_steps: tuple
    scene: SceneConfig
    object_id: str
    theta_init: float = 0.0

    def __post_init__(self):
        n = len(self.steps)
        a, b = self.subgoal_steps
        if not (0 <= a < b < n) and not (n == 0):
            raise ValueError("subgoal step indices must be ordered and within range")

    @property
    def final_theta(self) -> float:
        return self.steps[-1].theta

    def observation(self, t: int) -> Observation:
        s = self.steps[t]
        return Observation(s.cloud, s.ee, s.finger_width, s.pose, s.theta)


# -- parameters ---------------------------------------------------------------------


@dataclass(frozen=True)
class CameraRig:
    distance: float = 1.2
    azimuths_deg: tuple = (-45.0, 45.0)
    elevation_deg: float = 30.0
    hfov_deg: float = 60.0
    height: int = 180
    width: int = 240


@dataclass(frozen=True)
class GenParams:
    m1: int = M1
    m2: int = M2
    m3: int = M3
    revolute_target: float = REVOLUTE_TARGET
    revolute_step: float = REVOLUTE_STEP
    prismatic_target: float = PRISMATIC_TARGET
    prismatic_step: float = PRISMATIC_STEP
    approach_standoff: float = 0.08
    normal_neighbors: int = 10
    ik: IKParams = field(default_factory=lambda: IKParams(on_stall="drop"))
    track_ik: IKParams = field(default_factory=lambda: IKParams(max_iters=60, on_stall="drop"))
    planner: PlannerSuite = field(default_factory=PlannerSuite)
    ranges: SceneRanges = field(default_factory=SceneRanges)
    rig: CameraRig = field(default_factory=CameraRig)
    n_points: int = N_OBS_POINTS
    max_steps: int = MAX_DEMO_STEPS
    record: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> GenParams:
        kw = dict(d)
        if "ranges" in kw:
            kw["ranges"] = SceneRanges.from_dict(kw["ranges"])
        if "rig" in kw:
            kw["rig"] = CameraRig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in kw["rig"].items()})
        if "ik" in kw:
            kw["ik"] = IKParams(**kw["ik"])
        if "track_ik" in kw:
            kw["track_ik"] = IKParams(**kw["track_ik"])
        if "planner" in kw:
            from .planning import BITStarParams, RRTStarParams

            p = dict(kw["planner"])
            if "rrt" in p:
                p["rrt"] = RRTStarParams(**p["rrt"])
            if "bit" in p:
                p["bit"] = BITStarParams(**p["bit"])
            kw["planner"] = PlannerSuite(**p)
        return cls(**kw)


def trial_seed(master: int, config: int, candidate: int) -> int:
    return int(np.random.SeedSequence([int(master), int(config), int(candidate)]).generate_state(1, np.uint64)[0] >> np.uint64(1))


# -- grasp sampling -------------------------------------------------------------------


def _front_viewpoint(sobj: ArticulatedObject, scene: SceneConfig, theta: float) -> np.ndarray:
    """A point well in front of the handle, used to orient normals outward.
    The door link's outer face looks along its local -x."""
    door = door_pose_world(sobj, theta, scene)
    return door.apply(sobj.handle.frame.translation) + 10.0 * (door.rotation @ np.array([-1.0, 0.0, 0.0]))


def sample_grasp_candidates(obj: ArticulatedObject, theta0: float, scene: SceneConfig, seed: int = 0, params: GenParams = GenParams()) -> list[GraspCandidate]:
    """``m1`` handle positions by FPS, each with ``m2`` random tilts about the
    finger-open axis. Approach (z) is anti-parallel to the handle normal; the
    finger-open axis (y) is horizontal for tall handles, vertical otherwise."""
    sobj = scene_object(obj, scene)
    h = sobj.handle
    if len(h.points) == 0:
        raise ValueError("handle has no points")
    pts = door_pose_world(sobj, theta0, scene).apply(h.points)
    k = min(params.normal_neighbors, len(pts))
    normals, valid = estimate_normals(pts, max(3, k), _front_viewpoint(sobj, scene, theta0))
    if valid.sum() * 2 < len(pts):
        raise ValueError("degenerate normals on more than half of the handle points")
    rng = np.random.default_rng(seed)
    m1 = min(params.m1, int(valid.sum()))
    vidx = np.flatnonzero(valid)
    chosen = vidx[farthest_point_sampling(pts[vidx], m1, int(rng.integers(2**31)))]
    up = np.array([0.0, 0.0, 1.0])
    out = []
    for src in chosen:
        z = -normals[src]
        if h.is_vertical:
            y = np.cross(up, z)
        else:
            y = up - np.dot(up, z) * z
        if np.linalg.norm(y) < 1e-6:
            y = np.cross(z, [1.0, 0.0, 0.0])
        y /= np.linalg.norm(y)
        x = np.cross(y, z)
        base = np.stack([x, y, z], axis=1)
        for _ in range(params.m2):
            ang = float(rng.uniform(-MAX_PERTURBATION, MAX_PERTURBATION))
            if abs(ang) >= MAX_PERTURBATION:
                ang = math.copysign(math.nextafter(MAX_PERTURBATION, 0.0), ang)
            rot = base @ axis_angle([0.0, 1.0, 0.0], ang)
            out.append(GraspCandidate(pts[src].copy(), rot, int(src), ang, len(out)))
    return out


def grasp_depth(sobj: ArticulatedObject) -> float:
    return sobj.handle.thickness / 2.0


# -- IK and opening ---------------------------------------------------------------------


FLIP_Z = SE3Pose(np.diag([-1.0, -1.0, 1.0]), np.zeros(3))


def solve_grasp_ik(
    chain: KinematicChain,
    target: SE3Pose,
    checker: CollisionChecker,
    q_current,
    seed: int = 0,
    restarts: int = M3,
    params: IKParams = IKParams(on_stall="drop"),
    symmetric: bool = True,
) -> np.ndarray | None:
    """Batched IK from ``restarts`` starts (the first one is ``q_current``);
    colliding solutions are dropped and the one nearest ``q_current`` in
    joint space is returned, or None.

    With ``symmetric`` the restarts are split between ``target`` and the same
    grasp with the fingers swapped (a half turn about the approach axis),
    which a two-finger gripper cannot tell apart."""
    if restarts <= 0:
        return None
    rng = np.random.default_rng(seed)
    q_current = np.asarray(q_current, dtype=float)
    starts = rng.uniform(chain.lower, chain.upper, size=(restarts, chain.n))
    starts[0] = q_current
    ik_seed = int(rng.integers(2**31))
    n_a = (restarts + 1) // 2 if symmetric and restarts > 1 else restarts
    q, ok, _, _ = solve_ik_batch(chain, target, starts[:n_a], params, seed=ik_seed)
    if n_a < restarts:
        starts[n_a] = q_current
        q2, ok2, _, _ = solve_ik_batch(chain, target @ FLIP_Z, starts[n_a:], params, seed=ik_seed + 1)
        q, ok = np.concatenate([q, q2]), np.concatenate([ok, ok2])
    if not ok.any():
        return None
    cand = q[ok]
    free = checker.valid_batch(cand)
    if not free.any():
        return None
    cand = cand[free]
    wrap = wrap_mask(chain)
    d = np.array([joint_space_distance(c, q_current, wrap) for c in cand])
    return cand[int(np.argmin(d))]


def opening_thetas(obj: ArticulatedObject, theta_init: float, theta_target: float, step: float) -> np.ndarray:
    j = obj.door_joint
    lo, hi = j.limits
    for v in (theta_init, theta_target):
        if v < lo - 1e-9 or v > hi + 1e-9:
            raise ValueError(f"opening range [{theta_init}, {theta_target}] outside joint limits {j.limits}")
    if step <= 0:
        raise ValueError("step must be positive")
    span = theta_target - theta_init
    n = int(math.floor(abs(span) / step + 1e-9))
    th = theta_init + math.copysign(step, span) * np.arange(n + 1)
    if abs(th[-1] - theta_target) > 1e-9:
        th = np.append(th, theta_target)
    th[-1] = theta_target
    return th


def ideal_opening_waypoints(obj: ArticulatedObject, scene: SceneConfig, eef_init: SE3Pose, theta_init: float, theta_target: float, step: float) -> list[SE3Pose]:
    """EE poses keeping the EE-to-door relative pose fixed while the door moves
    from ``theta_init`` to ``theta_target``. ``obj`` must already be scaled."""
    th = opening_thetas(obj, theta_init, theta_target, step)
    rel = door_pose_world(obj, theta_init, scene).inverse() @ eef_init
    return [door_pose_world(obj, float(t), scene) @ rel for t in th]


def commanded_target(sobj: ArticulatedObject, theta0: float, params: GenParams, scale: float) -> tuple[float, float]:
    j = sobj.door_joint
    if j.kind == "revolute":
        tgt, step = theta0 + params.revolute_target, params.revolute_step
    else:
        tgt, step = theta0 + params.prismatic_target * scale, params.prismatic_step
    return float(min(tgt, j.limits[1])), step


def _grasp_ignore() -> frozenset:
    return frozenset(frozenset((g, "handle")) for g in GRIPPER_NAMES)


def _world_poses(sobj: ArticulatedObject, thetas, scene: SceneConfig):
    cs, rs = [], []
    for t in thetas:
        boxes = object_world_boxes(sobj, float(t), scene.object_pose)
        cs.append([p.translation for _, _, p in boxes])
        rs.append([p.rotation for _, _, p in boxes])
    return np.array(cs), np.array(rs)


def execute_opening(
    chain: KinematicChain,
    obj: ArticulatedObject,
    scene: SceneConfig,
    q_grasp,
    waypoints: list[SE3Pose],
    thetas=None,
    finger_width: float | None = None,
    ik_params: IKParams = IKParams(max_iters=60, on_stall="drop"),
    index: int = 0,
) -> TrialResult:
    """Track each waypoint by IK warm-started from the previous solution while
    the door follows ``thetas``. ``obj`` must already be scaled. Stops at the
    first IK failure or collision (``ik_fail``) or closure loss (``slip``)."""
    q_grasp = np.asarray(q_grasp, dtype=float)
    if finger_width is None:
        finger_width = obj.handle.thickness
    if thetas is None:
        thetas = np.full(len(waypoints), scene.initial_door_angle)
    thetas = np.asarray(thetas, dtype=float)
    th0 = float(thetas[0]) if len(thetas) else scene.initial_door_angle
    if len(waypoints) == 0:
        return TrialResult(index, "success", th0, theta_init=th0, theta_target=th0, opening_q=q_grasp[None], opening_theta=np.array([th0]), closed_width=finger_width)
    qs = [q_grasp]
    status = "success"
    q = q_grasp
    for k in range(1, len(waypoints)):
        qk, ok, _, _ = solve_ik_batch(chain, waypoints[k], q[None], ik_params, seed=None)
        if not ok[0]:
            status = "ik_fail"
            break
        q = qk[0]
        qs.append(q)
    qs = np.array(qs)
    n = len(qs)
    th = thetas[:n]
    boxes0 = object_world_boxes(obj, th0, scene.object_pose)
    world = CollisionWorld.from_boxes(boxes0)
    checker = CollisionChecker(chain, world, _grasp_ignore(), finger_width)
    wc, wr = _world_poses(obj, th, scene)
    coll = checker.in_collision_moving(qs, wc, wr)
    coll |= ~np.all((qs >= chain.lower - 1e-12) & (qs <= chain.upper + 1e-12), axis=1)
    ee, _, _ = fk_batch(chain, qs)
    slip = np.zeros(n, dtype=bool)
    for k in range(n):
        pose = SE3Pose(ee[k, :3, :3], ee[k, :3, 3])
        hp = door_pose_world(obj, float(th[k]), scene).apply(obj.handle.points)
        slip[k] = not grasp_closure_check(ee_points_from_pose(pose, finger_width, chain.gripper), hp, obj.handle.thickness, chain.gripper)[0]
    bad = np.flatnonzero(coll | slip)
    if bad.size:
        k = int(bad[0])
        status = "ik_fail" if coll[k] else "slip"
        n = k
    if n == 0:
        return TrialResult(index, status, th0, theta_init=th0, theta_target=float(thetas[-1]), opening_q=qs[:1], opening_theta=th[:1], closed_width=finger_width)
    return TrialResult(
        index,
        status,
        float(th[n - 1]),
        theta_init=th0,
        theta_target=float(thetas[-1]),
        opening_q=qs[:n],
        opening_theta=th[:n].copy(),
        closed_width=finger_width,
    )


# -- trials --------------------------------------------------------------------------------


@dataclass(eq=False)
class SceneContext:
    chain: KinematicChain
    obj: ArticulatedObject  # unscaled
    scene: SceneConfig
    params: GenParams
    config_index: int = 0
    master_seed: int = 0

    def __post_init__(self):
        self.sobj = scene_object(self.obj, self.scene)
        self.theta0 = float(self.scene.initial_door_angle)
        self.theta_target, self.step = commanded_target(self.sobj, self.theta0, self.params, self.scene.object_scale)
        self.world = CollisionWorld.for_object(self.obj, self.theta0, self.scene)
        self.free_checker = CollisionChecker(self.chain, self.world, frozenset(), self.chain.gripper.max_opening)


def run_trial(ctx: SceneContext, cand: GraspCandidate) -> TrialResult:
    chain, sobj, p = ctx.chain, ctx.sobj, ctx.params
    seed = trial_seed(ctx.master_seed, ctx.config_index, cand.index)
    rng = np.random.default_rng(seed)
    base = dict(theta_init=ctx.theta0, theta_target=ctx.theta_target)
    grasp = cand.hand_pose(grasp_depth(sobj), chain.gripper)
    q0 = np.asarray(ctx.scene.initial_robot_config, dtype=float)
    q_grasp = solve_grasp_ik(chain, grasp, ctx.free_checker, q0, int(rng.integers(2**31)), p.m3, p.ik)
    if q_grasp is None:
        return TrialResult(cand.index, "ik_fail", ctx.theta0, **base)
    query_valid = ctx.free_checker.valid_batch
    ee = fk_batch(chain, q_grasp)[0][0]
    pose = SE3Pose(ee[:3, :3], ee[:3, 3])
    # pre-grasp standoff along the approach axis, reached by a straight joint move;
    # shorter standoffs are tried when the full one is blocked
    goal = q_grasp
    tail = []
    for frac in (1.0, 0.6, 0.3):
        if p.approach_standoff <= 0:
            break
        pre = pose @ SE3Pose.from_translation([0.0, 0.0, -frac * p.approach_standoff])
        qp, ok, _, _ = solve_ik_batch(chain, pre, q_grasp[None], p.track_ik, seed=None)
        if ok[0] and edges_valid(query_valid, qp, q_grasp[None], 0.025)[0]:
            goal = qp[0]
            tail = [q_grasp]
            break
    try:
        query = PathQuery(q0, goal, chain.lower, chain.upper, query_valid)
        path = plan_shortest_ee(chain, query, int(rng.integers(2**31)), p.planner)
    except PlanningError:
        return TrialResult(cand.index, "plan_fail", ctx.theta0, **base)
    approach = np.concatenate([path.waypoints, np.array(tail).reshape(-1, chain.n)])
    ee_len = path_ee_length(chain, approach)
    width = min(sobj.handle.thickness, chain.gripper.max_opening)
    hp = door_pose_world(sobj, ctx.theta0, ctx.scene).apply(sobj.handle.points)
    grasped, count = grasp_closure_check(ee_points_from_pose(pose, width, chain.gripper), hp, sobj.handle.thickness, chain.gripper)
    if not grasped:
        return TrialResult(cand.index, "grasp_fail", ctx.theta0, count, ee_len, approach=approach, **base)
    wps = ideal_opening_waypoints(sobj, ctx.scene, pose, ctx.theta0, ctx.theta_target, ctx.step)
    th = opening_thetas(sobj, ctx.theta0, ctx.theta_target, ctx.step)
    res = execute_opening(chain, sobj, ctx.scene, q_grasp, wps, th, width, p.track_ik, cand.index)
    res.stability = count
    res.approach_ee_length = ee_len
    res.approach = approach
    return res


def opened_amount(t: TrialResult) -> float:
    return abs(t.final_theta - t.theta_init)


def passes_threshold(t: TrialResult, kind: str) -> bool:
    if kind == "revolute":
        return opened_amount(t) >= REVOLUTE_MIN_OPEN - 1e-9
    travel = abs(t.theta_target - t.theta_init)
    return travel > 0 and opened_amount(t) >= PRISMATIC_MIN_FRACTION * travel - 1e-12


def rank_sums(trials: list[TrialResult]) -> np.ndarray:
    """Competition ranks (1 = best) by stability descending plus by approach
    EE length ascending."""
    s = np.array([t.stability for t in trials], dtype=float)
    l = np.array([t.approach_ee_length for t in trials], dtype=float)
    return rankdata(-s, method="min") + rankdata(l, method="min")


def filter_and_rank(trials: list[TrialResult], kind: str) -> TrialResult | None:
    """Drop trials that opened too little, then return the minimal rank-sum
    survivor; ties go to the lower candidate index."""
    if kind not in ("revolute", "prismatic"):
        raise ValueError(f"unknown joint kind {kind!r}")
    surv = [t for t in trials if passes_threshold(t, kind)]
    if not surv:
        return None
    rs = rank_sums(surv)
    order = sorted(range(len(surv)), key=lambda i: (rs[i], surv[i].index))
    return surv[order[0]]


# -- recording ----------------------------------------------------------------------------


def scene_cameras(sobj: ArticulatedObject, scene: SceneConfig, rig: CameraRig = CameraRig()) -> list[CameraModel]:
    """Cameras on a circle around the object center, azimuth measured from the
    object's front normal."""
    boxes = object_world_boxes(sobj, scene.initial_door_angle, scene.object_pose)
    corners = np.concatenate([p.apply(b.corners()) for _, b, p in boxes])
    center = (corners.min(axis=0) + corners.max(axis=0)) / 2.0
    front = scene.object_pose.rotation @ np.array([-1.0, 0.0, 0.0])
    base_az = math.atan2(front[1], front[0])
    el = math.radians(rig.elevation_deg)
    cams = []
    for az in rig.azimuths_deg:
        a = base_az + math.radians(az)
        eye = center + rig.distance * np.array([math.cos(el) * math.cos(a), math.cos(el) * math.sin(a), math.sin(el)])
        cams.append(CameraModel.from_fov(rig.hfov_deg, rig.height, rig.width, look_at(eye, center)))
    return cams


def render_object_cloud(
    sobj: ArticulatedObject,
    theta: float,
    scene: SceneConfig,
    cameras,
    n_points: int = N_OBS_POINTS,
    seed: int = 0,
    augment=None,
    filters: FilterParams = FilterParams(),
) -> PointCloud:
    """Object-only observation; labels are 0 for the fixed body, 1 for the moving link.
    ``augment(k, depth)`` may corrupt the depth map of camera k before back-projection."""
    boxes = object_world_boxes(sobj, theta, scene.object_pose)
    prims = [(p.translation, p.rotation, b.half_extents) for _, b, p in boxes]
    moving = np.array([1 if name == sobj.door_link else 0 for name, _, _ in boxes] + [0])
    depths = []
    for k, cam in enumerate(cameras):
        d = render_depth(prims, cam)
        d = replace(d, labels=moving[d.labels])
        depths.append(d if augment is None else augment(k, d))
    return observe(depths, n_points, filters, seed)


def _subsample(n: int, keep: list[int], cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    must = sorted(set([0, n - 1] + keep))
    rest = [i for i in range(n) if i not in must]
    k = cap - len(must)
    pick = [rest[int(round(j))] for j in np.linspace(0, len(rest) - 1, k)] if k > 0 else []
    return np.array(sorted(set(must) | set(pick)))


def record_demonstration(
    chain: KinematicChain,
    sobj: ArticulatedObject,
    scene: SceneConfig,
    trial: TrialResult,
    cameras=None,
    step_stride: int = 1,
    max_steps: int = MAX_DEMO_STEPS,
    n_points: int = N_OBS_POINTS,
    render: bool = True,
    seed: int = 0,
) -> Demonstration:
    """Steps: approach waypoints (fingers open), then opening waypoints with the
    fingers closed. The grasp substep ends at the last approach step, whose
    action closes the gripper. Action t moves step t to step t+1; the last
    action is zero. ``sobj`` must already be scaled."""
    if len(trial.approach) == 0 or len(trial.opening_q) == 0:
        raise ValueError("trial needs at least one approach and one opening configuration")
    open_w = chain.gripper.max_opening
    qs, widths, thetas = [], [], []
    for q in trial.approach:
        qs.append(q)
        widths.append(open_w)
        thetas.append(trial.theta_init)
    grasp_idx = len(qs) - 1
    for k, q in enumerate(trial.opening_q):
        qs.append(q)
        widths.append(trial.closed_width)
        thetas.append(float(trial.opening_theta[k]))
    idx = np.arange(0, len(qs), max(1, step_stride))
    if idx[-1] != len(qs) - 1:
        idx = np.append(idx, len(qs) - 1)
    if grasp_idx not in idx:
        idx = np.sort(np.append(idx, grasp_idx))
    sel = idx[_subsample(len(idx), [int(np.searchsorted(idx, grasp_idx))], max_steps)]
    qs = np.array(qs)[sel]
    widths = [widths[i] for i in sel]
    thetas = [thetas[i] for i in sel]
    g = int(np.searchsorted(sel, grasp_idx))
    ee, _, _ = fk_batch(chain, qs)
    poses = [SE3Pose(m[:3, :3], m[:3, 3]) for m in ee]
    if cameras is None and render:
        cameras = scene_cameras(sobj, scene)
    steps = []
    for t in range(len(qs)):
        act = Action.between(poses[t], widths[t], poses[t + 1], widths[t + 1]) if t + 1 < len(qs) else Action.zero()
        cloud = render_object_cloud(sobj, thetas[t], scene, cameras, n_points, seed + t) if render else None
        steps.append(DemoStep(qs[t], poses[t], widths[t], thetas[t], act, 0 if t <= g else 1, cloud, seed + t))
    sub = (
        SubgoalEE.from_pose(poses[g], trial.closed_width, chain.gripper),
        SubgoalEE.from_pose(poses[-1], widths[-1], chain.gripper),
    )
    return Demonstration(steps, sub, (g, len(steps) - 1), scene, sobj.name, trial.theta_init)


# -- dataset I/O ------------------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_demonstration(directory, demo: Demonstration) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for t, s in enumerate(demo.steps):
        rec = {
            "t": t,
            "q": s.q.tolist(),
            "pose": pose_to_dict(s.pose),
            "ee": s.ee.points.tolist(),
            "finger_width": s.finger_width,
            "theta": s.theta,
            "action": s.action.to_dict(),
            "subgoal": s.subgoal,
            "subgoal_ee": demo.subgoals[s.subgoal].to_dict(),
        }
        if s.cloud is not None:
            name = f"pc_{t}.apc"
            (d / name).write_bytes(encode_apc(s.cloud))
            rec["cloud"] = name
            rec["cloud_seed"] = s.cloud_seed
        lines.append(_dumps(rec))
    header = {
        "object_id": demo.object_id,
        "scene": demo.scene.to_dict(),
        "subgoals": [sg.to_dict() for sg in demo.subgoals],
        "subgoal_steps": list(demo.subgoal_steps),
        "theta_init": demo.theta_init,
    }
    (d / "demo.json").write_text(_dumps(header) + "\n")
    (d / "steps.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))


class DatasetError(ValueError):
    pass


def read_demonstration(directory, load_clouds: bool = True) -> Demonstration:
    d = Path(directory)
    try:
        header = json.loads((d / "demo.json").read_text())
        raw = [json.loads(l) for l in (d / "steps.jsonl").read_text().splitlines() if l.strip()]
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"{d}: {e}") from e
    steps = []
    for line, r in enumerate(raw, 1):
        cloud = None
        if load_clouds and isinstance(r, dict) and "cloud" in r:
            path = d / r["cloud"]
            try:
                cloud = decode_apc(path.read_bytes(), str(path))
            except OSError as e:
                raise DatasetError(f"{path}: {e}") from e
        try:
            steps.append(DemoStep(np.array(r["q"]), pose_from_dict(r["pose"]), r["finger_width"], r["theta"], Action.from_dict(r["action"]), r["subgoal"], cloud, r.get("cloud_seed", 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"{d / 'steps.jsonl'}: record {line}: {e}") from e
    try:
        sub = tuple(SubgoalEE.from_dict(s) for s in header["subgoals"])
        return Demonstration(steps, sub, tuple(header["subgoal_steps"]), SceneConfig.from_dict(header["scene"]), header["object_id"], header["theta_init"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{d / 'demo.json'}: {e}") from e


# -- generation driver --------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(contexts) -> None:
    _WORKER["ctx"] = contexts


def _trial_task(task) -> tuple[int, int, TrialResult]:
    ci, cand = task
    return ci, cand.index, run_trial(_WORKER["ctx"][ci], cand)


def _frame_task(task):
    ci, t, theta, frame_seed = task
    ctx = _WORKER["ctx"][ci]
    cams = scene_cameras(ctx.sobj, ctx.scene, ctx.params.rig)
    return ci, t, render_object_cloud(ctx.sobj, theta, ctx.scene, cams, ctx.params.n_points, frame_seed)


def _pool_map(fn, tasks, contexts, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(contexts)
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(contexts,)) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass(eq=False)
class ObjectResult:
    object_id: str
    scenes: list
    trials: list  # per config: list of TrialResult
    winners: list  # per config: TrialResult | None
    demos: list  # per config: Demonstration | None

    def summary(self) -> dict:
        configs = []
        for ci, (sc, tr, w) in enumerate(zip(self.scenes, self.trials, self.winners)):
            counts = {s: sum(t.status == s for t in tr) for s in STATUSES}
            entry = {"config": ci, "seed": sc.seed, "trials": len(tr), "status_counts": counts, "winner": None}
            if w is not None:
                entry["winner"] = dict(w.summary(), normalized_opening=_normalized(w))
            configs.append(entry)
        n_win = sum(w is not None for w in self.winners)
        best = max((_normalized(w) for w in self.winners if w is not None), default=None)
        return {"object_id": self.object_id, "configs": configs, "n_winners": n_win, "best_normalized_opening": best}


def _normalized(t: TrialResult) -> float:
    span = t.theta_target - t.theta_init
    return float((t.final_theta - t.theta_init) / span) if span != 0 else 0.0


def generate_for_object(
    obj: ArticulatedObject,
    n_configs: int,
    seed: int = 0,
    workers: int = 1,
    params: GenParams = GenParams(),
    chain: KinematicChain | None = None,
    out=None,
) -> ObjectResult:
    """Randomize ``n_configs`` scenes, run all grasp trials, pick a winner per
    scene and record it. Results do not depend on ``workers``."""
    if n_configs < 0:
        raise ValueError("n_configs must be non-negative")
    chain = chain or load_default_chain()
    contexts, cands = [], []
    for ci in range(n_configs):
        sseed = trial_seed(seed, ci, 2**32 - 1)
        scene = randomize_scene(obj, params.ranges, sseed, chain)
        ctx = SceneContext(chain, obj, scene, params, ci, seed)
        contexts.append(ctx)
        cands.append(sample_grasp_candidates(obj, ctx.theta0, scene, trial_seed(seed, ci, 2**32 - 2), params))
    tasks = [(ci, c) for ci in range(n_configs) for c in cands[ci]]
    results = _pool_map(_trial_task, tasks, contexts, workers)
    results.sort(key=lambda r: (r[0], r[1]))
    trials = [[r[2] for r in results if r[0] == ci] for ci in range(n_configs)]
    kind = obj.door_joint.kind
    winners = [filter_and_rank(tr, kind) for tr in trials]
    demos: list = [None] * n_configs
    frames = []
    for ci, w in enumerate(winners):
        if w is None:
            continue
        ctx = contexts[ci]
        demos[ci] = record_demonstration(chain, ctx.sobj, ctx.scene, w, None, 1, params.max_steps, params.n_points, False)
        w.trajectory = demos[ci]
        if params.record:
            base = trial_seed(seed, ci, 2**32 - 3) % 2**31
            for t, st in enumerate(demos[ci].steps):
                st.cloud_seed = base + t
                frames.append((ci, t, st.theta, base + t))
    # frames are independent, so rendering is spread over the pool one frame at a time
    for ci, t, cloud in _pool_map(_frame_task, frames, contexts, workers):
        demos[ci].steps[t].cloud = cloud
    res = ObjectResult(obj.name, [c.scene for c in contexts], trials, winners, demos)
    if out is not None:
        write_object_dataset(out, obj, res, seed, params)
    return res


def write_object_dataset(root, obj: ArticulatedObject, res: ObjectResult, seed: int, params: GenParams) -> Path:
    d = Path(root) / obj.name
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": DATASET_SCHEMA,
        "object": object_to_dict(obj),
        "seed": seed,
        "scenes": [s.to_dict() for s in res.scenes],
        "summary": res.summary(),
        "trajectories": [],
    }
    k = 0
    for ci, dm in enumerate(res.demos):
        if dm is None:
            continue
        write_demonstration(d / f"traj_{k}", dm)
        meta["trajectories"].append({"dir": f"traj_{k}", "config": ci, "steps": len(dm.steps), "final_theta": dm.final_theta, "theta_target": res.winners[ci].theta_target})
        k += 1
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return d


def read_object_dataset(directory) -> tuple[dict, list[Demonstration]]:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"{d / 'meta.json'}: {e}") from e
    if meta.get("schema") != DATASET_SCHEMA:
        raise DatasetError(f"{d / 'meta.json'}: unsupported schema {meta.get('schema')!r}")
    try:
        dirs = [d / t["dir"] for t in meta["trajectories"]]
    except (KeyError, TypeError) as e:
        raise DatasetError(f"{d / 'meta.json'}: bad trajectory list: {e}") from e
    return meta, [read_demonstration(x) for x in dirs]
