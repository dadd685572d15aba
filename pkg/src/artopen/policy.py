"""Policy-side math: weighted-displacement aggregation and loss, goal-conditioned
features, delta actions, point-motion action extraction, oracle predictors, a
waypoint low-level controller, closed-loop rollout and the opening metric.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree
from scipy.special import softmax

from .assets import ArticulatedObject, KinematicChain, SceneConfig, door_pose_world, object_world_boxes
from .demogen import (
    Action,
    Demonstration,
    Observation,
    SubgoalEE,
    TrialResult,
    _grasp_ignore,
    _world_poses,
)
from .kinematics import CollisionChecker, CollisionWorld, IKParams, ee_frame_from_points, fk_batch, grasp_closure_check, jacobian, solve_ik_batch
from .planning import EDGE_RESOLUTION, edge_points, edges_valid
from .pointcloud import PointCloud
from .se3 import DEFAULT_GRIPPER, EEPoints, GripperTemplate, SE3Pose, axis_angle, decode_6d, encode_6d, ee_points_from_pose, fit_pose_from_points, rotation_log

APP_MAGIC = b"APP1"
LAMBDA1 = 1.0
LAMBDA2 = 1.0
MAX_STEP = 0.02
MAX_ROT_STEP = math.radians(5.0)
GRASP_POS_TOL = 0.005
GRASP_ROT_TOL = 0.05
SLIP_TOL = 0.03
DEFAULT_HORIZON = 300
OPEN_TOL = 1e-4  # radians or meters, the IK tolerance


# -- per-point predictions ----------------------------------------------------------


class PredictionFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PerPointPrediction:
    """Per scene point j: displacements (4, 3) to each EE point and a raw weight."""

    displacements: np.ndarray
    raw_weights: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.displacements, dtype=float)
        w = np.asarray(self.raw_weights, dtype=float).reshape(-1)
        if d.ndim != 3 or d.shape[1:] != (4, 3):
            raise ValueError("displacements must be (M, 4, 3)")
        if len(d) < 1 or len(d) != len(w):
            raise ValueError("need M >= 1 displacements and one raw weight per point")
        if not np.all(np.isfinite(d)) or np.any(np.isnan(w)) or np.any(w == np.inf):
            raise ValueError("prediction must be finite")
        object.__setattr__(self, "displacements", d)
        object.__setattr__(self, "raw_weights", w)

    @property
    def m(self) -> int:
        return len(self.raw_weights)

    def weights(self) -> np.ndarray:
        if np.all(self.raw_weights == -np.inf):
            raise ValueError("all raw weights are -inf")
        return softmax(self.raw_weights)


def encode_app(pred: PerPointPrediction) -> bytes:
    """"APP1", M (u64 LE), M x 12 f32 displacements, M f32 raw weights."""
    return (
        APP_MAGIC
        + struct.pack("<Q", pred.m)
        + pred.displacements.astype("<f4").tobytes()
        + pred.raw_weights.astype("<f4").tobytes()
    )


def decode_app(buf: bytes, source: str = "<bytes>") -> PerPointPrediction:
    if len(buf) < 12 or buf[:4] != APP_MAGIC:
        raise PredictionFormatError(f"{source}: bad magic")
    (m,) = struct.unpack("<Q", buf[4:12])
    if len(buf) != 12 + 52 * m:
        raise PredictionFormatError(f"{source}: expected {12 + 52 * m} bytes for M={m}, got {len(buf)}")
    d = np.frombuffer(buf, "<f4", 12 * m, 12).reshape(m, 4, 3).astype(float)
    w = np.frombuffer(buf, "<f4", m, 12 + 48 * m).astype(float)
    try:
        return PerPointPrediction(d, w)
    except ValueError as e:
        raise PredictionFormatError(f"{source}: {e}") from e


def write_app(path, pred: PerPointPrediction) -> None:
    Path(path).write_bytes(encode_app(pred))


def read_app(path) -> PerPointPrediction:
    return decode_app(Path(path).read_bytes(), str(path))


# -- aggregation and loss --------------------------------------------------------------


def _check_sizes(pc: PointCloud, pred: PerPointPrediction) -> None:
    if len(pc) != pred.m:
        raise ValueError(f"prediction has {pred.m} points, cloud has {len(pc)}")


def per_point_predictions(pc: PointCloud, pred: PerPointPrediction) -> np.ndarray:
    """(M, 4, 3): each scene point's vote p_j + delta_j for every EE point."""
    _check_sizes(pc, pred)
    return pc.positions[:, None, :] + pred.displacements


def aggregate_weighted_displacement(pc: PointCloud, pred: PerPointPrediction) -> EEPoints:
    votes = per_point_predictions(pc, pred)
    ee = np.einsum("j,jik->ik", pred.weights(), votes)
    return EEPoints(ee, float(np.linalg.norm(ee[1] - ee[2])))


def target_displacements(pc: PointCloud, target: SubgoalEE) -> np.ndarray:
    """(N, 4, 3) ground-truth displacements from every point to every goal EE point."""
    return target.ee.points[None, :, :] - pc.positions[:, None, :]


def high_level_loss(pred: PerPointPrediction, pc: PointCloud, target: SubgoalEE, lam1: float = LAMBDA1, lam2: float = LAMBDA2) -> float:
    _check_sizes(pc, pred)
    per_point = np.sum((pred.displacements - target_displacements(pc, target)) ** 2) / pred.m
    ee = aggregate_weighted_displacement(pc, pred).points
    agg = np.sum((target.ee.points - ee) ** 2) / 4.0
    return float(lam1 * per_point + lam2 * agg)


# -- features ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolicyFeatures:
    ee_obs: np.ndarray  # (4, 3)
    delta_goal: np.ndarray  # (4, 3) goal minus current
    delta_scene: np.ndarray  # (4, 3) nearest scene point minus current
    nearest: np.ndarray  # (4,) cloud indices


def build_policy_features(pc: PointCloud, current: EEPoints, goal: SubgoalEE) -> PolicyFeatures:
    if len(pc) < 1:
        raise ValueError("empty scene cloud")
    ee = current.points
    _, idx = cKDTree(pc.positions).query(ee, k=1)
    idx = np.asarray(idx, dtype=np.int64)
    return PolicyFeatures(ee.copy(), goal.ee.points - ee, pc.positions[idx] - ee, idx)


# -- actions -------------------------------------------------------------------------------


def apply_delta_action(pose: SE3Pose, width: float, a: Action, gripper: GripperTemplate = DEFAULT_GRIPPER) -> tuple[SE3Pose, float]:
    """Translation is added in the base frame; rotation is left-multiplied."""
    r = decode_6d(a.delta_rotation) @ pose.rotation
    w = float(np.clip(width + a.delta_finger, 0.0, gripper.max_opening))
    return SE3Pose(r, pose.translation + a.delta_translation), w


def extract_delta_from_point_motion(movements, current: EEPoints) -> Action:
    """Least-squares rigid motion of the current EE points onto the moved ones,
    expressed as a delta action about the hand root. The finger delta is the
    change of the finger-to-finger distance."""
    mv = np.asarray(movements, dtype=float).reshape(4, 3)
    src = current.points
    dst = src + mv
    t = fit_pose_from_points(src, dst)
    root = src[0]
    width_new = float(np.linalg.norm(dst[1] - dst[2]))
    return Action(t.apply(root) - root, encode_6d(t.rotation), width_new - float(np.linalg.norm(src[1] - src[2])))


# -- oracle high level ---------------------------------------------------------------------


def _pose_error(a: SE3Pose, b: SE3Pose) -> tuple[float, float]:
    return float(np.linalg.norm(a.translation - b.translation)), float(np.linalg.norm(rotation_log(b.rotation @ a.rotation.T)))


def oracle_high_level(
    obj: ArticulatedObject,
    scene: SceneConfig,
    theta: float,
    phase: str,
    grasp: SE3Pose,
    grasp_theta: float,
    closed_width: float,
    theta_target: float,
    gripper: GripperTemplate = DEFAULT_GRIPPER,
) -> SubgoalEE:
    """Ground-truth sub-goal. ``grasp`` is the hand pose of the chosen grasp
    with the door at ``grasp_theta``; it rides with the door. ``obj`` must
    already be scaled."""
    rel = door_pose_world(obj, grasp_theta, scene).inverse() @ grasp
    if phase == "pre_grasp":
        return SubgoalEE.from_pose(door_pose_world(obj, theta, scene) @ rel, closed_width, gripper)
    if phase == "opening":
        return SubgoalEE.from_pose(door_pose_world(obj, theta_target, scene) @ rel, closed_width, gripper)
    raise ValueError(f"unknown phase {phase!r}")


@dataclass(eq=False)
class OracleHighLevel:
    """Stateless oracle policy: decides the phase from the observation, then
    returns the pre-grasp standoff, the grasp or the fully open pose."""

    obj: ArticulatedObject  # scaled
    scene: SceneConfig
    grasp: SE3Pose
    grasp_theta: float
    closed_width: float
    theta_target: float
    standoff: float = 0.08
    gripper: GripperTemplate = DEFAULT_GRIPPER

    @classmethod
    def from_trial(cls, chain: KinematicChain, obj: ArticulatedObject, scene: SceneConfig, trial: TrialResult, standoff: float = 0.08) -> OracleHighLevel:
        ee = fk_batch(chain, trial.opening_q[0])[0][0]
        pose = SE3Pose(ee[:3, :3], ee[:3, 3])
        return cls(obj, scene, pose, trial.theta_init, trial.closed_width, trial.theta_target, standoff, chain.gripper)

    @classmethod
    def from_demo(cls, obj: ArticulatedObject, demo: Demonstration, theta_target: float, standoff: float = 0.08, gripper: GripperTemplate = DEFAULT_GRIPPER) -> OracleHighLevel:
        sg = demo.subgoals[0]
        pose = sg.pose if sg.pose is not None else ee_frame_from_points(sg.ee)
        return cls(obj, demo.scene, pose, demo.theta_init, sg.finger_width, theta_target, standoff, gripper)

    def grasp_at(self, theta: float) -> SE3Pose:
        rel = door_pose_world(self.obj, self.grasp_theta, self.scene).inverse() @ self.grasp
        return door_pose_world(self.obj, theta, self.scene) @ rel

    def phase(self, obs: Observation) -> str:
        pose = _obs_pose(obs)
        dp, dr = _pose_error(pose, self.grasp_at(obs.theta))
        if dp <= 2 * GRASP_POS_TOL and dr <= 2 * GRASP_ROT_TOL and obs.finger_width <= self.closed_width + 1e-6:
            return "opening"
        return "pre_grasp"

    def __call__(self, obs: Observation) -> SubgoalEE:
        ph = self.phase(obs)
        goal = oracle_high_level(self.obj, self.scene, obs.theta, ph, self.grasp, self.grasp_theta, self.closed_width, self.theta_target, self.gripper)
        if ph == "opening":
            return goal
        # stay on the approach line behind the grasp; head for the standoff otherwise
        pose = _obs_pose(obs)
        local = goal.pose.inverse().apply(pose.translation)
        _, dr = _pose_error(pose, goal.pose)
        on_line = np.hypot(local[0], local[1]) <= GRASP_POS_TOL and -self.standoff - GRASP_POS_TOL <= local[2] <= GRASP_POS_TOL and dr <= GRASP_ROT_TOL
        if on_line or self.standoff <= 0:
            return goal
        pre = goal.pose @ SE3Pose.from_translation([0.0, 0.0, -self.standoff])
        return SubgoalEE.from_pose(pre, self.gripper.max_opening, self.gripper)


def _obs_pose(obs: Observation) -> SE3Pose:
    if obs.pose is not None:
        return obs.pose
    frame = ee_frame_from_points(obs.ee)
    if frame is None:
        raise ValueError("observation has no pose and degenerate EE points")
    return frame


# -- low level --------------------------------------------------------------------------------


def waypoint_low_level(
    obs: Observation,
    goal: SubgoalEE,
    max_step: float = MAX_STEP,
    max_rot_step: float = MAX_ROT_STEP,
    pos_tol: float = GRASP_POS_TOL,
    rot_tol: float = GRASP_ROT_TOL,
) -> Action:
    """Bounded step toward the goal pose. The fingers move to the goal width
    once the hand is within tolerance of the goal, or at once when opening."""
    pose = _obs_pose(obs)
    gpose = goal.pose if goal.pose is not None else ee_frame_from_points(goal.ee)
    dt = gpose.translation - pose.translation
    dist = float(np.linalg.norm(dt))
    if dist > max_step:
        dt = dt * (max_step / dist)
    w = rotation_log(gpose.rotation @ pose.rotation.T)
    ang = float(np.linalg.norm(w))
    if ang < 1e-12:
        dr = np.eye(3)
    else:
        dr = axis_angle(w / ang, min(ang, max_rot_step))
    dfinger = 0.0
    if goal.finger_width > obs.finger_width or (dist <= pos_tol and ang <= rot_tol):
        dfinger = goal.finger_width - obs.finger_width
    return Action(dt, encode_6d(dr), dfinger)


# -- rollout --------------------------------------------------------------------------------------


@dataclass(eq=False)
class RolloutStep:
    q: np.ndarray
    pose: SE3Pose
    finger_width: float
    theta: float
    grasped: bool
    action: Action | None = None  # executed delta to the next step
    goal: SubgoalEE | None = None


@dataclass(eq=False)
class RolloutResult:
    status: str  # opened | horizon | collision | stalled
    theta_init: float
    final_theta: float
    steps: list = field(default_factory=list)
    slips: int = 0
    detours: int = 0


class _MovingScene:
    """Collision and limit queries against the object with the door at any value."""

    def __init__(self, chain: KinematicChain, obj: ArticulatedObject, scene: SceneConfig):
        self.chain, self.obj, self.scene = chain, obj, scene
        self.world = CollisionWorld.from_boxes(object_world_boxes(obj, scene.initial_door_angle, scene.object_pose))
        self._checkers: dict = {}

    def valid(self, qs, theta: float, width: float) -> np.ndarray:
        qs = np.atleast_2d(qs)
        touching = width <= self.obj.handle.thickness + 1e-6
        key = (touching, width)
        if key not in self._checkers:
            self._checkers[key] = CollisionChecker(self.chain, self.world, _grasp_ignore() if touching else frozenset(), width)
        wc, wr = _world_poses(self.obj, [theta], self.scene)
        inside = np.all((qs >= self.chain.lower - 1e-12) & (qs <= self.chain.upper + 1e-12), axis=1)
        return inside & ~self._checkers[key].in_collision_moving(qs, np.repeat(wc, len(qs), 0), np.repeat(wr, len(qs), 0))


def _door_projection(obj: ArticulatedObject, scene: SceneConfig, rel: SE3Pose, cmd_pts: np.ndarray, theta: float, width: float, gripper: GripperTemplate) -> float:
    """Door value whose rigidly attached EE best matches the commanded EE points."""
    j = obj.door_joint
    win = 0.3 if j.kind == "revolute" else 0.1
    lo, hi = max(j.limits[0], theta - win), min(j.limits[1], theta + win)
    local = gripper.points(width)

    def cost(th):
        p = (door_pose_world(obj, th, scene) @ rel).apply(local)
        return float(np.sum((p - cmd_pts) ** 2))

    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    best = float(res.x)
    # the bounded search never returns the interval ends exactly
    for edge in (lo, hi):
        if cost(edge) < cost(best):
            best = edge
    return best


def _posture_step(chain: KinematicChain, q: np.ndarray, q_ref: np.ndarray, gain: float) -> np.ndarray:
    """Self-motion toward ``q_ref``: the posture error projected onto the
    Jacobian null space, so the hand stays put to first order."""
    if gain <= 0:
        return q
    j = jacobian(chain, q)
    null = np.eye(chain.n) - np.linalg.pinv(j) @ j
    return chain.clamp(q + null @ (gain * (q_ref - q)))


def _detour(chain, ms: _MovingScene, goal: SE3Pose, q, theta, width, restarts, rng, ik_params, joint_step) -> list:
    """Joint-space route to an IK solution of ``goal``: the nearest solution
    whose straight joint path is free, cut into ``joint_step`` pieces."""
    starts = rng.uniform(chain.lower, chain.upper, size=(restarts, chain.n))
    sol, ok, _, _ = solve_ik_batch(chain, goal, starts, replace(ik_params, max_iters=200), seed=None)
    cand = sol[ok]
    if len(cand) == 0:
        return []
    cand = cand[ms.valid(cand, theta, width)]

    def valid(qb):
        return ms.valid(qb, theta, width)

    for c in cand[np.argsort(np.linalg.norm(cand - q, axis=1), kind="stable")]:
        if edges_valid(valid, q, c[None], EDGE_RESOLUTION / 2.0)[0]:
            return list(edge_points(q, c, joint_step)[1:])
    return []


def rollout(
    high_level: Callable[[Observation], SubgoalEE],
    low_level: Callable[[Observation, SubgoalEE], Action],
    chain: KinematicChain,
    obj: ArticulatedObject,
    scene: SceneConfig,
    horizon: int = DEFAULT_HORIZON,
    theta_target: float | None = None,
    q0=None,
    ik_params: IKParams = IKParams(max_iters=60, on_stall="drop"),
    slip_tol: float = SLIP_TOL,
    patience: int = 10,
    cloud_fn: Callable[[float], PointCloud] | None = None,
    posture_gain: float = 0.2,
    posture=None,
    detour_restarts: int = 40,
    joint_step: float = 0.05,
    seed: int = 0,
) -> RolloutResult:
    """Closed loop under the kinematic surrogate: observe, query both levels,
    apply the delta action, track it by IK and move the door.

    Tracking warm-starts IK from a null-space posture step toward ``posture``
    (the chain's home by default). While grasped the commanded EE is projected
    onto the door's single DOF and the hand is snapped to the door; a command
    farther than ``slip_tol`` from the snapped pose releases the grasp. With a
    free hand, a command IK cannot track is replaced by a collision-free
    joint-space route to the sub-goal. Ends when the door reaches
    ``theta_target``, at the horizon, on a collision, or after ``patience``
    consecutive untrackable commands. ``obj`` must be scaled.
    """
    g = chain.gripper
    theta0 = float(scene.initial_door_angle)
    if theta_target is None:
        theta_target = obj.door_joint.limits[1]
    q = np.asarray(scene.initial_robot_config if q0 is None else q0, dtype=float)
    pose = _fk_pose(chain, q)
    width = g.max_opening
    theta = theta0
    thickness = obj.handle.thickness
    rng = np.random.default_rng(seed)
    q_ref = chain.home if posture is None else np.asarray(posture, dtype=float)
    ms = _MovingScene(chain, obj, scene)
    res = RolloutResult("horizon", theta0, theta0)
    grasped = False
    rel = None
    stall = 0
    route: list = []
    res.steps.append(RolloutStep(q, pose, width, theta, grasped))
    for _ in range(max(0, horizon)):
        cloud = cloud_fn(theta) if cloud_fn is not None else None
        obs = Observation(cloud, ee_points_from_pose(pose, width, g), width, pose, theta)
        goal = high_level(obs)
        act = low_level(obs, goal)
        cmd, cmd_w = apply_delta_action(pose, width, act, g)
        new_theta = theta
        qn = None
        if route and not grasped:
            qn, cmd_w = route.pop(0), width
        else:
            route = []
            target = cmd
            if grasped and cmd_w > thickness + 1e-6:
                grasped = False
            if grasped:
                if np.array_equal(cmd.translation, pose.translation) and np.array_equal(cmd.rotation, pose.rotation):
                    target = pose
                else:
                    cmd_pts = g.points(cmd_w) @ cmd.rotation.T + cmd.translation
                    th = _door_projection(obj, scene, rel, cmd_pts, theta, cmd_w, g)
                    snapped = door_pose_world(obj, th, scene) @ rel
                    dev = np.max(np.linalg.norm(g.points(cmd_w) @ snapped.rotation.T + snapped.translation - cmd_pts, axis=1))
                    if dev > slip_tol:
                        grasped = False
                        res.slips += 1
                    else:
                        target, new_theta = snapped, th
            qk, ok, _, _ = solve_ik_batch(chain, target, _posture_step(chain, q, q_ref, posture_gain)[None], ik_params, seed=None)
            if not ok[0] and posture_gain > 0:
                qk, ok, _, _ = solve_ik_batch(chain, target, q[None], ik_params, seed=None)
            if ok[0]:
                qn = qk[0]
            elif not grasped and detour_restarts > 0 and goal.pose is not None:
                route = _detour(chain, ms, goal.pose, q, theta, width, detour_restarts, rng, ik_params, joint_step)
                if route:
                    res.detours += 1
                    qn, cmd_w = route.pop(0), width
        if qn is None:
            stall += 1
            if stall >= patience:
                res.status = "stalled"
                break
            continue
        stall = 0
        if not ms.valid(qn, new_theta, cmd_w)[0]:
            res.status = "collision"
            break
        new_pose = _fk_pose(chain, qn)
        res.steps[-1].action = Action.between(pose, width, new_pose, cmd_w)
        res.steps[-1].goal = goal
        q, pose, theta, width = qn, new_pose, new_theta, cmd_w
        if not grasped and width <= thickness + 1e-6:
            hp = door_pose_world(obj, theta, scene).apply(obj.handle.points)
            if grasp_closure_check(ee_points_from_pose(pose, width, g), hp, thickness, g)[0]:
                grasped = True
                rel = door_pose_world(obj, theta, scene).inverse() @ pose
        res.steps.append(RolloutStep(q, pose, width, theta, grasped))
        if _reached(theta, theta0, theta_target):
            res.status = "opened"
            break
    res.final_theta = theta
    return res


def _fk_pose(chain: KinematicChain, q) -> SE3Pose:
    m = fk_batch(chain, q)[0][0]
    return SE3Pose(m[:3, :3], m[:3, 3])


def _reached(theta: float, theta0: float, target: float) -> bool:
    span = target - theta0
    return span != 0 and (theta - theta0) / span >= 1.0 - OPEN_TOL / abs(span)


def normalized_opening_performance(theta0: float, theta_final: float, theta_demo: float) -> float:
    den = theta_demo - theta0
    if den == 0 or not math.isfinite(den):
        raise ValueError("demonstration opening is zero; metric undefined")
    return (theta_final - theta0) / den


def replay_demonstration(chain: KinematicChain, obj: ArticulatedObject, demo: Demonstration) -> RolloutResult:
    """Play the recorded joint trajectory back with the door at the recorded
    values, checking collisions and grasp closure after the grasp step.
    ``obj`` must be scaled for ``demo.scene``."""
    scene = demo.scene
    theta0 = demo.theta_init
    res = RolloutResult("opened", theta0, theta0)
    if not demo.steps:
        return res
    g = chain.gripper
    world = CollisionWorld.from_boxes(object_world_boxes(obj, theta0, scene.object_pose))
    qs = np.array([s.q for s in demo.steps])
    ths = np.array([s.theta for s in demo.steps])
    wc, wr = _world_poses(obj, ths, scene)
    inside = np.all((qs >= chain.lower - 1e-12) & (qs <= chain.upper + 1e-12), axis=1)
    close = demo.subgoal_steps[0]
    checkers = {}
    for k, s in enumerate(demo.steps):
        closed = k > close
        key = (closed, s.finger_width)
        if key not in checkers:
            checkers[key] = CollisionChecker(chain, world, _grasp_ignore() if closed else frozenset(), s.finger_width)
        bad = not inside[k] or checkers[key].in_collision_moving(qs[k : k + 1], wc[k : k + 1], wr[k : k + 1])[0]
        if closed and not bad:
            hp = door_pose_world(obj, s.theta, scene).apply(obj.handle.points)
            bad = not grasp_closure_check(s.ee, hp, obj.handle.thickness, g)[0]
        if bad:
            res.status = "collision" if k <= close else "slip"
            break
        res.steps.append(RolloutStep(s.q, s.pose, s.finger_width, s.theta, closed, s.action))
        res.final_theta = s.theta
    return res
