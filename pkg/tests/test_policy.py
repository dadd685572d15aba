import math

import numpy as np
import pytest

from artopen.assets import CabinetParams, door_pose_world, generate_cabinet, randomize_scene
from artopen.demogen import (
    Action,
    GenParams,
    Observation,
    SceneContext,
    SubgoalEE,
    ideal_opening_waypoints,
    record_demonstration,
    run_trial,
    sample_grasp_candidates,
    trial_seed,
)
from artopen.kinematics import ee_pose, grasp_closure_check, solve_ik
from artopen.pointcloud import PointCloud
from artopen.policy import (
    MAX_ROT_STEP,
    MAX_STEP,
    OracleHighLevel,
    PerPointPrediction,
    PredictionFormatError,
    aggregate_weighted_displacement,
    apply_delta_action,
    build_policy_features,
    decode_app,
    encode_app,
    extract_delta_from_point_motion,
    high_level_loss,
    normalized_opening_performance,
    oracle_high_level,
    read_app,
    replay_demonstration,
    rollout,
    target_displacements,
    waypoint_low_level,
    write_app,
)
from artopen.se3 import DEFAULT_GRIPPER, EEPoints, SE3Pose, axis_angle, decode_6d, ee_points_from_pose, encode_6d, random_pose, random_rotation, rotation_log


def unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_case(rng, m=50):
    pc = PointCloud(rng.normal(size=(m, 3)))
    pred = PerPointPrediction(rng.normal(size=(m, 4, 3)), rng.normal(size=m))
    return pc, pred


# -- aggregation ---------------------------------------------------------------------------


def test_uniform_weights_give_mean(rng):
    pc, pred = random_case(rng)
    pred = PerPointPrediction(pred.displacements, np.full(len(pc), 3.7))
    ee = aggregate_weighted_displacement(pc, pred).points
    direct = np.mean(pc.positions[:, None, :] + pred.displacements, axis=0)
    assert np.abs(ee - direct).max() < 1e-12


def test_consensus(rng):
    g = rng.normal(size=(4, 3))
    pc = PointCloud(rng.normal(size=(30, 3)))
    pred = PerPointPrediction(g[None] - pc.positions[:, None, :], rng.normal(scale=5, size=30))
    assert np.abs(aggregate_weighted_displacement(pc, pred).points - g).max() < 1e-12


def test_softmax_saturation(rng):
    pc, pred = random_case(rng, 100)
    w = np.zeros(100)
    w[17] = 50.0
    ee = aggregate_weighted_displacement(pc, PerPointPrediction(pred.displacements, w)).points
    assert np.abs(ee - (pc.positions[17] + pred.displacements[17])).max() < 1e-9


def test_weights_sum_to_one(rng):
    for _ in range(200):
        _, pred = random_case(rng, int(rng.integers(1, 200)))
        pred = PerPointPrediction(pred.displacements, pred.raw_weights * rng.uniform(0, 300))
        assert abs(pred.weights().sum() - 1.0) < 1e-12
    part = PerPointPrediction(np.zeros((3, 4, 3)), [-np.inf, 0.0, -np.inf])
    assert np.array_equal(part.weights(), [0.0, 1.0, 0.0])


def test_aggregation_errors(rng):
    pc, pred = random_case(rng, 5)
    with pytest.raises(ValueError, match="-inf"):
        aggregate_weighted_displacement(pc, PerPointPrediction(pred.displacements, np.full(5, -np.inf)))
    with pytest.raises(ValueError, match="points"):
        aggregate_weighted_displacement(PointCloud(np.zeros((4, 3))), pred)
    with pytest.raises(ValueError):
        PerPointPrediction(np.zeros((0, 4, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        PerPointPrediction(np.full((1, 4, 3), np.nan), np.zeros(1))


def test_translation_equivariance(rng):
    for _ in range(50):
        pc, pred = random_case(rng)
        t = rng.normal(scale=10, size=3)
        a = aggregate_weighted_displacement(pc, pred).points
        b = aggregate_weighted_displacement(PointCloud(pc.positions + t), pred).points
        assert np.abs(b - (a + t)).max() < 1e-9


# -- loss ---------------------------------------------------------------------------------------


def test_loss_toy_value():
    pc = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    g = np.tile([0.0, 1.0, 0.0], (4, 1))
    target = SubgoalEE(EEPoints(g), 0.0)
    d = np.stack([np.tile([0.0, 1.0, 0.0], (4, 1)), np.zeros((4, 3))])
    pred = PerPointPrediction(d, [0.0, 0.0])
    # per point: (0 + 4 * 2) / 2 = 4; aggregate (0.5, 0.5, 0) at each EE point: 4 * 0.5 / 4 = 0.5
    assert high_level_loss(pred, pc, target) == pytest.approx(4.5, abs=1e-12)
    assert high_level_loss(pred, pc, target, 2.0, 3.0) == pytest.approx(9.5, abs=1e-12)


def test_loss_zero_iff_perfect(rng):
    pc = PointCloud(rng.normal(size=(20, 3)))
    target = SubgoalEE(EEPoints(rng.normal(size=(4, 3))), 0.0)
    perfect = PerPointPrediction(target_displacements(pc, target), rng.normal(size=20))
    assert high_level_loss(perfect, pc, target) < 1e-24
    for _ in range(100):
        noisy = PerPointPrediction(perfect.displacements + rng.normal(scale=1e-3, size=(20, 4, 3)), perfect.raw_weights)
        assert high_level_loss(noisy, pc, target) > 0
    # wrong per-point votes that still average to the target: only the first term sees them
    d = perfect.displacements.copy()
    d[0] += 1.0
    d[1] -= 1.0
    balanced = PerPointPrediction(d, np.zeros(20))
    assert np.abs(aggregate_weighted_displacement(pc, balanced).points - target.ee.points).max() < 1e-12
    assert high_level_loss(balanced, pc, target, 0.0, 1.0) < 1e-24
    assert high_level_loss(balanced, pc, target, 1.0, 0.0) == pytest.approx(2 * 12 / 20, abs=1e-12)


# -- features ---------------------------------------------------------------------------------


def test_features(rng):
    pc = PointCloud(rng.normal(size=(300, 3)))
    cur = EEPoints(rng.normal(size=(4, 3)))
    f = build_policy_features(pc, cur, SubgoalEE(cur, 0.0))
    assert np.all(f.delta_goal == 0)
    brute = np.argmin(np.linalg.norm(pc.positions[None] - cur.points[:, None], axis=2), axis=1)
    assert np.array_equal(f.nearest, brute)
    assert np.allclose(f.delta_scene, pc.positions[brute] - cur.points, atol=1e-15)
    one = build_policy_features(PointCloud([[1.0, 2.0, 3.0]]), cur, SubgoalEE(cur, 0.0))
    assert np.allclose(one.delta_scene, np.array([1.0, 2.0, 3.0]) - cur.points)
    with pytest.raises(ValueError):
        build_policy_features(PointCloud(np.zeros((0, 3))), cur, SubgoalEE(cur, 0.0))


# -- actions -----------------------------------------------------------------------------------


def test_apply_delta_action_examples(rng):
    pose = random_pose(rng)
    p, w = apply_delta_action(pose, 0.03, Action.zero())
    assert p.allclose(pose, 1e-15) and w == 0.03
    p, _ = apply_delta_action(pose, 0.03, Action([0.01, 0, 0], encode_6d(np.eye(3)), 0.0))
    assert np.allclose(p.translation, pose.translation + [0.01, 0, 0], atol=1e-15)
    assert np.allclose(p.rotation, pose.rotation, atol=1e-12)
    r = random_rotation(rng)
    p, _ = apply_delta_action(pose, 0.03, Action([0, 0, 0], encode_6d(r), 0.0))
    assert np.allclose(p.rotation, r @ pose.rotation, atol=1e-12)
    assert apply_delta_action(pose, 0.03, Action([0, 0, 0], encode_6d(np.eye(3)), 1.0))[1] == DEFAULT_GRIPPER.max_opening
    assert apply_delta_action(pose, 0.03, Action([0, 0, 0], encode_6d(np.eye(3)), -1.0))[1] == 0.0


def test_recorded_action_recomposes(rng):
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        wa, wb = rng.uniform(0, 0.08, 2)
        act = Action.between(a, wa, b, wb)
        p, w = apply_delta_action(a, wa, act)
        assert p.allclose(b, 1e-9) and abs(w - wb) < 1e-12


def test_extract_delta_exact(rng):
    cur_pose = random_pose(rng)
    cur = ee_points_from_pose(cur_pose, 0.04)
    z = extract_delta_from_point_motion(np.zeros((4, 3)), cur)
    assert np.allclose(z.delta_translation, 0, atol=1e-12) and np.allclose(decode_6d(z.delta_rotation), np.eye(3), atol=1e-12)
    assert abs(z.delta_finger) < 1e-15
    for _ in range(200):
        t = random_pose(rng)
        moved = t.apply(cur.points)
        act = extract_delta_from_point_motion(moved - cur.points, cur)
        p, w = apply_delta_action(cur_pose, 0.04, act)
        assert p.allclose(t @ cur_pose, 1e-9) and abs(w - 0.04) < 1e-12


def test_extract_delta_least_squares(rng):
    cur_pose = random_pose(rng)
    cur = ee_points_from_pose(cur_pose, 0.06)
    for _ in range(10):
        mv = rng.normal(scale=0.05, size=(4, 3))
        act = extract_delta_from_point_motion(mv, cur)
        dst = cur.points + mv
        p, _ = apply_delta_action(cur_pose, 0.06, act)
        fit = (p @ cur_pose.inverse()).apply(cur.points)
        best = np.sum((fit - dst) ** 2)
        for _ in range(2000):
            r = axis_angle(unit(rng), rng.normal(scale=0.1)) @ (p @ cur_pose.inverse()).rotation
            cand = cur.points @ r.T + (p @ cur_pose.inverse()).translation + rng.normal(scale=0.01, size=3)
            assert np.sum((cand - dst) ** 2) >= best - 1e-12


# -- APP1 -----------------------------------------------------------------------------------------


def test_app_round_trip(tmp_path, rng):
    pc, pred = random_case(rng, 37)
    write_app(tmp_path / "p.app", pred)
    back = read_app(tmp_path / "p.app")
    assert np.array_equal(back.displacements, pred.displacements.astype(np.float32).astype(float))
    assert np.array_equal(back.raw_weights, pred.raw_weights.astype(np.float32).astype(float))
    buf = encode_app(pred)
    assert len(buf) == 4 + 8 + 37 * 48 + 37 * 4 and buf[:4] == b"APP1"
    assert np.frombuffer(buf[4:12], "<u8")[0] == 37


def test_app_corrupt(rng):
    _, pred = random_case(rng, 3)
    buf = encode_app(pred)
    for bad in (b"", b"APP2" + buf[4:], buf[:-1], buf + b"\0"):
        with pytest.raises(PredictionFormatError):
            decode_app(bad)
    nan = bytearray(buf)
    nan[12:16] = np.float32(np.nan).tobytes()
    with pytest.raises(PredictionFormatError):
        decode_app(bytes(nan), "x.app")


# -- low level --------------------------------------------------------------------------------------


def obs_at(pose, width=0.08):
    return Observation(None, ee_points_from_pose(pose, width), width, pose)


def test_low_level_examples(rng):
    pose = random_pose(rng)
    a = waypoint_low_level(obs_at(pose), SubgoalEE.from_pose(pose, 0.08))
    assert np.all(a.delta_translation == 0) and np.array_equal(decode_6d(a.delta_rotation), np.eye(3)) and a.delta_finger == 0
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    goal = SE3Pose(pose.rotation, pose.translation + d)
    a = waypoint_low_level(obs_at(pose), SubgoalEE.from_pose(goal, 0.08), max_step=0.02)
    assert np.linalg.norm(a.delta_translation) == pytest.approx(0.02, abs=1e-12)
    assert np.allclose(a.delta_translation / 0.02, d, atol=1e-12)


def test_low_level_converges(rng):
    for _ in range(50):
        pose = random_pose(rng)
        goal = SE3Pose(axis_angle(unit(rng), rng.uniform(0, math.pi)) @ pose.rotation, pose.translation + rng.normal(scale=0.3, size=3))
        sub = SubgoalEE.from_pose(goal, 0.02)
        dist = np.linalg.norm(goal.translation - pose.translation)
        ang = np.linalg.norm(rotation_log(goal.rotation @ pose.rotation.T))
        budget = math.ceil(max(dist / MAX_STEP, ang / MAX_ROT_STEP)) + 5
        w = 0.08
        for _ in range(budget):
            pose, w = apply_delta_action(pose, w, waypoint_low_level(obs_at(pose, w), sub))
        assert pose.allclose(goal, 1e-9) and w == pytest.approx(0.02)


# -- oracle and rollout --------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def prismatic_winner(chain):
    p = GenParams(record=False)
    obj = generate_cabinet(CabinetParams(kind="prismatic"), seed=0)
    scene = randomize_scene(obj, p.ranges, trial_seed(0, 0, 2**32 - 1), chain)
    ctx = SceneContext(chain, obj, scene, p, 0, 0)
    for c in sample_grasp_candidates(ctx.obj, ctx.theta0, ctx.scene, 0):
        t = run_trial(ctx, c)
        if t.status == "success":
            return ctx, t
    pytest.fail("no successful trial")


def test_oracle_subgoals(chain, prismatic_winner):
    ctx, t = prismatic_winner
    hl = OracleHighLevel.from_trial(chain, ctx.sobj, ctx.scene, t)
    pre = oracle_high_level(ctx.sobj, ctx.scene, ctx.theta0, "pre_grasp", hl.grasp, hl.grasp_theta, hl.closed_width, hl.theta_target)
    q = solve_ik(chain, pre.pose, t.approach[-1])
    reached = ee_pose(chain, q)
    hp = door_pose_world(ctx.sobj, ctx.theta0, ctx.scene).apply(ctx.sobj.handle.points)
    assert grasp_closure_check(ee_points_from_pose(reached, hl.closed_width), hp, ctx.sobj.handle.thickness)[0]
    op = oracle_high_level(ctx.sobj, ctx.scene, ctx.theta0, "opening", hl.grasp, hl.grasp_theta, hl.closed_width, hl.theta_target)
    last = ideal_opening_waypoints(ctx.sobj, ctx.scene, hl.grasp, ctx.theta0, ctx.theta_target, ctx.step)[-1]
    assert op.pose.allclose(last, 1e-12)
    again = oracle_high_level(ctx.sobj, ctx.scene, ctx.theta0, "opening", hl.grasp, hl.grasp_theta, hl.closed_width, hl.theta_target)
    assert np.array_equal(again.ee.points, op.ee.points)
    with pytest.raises(ValueError):
        oracle_high_level(ctx.sobj, ctx.scene, 0.0, "lift", hl.grasp, 0.0, 0.02, 0.3)


def test_rollout_trivial_cases(chain, prismatic_winner):
    ctx, t = prismatic_winner
    hl = OracleHighLevel.from_trial(chain, ctx.sobj, ctx.scene, t)
    r = rollout(hl, waypoint_low_level, chain, ctx.sobj, ctx.scene, horizon=0, theta_target=ctx.theta_target)
    assert r.final_theta == ctx.theta0 and len(r.steps) == 1
    stay = lambda obs: SubgoalEE.from_pose(obs.pose, obs.finger_width)
    r = rollout(stay, waypoint_low_level, chain, ctx.sobj, ctx.scene, horizon=40, theta_target=ctx.theta_target)
    assert r.final_theta == ctx.theta0 and r.status == "horizon"


def test_rollout_oracle_opens(chain, prismatic_winner):
    ctx, t = prismatic_winner
    hl = OracleHighLevel.from_trial(chain, ctx.sobj, ctx.scene, t)
    r = rollout(hl, waypoint_low_level, chain, ctx.sobj, ctx.scene, theta_target=ctx.theta_target)
    assert normalized_opening_performance(ctx.theta0, r.final_theta, ctx.theta_target) >= 0.95
    assert any(s.grasped for s in r.steps)


def test_replay_recorded_demo(chain, prismatic_winner):
    ctx, t = prismatic_winner
    demo = record_demonstration(chain, ctx.sobj, ctx.scene, t, render=False)
    r = replay_demonstration(chain, ctx.sobj, demo)
    assert r.status == "opened"
    assert normalized_opening_performance(ctx.theta0, r.final_theta, t.final_theta) == 1.0
    # the grasp step and the first opening step share the configuration
    g = demo.subgoal_steps[0]
    assert np.array_equal(demo.steps[g].q, demo.steps[g + 1].q)


def test_metric_examples():
    assert normalized_opening_performance(0.1, 1.2, 1.2) == 1.0
    assert normalized_opening_performance(0.1, 0.1, 1.2) == 0.0
    assert normalized_opening_performance(0.0, math.radians(45), math.radians(90)) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        normalized_opening_performance(0.3, 0.5, 0.3)
