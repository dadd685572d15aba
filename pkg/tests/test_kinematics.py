import copy
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from artopen.assets import BoxPrimitive, chain_to_dict, parse_chain
from artopen.kinematics import (
    CollisionChecker,
    CollisionWorld,
    IKFailure,
    IKParams,
    chain_fk,
    check_collision,
    ee_pose,
    grasp_closure_check,
    jacobian,
    joint_space_distance,
    obb_overlap,
    solve_ik,
)
from artopen.se3 import SE3Pose, ee_points_from_pose, random_rotation, rot_z, rotation_log


def one_dof_chain(kind="revolute", axis=(0, 0, 1)):
    doc = {
        "serial": True,
        "links": [{"name": "base"}, {"name": "arm"}],
        "joints": [{"name": "j", "kind": kind, "parent": "base", "child": "arm", "axis": list(axis), "origin": {"translation": [0.1, 0.0, 0.2]}, "limits": [-3.0, 3.0]}],
        "ee": {"pose": {"translation": [0.5, 0.0, 0.0]}},
        "home": [0.0],
    }
    return parse_chain(doc)


def hand_fk(chain, q):
    t = SE3Pose()
    for j, v in zip(chain.joints, q):
        t = t @ j.origin @ j.motion(v)
    return t @ chain.ee_offset


def test_fk_matches_hand_composition(chain, rng):
    assert chain_fk(chain, chain.home)[0].allclose(hand_fk(chain, chain.home), 1e-12)
    for _ in range(20):
        q = rng.uniform(chain.lower, chain.upper)
        assert ee_pose(chain, q).allclose(hand_fk(chain, q), 1e-12)
    _, links = chain_fk(chain, chain.home)
    assert len(links) == chain.n + 1


def test_fk_single_revolute_90():
    c = one_dof_chain()
    p = ee_pose(c, [math.pi / 2])
    assert np.allclose(p.translation, [0.1, 0.5, 0.2], atol=1e-12)
    assert np.allclose(p.rotation, rot_z(math.pi / 2), atol=1e-12)


def test_jacobian_one_dof():
    c = one_dof_chain()
    q = [0.7]
    r = ee_pose(c, q).translation - np.array([0.1, 0.0, 0.2])
    assert np.allclose(jacobian(c, q)[:, 0], np.r_[np.cross([0, 0, 1], r), [0, 0, 1]], atol=1e-12)
    p = one_dof_chain("prismatic", (1, 0, 0))
    assert np.allclose(jacobian(p, [0.3])[:, 0], [1, 0, 0, 0, 0, 0], atol=1e-15)


def test_jacobian_finite_differences(chain, rng):
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        q = rng.uniform(chain.lower, chain.upper)
        j = jacobian(chain, q)
        fd = np.zeros_like(j)
        for i in range(chain.n):
            dq = np.zeros(chain.n)
            dq[i] = h
            a, b = ee_pose(chain, q + dq), ee_pose(chain, q - dq)
            fd[:3, i] = (a.translation - b.translation) / (2 * h)
            fd[3:, i] = rotation_log(a.rotation @ b.rotation.T) / (2 * h)
        worst = max(worst, np.abs(j - fd).max())
    assert worst < 1e-5


def test_ik_zero_error_start(chain):
    q = chain.home.copy()
    assert np.array_equal(solve_ik(chain, ee_pose(chain, q), q), q)


def test_ik_reachable_targets(chain, rng):
    ok = 0
    for i in range(200):
        target = ee_pose(chain, rng.uniform(chain.lower, chain.upper))
        q0 = rng.uniform(chain.lower, chain.upper)
        try:
            q = solve_ik(chain, target, q0, seed=i)
        except IKFailure:
            continue
        got = ee_pose(chain, q)
        assert np.linalg.norm(got.translation - target.translation) < 1e-3
        assert np.linalg.norm(rotation_log(got.rotation.T @ target.rotation)) < 1e-3
        assert np.all(q >= chain.lower) and np.all(q <= chain.upper)
        ok += 1
    assert ok >= 190


def test_ik_unreachable(chain):
    with pytest.raises(IKFailure):
        solve_ik(chain, SE3Pose.from_translation([10.0, 0, 0]), chain.home, IKParams(max_iters=100))


def test_joint_distance():
    q = np.array([0.1, -0.4, 2.0])
    assert joint_space_distance(q, q) == 0.0
    r = np.array([0.5, 0.3, -1.0])
    assert joint_space_distance(q, r) == joint_space_distance(r, q)
    assert joint_space_distance([0.0], [2 * math.pi - 0.1], wrap=[True]) == pytest.approx(0.1, abs=1e-12)
    assert joint_space_distance([0.0], [2 * math.pi - 0.1]) == pytest.approx(2 * math.pi - 0.1)


# -- collision ----------------------------------------------------------------------


def lp_overlap(ca, ra, ha, cb, rb, hb):
    # feasibility of a point inside both boxes
    a = np.vstack([ra.T, -ra.T, rb.T, -rb.T])
    b = np.concatenate([ha + ra.T @ ca, ha - ra.T @ ca, hb + rb.T @ cb, hb - rb.T @ cb])
    res = linprog(np.zeros(3), A_ub=a, b_ub=b, bounds=[(None, None)] * 3, method="highs")
    return res.status == 0


def test_obb_matches_lp_oracle(rng):
    checked = 0
    for _ in range(600):
        ca, cb = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        ra, rb = random_rotation(rng), random_rotation(rng)
        ha, hb = rng.uniform(0.05, 0.7, 3), rng.uniform(0.05, 0.7, 3)
        # skip near-contact pairs where the answer depends on rounding
        lo = lp_overlap(ca, ra, ha * (1 - 1e-6), cb, rb, hb * (1 - 1e-6))
        hi = lp_overlap(ca, ra, ha * (1 + 1e-6), cb, rb, hb * (1 + 1e-6))
        if lo != hi:
            continue
        got = obb_overlap(ca[None], ra[None], ha[None], cb[None], rb[None], hb[None], margin=0.0)[0]
        assert got == lo
        assert obb_overlap(cb[None], rb[None], hb[None], ca[None], ra[None], ha[None], margin=0.0)[0] == got
        checked += 1
    assert checked > 500


def test_margin_is_inclusive():
    eye = np.eye(3)[None]
    h = np.ones((1, 3)) * 0.5
    touching = obb_overlap(np.zeros((1, 3)), eye, h, np.array([[1.0 + 1e-4, 0, 0]]), eye, h, margin=1e-4)[0]
    apart = obb_overlap(np.zeros((1, 3)), eye, h, np.array([[1.0 + 2e-4, 0, 0]]), eye, h, margin=1e-4)[0]
    assert touching and not apart


def box_world(center, half, name="body"):
    return CollisionWorld.from_boxes([(name, BoxPrimitive(half), SE3Pose.from_translation(center))], floor=False)


def test_collision_free_space_and_inside_cabinet(chain):
    assert check_collision(chain, chain.home, CollisionWorld.empty(floor=True)) == (False, None)
    p = ee_pose(chain, chain.home).translation
    hit, pair = check_collision(chain, chain.home, box_world(p, [0.3, 0.3, 0.3]))
    assert hit and pair[1] == "body"
    far = box_world(p + [3.0, 0, 0], [0.1, 0.1, 0.1])
    assert not check_collision(chain, chain.home, far)[0]
    # ignored pairs are never reported
    ign = frozenset(frozenset((n, "body")) for n in [l.name for l in chain.links] + ["hand", "finger_a", "finger_b"])
    assert not check_collision(chain, chain.home, box_world(p, [0.3, 0.3, 0.3]), ign)[0]


def test_collision_translation_invariance(chain, rng):
    t = np.array([0.7, -0.4, 0.0])
    doc = chain_to_dict(chain)
    moved_doc = copy.deepcopy(doc)
    moved_doc["joints"][0]["origin"]["translation"] = (np.array(doc["joints"][0]["origin"]["translation"]) + t).tolist()
    for b in moved_doc["links"][0]["boxes"]:
        b["pose"]["translation"] = (np.array(b["pose"]["translation"]) + t).tolist()
    moved = parse_chain(moved_doc)
    boxes = [("b%d" % k, BoxPrimitive(rng.uniform(0.05, 0.2, 3)), SE3Pose(random_rotation(rng), rng.uniform([-0.6, -0.6, 0.2], [0.6, 0.6, 1.0]))) for k in range(6)]
    world = CollisionWorld.from_boxes(boxes, floor=True)
    qs = rng.uniform(chain.lower, chain.upper, size=(300, chain.n))
    a = CollisionChecker(chain, world).in_collision_batch(qs)
    b = CollisionChecker(moved, world.translated(t)).in_collision_batch(qs)
    assert np.array_equal(a, b) and a.any() and not a.all()


def test_valid_batch_respects_limits(chain):
    checker = CollisionChecker(chain, CollisionWorld.empty())
    q = np.stack([chain.home, chain.upper + 0.1])
    assert checker.valid_batch(q).tolist() == [True, False]


# -- grasp closure ------------------------------------------------------------------


def test_closure_counts_match_brute_force(rng):
    pose = SE3Pose(random_rotation(rng), [0.3, 0.1, 0.5])
    ee = ee_points_from_pose(pose, 0.025)
    local = rng.uniform([-0.02, -0.03, 0.04], [0.02, 0.03, 0.12], size=(500, 3))
    world = pose.apply(local)
    want = int(((np.abs(local[:, 0]) <= 0.01) & (np.abs(local[:, 1]) <= 0.0125) & (local[:, 2] >= 0.06) & (local[:, 2] <= 0.10)).sum())
    ok, n = grasp_closure_check(ee, world, handle_thickness=0.02)
    assert n == want and ok
    ok, n = grasp_closure_check(ee, world, handle_thickness=0.01)
    assert not ok and n == want


def test_closure_far_and_empty():
    ee = ee_points_from_pose(SE3Pose(), 0.02)
    assert grasp_closure_check(ee, np.array([[0.3, 0.0, 0.1]]) + [0, 0.3, 0]) == (False, 0)
    assert grasp_closure_check(ee, np.zeros((0, 3))) == (False, 0)
    bar = np.stack([np.zeros(9), np.zeros(9), np.linspace(0.07, 0.09, 9)], axis=1)
    assert grasp_closure_check(ee, bar, 0.02) == (True, 9)
