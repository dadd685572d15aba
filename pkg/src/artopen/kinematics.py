"""Serial-chain kinematics, damped least-squares IK, OBB collision checking and
the geometric grasp-closure test.

Most routines come in a batched form operating on ``(B, n)`` joint arrays;
planners and the IK restart loop lean on those to keep pure-numpy speed
acceptable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assets import ArticulatedObject, KinematicChain, SceneConfig, object_world_boxes, scene_object
from .se3 import EEPoints, GripperTemplate, SE3Pose, skew

COLLISION_MARGIN = 1e-4


# -- forward kinematics ----------------------------------------------------------


class _ChainCache:
    """Per-chain constant arrays used by the batched routines."""

    def __init__(self, chain: KinematicChain):
        self.origins = np.stack([j.origin.matrix() for j in chain.joints])
        self.axes = np.stack([j.axis for j in chain.joints])
        self.k = np.stack([skew(a) for a in self.axes])
        self.k2 = np.einsum("nij,njk->nik", self.k, self.k)
        self.revolute = np.array([j.kind == "revolute" for j in chain.joints])
        self.ee = chain.ee_offset.matrix()


_CACHE: dict[int, _ChainCache] = {}


def _cache(chain: KinematicChain) -> _ChainCache:
    c = _CACHE.get(id(chain))
    if c is None or c.origins.shape[0] != chain.n:
        c = _ChainCache(chain)
        _CACHE[id(chain)] = c
    return c


def fk_batch(chain: KinematicChain, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched FK.

    Returns ``(ee, links, joint_frames)``: end-effector transforms ``(B, 4, 4)``,
    link frames ``(B, n + 1, 4, 4)`` (index 0 is the base) and the frame of each
    joint before its motion ``(B, n, 4, 4)``.
    """
    c = _cache(chain)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    b, n = q.shape
    if n != chain.n:
        raise ValueError(f"expected {chain.n} joint values, got {n}")
    links = np.empty((b, n + 1, 4, 4))
    frames = np.empty((b, n, 4, 4))
    t = np.broadcast_to(np.eye(4), (b, 4, 4)).copy()
    links[:, 0] = t
    motion = np.broadcast_to(np.eye(4), (b, 4, 4)).copy()
    for i in range(n):
        f = t @ c.origins[i]
        frames[:, i] = f
        motion[:] = np.eye(4)
        if c.revolute[i]:
            s = np.sin(q[:, i])[:, None, None]
            co = np.cos(q[:, i])[:, None, None]
            motion[:, :3, :3] = np.eye(3) + s * c.k[i] + (1.0 - co) * c.k2[i]
        else:
            motion[:, :3, 3] = q[:, i : i + 1] * c.axes[i]
        t = f @ motion
        links[:, i + 1] = t
    ee = t @ c.ee
    return ee, links, frames


def chain_fk(chain: KinematicChain, q) -> tuple[SE3Pose, list[SE3Pose]]:
    ee, links, _ = fk_batch(chain, np.asarray(q, dtype=float)[None])
    return SE3Pose.from_matrix(ee[0]), [SE3Pose.from_matrix(m) for m in links[0]]


def ee_pose(chain: KinematicChain, q) -> SE3Pose:
    ee, _, _ = fk_batch(chain, np.asarray(q, dtype=float)[None])
    return SE3Pose.from_matrix(ee[0])


def jacobian_batch(chain: KinematicChain, q, fk=None) -> np.ndarray:
    """Geometric Jacobian ``(B, 6, n)``: rows are (linear; angular) in the base frame."""
    c = _cache(chain)
    ee, _, frames = fk if fk is not None else fk_batch(chain, q)
    axes = np.einsum("bnij,nj->bni", frames[:, :, :3, :3], c.axes)
    origins = frames[:, :, :3, 3]
    p = ee[:, None, :3, 3]
    lin = np.where(c.revolute[None, :, None], np.cross(axes, p - origins), axes)
    ang = np.where(c.revolute[None, :, None], axes, 0.0)
    return np.concatenate([lin, ang], axis=2).transpose(0, 2, 1)


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    return jacobian_batch(chain, np.asarray(q, dtype=float)[None])[0]


def rotation_log_batch(r: np.ndarray) -> np.ndarray:
    """Rotation vectors of a stack of rotation matrices ``(B, 3, 3)``."""
    cos_a = np.clip((np.trace(r, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    w = np.stack([r[:, 2, 1] - r[:, 1, 2], r[:, 0, 2] - r[:, 2, 0], r[:, 1, 0] - r[:, 0, 1]], axis=1)
    sin_a = np.sin(angle)
    out = np.empty_like(w)
    small = angle < 1e-7
    out[small] = 0.5 * w[small]
    big = np.pi - angle < 1e-4
    mid = ~small & ~big
    out[mid] = w[mid] * (angle[mid] / (2.0 * sin_a[mid]))[:, None]
    for i in np.flatnonzero(big):
        b = (r[i] + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(b)))
        axis = b[:, k] / np.sqrt(max(b[k, k], 1e-300))
        if np.dot(w[i], axis) < 0:
            axis = -axis
        out[i] = axis * angle[i]
    return out


def pose_error_batch(target: SE3Pose, ee: np.ndarray) -> np.ndarray:
    """(B, 6) error (position; rotation vector), both expressed in the base frame."""
    dp = target.translation[None] - ee[:, :3, 3]
    dr = rotation_log_batch(target.rotation[None] @ ee[:, :3, :3].transpose(0, 2, 1))
    return np.concatenate([dp, dr], axis=1)


# -- inverse kinematics ----------------------------------------------------------


@dataclass(frozen=True)
class IKParams:
    damping: float = 0.05
    max_iters: int = 200
    pos_tol: float = 1e-4
    rot_tol: float = 1e-4
    max_pos_step: float = 0.3
    max_rot_step: float = 1.0
    # a row whose error has not dropped by 1% within this many iterations is stalled
    stall_window: int = 6
    # below this residual the damping shrinks linearly, down to min_damping_ratio * damping
    damping_fade: float = 0.05
    min_damping_ratio: float = 0.05
    # stalled rows are re-drawn uniformly within limits ("reseed") or dropped
    on_stall: str = "reseed"
    restarts: int = 0
    # null-space pull toward mid-range joint values (0 disables)
    limit_gain: float = 0.0


class IKFailure(RuntimeError):
    pass


def solve_ik_batch(chain: KinematicChain, target: SE3Pose, q_init, params: IKParams = IKParams(), seed: int | None = 0):
    """Run damped least squares from every row of ``q_init`` in lockstep.

    Joints sitting on a limit and pushed outward are removed from the
    Jacobian for that step; values are clamped after every update. Returns
    ``(q, success, pos_err, rot_err)``; converged rows are frozen.
    """
    rng = np.random.default_rng(seed)
    lo, hi = chain.lower, chain.upper
    q = chain.clamp(np.atleast_2d(np.asarray(q_init, dtype=float)).copy())
    b, n = q.shape
    lam2 = params.damping**2
    done = np.zeros(b, dtype=bool)
    pos_err = np.full(b, np.inf)
    rot_err = np.full(b, np.inf)
    best = np.full(b, np.inf)
    last_gain = np.zeros(b, dtype=int)
    active = np.arange(b)
    for it in range(params.max_iters + 1):
        fk = fk_batch(chain, q[active])
        e = pose_error_batch(target, fk[0])
        pe = np.linalg.norm(e[:, :3], axis=1)
        re = np.linalg.norm(e[:, 3:], axis=1)
        pos_err[active], rot_err[active] = pe, re
        conv = (pe < params.pos_tol) & (re < params.rot_tol)
        done[active[conv]] = True
        keep = ~conv
        if it == params.max_iters:
            break
        err = pe + re
        gain = err < 0.99 * best[active]
        best[active] = np.where(gain, err, best[active])
        last_gain[active] = np.where(gain, it, last_gain[active])
        stalled = keep & (it - last_gain[active] > params.stall_window)
        if stalled.any():
            rows = active[stalled]
            if params.on_stall == "reseed":
                q[rows] = rng.uniform(lo, hi, size=(rows.size, n))
                best[rows] = np.inf
                last_gain[rows] = it
            else:
                keep &= ~stalled
        moving = keep & ~stalled
        active_next = active[keep]
        if active_next.size == 0:
            break
        if moving.any():
            rows = active[moving]
            e = e[moving]
            pe, re = pe[moving], re[moving]
            e[:, :3] *= np.minimum(1.0, params.max_pos_step / np.maximum(pe, 1e-12))[:, None]
            e[:, 3:] *= np.minimum(1.0, params.max_rot_step / np.maximum(re, 1e-12))[:, None]
            j = jacobian_batch(chain, None, fk=tuple(a[moving] for a in fk))
            # damping fades once the residual is small so near-singular targets still converge
            lam_scale = np.clip((pe + re) / params.damping_fade, params.min_damping_ratio, 1.0) ** 2
            eye6 = lam2 * lam_scale[:, None, None] * np.eye(6)
            dq = np.einsum("bji,bj->bi", j, np.linalg.solve(j @ j.transpose(0, 2, 1) + eye6, e[..., None])[..., 0])
            qr = q[rows]
            blocked = ((qr <= lo + 1e-9) & (dq < 0)) | ((qr >= hi - 1e-9) & (dq > 0))
            if blocked.any():
                j2 = j * (~blocked)[:, None, :]
                dq2 = np.einsum("bji,bj->bi", j2, np.linalg.solve(j2 @ j2.transpose(0, 2, 1) + eye6, e[..., None])[..., 0])
                dq = np.where(blocked.any(axis=1)[:, None], dq2, dq)
            if params.limit_gain > 0:
                mid, span = (lo + hi) / 2.0, (hi - lo)
                dq0 = -params.limit_gain * (qr - mid) / (span * span) * span.mean()
                jp = np.linalg.solve(j @ j.transpose(0, 2, 1) + eye6, j)  # (B, 6, n)
                dq += dq0 - np.einsum("bji,bjk,bk->bi", j, jp, dq0)
            q[rows] = np.clip(qr + dq, lo, hi)
        active = active_next
    return q, done, pos_err, rot_err


def solve_ik(chain: KinematicChain, target: SE3Pose, q_init, params: IKParams = IKParams(), seed: int | None = 0) -> np.ndarray:
    """Single-target IK from ``q_init``; ``params.restarts`` adds seeded random
    starts run alongside it. Raises :class:`IKFailure` if nothing converges."""
    q0 = np.asarray(q_init, dtype=float)[None]
    rng = np.random.default_rng(seed)
    if params.restarts > 0:
        extra = rng.uniform(chain.lower, chain.upper, size=(params.restarts, chain.n))
        q0 = np.concatenate([q0, extra])
    q, ok, _, _ = solve_ik_batch(chain, target, q0, params, seed=int(rng.integers(2**63)))
    if not ok.any():
        raise IKFailure("IK did not converge")
    return q[int(np.flatnonzero(ok)[0])]


def joint_space_distance(q1, q2, wrap=None) -> float:
    """Euclidean joint distance. Joints flagged in ``wrap`` (unlimited revolute)
    use the nearest 2*pi representative of the difference."""
    d = np.asarray(q2, dtype=float) - np.asarray(q1, dtype=float)
    if wrap is not None:
        w = np.asarray(wrap, dtype=bool)
        d = np.where(w, (d + np.pi) % (2 * np.pi) - np.pi, d)
    return float(np.linalg.norm(d))


def wrap_mask(chain: KinematicChain) -> np.ndarray:
    return np.array([j.kind == "revolute" and (j.limits[1] - j.limits[0]) >= 2 * np.pi for j in chain.joints])


# -- collision -------------------------------------------------------------------


def obb_overlap(ca, ra, ha, cb, rb, hb, margin: float = COLLISION_MARGIN) -> np.ndarray:
    """Separating-axis test for batches of oriented boxes.

    ``c*`` centers (P, 3), ``r*`` rotations (P, 3, 3) whose columns are box axes,
    ``h*`` half extents (P, 3). Boxes closer than ``margin`` count as touching.
    """
    t = cb - ca
    # candidate axes: 3 face normals of each box + 9 edge cross products
    axa = ra.transpose(0, 2, 1)  # (P, 3 axes, 3)
    axb = rb.transpose(0, 2, 1)
    cross = np.cross(axa[:, :, None, :], axb[:, None, :, :]).reshape(-1, 9, 3)
    axes = np.concatenate([axa, axb, cross], axis=1)  # (P, 15, 3)
    norms = np.linalg.norm(axes, axis=2)
    proj_a = np.abs(np.einsum("pkd,pjd->pkj", axes, axa)) @ ha[:, :, None]
    proj_b = np.abs(np.einsum("pkd,pjd->pkj", axes, axb)) @ hb[:, :, None]
    dist = np.abs(np.einsum("pkd,pd->pk", axes, t))
    sep = dist > proj_a[..., 0] + proj_b[..., 0] + margin * norms
    sep &= norms > 1e-9
    return ~sep.any(axis=1)


def _culled_overlap(ca, ra, ha, cb, rb, hb, margin: float) -> np.ndarray:
    """``obb_overlap`` behind a bounding-sphere test; only pairs whose spheres
    touch go through the full separating-axis test."""
    reach = np.linalg.norm(ha, axis=1) + np.linalg.norm(hb, axis=1) + margin
    near = np.sum((cb - ca) ** 2, axis=1) <= reach * reach
    out = np.zeros(ca.shape[0], dtype=bool)
    if near.any():
        out[near] = obb_overlap(ca[near], ra[near], ha[near], cb[near], rb[near], hb[near], margin)
    return out


def box_min_z(c, r, h) -> np.ndarray:
    return c[..., 2] - np.sum(np.abs(r[..., 2, :]) * h, axis=-1)


@dataclass(frozen=True, eq=False)
class CollisionWorld:
    """Static world boxes plus an optional floor at z = 0."""

    centers: np.ndarray
    rotations: np.ndarray
    half_extents: np.ndarray
    names: tuple[str, ...]
    tags: tuple[str, ...]
    floor: bool = True

    @classmethod
    def empty(cls, floor: bool = False) -> CollisionWorld:
        return cls(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)), (), (), floor)

    @classmethod
    def from_boxes(cls, boxes, floor: bool = True) -> CollisionWorld:
        """``boxes``: iterable of (name, BoxPrimitive, world pose)."""
        boxes = list(boxes)
        if not boxes:
            return cls.empty(floor)
        return cls(
            np.array([p.translation for _, _, p in boxes]),
            np.array([p.rotation for _, _, p in boxes]),
            np.array([b.half_extents for _, b, _ in boxes]),
            tuple(n for n, _, _ in boxes),
            tuple(b.tag for _, b, _ in boxes),
            floor,
        )

    @classmethod
    def for_object(cls, obj: ArticulatedObject, theta: float, scene: SceneConfig, floor: bool = True) -> CollisionWorld:
        sobj = scene_object(obj, scene)
        return cls.from_boxes(object_world_boxes(sobj, theta, scene.object_pose), floor)

    def translated(self, t) -> CollisionWorld:
        return CollisionWorld(self.centers + np.asarray(t), self.rotations, self.half_extents, self.names, self.tags, self.floor)


class RobotGeometry:
    """All collision boxes of a chain, including palm and two finger pads."""

    def __init__(self, chain: KinematicChain):
        self.chain = chain
        link_idx, local, half, names = [], [], [], []
        for i, link in enumerate(chain.links):
            for b in link.boxes:
                link_idx.append(i)
                local.append(b.local_pose.matrix())
                half.append(b.half_extents)
                names.append(link.name)
        self.link_idx = np.array(link_idx, dtype=int)
        self.local = np.array(local).reshape(-1, 4, 4)
        self.half = np.array(half).reshape(-1, 3)
        self.names = tuple(names)
        g = chain.gripper
        self.gripper_names = ("hand", "finger_a", "finger_b")
        self.all_names = self.names + self.gripper_names
        self.is_base = np.array([i == 0 for i in link_idx] + [False] * 3)
        self.is_gripper = np.array([False] * len(names) + [True] * 3)
        self._gripper = g
        # link index used for adjacency; gripper boxes belong to the last link
        self.adj_index = np.concatenate([self.link_idx, np.full(3, chain.n)])

    def gripper_boxes(self, finger_width: float):
        g: GripperTemplate = self._gripper
        pad_z0 = g.finger_length - g.pad_length
        palm_h = np.array([g.palm_half_height, g.palm_half_width, (pad_z0 - 0.002) / 2.0])
        palm_c = np.array([0.0, 0.0, (pad_z0 - 0.002) / 2.0])
        fh = np.array([g.pad_height / 2.0, g.finger_thickness / 2.0, g.pad_length / 2.0])
        off = finger_width / 2.0 + g.finger_thickness / 2.0
        fa = np.array([0.0, off, pad_z0 + g.pad_length / 2.0])
        fb = np.array([0.0, -off, pad_z0 + g.pad_length / 2.0])
        return np.stack([palm_c, fa, fb]), np.stack([palm_h, fh, fh])

    def world_boxes(self, q, finger_width: float):
        """Centers (B, R, 3), rotations (B, R, 3, 3), half extents (R, 3)."""
        ee, links, _ = fk_batch(self.chain, q)
        m = links[:, self.link_idx] @ self.local  # (B, Rl, 4, 4)
        gc, gh = self.gripper_boxes(finger_width)
        gcw = np.einsum("bij,kj->bki", ee[:, :3, :3], gc) + ee[:, None, :3, 3]
        gr = np.broadcast_to(ee[:, None, :3, :3], (ee.shape[0], 3, 3, 3))
        centers = np.concatenate([m[:, :, :3, 3], gcw], axis=1)
        rots = np.concatenate([m[:, :, :3, :3], gr], axis=1)
        half = np.concatenate([self.half, gh])
        return centers, rots, half


_GEOM: dict[int, RobotGeometry] = {}


def robot_geometry(chain: KinematicChain) -> RobotGeometry:
    g = _GEOM.get(id(chain))
    if g is None or g.chain is not chain:
        g = RobotGeometry(chain)
        _GEOM[id(chain)] = g
    return g


def _pair(a: str, b: str) -> frozenset:
    return frozenset((a, b))


def default_self_ignore(chain: KinematicChain) -> frozenset:
    """Adjacent link pairs plus pairs already touching at the home configuration."""
    geom = robot_geometry(chain)
    names = geom.all_names
    adj = geom.adj_index
    ignore = set()
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if abs(adj[i] - adj[j]) <= 1:
                ignore.add(_pair(names[i], names[j]))
    c, r, h = geom.world_boxes(chain.home[None], chain.gripper.max_opening)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if names[i] == names[j]:
                continue
            if obb_overlap(c[0, i : i + 1], r[0, i : i + 1], h[i : i + 1], c[0, j : j + 1], r[0, j : j + 1], h[j : j + 1])[0]:
                ignore.add(_pair(names[i], names[j]))
    return frozenset(ignore)


@dataclass
class CollisionChecker:
    """Batched collision queries for one chain against one world.

    ``ignore`` holds unordered name pairs that are never tested; names are
    robot link names ("hand", "finger_a", "finger_b" for the gripper) and
    world box names or tags.
    """

    chain: KinematicChain
    world: CollisionWorld
    ignore: frozenset = frozenset()
    finger_width: float | None = None
    margin: float = COLLISION_MARGIN
    self_collision: bool = True
    pairs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        geom = robot_geometry(self.chain)
        self.geom = geom
        if self.finger_width is None:
            self.finger_width = self.chain.gripper.max_opening
        ign = set(self.ignore) | set(default_self_ignore(self.chain))
        rn = geom.all_names
        ri, wi = [], []
        for i, a in enumerate(rn):
            for k, (b, tag) in enumerate(zip(self.world.names, self.world.tags)):
                if _pair(a, b) in ign or (tag and _pair(a, tag) in ign):
                    continue
                ri.append(i)
                wi.append(k)
        si, sj = [], []
        if self.self_collision:
            for i in range(len(rn)):
                for j in range(i + 1, len(rn)):
                    if rn[i] == rn[j] or _pair(rn[i], rn[j]) in ign:
                        continue
                    si.append(i)
                    sj.append(j)
        self.ri, self.wi = np.array(ri, dtype=int), np.array(wi, dtype=int)
        self.si, self.sj = np.array(si, dtype=int), np.array(sj, dtype=int)
        self.floor_idx = np.flatnonzero(~geom.is_base) if self.world.floor else np.zeros(0, dtype=int)
        self.pairs = (len(ri), len(si))

    def _masks(self, q, world_centers=None, world_rotations=None):
        c, r, h = self.geom.world_boxes(np.atleast_2d(q), self.finger_width)
        b = c.shape[0]
        w = self.world
        wc = w.centers[None] if world_centers is None else world_centers
        wr = w.rotations[None] if world_rotations is None else world_rotations
        out = []
        if self.ri.size:
            hit = _culled_overlap(
                c[:, self.ri].reshape(-1, 3),
                r[:, self.ri].reshape(-1, 3, 3),
                np.broadcast_to(h[self.ri], (b, self.ri.size, 3)).reshape(-1, 3),
                np.broadcast_to(wc[:, self.wi], (b, self.wi.size, 3)).reshape(-1, 3),
                np.broadcast_to(wr[:, self.wi], (b, self.wi.size, 3, 3)).reshape(-1, 3, 3),
                np.broadcast_to(w.half_extents[self.wi], (b, self.wi.size, 3)).reshape(-1, 3),
                self.margin,
            ).reshape(b, -1)
        else:
            hit = np.zeros((b, 0), dtype=bool)
        out.append(hit)
        if self.si.size:
            shit = _culled_overlap(
                c[:, self.si].reshape(-1, 3),
                r[:, self.si].reshape(-1, 3, 3),
                np.broadcast_to(h[self.si], (b, self.si.size, 3)).reshape(-1, 3),
                c[:, self.sj].reshape(-1, 3),
                r[:, self.sj].reshape(-1, 3, 3),
                np.broadcast_to(h[self.sj], (b, self.sj.size, 3)).reshape(-1, 3),
                self.margin,
            ).reshape(b, -1)
        else:
            shit = np.zeros((b, 0), dtype=bool)
        out.append(shit)
        if self.floor_idx.size:
            fz = box_min_z(c[:, self.floor_idx], r[:, self.floor_idx], h[self.floor_idx]) <= self.margin
        else:
            fz = np.zeros((b, 0), dtype=bool)
        out.append(fz)
        return out

    def in_collision_batch(self, q) -> np.ndarray:
        return np.concatenate(self._masks(q), axis=1).any(axis=1)

    def in_collision_moving(self, q, world_centers, world_rotations) -> np.ndarray:
        """Like ``in_collision_batch`` but row b sees the world boxes posed at
        ``world_centers[b]`` / ``world_rotations[b]`` (same box order and sizes)."""
        return np.concatenate(self._masks(q, world_centers, world_rotations), axis=1).any(axis=1)

    def check(self, q) -> tuple[bool, tuple[str, str] | None]:
        hit, shit, fz = (m[0] for m in self._masks(np.asarray(q, dtype=float)[None]))
        rn = self.geom.all_names
        if hit.any():
            k = int(np.flatnonzero(hit)[0])
            return True, (rn[self.ri[k]], self.world.names[self.wi[k]])
        if shit.any():
            k = int(np.flatnonzero(shit)[0])
            return True, (rn[self.si[k]], rn[self.sj[k]])
        if fz.any():
            k = int(np.flatnonzero(fz)[0])
            return True, (rn[self.floor_idx[k]], "floor")
        return False, None

    def valid(self, q) -> bool:
        return not bool(self.in_collision_batch(np.asarray(q, dtype=float)[None])[0])

    def valid_batch(self, q) -> np.ndarray:
        q = np.atleast_2d(q)
        inside = np.all((q >= self.chain.lower - 1e-12) & (q <= self.chain.upper + 1e-12), axis=1)
        return inside & ~self.in_collision_batch(q)


def check_collision(chain: KinematicChain, q, world: CollisionWorld, ignore=frozenset(), finger_width: float | None = None):
    """(collides, witness pair or None)."""
    return CollisionChecker(chain, world, frozenset(ignore), finger_width).check(q)


# -- grasp closure ----------------------------------------------------------------


def ee_frame_from_points(ee: EEPoints) -> SE3Pose | None:
    p0, pa, pb, pc = ee.points
    z = pc - p0
    y = pa - pb
    nz, ny = np.linalg.norm(z), np.linalg.norm(y)
    if nz < 1e-12 or ny < 1e-12:
        return None
    z, y = z / nz, y / ny
    x = np.cross(y, z)
    return SE3Pose(np.stack([x, y, z], axis=1), p0)


def grasp_closure_check(ee: EEPoints, handle_points, handle_thickness: float | None = None, gripper: GripperTemplate = None, tol: float = 0.005) -> tuple[bool, int]:
    """Count handle points inside the box spanned by the two finger pads.

    The box, in the hand frame, spans x in +-pad_height/2, y in +-opening/2 and
    z over the pad length ending at the fingertips. Grasped iff at least one
    point is inside and the opening does not exceed the handle thickness + tol.
    """
    from .se3 import DEFAULT_GRIPPER

    g = gripper or DEFAULT_GRIPPER
    pts = np.asarray(handle_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return False, 0
    frame = ee_frame_from_points(ee)
    if frame is None:
        return False, 0
    local = (pts - frame.translation) @ frame.rotation
    w = np.linalg.norm(ee.points[1] - ee.points[2])
    z_tip = np.linalg.norm(ee.points[3] - ee.points[0])
    inside = (
        (np.abs(local[:, 0]) <= g.pad_height / 2.0)
        & (np.abs(local[:, 1]) <= w / 2.0 + 1e-12)
        & (local[:, 2] <= z_tip + 1e-12)
        & (local[:, 2] >= z_tip - g.pad_length - 1e-12)
    )
    count = int(inside.sum())
    ok = count >= 1
    if handle_thickness is not None:
        ok = ok and w <= handle_thickness + tol
    return ok, count


# -- start configurations -----------------------------------------------------------


def point_box_distance(point, center, rotation, half) -> float:
    local = rotation.T @ (np.asarray(point) - center)
    d = np.maximum(np.abs(local) - half, 0.0)
    return float(np.linalg.norm(d))


def sample_start_config(chain: KinematicChain, obj: ArticulatedObject, scene: SceneConfig, rng: np.random.Generator, ranges) -> np.ndarray:
    """Rejection-sample a collision-free configuration near ``chain.home`` whose
    end-effector is within ``ranges.ee_max_distance`` of the object."""
    world = CollisionWorld.for_object(obj, scene.initial_door_angle, scene)
    checker = CollisionChecker(chain, world)
    batch = 50
    tries = 0
    while tries < ranges.max_tries:
        k = min(batch, ranges.max_tries - tries)
        q = chain.clamp(chain.home + rng.uniform(-ranges.joint_noise, ranges.joint_noise, size=(k, chain.n)))
        tries += k
        ee, _, _ = fk_batch(chain, q)
        free = ~checker.in_collision_batch(q)
        for i in range(k):
            if not free[i]:
                continue
            p = ee[i, :3, 3]
            d = min(point_box_distance(p, c, r, h) for c, r, h in zip(world.centers, world.rotations, world.half_extents))
            if d <= ranges.ee_max_distance:
                return q[i]
    raise RuntimeError(f"no start configuration within {ranges.ee_max_distance} m after {ranges.max_tries} samples")
