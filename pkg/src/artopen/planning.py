"""Joint-space motion planning (RRT*, a lazy batch-informed tree search) and
path post-processing: shortcutting, cubic B-spline smoothing and end-effector
path length.

Validity predicates are batched: they take a (B, d) array of configurations
and return a (B,) boolean array. Edges are checked by straight-line
interpolation at half the query resolution, so a path returned here also
passes a re-check at that finer spacing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .assets import KinematicChain
from .kinematics import fk_batch

EDGE_RESOLUTION = 0.05

Validity = Callable[[np.ndarray], np.ndarray]


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PathQuery:
    start: np.ndarray
    goal: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    validity: Validity
    resolution: float = EDGE_RESOLUTION

    def __post_init__(self):
        for name in ("start", "goal", "lower", "upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        d = self.start.size
        if not (self.goal.size == self.lower.size == self.upper.size == d):
            raise ValueError("query dimensions disagree")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def dim(self) -> int:
        return self.start.size

    def in_bounds(self, q) -> np.ndarray:
        q = np.atleast_2d(q)
        return np.all((q >= self.lower - 1e-12) & (q <= self.upper + 1e-12), axis=1)

    def valid(self, q) -> np.ndarray:
        q = np.atleast_2d(q)
        ok = self.in_bounds(q)
        if ok.any():
            ok[ok] = np.asarray(self.validity(q[ok]), dtype=bool)
        return ok


@dataclass(frozen=True, eq=False)
class Path:
    waypoints: np.ndarray
    cost_history: tuple = ()

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        object.__setattr__(self, "waypoints", w)

    def __len__(self) -> int:
        return self.waypoints.shape[0]

    def length(self) -> float:
        return joint_path_length(self.waypoints)

    def to_list(self) -> list:
        return self.waypoints.tolist()


def joint_path_length(w) -> float:
    w = np.atleast_2d(w)
    if w.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(w, axis=0), axis=1).sum())


def edge_points(a, b, resolution: float) -> np.ndarray:
    """Samples along a->b including both ends, spaced at most ``resolution``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / resolution)))
    t = np.arange(n + 1)[:, None] / n
    return a + t * (b - a)


def densify(w, resolution: float) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape[0] < 2:
        return w.copy()
    parts = [edge_points(w[i], w[i + 1], resolution)[:-1] for i in range(w.shape[0] - 1)]
    return np.concatenate(parts + [w[-1:]])


def edges_valid(validity: Validity, a, b, resolution: float, lower=None, upper=None) -> np.ndarray:
    """Validity of each straight edge a[i] -> b[i], checked in a single batch."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    samples, owner = [], []
    for i in range(a.shape[0]):
        s = edge_points(a[i], b[i], resolution)
        samples.append(s)
        owner.append(np.full(s.shape[0], i))
    if not samples:
        return np.zeros(0, dtype=bool)
    s = np.concatenate(samples)
    ok = np.asarray(validity(s), dtype=bool)
    if lower is not None:
        ok &= np.all((s >= lower - 1e-12) & (s <= upper + 1e-12), axis=1)
    bad = np.zeros(a.shape[0], dtype=bool)
    bad[np.concatenate(owner)[~ok]] = True
    return ~bad


def _check_edges(query: PathQuery, a, b) -> np.ndarray:
    return edges_valid(query.validity, a, b, query.resolution / 2.0, query.lower, query.upper)


def path_valid(query_or_validity, waypoints, resolution: float | None = None) -> bool:
    if isinstance(query_or_validity, PathQuery):
        w = np.atleast_2d(waypoints)
        if w.shape[0] == 1:
            return bool(query_or_validity.valid(w)[0])
        return bool(_check_edges(query_or_validity, w[:-1], w[1:]).all())
    w = np.atleast_2d(waypoints)
    if w.shape[0] == 1:
        return bool(np.asarray(query_or_validity(w))[0])
    return bool(edges_valid(query_or_validity, w[:-1], w[1:], resolution or EDGE_RESOLUTION / 2.0).all())


def _check_endpoints(query: PathQuery) -> None:
    ok = query.valid(np.stack([query.start, query.goal]))
    if not ok[0]:
        raise PlanningError("start configuration is invalid")
    if not ok[1]:
        raise PlanningError("goal configuration is invalid")


def _trivial(query: PathQuery) -> Path | None:
    """Single waypoint for start == goal, straight edge when it is free."""
    _check_endpoints(query)
    if np.array_equal(query.start, query.goal):
        return Path(query.start[None], (0.0,))
    if _check_edges(query, query.start[None], query.goal[None])[0]:
        c = float(np.linalg.norm(query.goal - query.start))
        return Path(np.stack([query.start, query.goal]), (c,))
    return None


def _unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def rewire_gamma(lower, upper) -> float:
    """RRT* connection constant from the free-space volume bound."""
    d = len(lower)
    vol = float(np.prod(np.asarray(upper) - np.asarray(lower)))
    return 2.0 * (1.0 + 1.0 / d) ** (1.0 / d) * (vol / _unit_ball_volume(d)) ** (1.0 / d)


# -- RRT* -------------------------------------------------------------------------


@dataclass(frozen=True)
class RRTStarParams:
    max_iters: int = 600
    step: float = 0.4
    goal_bias: float = 0.1
    rewire_radius: float | None = None  # None: shrinking radius from the asymptotic formula
    max_neighbors: int = 10
    refine_iters: int = 100  # iterations kept after the first solution


def plan_rrt_star(query: PathQuery, params: RRTStarParams = RRTStarParams(), seed: int = 0) -> Path:
    quick = _trivial(query)
    if quick is not None:
        return quick
    rng = np.random.default_rng(seed)
    d = query.dim
    cap = params.max_iters + 2
    nodes = np.empty((cap, d))
    parent = np.full(cap, -1, dtype=np.int64)
    cost = np.zeros(cap)
    children: list[list[int]] = [[] for _ in range(cap)]
    nodes[0] = query.start
    n = 1
    goal_idx = -1
    gamma = rewire_gamma(query.lower, query.upper)
    history: list[float] = []
    stop_at = params.max_iters

    def reparent(child: int, new_parent: int, new_cost: float) -> None:
        old = parent[child]
        if old >= 0:
            children[old].remove(child)
        parent[child] = new_parent
        children[new_parent].append(child)
        delta = cost[child] - new_cost
        stack = [child]
        while stack:
            k = stack.pop()
            cost[k] -= delta
            stack.extend(children[k])

    for it in range(params.max_iters):
        if it >= stop_at:
            break
        u = rng.random()
        if u < params.goal_bias / 2.0:
            target = query.goal
        elif u < params.goal_bias:
            # around the goal, so a blocked nearest node does not stall the bias
            target = np.clip(query.goal + rng.normal(scale=params.step, size=d), query.lower, query.upper)
        else:
            target = rng.uniform(query.lower, query.upper)
        dist = np.linalg.norm(nodes[:n] - target, axis=1)
        near = int(np.argmin(dist))
        if dist[near] < 1e-12:
            if goal_idx >= 0:
                history.append(float(cost[goal_idx]))
            continue
        new = nodes[near] + (target - nodes[near]) * min(1.0, params.step / dist[near])
        if goal_idx >= 0 and np.linalg.norm(new - query.goal) < 1e-12:
            history.append(float(cost[goal_idx]))
            continue
        if params.rewire_radius is None:
            r = min(gamma * (math.log(n + 1) / (n + 1)) ** (1.0 / d), params.step)
        else:
            r = params.rewire_radius
        dn = np.linalg.norm(nodes[:n] - new, axis=1)
        cand = np.flatnonzero(dn <= max(r, dn[near] + 1e-12))
        cand = cand[np.argsort(dn[cand], kind="stable")][: params.max_neighbors]
        if near not in cand:
            cand = np.append(cand, near)
        ok = _check_edges(query, nodes[cand], np.broadcast_to(new, (cand.size, d)))
        if not ok.any():
            if goal_idx >= 0:
                history.append(float(cost[goal_idx]))
            continue
        good = cand[ok]
        via = cost[good] + dn[good]
        best = int(good[np.argmin(via)])
        k = n
        nodes[k] = new
        parent[k] = best
        cost[k] = float(via.min())
        children[best].append(k)
        n += 1
        # rewire neighbours through the new node
        for j, dj in zip(good, dn[good]):
            if j == best:
                continue
            c_new = cost[k] + dj
            if c_new < cost[j] - 1e-12:
                reparent(int(j), k, c_new)
        if goal_idx < 0 and np.linalg.norm(query.goal - new) <= params.step and n < cap:
            if np.linalg.norm(query.goal - new) < 1e-12:
                goal_idx = k
            elif _check_edges(query, new[None], query.goal[None])[0]:
                goal_idx = n
                nodes[n] = query.goal
                parent[n] = k
                cost[n] = cost[k] + np.linalg.norm(query.goal - new)
                children[k].append(n)
                n += 1
            if goal_idx >= 0:
                stop_at = min(params.max_iters, it + 1 + params.refine_iters)
        if goal_idx >= 0:
            history.append(float(cost[goal_idx]))
    if goal_idx < 0:
        raise PlanningError(f"RRT* found no path within {params.max_iters} iterations")
    return Path(_trace(nodes, parent, goal_idx), tuple(history))


def _trace(nodes, parent, idx) -> np.ndarray:
    out = []
    while idx >= 0:
        out.append(nodes[idx])
        idx = parent[idx]
    return np.array(out[::-1])


# -- batch-informed lazy search -----------------------------------------------------


@dataclass(frozen=True)
class BITStarParams:
    batch_size: int = 100
    max_batches: int = 6
    radius_scale: float = 1.1
    max_radius: float = 3.0


def sample_informed(rng, start, goal, c_best: float, lower, upper, count: int) -> np.ndarray:
    """Uniform samples from the prolate hyperspheroid {x : |x-s| + |x-g| <= c_best}
    intersected with the bounds (rejection, up to 20 rounds)."""
    d = start.size
    c_min = float(np.linalg.norm(goal - start))
    center = (start + goal) / 2.0
    a1 = (goal - start) / c_min
    # rotation taking e1 onto a1
    m = np.outer(a1, np.eye(d)[0])
    u, _, vt = np.linalg.svd(m)
    diag = np.ones(d)
    diag[-1] = np.linalg.det(u) * np.linalg.det(vt)
    rot = u @ np.diag(diag) @ vt
    r1 = c_best / 2.0
    ri = math.sqrt(max(c_best * c_best - c_min * c_min, 0.0)) / 2.0
    scale = np.array([r1] + [ri] * (d - 1))
    out = []
    have = 0
    for _ in range(20):
        x = rng.normal(size=(count, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        x *= rng.random((count, 1)) ** (1.0 / d)
        pts = (x * scale) @ rot.T + center
        pts = pts[np.all((pts >= lower) & (pts <= upper), axis=1)]
        out.append(pts)
        have += pts.shape[0]
        if have >= count:
            break
    return np.concatenate(out)[:count] if out else np.zeros((0, d))


def plan_bit_star(query: PathQuery, params: BITStarParams = BITStarParams(), seed: int = 0) -> Path:
    """Batches of (informed) samples form an implicit random geometric graph
    that is searched best-first with lazy edge evaluation: the heuristically
    shortest candidate path is collision-checked edge by edge and invalid edges
    are removed until a valid path is found or the graph is exhausted. Later
    batches sample only inside the ellipsoid that can improve the incumbent."""
    quick = _trivial(query)
    if quick is not None:
        return quick
    rng = np.random.default_rng(seed)
    d = query.dim
    start, goal = query.start, query.goal
    verts = [start, goal]
    edge_state: dict[tuple[int, int], bool] = {}
    best_cost = math.inf
    best_path: np.ndarray | None = None
    history: list[float] = []
    for _ in range(params.max_batches):
        if math.isfinite(best_cost):
            new = sample_informed(rng, start, goal, best_cost, query.lower, query.upper, params.batch_size)
        else:
            new = rng.uniform(query.lower, query.upper, size=(params.batch_size, d))
        if new.shape[0]:
            new = new[query.valid(new)]
        verts.extend(new)
        pts = np.array(verts)
        # drop samples that cannot lie on a better path
        if math.isfinite(best_cost):
            f = np.linalg.norm(pts - start, axis=1) + np.linalg.norm(pts - goal, axis=1)
            keep = f <= best_cost + 1e-9
            keep[:2] = True
            remap = np.cumsum(keep) - 1
            edge_state = {
                (int(remap[a]), int(remap[b])): v for (a, b), v in edge_state.items() if keep[a] and keep[b]
            }
            pts = pts[keep]
            verts = list(pts)
        m = pts.shape[0]
        r = params.radius_scale * rewire_gamma(query.lower, query.upper) * (math.log(m) / m) ** (1.0 / d)
        r = min(r, params.max_radius)
        pairs = cKDTree(pts).query_pairs(r, output_type="ndarray")
        path = _lazy_search(query, pts, pairs, edge_state)
        if path is not None:
            c = joint_path_length(pts[path])
            if c < best_cost - 1e-12:
                best_cost = c
                best_path = pts[path]
        history.append(best_cost)
    if best_path is None:
        raise PlanningError(f"batch-informed search found no path in {params.max_batches} batches")
    return Path(best_path, tuple(h for h in history if math.isfinite(h)))


def _lazy_search(query: PathQuery, pts: np.ndarray, pairs: np.ndarray, edge_state: dict) -> list[int] | None:
    m = pts.shape[0]
    if pairs.size == 0:
        return None
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    a, b = pairs[:, 0], pairs[:, 1]
    w = np.linalg.norm(pts[a] - pts[b], axis=1)
    index = {(int(i), int(j)): k for k, (i, j) in enumerate(pairs.tolist())}
    for e, ok in edge_state.items():
        if not ok and e in index:
            w[index[e]] = np.inf
    # rows sorted, so CSR data order equals edge order and weights can be edited in place
    indptr = np.searchsorted(a, np.arange(m + 1))
    g = csr_matrix((w, b, indptr), shape=(m, m))
    while True:
        dist, pred = dijkstra(g, directed=False, indices=0, return_predecessors=True)
        if not np.isfinite(dist[1]):
            return None
        path = [1]
        while path[-1] != 0:
            path.append(int(pred[path[-1]]))
        path.reverse()
        unknown = [(min(u, v), max(u, v)) for u, v in zip(path[:-1], path[1:]) if (min(u, v), max(u, v)) not in edge_state]
        if unknown:
            ok = _check_edges(query, pts[[u for u, _ in unknown]], pts[[v for _, v in unknown]])
            for e, v in zip(unknown, ok):
                edge_state[e] = bool(v)
                if not v:
                    g.data[index[e]] = np.inf
            if not ok.all():
                continue
        return path


# -- post-processing ----------------------------------------------------------------


def shortcut_path(path: Path, validity: Validity, seed: int = 0, attempts: int = 100, resolution: float = EDGE_RESOLUTION) -> Path:
    """Random shortcutting: replace the stretch between two waypoints by a
    straight edge when that edge is valid. Never increases length."""
    w = path.waypoints.copy()
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        if w.shape[0] < 3:
            break
        i, j = sorted(rng.choice(w.shape[0], size=2, replace=False))
        if j - i < 2:
            continue
        if edges_valid(validity, w[i][None], w[j][None], resolution / 2.0)[0]:
            w = np.concatenate([w[: i + 1], w[j:]])
    return Path(w, path.cost_history)


def bspline_smooth(path: Path, validity: Validity, resolution: float = EDGE_RESOLUTION) -> Path:
    """Cubic interpolating B-spline through the waypoints (chord-length
    parameters), resampled at equal arc length within ``resolution``. Falls
    back to the input path if any resampled edge is invalid."""
    w = path.waypoints
    if w.shape[0] < 3:
        return path
    seg = np.linalg.norm(np.diff(w, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-12])
    w = w[keep]
    if w.shape[0] < 3:
        return path
    u = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(w, axis=0), axis=1))])
    # natural end conditions keep the spline cubic down to three waypoints
    spl = make_interp_spline(u, w, k=3, bc_type="natural")
    # resample at equal arc length so consecutive samples are within resolution
    uu = np.linspace(0.0, u[-1], 64 * w.shape[0])
    fine = spl(uu)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(fine, axis=0), axis=1))])
    n = max(2, int(math.ceil(1.01 * arc[-1] / resolution)) + 1)
    out = spl(np.interp(np.linspace(0.0, arc[-1], n), arc, uu))
    out[0], out[-1] = w[0], w[-1]
    if not np.all(np.isfinite(out)):
        return path
    if not edges_valid(validity, out[:-1], out[1:], resolution / 2.0).all():
        return path
    return Path(out, path.cost_history)


def path_ee_length(chain: KinematicChain, path: Path | np.ndarray, resolution: float = EDGE_RESOLUTION) -> float:
    """Total end-effector translation along the path, densified at ``resolution``."""
    w = path.waypoints if isinstance(path, Path) else np.atleast_2d(path)
    if w.shape[0] < 2:
        return 0.0
    dense = densify(w, resolution)
    ee, _, _ = fk_batch(chain, dense)
    return float(np.linalg.norm(np.diff(ee[:, :3, 3], axis=0), axis=1).sum())


# -- combined ----------------------------------------------------------------------


@dataclass(frozen=True)
class PlannerSuite:
    rrt: RRTStarParams = field(default_factory=RRTStarParams)
    bit: BITStarParams = field(default_factory=BITStarParams)
    shortcut_attempts: int = 60
    smooth: bool = True


def plan_shortest_ee(chain: KinematicChain, query: PathQuery, seed: int = 0, suite: PlannerSuite = PlannerSuite()) -> Path:
    """Run both planners, post-process each result and keep the one with the
    shortest end-effector path. Raises PlanningError if both fail."""
    results = []
    errors = []
    for k, plan in enumerate((lambda: plan_rrt_star(query, suite.rrt, seed), lambda: plan_bit_star(query, suite.bit, seed + 1))):
        try:
            p = plan()
        except PlanningError as e:
            errors.append(str(e))
            continue
        p = shortcut_path(p, query.valid, seed + 2 + k, suite.shortcut_attempts, query.resolution)
        if suite.smooth:
            p = bspline_smooth(p, query.valid, query.resolution)
        results.append((path_ee_length(chain, p, query.resolution), k, p))
        if len(p) == 2 or len(p) == 1:
            break  # straight edge: nothing can beat it
    if not results:
        raise PlanningError("; ".join(errors))
    return min(results, key=lambda x: (x[0], x[1]))[2]


# -- benchmark ---------------------------------------------------------------------------


def one_obstacle_query(chain: KinematicChain | None = None, resolution: float = EDGE_RESOLUTION) -> PathQuery:
    """The bundled arm reaching from one side of a thin wall to the other.

    Start and goal put the hand pointing down at y = -/+0.3 m in front of the
    robot; the wall between them blocks the straight joint-space edge.
    """
    from .assets import BoxPrimitive, load_default_chain
    from .kinematics import CollisionChecker, CollisionWorld, IKParams, solve_ik_batch
    from .se3 import SE3Pose

    chain = chain or load_default_chain()
    wall = BoxPrimitive([0.15, 0.02, 0.2])
    world = CollisionWorld.from_boxes([("wall", wall, SE3Pose.from_translation([0.5, 0.0, 0.2]))])
    checker = CollisionChecker(chain, world, frozenset(), chain.gripper.max_opening)
    down = np.diag([1.0, -1.0, -1.0])
    ends = []
    for y in (-0.3, 0.3):
        q, ok, _, _ = solve_ik_batch(chain, SE3Pose(down, [0.5, y, 0.3]), chain.home[None], IKParams(), seed=0)
        if not ok[0] or not checker.valid_batch(q)[0]:
            raise PlanningError("benchmark endpoints are not reachable")
        ends.append(q[0])
    return PathQuery(ends[0], ends[1], chain.lower, chain.upper, checker.valid_batch, resolution)
