"""Depth rendering of box scenes, back-projection, cloud filtering, farthest
point sampling, normals and depth-map augmentations that mimic real sensors.

Camera convention: optical frame with z forward, x right, y down; the camera
pose maps optical-frame points into the world.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .se3 import SE3Pose

VOXEL_SIZE = 0.002
RADIUS_MIN_NEIGHBORS = 20
RADIUS = 0.02
STAT_K = 20
STAT_STD_RATIO = 0.5
EDGE_SHIFT_SIGMA = 0.5
EDGE_SHIFT_PROB = 0.8
HOLE_THRESHOLD_RANGE = (0.6, 0.9)
HOLE_APPLY_PROB = 0.5
HOLE_BLUR_SIGMA = 2.0
HOLE_KERNEL = 9
FILTER_STD_RATIO_RANGE = (0.4, 0.6)
FILTER_NEIGHBOR_RANGE = (20, 95)
N_OBS_POINTS = 4500

APC_MAGIC = b"APC1"


class PointCloudFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "positions", p)
        if self.labels is not None:
            lab = np.asarray(self.labels).reshape(-1)
            if lab.shape[0] != p.shape[0]:
                raise ValueError("labels length does not match positions")
            object.__setattr__(self, "labels", lab.astype(np.int64))

    def __len__(self) -> int:
        return self.positions.shape[0]

    def select(self, idx) -> PointCloud:
        return PointCloud(self.positions[idx], None if self.labels is None else self.labels[idx])

    @staticmethod
    def merge(clouds) -> PointCloud:
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pos = np.concatenate([c.positions for c in clouds])
        if all(c.labels is not None for c in clouds):
            return PointCloud(pos, np.concatenate([c.labels for c in clouds]))
        return PointCloud(pos)


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int
    pose: SE3Pose = field(default_factory=SE3Pose)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.height < 1 or self.width < 1:
            raise ValueError("resolution must be at least 1x1")

    @classmethod
    def from_fov(cls, hfov_deg: float, height: int, width: int, pose: SE3Pose) -> CameraModel:
        f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, height, width, pose)

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) optical-frame directions with unit z component."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(float)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> SE3Pose:
    """Camera pose at ``eye`` whose optical axis points at ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return SE3Pose(np.stack([x, y, z], axis=1), eye)


@dataclass(frozen=True, eq=False)
class DepthImage:
    values: np.ndarray
    camera: CameraModel
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("depth must be a non-empty H x W array")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("depth values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> DepthImage:
        return DepthImage(values, self.camera, self.labels)


def render_depth(boxes, camera: CameraModel) -> DepthImage:
    """Exact ray casting against boxes given as (center, rotation, half_extents)
    triples in the world frame. Labels hold the index of the box hit, -1 for none."""
    h, w = camera.height, camera.width
    dirs = camera.ray_directions().reshape(-1, 3)
    depth = np.full(dirs.shape[0], np.inf)
    label = np.full(dirs.shape[0], -1, dtype=np.int64)
    cam = camera.pose
    for k, (c, r, half) in enumerate(boxes):
        c, r, half = np.asarray(c, float), np.asarray(r, float), np.asarray(half, float)
        # ray origin/direction in the box frame
        rel = r.T @ (cam.translation - c)
        d = dirs @ (r.T @ cam.rotation).T
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-half - rel) * inv
            t2 = (half - rel) * inv
        tlo = np.minimum(t1, t2)
        thi = np.maximum(t1, t2)
        par = d == 0.0
        inside = np.abs(rel) <= half
        tlo = np.where(par, np.where(inside, -np.inf, np.inf), tlo)
        thi = np.where(par, np.where(inside, np.inf, -np.inf), thi)
        tn = tlo.max(axis=1)
        tf = thi.min(axis=1)
        hit = (tn <= tf) & (tn > 0.0)
        closer = hit & (tn < depth)
        depth[closer] = tn[closer]
        label[closer] = k
    depth[~np.isfinite(depth)] = 0.0
    return DepthImage(depth.reshape(h, w), camera, label.reshape(h, w))


def depth_to_cloud(depth: DepthImage, keep_mask=None) -> PointCloud:
    """Back-project every non-zero pixel into the world frame."""
    cam = depth.camera
    mask = depth.values > 0
    if keep_mask is not None:
        mask &= np.asarray(keep_mask, dtype=bool)
    d = depth.values[mask]
    rays = cam.ray_directions()[mask]
    pts = cam.pose.apply(rays * d[:, None])
    labels = depth.labels[mask] if depth.labels is not None else None
    return PointCloud(pts, labels)


@numba.njit(cache=True)
def _fps_kernel(pts, k, start):
    n = pts.shape[0]
    idx = np.empty(k, dtype=np.int64)
    d = np.full(n, np.inf)
    cur = start
    for i in range(k):
        idx[i] = cur
        x, y, z = pts[cur, 0], pts[cur, 1], pts[cur, 2]
        best, best_d = 0, -1.0
        for j in range(n):
            dx, dy, dz = pts[j, 0] - x, pts[j, 1] - y, pts[j, 2] - z
            dd = dx * dx + dy * dy + dz * dz
            if dd < d[j]:
                d[j] = dd
            if d[j] > best_d:
                best_d = d[j]
                best = j
        cur = best
    return idx


def farthest_point_sampling(pc: PointCloud | np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Greedy FPS from a seeded random start; returns ``k`` indices. Ties go to
    the lowest index."""
    pts = pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    n = pts.shape[0]
    if k > n:
        raise ValueError(f"cannot sample {k} points from {n}")
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    start = int(np.random.default_rng(seed).integers(n))
    return _fps_kernel(np.ascontiguousarray(pts, dtype=np.float64), int(k), start)


def estimate_normals(pc: PointCloud | np.ndarray, k_neighbors: int = 10, viewpoint=(0.0, 0.0, 0.0)):
    """PCA normals oriented toward ``viewpoint``.

    Returns ``(normals, valid)``; ``valid`` is False where the neighbourhood
    has rank < 2 and the normal is undefined (those rows are zero).
    """
    pts = pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    n = pts.shape[0]
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be at least 3")
    if k_neighbors > n:
        raise ValueError(f"k_neighbors={k_neighbors} exceeds cloud size {n}")
    _, nn = cKDTree(pts).query(pts, k=k_neighbors)
    nb = pts[nn]
    cen = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", cen, cen) / k_neighbors
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    scale = np.maximum(evals[:, 2], 1e-300)
    valid = evals[:, 1] / scale > 1e-10
    to_view = np.asarray(viewpoint, dtype=float) - pts
    flip = np.sum(normals * to_view, axis=1) < 0
    normals[flip] *= -1.0
    normals[~valid] = 0.0
    return normals, valid


def voxel_downsample(pc: PointCloud, voxel: float = VOXEL_SIZE) -> PointCloud:
    """One centroid per occupied voxel, in order of first occurrence."""
    if len(pc) == 0:
        return pc
    keys = np.floor(pc.positions / voxel).astype(np.int64)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    g = rank[inv]
    m = order.size
    counts = np.bincount(g, minlength=m).astype(float)
    cen = np.stack([np.bincount(g, weights=pc.positions[:, i], minlength=m) for i in range(3)], axis=1) / counts[:, None]
    labels = pc.labels[first[order]] if pc.labels is not None else None
    return PointCloud(cen, labels)


def radius_outlier_removal(pc: PointCloud, min_neighbors: int = RADIUS_MIN_NEIGHBORS, radius: float = RADIUS) -> PointCloud:
    """Keep points having at least ``min_neighbors`` other points within ``radius``."""
    if len(pc) == 0:
        return pc
    counts = cKDTree(pc.positions).query_ball_point(pc.positions, radius, return_length=True) - 1
    keep = counts >= min_neighbors
    return pc if keep.all() else pc.select(keep)


def statistical_outlier_removal(pc: PointCloud, k: int = STAT_K, std_ratio: float = STAT_STD_RATIO) -> PointCloud:
    """Drop points whose mean distance to their ``k`` nearest neighbours exceeds
    the cloud-wide mean by more than ``std_ratio`` standard deviations."""
    n = len(pc)
    if n <= k:
        return pc
    d, _ = cKDTree(pc.positions).query(pc.positions, k=k + 1)
    mean_d = d[:, 1:].mean(axis=1)
    thresh = mean_d.mean() + std_ratio * mean_d.std()
    keep = mean_d <= thresh
    return pc if keep.all() else pc.select(keep)


# -- augmentations ---------------------------------------------------------------


def augment_edge_artifacts(depth: DepthImage, seed: int, sigma: float = EDGE_SHIFT_SIGMA, prob: float = EDGE_SHIFT_PROB) -> DepthImage:
    """Jitter the sampling grid (N(0, sigma) px with probability ``prob`` per
    pixel) and resample the depth map bilinearly at the jittered coordinates."""
    rng = np.random.default_rng(seed)
    h, w = depth.values.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    shift = rng.normal(0.0, sigma, size=(2, h, w))
    on = rng.random((h, w)) < prob
    rows = rows + np.where(on, shift[0], 0.0)
    cols = cols + np.where(on, shift[1], 0.0)
    if not on.any():
        return depth.with_values(depth.values.copy())
    out = ndimage.map_coordinates(depth.values, [rows, cols], order=1, mode="nearest")
    return depth.with_values(np.maximum(out, 0.0))


def hole_mask(shape, rng: np.random.Generator, threshold: float, blur_sigma: float = HOLE_BLUR_SIGMA, kernel: int = HOLE_KERNEL) -> np.ndarray:
    """True where a pixel should be dropped. Threshold 0 drops everything."""
    m = rng.random(shape)
    radius = (kernel - 1) // 2
    m = ndimage.gaussian_filter(m, blur_sigma, truncate=radius / blur_sigma, mode="reflect")
    lo, hi = m.min(), m.max()
    m = (m - lo) / (hi - lo) if hi > lo else np.zeros(shape)
    if threshold <= 0.0:
        return np.ones(shape, dtype=bool)
    return m > threshold


def augment_random_holes(
    depth: DepthImage,
    seed: int,
    threshold_range=HOLE_THRESHOLD_RANGE,
    apply_prob: float = HOLE_APPLY_PROB,
    threshold: float | None = None,
) -> DepthImage:
    """With probability ``apply_prob`` zero out blob-shaped regions of the map.
    ``threshold`` overrides the random draw from ``threshold_range``."""
    rng = np.random.default_rng(seed)
    apply = rng.random() < apply_prob
    t = float(rng.uniform(*threshold_range)) if threshold is None else float(threshold)
    if not apply:
        return depth.with_values(depth.values.copy())
    mask = hole_mask(depth.values.shape, rng, t)
    out = depth.values.copy()
    out[mask] = 0.0
    return depth.with_values(out)


def augment_filter_params(seed: int, std_range=FILTER_STD_RATIO_RANGE, neighbor_range=FILTER_NEIGHBOR_RANGE) -> tuple[float, int]:
    """Randomized (std_ratio, radius min_neighbors) for the outlier filters."""
    rng = np.random.default_rng(seed)
    lo, hi = std_range
    std_ratio = float(lo) if lo == hi else float(rng.uniform(lo, hi))
    nlo, nhi = neighbor_range
    neighbors = int(nlo) if nlo == nhi else int(rng.integers(nlo, nhi + 1))
    return std_ratio, neighbors


# -- observation pipeline -----------------------------------------------------------


@dataclass(frozen=True)
class FilterParams:
    voxel: float = VOXEL_SIZE
    radius_min_neighbors: int = RADIUS_MIN_NEIGHBORS
    radius: float = RADIUS
    stat_k: int = STAT_K
    stat_std_ratio: float = STAT_STD_RATIO


def clean_cloud(pc: PointCloud, params: FilterParams = FilterParams()) -> PointCloud:
    pc = voxel_downsample(pc, params.voxel)
    pc = radius_outlier_removal(pc, params.radius_min_neighbors, params.radius)
    return statistical_outlier_removal(pc, params.stat_k, params.stat_std_ratio)


def observe(depths, n_points: int = N_OBS_POINTS, params: FilterParams = FilterParams(), seed: int = 0) -> PointCloud:
    """Per-camera cleaning, merge, then FPS down to ``n_points`` (or fewer if
    the cloud is smaller)."""
    merged = PointCloud.merge(clean_cloud(depth_to_cloud(d), params) for d in depths)
    if len(merged) > n_points:
        merged = merged.select(farthest_point_sampling(merged, n_points, seed))
    return merged


# -- binary I/O -------------------------------------------------------------------


def encode_apc(pc: PointCloud, with_labels: bool = True) -> bytes:
    n = len(pc)
    buf = APC_MAGIC + struct.pack("<Q", n) + pc.positions.astype("<f4").tobytes()
    if with_labels and pc.labels is not None:
        lab = pc.labels
        if lab.min(initial=0) < 0 or lab.max(initial=0) > 0xFFFF:
            raise ValueError("labels must fit in u16")
        buf += lab.astype("<u2").tobytes()
    return buf


def decode_apc(buf: bytes, name: str = "<buffer>") -> PointCloud:
    if len(buf) < 12 or buf[:4] != APC_MAGIC:
        raise PointCloudFormatError(f"{name}: bad magic")
    (n,) = struct.unpack("<Q", buf[4:12])
    body = len(buf) - 12
    if body == 12 * n:
        labels = None
    elif body == 14 * n:
        labels = np.frombuffer(buf, dtype="<u2", count=n, offset=12 + 12 * n).astype(np.int64)
    else:
        raise PointCloudFormatError(f"{name}: size {len(buf)} inconsistent with {n} points")
    pos = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=12).reshape(n, 3).astype(float)
    if not np.all(np.isfinite(pos)):
        raise PointCloudFormatError(f"{name}: non-finite coordinates")
    return PointCloud(pos, labels)


def write_apc(path, pc: PointCloud) -> None:
    Path(path).write_bytes(encode_apc(pc))


def read_apc(path) -> PointCloud:
    p = Path(path)
    return decode_apc(p.read_bytes(), str(p))
