"""Rigid-body math: poses, rotations, 6D rotation codec, the 4-point gripper
representation and least-squares rigid fitting.

Conventions: a pose maps points from its child frame into its parent frame,
``p_parent = R @ p_child + t``. Rotations are stored as 3x3 matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9
DEGENERATE_TOL = 1e-8


def _as_rotation(m) -> np.ndarray:
    m = np.asarray(m, dtype=float).reshape(3, 3)
    return m


def is_rotation(m, tol: float = ORTHO_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(np.abs(m.T @ m - np.eye(3)).max() <= tol and abs(np.linalg.det(m) - 1.0) <= tol)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues formula. ``axis`` must be unit length."""
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of ``r``; angle in [0, pi]."""
    r = np.asarray(r, dtype=float)
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < 1e-7:
        return 0.5 * w
    if np.pi - angle < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis off the symmetric part
        b = (r + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(b)))
        axis = b[:, i] / np.sqrt(b[i, i])
        if np.dot(w, axis) < 0:
            axis = -axis
        return axis * angle
    return w * (angle / (2.0 * np.sin(angle)))


def rotation_angle(r: np.ndarray) -> float:
    return float(np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)))


def quat_to_matrix(wxyz) -> np.ndarray:
    w, x, y, z = np.asarray(wxyz, dtype=float) / np.linalg.norm(wxyz)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True, eq=False)
class SE3Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _as_rotation(self.rotation).copy()
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("pose contains non-finite values")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> SE3Pose:
        return cls()

    @classmethod
    def from_translation(cls, t) -> SE3Pose:
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> SE3Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: SE3Pose) -> SE3Pose:
        return compose(self, other)

    def inverse(self) -> SE3Pose:
        return inverse(self)

    def apply(self, points) -> np.ndarray:
        """Map points (3,) or (N, 3) from the child frame into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def is_valid(self) -> bool:
        return is_rotation(self.rotation)

    def allclose(self, other: SE3Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def __repr__(self) -> str:
        return f"SE3Pose(t={np.round(self.translation, 6).tolist()}, R={np.round(self.rotation, 6).tolist()})"


def compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    return SE3Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: SE3Pose) -> SE3Pose:
    rt = p.rotation.T
    return SE3Pose(rt, -rt @ p.translation)


def pose_to_bytes(p: SE3Pose) -> bytes:
    """Translation (3 x f64 LE) followed by row-major rotation (9 x f64 LE)."""
    return struct.pack("<3d", *p.translation) + struct.pack("<9d", *p.rotation.reshape(-1))


def pose_from_bytes(buf: bytes) -> SE3Pose:
    if len(buf) != 96:
        raise ValueError(f"pose record must be 96 bytes, got {len(buf)}")
    t = struct.unpack("<3d", buf[:24])
    r = np.array(struct.unpack("<9d", buf[24:])).reshape(3, 3)
    return SE3Pose(r, t)


def pose_to_dict(p: SE3Pose) -> dict:
    return {"translation": p.translation.tolist(), "rotation": p.rotation.tolist()}


def pose_from_dict(d: dict | None) -> SE3Pose:
    if d is None:
        return SE3Pose()
    t = d.get("translation", [0.0, 0.0, 0.0])
    if "rotation" in d:
        r = np.asarray(d["rotation"], dtype=float)
    elif "quat_wxyz" in d:
        r = quat_to_matrix(d["quat_wxyz"])
    elif "rpy" in d:
        roll, pitch, yaw = d["rpy"]
        r = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
    else:
        r = np.eye(3)
    if not is_rotation(r, 1e-6):
        raise ValueError("pose rotation is not orthonormal")
    if is_rotation(r, 1e-12):
        return SE3Pose(r, t)
    # re-orthonormalize values that lost precision in text form
    u, _, vt = np.linalg.svd(r)
    return SE3Pose(u @ vt, t)


# -- 6D rotation codec ------------------------------------------------------


def encode_6d(r) -> np.ndarray:
    """First two columns of ``r`` stacked: (c1, c2)."""
    r = np.asarray(r, dtype=float)
    return np.concatenate([r[:, 0], r[:, 1]])


def decode_6d(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(6)
    a1, a2 = v[:3], v[3:]
    n1 = np.linalg.norm(a1)
    if not np.isfinite(n1) or n1 < DEGENERATE_TOL:
        raise ValueError("degenerate 6D rotation: first column near zero")
    b1 = a1 / n1
    u2 = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(u2)
    if n2 < DEGENERATE_TOL:
        raise ValueError("degenerate 6D rotation: columns parallel or second column near zero")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


# -- gripper points -----------------------------------------------------------


@dataclass(frozen=True)
class GripperTemplate:
    """Gripper geometry in the hand frame: z is the approach axis, y the open axis."""

    finger_length: float = 0.10
    max_opening: float = 0.08
    pad_length: float = 0.04
    pad_height: float = 0.02
    finger_thickness: float = 0.012
    palm_depth: float = 0.06
    palm_half_width: float = 0.10
    palm_half_height: float = 0.03

    def points(self, finger_width: float) -> np.ndarray:
        h = finger_width / 2.0
        z = self.finger_length
        return np.array([[0.0, 0.0, 0.0], [0.0, h, z], [0.0, -h, z], [0.0, 0.0, z]])


DEFAULT_GRIPPER = GripperTemplate()


@dataclass(frozen=True, eq=False)
class EEPoints:
    """Hand root, finger A, finger B, grasp center."""

    points: np.ndarray
    finger_width: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(4, 3).copy()
        p.flags.writeable = False
        object.__setattr__(self, "points", p)
        if self.finger_width < 0:
            raise ValueError("finger_width must be non-negative")

    def transformed(self, g: SE3Pose) -> EEPoints:
        return EEPoints(g.apply(self.points), self.finger_width)


def ee_points_from_pose(pose: SE3Pose, finger_width: float, gripper: GripperTemplate = DEFAULT_GRIPPER) -> EEPoints:
    if not (0.0 <= finger_width <= gripper.max_opening + 1e-12):
        raise ValueError(f"finger_width {finger_width} outside [0, {gripper.max_opening}]")
    return EEPoints(pose.apply(gripper.points(finger_width)), finger_width)


def fit_rigid_transform(src, dst) -> SE3Pose:
    """Least-squares rigid transform taking ``src`` onto ``dst`` (Kabsch).

    Both are (N, 3) with N >= 3 and ``src`` not collinear.
    """
    a = np.asarray(src, dtype=float)
    b = np.asarray(dst, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("src and dst must both be (N, 3)")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    a0, b0 = a - ca, b - cb
    sv = np.linalg.svd(a0, compute_uv=False)
    if sv.size < 2 or sv[1] < DEGENERATE_TOL:
        raise ValueError("degenerate source points (collinear or coincident)")
    h = a0.T @ b0
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return SE3Pose(r, cb - r @ ca)


def fit_pose_from_points(src: EEPoints | np.ndarray, dst) -> SE3Pose:
    pts = src.points if isinstance(src, EEPoints) else src
    return fit_rigid_transform(pts, dst)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return quat_to_matrix(q)


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> SE3Pose:
    return SE3Pose(random_rotation(rng), rng.uniform(-scale, scale, size=3))
