"""Scene model: articulated objects, serial robot chains, procedural cabinets
and scene randomization.

Objects and chains share one JSON schema::

    {
      "schema": "artopen.object/1",
      "name": "...",
      "links":  [{"name": str, "boxes": [{"half_extents": [x, y, z],
                                          "pose": {"translation": [...], "rotation": [[...]]},
                                          "tag": str}]}],
      "joints": [{"name": str, "kind": "revolute" | "prismatic" | "fixed",
                  "parent": str, "child": str, "axis": [x, y, z],
                  "origin": {pose}, "limits": [lo, hi]}],
      "door_link": str,                       # objects only
      "handle": {"link": str, "points": [[x, y, z], ...], "frame": {pose},
                 "height": float, "width": float},
      "serial": true, "ee": {...}, "home": [...]   # chains only
    }

Lengths are meters, angles radians. Poses also accept ``quat_wxyz`` or ``rpy``
on input; output always uses a rotation matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .se3 import DEFAULT_GRIPPER, GripperTemplate, SE3Pose, axis_angle, pose_from_dict, pose_to_dict, rot_z

OBJECT_SCHEMA = "artopen.object/1"
CHAIN_SCHEMA = "artopen.chain/1"


class AssetError(ValueError):
    """Raised when an asset document fails validation."""


@dataclass(frozen=True, eq=False)
class BoxPrimitive:
    half_extents: np.ndarray
    local_pose: SE3Pose = field(default_factory=SE3Pose)
    tag: str = ""

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=float).reshape(3).copy()
        if not np.all(h > 0):
            raise AssetError("box half_extents must be strictly positive")
        h.flags.writeable = False
        object.__setattr__(self, "half_extents", h)

    def corners(self) -> np.ndarray:
        signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
        return self.local_pose.apply(signs * self.half_extents)

    def scaled(self, s: float) -> BoxPrimitive:
        return BoxPrimitive(self.half_extents * s, SE3Pose(self.local_pose.rotation, self.local_pose.translation * s), self.tag)


@dataclass(frozen=True)
class Link:
    name: str
    boxes: tuple[BoxPrimitive, ...] = ()


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    kind: str
    parent: str
    child: str
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin: SE3Pose = field(default_factory=SE3Pose)
    limits: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic", "fixed"):
            raise AssetError(f"unknown joint kind {self.kind!r}")
        a = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(a)
        if not np.isfinite(n) or n < 1e-3:
            raise AssetError(f"joint {self.name!r}: axis has near-zero length")
        a = (a / n).copy()
        a.flags.writeable = False
        object.__setattr__(self, "axis", a)
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if math.isnan(lo) or math.isnan(hi) or lo > hi:
            raise AssetError("invalid joint limits")
        object.__setattr__(self, "limits", (lo, hi))

    def motion(self, value: float) -> SE3Pose:
        if self.kind == "revolute":
            return SE3Pose(axis_angle(self.axis, value), np.zeros(3))
        if self.kind == "prismatic":
            return SE3Pose(np.eye(3), self.axis * value)
        return SE3Pose()

    def within_limits(self, value: float, tol: float = 1e-9) -> bool:
        return self.limits[0] - tol <= value <= self.limits[1] + tol


@dataclass(frozen=True, eq=False)
class HandleAnnotation:
    link: str
    points: np.ndarray
    frame: SE3Pose
    height: float
    width: float

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3).copy()
        if len(p) < 1:
            raise AssetError("handle annotation needs at least one point")
        if not (self.height > 0 and self.width > 0):
            raise AssetError("handle height and width must be positive")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @property
    def is_vertical(self) -> bool:
        return self.height > self.width

    @property
    def thickness(self) -> float:
        return min(self.height, self.width)


@dataclass(frozen=True, eq=False)
class ArticulatedObject:
    name: str
    links: tuple[Link, ...]
    joints: tuple[JointSpec, ...]
    door_link: str
    handle: HandleAnnotation

    def __post_init__(self):
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise AssetError("duplicate link names")
        if self.door_link not in names:
            raise AssetError(f"door_link {self.door_link!r} is not a link")
        if self.handle.link != self.door_link:
            raise AssetError("handle must be attached to the door link")
        _check_tree(names, self.joints)
        if self.door_joint.kind == "fixed":
            raise AssetError("door link must be driven by a revolute or prismatic joint")

    @property
    def door_joint(self) -> JointSpec:
        for j in self.joints:
            if j.child == self.door_link:
                return j
        raise AssetError("door link has no parent joint")

    def link(self, name: str) -> Link:
        for l in self.links:
            if l.name == name:
                return l
        raise KeyError(name)

    def scaled(self, s: float) -> ArticulatedObject:
        """Uniformly scaled copy; prismatic limits scale with geometry."""
        if not s > 0:
            raise AssetError("scale must be positive")
        links = tuple(Link(l.name, tuple(b.scaled(s) for b in l.boxes)) for l in self.links)
        joints = []
        for j in self.joints:
            lim = j.limits
            if j.kind == "prismatic":
                lim = (lim[0] * s, lim[1] * s)
            joints.append(replace(j, origin=SE3Pose(j.origin.rotation, j.origin.translation * s), limits=lim))
        h = self.handle
        handle = HandleAnnotation(h.link, h.points * s, SE3Pose(h.frame.rotation, h.frame.translation * s), h.height * s, h.width * s)
        return ArticulatedObject(self.name, links, tuple(joints), self.door_link, handle)


def _check_tree(names: list[str], joints) -> None:
    children = [j.child for j in joints]
    if len(set(children)) != len(children):
        raise AssetError("a link has more than one parent joint")
    for j in joints:
        if j.parent not in names or j.child not in names:
            raise AssetError(f"joint {j.name!r} references an unknown link")
    roots = [n for n in names if n not in children]
    if len(roots) != 1:
        raise AssetError("joint graph must have exactly one root link")
    parent_of = {j.child: j.parent for j in joints}
    for n in names:
        seen = set()
        while n in parent_of:
            if n in seen:
                raise AssetError("joint graph contains a cycle")
            seen.add(n)
            n = parent_of[n]


# -- JSON I/O -----------------------------------------------------------------


def _box_from_dict(d: dict) -> BoxPrimitive:
    return BoxPrimitive(d["half_extents"], pose_from_dict(d.get("pose")), d.get("tag", ""))


def _box_to_dict(b: BoxPrimitive) -> dict:
    d = {"half_extents": b.half_extents.tolist(), "pose": pose_to_dict(b.local_pose)}
    if b.tag:
        d["tag"] = b.tag
    return d


def _joint_from_dict(d: dict) -> JointSpec:
    lim = d.get("limits", [-math.inf, math.inf])
    return JointSpec(d["name"], d["kind"], d["parent"], d["child"], d.get("axis", [0, 0, 1]), pose_from_dict(d.get("origin")), (lim[0], lim[1]))


def _joint_to_dict(j: JointSpec) -> dict:
    return {
        "name": j.name,
        "kind": j.kind,
        "parent": j.parent,
        "child": j.child,
        "axis": j.axis.tolist(),
        "origin": pose_to_dict(j.origin),
        "limits": [j.limits[0], j.limits[1]],
    }


def _links_from_doc(doc: dict) -> tuple[Link, ...]:
    return tuple(Link(l["name"], tuple(_box_from_dict(b) for b in l.get("boxes", []))) for l in doc["links"])


def _links_to_doc(links) -> list:
    return [{"name": l.name, "boxes": [_box_to_dict(b) for b in l.boxes]} for l in links]


def parse_object(document: str | dict) -> ArticulatedObject:
    doc = json.loads(document) if isinstance(document, str) else document
    try:
        links = _links_from_doc(doc)
        joints = tuple(_joint_from_dict(j) for j in doc["joints"])
        if "handle" not in doc:
            raise AssetError("missing handle annotation")
        h = doc["handle"]
        handle = HandleAnnotation(
            h.get("link", doc.get("door_link")), h["points"], pose_from_dict(h.get("frame")), float(h["height"]), float(h["width"])
        )
        return ArticulatedObject(doc.get("name", "object"), links, joints, doc["door_link"], handle)
    except AssetError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise AssetError(f"schema violation: {e}") from e


def object_to_dict(obj: ArticulatedObject) -> dict:
    h = obj.handle
    return {
        "schema": OBJECT_SCHEMA,
        "name": obj.name,
        "links": _links_to_doc(obj.links),
        "joints": [_joint_to_dict(j) for j in obj.joints],
        "door_link": obj.door_link,
        "handle": {
            "link": h.link,
            "points": h.points.tolist(),
            "frame": pose_to_dict(h.frame),
            "height": h.height,
            "width": h.width,
        },
    }


def serialize_object(obj: ArticulatedObject) -> str:
    return json.dumps(object_to_dict(obj), sort_keys=True, indent=1)


# -- object kinematics ---------------------------------------------------------


def _joint_values(obj: ArticulatedObject, theta) -> dict[str, float]:
    if isinstance(theta, dict):
        return {k: float(v) for k, v in theta.items()}
    return {obj.door_joint.name: float(theta)}


def object_fk(obj: ArticulatedObject, theta) -> dict[str, SE3Pose]:
    """Pose of every link in the object frame. ``theta`` drives the door joint
    (or pass a ``{joint_name: value}`` mapping); other joints sit at 0."""
    values = _joint_values(obj, theta)
    for j in obj.joints:
        v = values.get(j.name, 0.0)
        if j.kind != "fixed" and not j.within_limits(v):
            raise ValueError(f"joint {j.name!r} value {v} outside limits {j.limits}")
    children = {j.child for j in obj.joints}
    root = next(l.name for l in obj.links if l.name not in children)
    poses = {root: SE3Pose()}
    pending = list(obj.joints)
    while pending:
        rest = []
        for j in pending:
            if j.parent in poses:
                poses[j.child] = poses[j.parent] @ j.origin @ j.motion(values.get(j.name, 0.0))
            else:
                rest.append(j)
        if len(rest) == len(pending):
            raise AssetError("disconnected joint tree")
        pending = rest
    return poses


def object_world_boxes(obj: ArticulatedObject, theta, object_pose: SE3Pose):
    """(link name, box, world pose of box) for every box at joint value ``theta``."""
    poses = object_fk(obj, theta)
    out = []
    for l in obj.links:
        for b in l.boxes:
            out.append((l.name, b, object_pose @ poses[l.name] @ b.local_pose))
    return out


def bounding_box(obj: ArticulatedObject, theta=0.0) -> tuple[np.ndarray, np.ndarray]:
    poses = object_fk(obj, theta)
    pts = np.concatenate([poses[l.name].apply(b.corners()) for l in obj.links for b in l.boxes])
    return pts.min(axis=0), pts.max(axis=0)


def bbox_diagonal(obj: ArticulatedObject) -> float:
    lo, hi = bounding_box(obj)
    return float(np.linalg.norm(hi - lo))


# -- scenes ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SceneConfig:
    object_pose: SE3Pose
    object_scale: float
    initial_robot_config: np.ndarray
    initial_door_angle: float
    seed: int

    def __post_init__(self):
        if not self.object_scale > 0:
            raise ValueError("object_scale must be positive")
        q = np.asarray(self.initial_robot_config, dtype=float).reshape(-1).copy()
        q.flags.writeable = False
        object.__setattr__(self, "initial_robot_config", q)

    def to_dict(self) -> dict:
        return {
            "object_pose": pose_to_dict(self.object_pose),
            "object_scale": self.object_scale,
            "initial_robot_config": self.initial_robot_config.tolist(),
            "initial_door_angle": self.initial_door_angle,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneConfig:
        return cls(pose_from_dict(d["object_pose"]), d["object_scale"], d["initial_robot_config"], d["initial_door_angle"], d["seed"])


def identity_scene(n_joints: int = 0) -> SceneConfig:
    return SceneConfig(SE3Pose(), 1.0, np.zeros(n_joints), 0.0, 0)


def scene_object(obj: ArticulatedObject, scene: SceneConfig) -> ArticulatedObject:
    return obj if scene.object_scale == 1.0 else obj.scaled(scene.object_scale)


def door_pose_world(obj: ArticulatedObject, theta: float, scene: SceneConfig) -> SE3Pose:
    """World pose of the door link; ``obj`` must already be scaled for the scene."""
    return scene.object_pose @ object_fk(obj, theta)[obj.door_link]


def handle_points_world(obj: ArticulatedObject, theta: float, scene: SceneConfig) -> np.ndarray:
    sobj = scene_object(obj, scene)
    return door_pose_world(sobj, theta, scene).apply(sobj.handle.points)


@dataclass(frozen=True)
class SceneRanges:
    x: tuple[float, float] = (0.6, 1.2)
    y: tuple[float, float] = (-0.1, 0.1)
    yaw_deg: tuple[float, float] = (-30.0, 30.0)
    diagonal: tuple[float, float] = (1.0, 1.8)
    door_angle: tuple[float, float] = (0.0, 0.0)
    ee_max_distance: float = 0.8
    joint_noise: float = 0.6
    max_tries: int = 1000

    def __post_init__(self):
        for name in ("x", "y", "yaw_deg", "diagonal", "door_angle"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"range {name} has lo > hi")
        if self.diagonal[0] <= 0:
            raise ValueError("diagonal range must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> SceneRanges:
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


def _uniform(rng: np.random.Generator, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def randomize_scene(obj: ArticulatedObject, ranges: SceneRanges = SceneRanges(), seed: int = 0, chain=None, world_margin: float = 1e-4) -> SceneConfig:
    """Draw object placement, size and door angle uniformly from ``ranges``; if
    ``chain`` is given, rejection-sample a collision-free robot start whose
    end-effector lies within ``ranges.ee_max_distance`` of the object."""
    rng = np.random.default_rng(seed)
    x = _uniform(rng, ranges.x)
    y = _uniform(rng, ranges.y)
    yaw = math.radians(_uniform(rng, ranges.yaw_deg))
    diag = _uniform(rng, ranges.diagonal)
    scale = diag / bbox_diagonal(obj)
    dj = obj.door_joint
    # prismatic travel scales with the object
    s = scale if dj.kind == "prismatic" else 1.0
    lo, hi = ranges.door_angle
    door = float(np.clip(_uniform(rng, (lo * s, hi * s)), dj.limits[0] * s, dj.limits[1] * s))
    pose = SE3Pose(rot_z(yaw), [x, y, 0.0])
    q0 = np.zeros(0)
    if chain is not None:
        from .kinematics import sample_start_config

        scene = SceneConfig(pose, scale, np.zeros(chain.n), door, seed)
        q0 = sample_start_config(chain, obj, scene, rng, ranges)
    return SceneConfig(pose, scale, q0, door, seed)


# -- procedural cabinets --------------------------------------------------------


@dataclass(frozen=True)
class CabinetParams:
    kind: str = "revolute_left"
    body: tuple[float, float, float] = (0.45, 0.35, 0.9)  # depth, width, height
    handle_orientation: str | None = None  # default: vertical for doors, horizontal for drawers
    door_width_frac: float = 1.0
    door_height_frac: float = 0.5
    door_bottom_frac: float = 0.35
    door_thickness: float = 0.02
    handle_length: float = 0.16
    handle_thickness: float = 0.02
    handle_gap: float = 0.03
    handle_edge_offset: float = 0.06
    drawer_travel_frac: float = 0.8
    n_handle_points: int = 64

    def __post_init__(self):
        if self.kind not in ("revolute_left", "revolute_right", "prismatic"):
            raise AssetError(f"unknown cabinet kind {self.kind!r}")
        if len(self.body) != 3 or min(self.body) <= 0:
            raise AssetError("body dims must be positive")
        if self.handle_orientation not in (None, "vertical", "horizontal"):
            raise AssetError("handle_orientation must be vertical or horizontal")
        for name in ("door_width_frac", "door_height_frac"):
            if not 0 < getattr(self, name) <= 1:
                raise AssetError(f"{name} must be in (0, 1]")
        if self.door_bottom_frac < 0 or self.door_bottom_frac + self.door_height_frac > 1 + 1e-9:
            raise AssetError("door does not fit on the body front")
        for name in ("door_thickness", "handle_length", "handle_thickness", "handle_gap"):
            if getattr(self, name) <= 0:
                raise AssetError(f"{name} must be positive")
        if self.n_handle_points < 4:
            raise AssetError("need at least 4 handle points")

    @classmethod
    def from_dict(cls, d: dict) -> CabinetParams:
        kw = dict(d)
        if "body" in kw:
            kw["body"] = tuple(kw["body"])
        return cls(**kw)


def _handle_geometry(p: CabinetParams, center: np.ndarray, vertical: bool, length: float, rng):
    """Bar, two posts and front-face annotation points. ``center`` is the bar
    attachment point on the door's outer face (door-link frame, -x outward)."""
    t = p.handle_thickness
    gap = p.handle_gap
    along = np.array([0.0, 0.0, 1.0]) if vertical else np.array([0.0, 1.0, 0.0])
    across = np.array([0.0, 1.0, 0.0]) if vertical else np.array([0.0, 0.0, 1.0])
    bar_c = center + np.array([-(gap + t / 2.0), 0.0, 0.0])
    half = np.array([t / 2.0, 0.0, 0.0]) + along * (length / 2.0) + across * (t / 2.0)
    boxes = [BoxPrimitive(half, SE3Pose.from_translation(bar_c), "handle")]
    post = 0.75 * t
    for sgn in (-1.0, 1.0):
        pc = center + np.array([-gap / 2.0, 0.0, 0.0]) + along * sgn * (length / 2.0 - post / 2.0)
        ph = np.array([gap / 2.0, 0.0, 0.0]) + along * (post / 2.0) + across * (post / 2.0)
        boxes.append(BoxPrimitive(ph, SE3Pose.from_translation(pc), "handle"))
    n_across = 4
    n_along = max(1, p.n_handle_points // n_across)
    s_along = np.linspace(-length / 2.0, length / 2.0, n_along)
    s_across = np.linspace(-t / 2.0, t / 2.0, n_across)
    front = bar_c + np.array([-t / 2.0, 0.0, 0.0])
    pts = np.array([front + a * along + c * across for a in s_along for c in s_across])
    frame = SE3Pose.from_translation(bar_c)
    height, width = (length, t) if vertical else (t, length)
    return boxes, pts, frame, height, width


def generate_cabinet(params: CabinetParams = CabinetParams(), seed: int = 0, name: str | None = None) -> ArticulatedObject:
    """Box cabinet with one door (or drawer) on its -x face.

    Object frame: origin at the floor under the body center, front face
    normal -x, z up. Seeded jitter varies the handle length and placement.
    """
    p = params
    rng = np.random.default_rng(seed)
    d, w, h = p.body
    length = p.handle_length * float(rng.uniform(0.85, 1.15))
    jitter = float(rng.uniform(-0.5, 0.5))
    body = Link("body", (BoxPrimitive([d / 2, w / 2, h / 2], SE3Pose.from_translation([0.0, 0.0, h / 2])),))
    z0 = p.door_bottom_frac * h
    dh = p.door_height_frac * h
    dt = p.door_thickness
    front_x = -d / 2.0
    if p.kind == "prismatic":
        dw = p.door_width_frac * w
        vertical = p.handle_orientation == "vertical"
        origin = SE3Pose.from_translation([front_x, 0.0, z0])
        panel = BoxPrimitive([dt / 2, dw / 2, dh / 2], SE3Pose.from_translation([-dt / 2, 0.0, dh / 2]))
        center = np.array([-dt, 0.02 * jitter * dw, dh / 2.0])
        joint = JointSpec("door_joint", "prismatic", "body", "door", [-1.0, 0.0, 0.0], origin, (0.0, p.drawer_travel_frac * d))
    else:
        dw = p.door_width_frac * w
        vertical = p.handle_orientation != "horizontal"
        left = p.kind == "revolute_left"
        # hinge on the door's back edge at the chosen side; left = +y seen from the front
        hinge_y = w / 2.0 if left else -w / 2.0
        sgn = -1.0 if left else 1.0  # direction from hinge toward the free edge
        origin = SE3Pose.from_translation([front_x, hinge_y, z0])
        panel = BoxPrimitive([dt / 2, dw / 2, dh / 2], SE3Pose.from_translation([-dt / 2, sgn * dw / 2, dh / 2]))
        edge = p.handle_edge_offset + (0.0 if vertical else length / 2.0)
        edge = min(edge, dw / 2.0)
        center = np.array([-dt, sgn * (dw - edge), dh / 2.0 + 0.05 * jitter * dh])
        axis = [0.0, 0.0, -1.0] if left else [0.0, 0.0, 1.0]
        joint = JointSpec("door_joint", "revolute", "body", "door", axis, origin, (0.0, 2.0))
    hboxes, pts, frame, hh, hw = _handle_geometry(p, center, vertical, length, rng)
    door = Link("door", (panel, *hboxes))
    handle = HandleAnnotation("door", pts, frame, hh, hw)
    return ArticulatedObject(name or f"cabinet_{p.kind}_{seed}", (body, door), (joint,), "door", handle)


# -- robot chains ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Serial manipulator: ``joints[i]`` moves ``links[i + 1]``; ``links[0]`` is the fixed base."""

    name: str
    links: tuple[Link, ...]
    joints: tuple[JointSpec, ...]
    ee_offset: SE3Pose
    home: np.ndarray
    gripper: GripperTemplate = DEFAULT_GRIPPER

    def __post_init__(self):
        if len(self.links) != len(self.joints) + 1:
            raise AssetError("serial chain needs one more link than joints")
        for i, j in enumerate(self.joints):
            if j.parent != self.links[i].name or j.child != self.links[i + 1].name:
                raise AssetError(f"joint {j.name!r} breaks the serial order")
            if j.kind == "fixed":
                raise AssetError("serial chain joints must be actuated")
            if not all(np.isfinite(j.limits)):
                raise AssetError("serial chain limits must be finite")
        home = np.asarray(self.home, dtype=float).reshape(-1).copy()
        if home.shape != (len(self.joints),):
            raise AssetError("home config has the wrong length")
        home.flags.writeable = False
        object.__setattr__(self, "home", home)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def clamp(self, q) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)


def parse_chain(document: str | dict) -> KinematicChain:
    doc = json.loads(document) if isinstance(document, str) else document
    if not doc.get("serial", False):
        raise AssetError("chain document must set serial: true")
    try:
        links = _links_from_doc(doc)
        joints = tuple(_joint_from_dict(j) for j in doc["joints"])
        ee = pose_from_dict(doc["ee"]["pose"])
        grip = GripperTemplate(**doc.get("gripper", {}))
        return KinematicChain(doc.get("name", "chain"), links, joints, ee, doc["home"], grip)
    except AssetError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise AssetError(f"schema violation: {e}") from e


def chain_to_dict(chain: KinematicChain) -> dict:
    g = chain.gripper
    return {
        "schema": CHAIN_SCHEMA,
        "name": chain.name,
        "serial": True,
        "links": _links_to_doc(chain.links),
        "joints": [_joint_to_dict(j) for j in chain.joints],
        "ee": {"parent": chain.links[-1].name, "pose": pose_to_dict(chain.ee_offset)},
        "home": chain.home.tolist(),
        "gripper": {k: getattr(g, k) for k in g.__dataclass_fields__},
    }


def load_default_chain() -> KinematicChain:
    """The bundled Franka-like 7-DOF arm."""
    text = resources.files("artopen.data").joinpath("franka_like.json").read_text()
    return parse_chain(text)
