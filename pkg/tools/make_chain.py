"""Regenerate src/artopen/data/franka_like.json.

Joint frames follow the public Panda description; collision boxes are coarse
capsule-like boxes around each link segment.
"""

import json
import math
from pathlib import Path

import numpy as np

from artopen.se3 import rot_x, rot_z

PI2 = math.pi / 2

JOINTS = [
    # (xyz, roll, limits)
    ((0.0, 0.0, 0.333), 0.0, (-2.8973, 2.8973)),
    ((0.0, 0.0, 0.0), -PI2, (-1.7628, 1.7628)),
    ((0.0, -0.316, 0.0), PI2, (-2.8973, 2.8973)),
    ((0.0825, 0.0, 0.0), PI2, (-3.0718, -0.0698)),
    ((-0.0825, 0.384, 0.0), -PI2, (-2.8973, 2.8973)),
    ((0.0, 0.0, 0.0), PI2, (-0.0175, 3.7525)),
    ((0.088, 0.0, 0.0), PI2, (-2.8973, 2.8973)),
]

# per link: list of (start, end, radius) segments in the link frame
SEGMENTS = [
    [((0, 0, 0.0), (0, 0, 0.14), 0.09)],
    [((0, 0, -0.19), (0, 0, -0.02), 0.06)],
    [((0, -0.07, 0), (0, -0.2, 0), 0.055)],
    [((0, 0, -0.12), (0, 0, -0.02), 0.055), ((0.02, 0, 0), (0.08, 0, 0), 0.05)],
    [((-0.01, 0.02, 0), (-0.075, 0.08, 0), 0.05)],
    [((0, 0, -0.25), (0, 0, -0.05), 0.045)],
    [((0.0, 0, 0), (0.088, 0, 0), 0.045)],
    [((0, 0, 0.02), (0, 0, 0.06), 0.04)],
]


def seg_box(a, b, r):
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    length = np.linalg.norm(d)
    x = d / length
    helper = np.array([0.0, 0.0, 1.0]) if abs(x[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    y = np.cross(helper, x)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    rot = np.stack([x, y, z], axis=1)
    return {"half_extents": [length / 2, r, r], "pose": {"translation": ((a + b) / 2).tolist(), "rotation": rot.tolist()}}


def main():
    links = [{"name": f"link{i}", "boxes": [seg_box(*s) for s in segs]} for i, segs in enumerate(SEGMENTS)]
    joints = []
    for i, (xyz, roll, lim) in enumerate(JOINTS):
        joints.append(
            {
                "name": f"joint{i + 1}",
                "kind": "revolute",
                "parent": f"link{i}",
                "child": f"link{i + 1}",
                "axis": [0.0, 0.0, 1.0],
                "origin": {"translation": list(xyz), "rotation": rot_x(roll).tolist()},
                "limits": list(lim),
            }
        )
    doc = {
        "schema": "artopen.chain/1",
        "name": "franka_like",
        "serial": True,
        "links": links,
        "joints": joints,
        "ee": {"parent": "link7", "pose": {"translation": [0.0, 0.0, 0.107], "rotation": rot_z(-math.pi / 4).tolist()}},
        "home": [0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785],
        "gripper": {},
    }
    out = Path(__file__).resolve().parents[1] / "src" / "artopen" / "data" / "franka_like.json"
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(out)


if __name__ == "__main__":
    main()
