#!/usr/bin/env python3
# Copyright 2026 The balance_sim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Generates the bundled humanoid avatar files in data/avatars/.

Axes: x forward, y left, z up. Lengths scale with `length`, masses with
`mass`; inertias follow mass * length^2.
"""

import json
import math
import pathlib


def humanoid(name, length=1.0, mass=1.0):
    L = lambda v: round(v * length, 6)
    M = lambda v: round(v * mass, 6)
    I = lambda diag: [round(d * mass * length * length, 8) for d in diag]
    segments, joints = [], []

    def add(seg, parent, joint_name, kind, axis=None, limits=None, m=0.0,
            com=(0, 0, 0), inertia=(0, 0, 0), xyz=(0, 0, 0), rpy=None,
            points=()):
        s = {"name": seg, "parent": parent, "mass": M(m),
             "com": [L(c) for c in com], "inertia": I(inertia),
             "origin": {"xyz": [L(c) for c in xyz]}}
        if rpy:
            s["origin"]["rpy"] = rpy
        if points:
            s["collision_points"] = [[L(c) for c in p] for p in points]
        segments.append(s)
        j = {"name": joint_name, "kind": kind}
        if axis:
            j["axis"] = axis
        if limits:
            j["limits"] = limits
        joints.append(j)

    add("pelvis", None, "root", "free6", m=12.2, inertia=(0.10, 0.08, 0.10))
    add("torso_link", "pelvis", "torso_pitch", "revolute", [0, 1, 0],
        [-0.4, 1.0], xyz=(0, 0, 0.10))
    add("torso", "torso_link", "torso_roll", "revolute", [1, 0, 0],
        [-0.4, 0.4], m=30.0, com=(0, 0, 0.30), inertia=(1.2, 1.0, 0.35),
        points=[(0.0, 0.0, 0.68)])
    for side, s in (("left", 1.0), ("right", -1.0)):
        roll = [-0.3, 2.5] if s > 0 else [-2.5, 0.3]
        add(f"{side}_shoulder_link", "torso", f"{side}_shoulder_pitch",
            "revolute", [0, 1, 0], [-3.0, 1.0], xyz=(0, s * 0.20, 0.45))
        add(f"{side}_shoulder_roll_link", f"{side}_shoulder_link",
            f"{side}_shoulder_roll", "revolute", [1, 0, 0], roll)
        add(f"{side}_upper_arm", f"{side}_shoulder_roll_link",
            f"{side}_shoulder_yaw", "revolute", [0, 0, 1], [-1.5, 1.5],
            m=2.0, com=(0, 0, -0.15), inertia=(0.015, 0.015, 0.002))
        add(f"{side}_forearm", f"{side}_upper_arm", f"{side}_elbow",
            "revolute", [0, 1, 0], [-2.5, 0.0], m=1.2, com=(0, 0, -0.12),
            inertia=(0.006, 0.006, 0.001), xyz=(0, 0, -0.30))
        add(f"{side}_wrist_link", f"{side}_forearm", f"{side}_wrist_pitch",
            "revolute", [0, 1, 0], [-1.2, 1.2], xyz=(0, 0, -0.25))
        add(f"{side}_hand", f"{side}_wrist_link", f"{side}_wrist_roll",
            "revolute", [1, 0, 0], [-0.6, 0.6], m=0.5, com=(0, 0, -0.07),
            inertia=(0.0012, 0.0012, 0.0003), points=[(0, 0, -0.09)])
    for side, s in (("left", 1.0), ("right", -1.0)):
        roll = [-0.4, 0.6] if s > 0 else [-0.6, 0.4]
        add(f"{side}_hip_link", "pelvis", f"{side}_hip_pitch", "revolute",
            [0, 1, 0], [-1.8, 0.6], xyz=(0, s * 0.10, -0.10))
        add(f"{side}_thigh", f"{side}_hip_link", f"{side}_hip_roll",
            "revolute", [1, 0, 0], roll, m=8.0, com=(0, 0, -0.20),
            inertia=(0.12, 0.12, 0.03))
        add(f"{side}_shank", f"{side}_thigh", f"{side}_knee", "revolute",
            [0, 1, 0], [0.0, 2.4], m=3.5, com=(0, 0, -0.20),
            inertia=(0.05, 0.05, 0.006), xyz=(0, 0, -0.42))
        add(f"{side}_ankle_link", f"{side}_shank", f"{side}_ankle_pitch",
            "revolute", [0, 1, 0], [-0.7, 0.8], xyz=(0, 0, -0.42))
        add(f"{side}_foot", f"{side}_ankle_link", f"{side}_ankle_roll",
            "revolute", [1, 0, 0], [-0.4, 0.4], m=1.2, com=(0.04, 0, -0.05),
            inertia=(0.002, 0.006, 0.006),
            points=[(-0.07, 0.045, -0.08), (-0.07, -0.045, -0.08),
                    (0.15, 0.045, -0.08), (0.15, -0.045, -0.08)])

    task_frames = {
        "left_hand": {"segment": "left_hand", "xyz": [0, 0, L(-0.09)]},
        "right_hand": {"segment": "right_hand", "xyz": [0, 0, L(-0.09)]},
        # Drill held in the right hand; its x axis points along the forearm.
        "tool": {"segment": "right_hand", "xyz": [0, 0, L(-0.12)],
                 "rpy": [0, round(math.pi / 2, 12), 0]},
        "left_foot": {"segment": "left_foot", "xyz": [L(0.04), 0, L(-0.08)]},
        "right_foot": {"segment": "right_foot", "xyz": [L(0.04), 0, L(-0.08)]},
        "head": {"segment": "torso", "xyz": [0, 0, L(0.68)]},
    }
    return {"name": name, "units": {"length": "m", "mass": "kg", "angle": "rad"},
            "segments": segments, "joints": joints, "task_frames": task_frames}


def main():
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "avatars"
    out.mkdir(parents=True, exist_ok=True)
    for fname, args in (("reference.json", ("reference", 1.0, 1.0)),
                        ("dwarf.json", ("dwarf", 0.6, 0.35))):
        (out / fname).write_text(json.dumps(humanoid(*args), indent=1) + "\n")


if __name__ == "__main__":
    main()
