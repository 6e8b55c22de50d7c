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
"""Generates the recorded target streams in data/streams/.

drill_wobble.csv: an operator pushing a drill forward with a shaky hand;
position and heading wander around the ideal drilling axis.
giant_reach.csv: a tall actor leaning far forward with both hands.
"""

import math
import pathlib

# Tool frame of the drill scenario at t = 0.
TOOL = (0.513828, -0.2, 1.30374)


def quat_from_euler(yaw, pitch):
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    # R = Rz(yaw) * Ry(pitch), as (w, x, y, z)
    return (cy * cp, -sy * sp, cy * sp, sy * cp)


def smoothstep(u):
    u = min(max(u, 0.0), 1.0)
    return u * u * (3 - 2 * u)


def drill_rows():
    rows = ["# Drill pushed 12 cm along its axis with lateral and angular wobble.",
            "t,task,x,y,z,qw,qx,qy,qz"]
    for k in range(0, 121):
        t = k * 0.05
        x = TOOL[0] + 0.12 * smoothstep((t - 0.5) / 4.5)
        y = TOOL[1] + 0.02 * math.sin(2 * math.pi * 0.7 * t)
        z = TOOL[2] + 0.02 * math.sin(2 * math.pi * 0.5 * t + 1.0)
        yaw = math.radians(10) * math.sin(2 * math.pi * 0.6 * t)
        pitch = math.radians(8) * math.sin(2 * math.pi * 0.4 * t + 0.5)
        q = quat_from_euler(yaw, pitch)
        rows.append(f"{t:.2f},tool,{x:.6f},{y:.6f},{z:.6f},"
                    + ",".join(f"{c:.9f}" for c in q))
    return rows


def giant_rows():
    rows = ["# Tall actor (root at 1.75 m) bending forward to reach far ahead.",
            "t,task,x,y,z"]
    start = {"left_hand": (0.15, 0.45, 1.05), "right_hand": (0.15, -0.45, 1.05)}
    reach = {"left_hand": (1.05, 0.25, 1.45), "right_hand": (1.05, -0.25, 1.45)}
    for k in range(0, 13):
        t = k * 0.5
        u = smoothstep((t - 0.5) / 3.0)
        for task in ("left_hand", "right_hand"):
            p = [a + u * (b - a) for a, b in zip(start[task], reach[task])]
            rows.append(f"{t:.2f},{task},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f}")
    return rows


def main():
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "streams"
    out.mkdir(parents=True, exist_ok=True)
    (out / "drill_wobble.csv").write_text("\n".join(drill_rows()) + "\n")
    (out / "giant_reach.csv").write_text("\n".join(giant_rows()) + "\n")


if __name__ == "__main__":
    main()
