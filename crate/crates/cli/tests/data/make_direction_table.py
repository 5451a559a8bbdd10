"""Colour of a unit flow vector in each compass direction under the
reference wheel rendering. Writes direction_table.json next to this script.

Image axes: +u points right, +v points down.
"""
import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "..", "..", "core", "tests", "data"))
from make_flow_wheel_golden import flow_to_image  # noqa: E402

DIRECTIONS = [
    ("right", 1, 0), ("down_right", 1, 1), ("down", 0, 1), ("down_left", -1, 1),
    ("left", -1, 0), ("up_left", -1, -1), ("up", 0, -1), ("up_right", 1, -1),
]

if __name__ == "__main__":
    rows = []
    for name, dx, dy in DIRECTIONS:
        n = np.hypot(dx, dy)
        rgb = flow_to_image(np.array([[dx / n]]), np.array([[dy / n]]))[0, 0]
        rows.append({"name": name, "dx": dx, "dy": dy, "rgb": [int(c) for c in rgb]})
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "direction_table.json")
    with open(out, "w") as f:
        json.dump(rows, f, indent=1)
        f.write("\n")
    print(json.dumps(rows))
