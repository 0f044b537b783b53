"""Plain-text image dumps: ASCII PPM for color, whitespace grids for depth."""

from __future__ import annotations

import numpy as np


def write_ppm(path, rgb: np.ndarray, maxval: int = 255):
    rgb = np.asarray(rgb, dtype=float)
    h, w, _ = rgb.shape
    q = np.rint(np.clip(rgb, 0.0, 1.0) * maxval).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P3\n{w} {h}\n{maxval}\n")
        for row in q:
            fh.write(" ".join(map(str, row.ravel())) + "\n")


def read_ppm(path) -> np.ndarray:
    with open(path) as fh:
        tokens = [t for line in fh for t in line.split("#", 1)[0].split()]
    if tokens[0] != "P3":
        raise ValueError("not an ASCII PPM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array(tokens[4:4 + 3 * w * h], dtype=float)
    return data.reshape(h, w, 3) / maxval


def write_depth_grid(path, depth: np.ndarray):
    depth = np.asarray(depth, dtype=float)
    with open(path, "w") as fh:
        for row in depth:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_depth_grid(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)
