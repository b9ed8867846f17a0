"""Wavefront OBJ writing/reading and CSV joint-regressor import."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from gator.decoder import MeshTopology
from gator.errors import DataError


def export_obj(mesh, faces, path) -> Path:
    """Write ``v`` lines with 17 significant digits, then 1-based ``f`` lines."""
    mesh = np.asarray(mesh, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if mesh.ndim != 2 or mesh.shape[1] != 3 or not np.all(np.isfinite(mesh)):
        raise DataError("mesh must be a finite V x 3 array")
    path = Path(path)
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and triangle faces (0-based). Polygons are fan-triangulated."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for p in parts[1:]:
                k = int(p.split("/")[0])
                idx.append(k - 1 if k > 0 else len(verts) + k)
            if len(idx) < 3:
                raise DataError(f"{path}:{lineno}: face with fewer than 3 vertices")
            for i in range(1, len(idx) - 1):
                faces.append([idx[0], idx[i], idx[i + 1]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def read_regressor_csv(path) -> np.ndarray:
    """N rows x V columns of nonnegative weights; rows are renormalized to sum to 1."""
    R = np.loadtxt(path, delimiter=",", ndmin=2)
    if np.any(R < 0):
        raise DataError("joint regressor has negative weights")
    sums = R.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DataError("joint regressor has an all-zero row")
    return R / sums


def load_template(obj_path, regressor_path, num_coarse: int | None = None) -> MeshTopology:
    """Mesh topology from an external OBJ template and a joint-regressor CSV."""
    verts, faces = read_obj(obj_path)
    R = read_regressor_csv(regressor_path)
    if R.shape[1] != len(verts):
        raise DataError(f"regressor has {R.shape[1]} columns, template has {len(verts)} vertices")
    return MeshTopology.build(verts, faces, R, num_coarse=num_coarse)
