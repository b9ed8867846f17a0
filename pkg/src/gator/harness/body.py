"""A tube-mesh toy body with exact linear-blend-skinning ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gator.decoder import MeshTopology
from gator.errors import ConfigError
from gator.skeleton import SkeletonGraph, parse_skeleton_text

# name parent length direction; y is up, the body faces +z
DEFAULT_SKELETON = """\
pelvis      -           0
spine       pelvis      0.50   0  1  0
l_shoulder  spine       0.20   1  0  0
l_elbow     l_shoulder  0.28   1  0  0
l_wrist     l_elbow     0.25   1  0  0
r_shoulder  spine       0.20  -1  0  0
r_elbow     r_shoulder  0.28  -1  0  0
r_wrist     r_elbow     0.25  -1  0  0
l_hip       pelvis      0.12   1  0  0
l_knee      l_hip       0.45   0 -1  0
r_hip       pelvis      0.12  -1  0  0
r_knee      r_hip       0.45   0 -1  0
"""


class BodySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    skeleton: str = DEFAULT_SKELETON
    ring_count: int = Field(6, ge=3)
    rings_per_bone: int = Field(4, ge=2)
    radius: float = Field(0.05, gt=0)
    # rings past this fraction of a bone blend toward the child joint
    blend_start: float = Field(0.5, ge=0, lt=1)
    coarse_ratio: float = Field(0.25, gt=0, le=1)
    root_angle_limit: float = Field(0.5, ge=0)
    joint_angle_limit: float = Field(0.6, ge=0)
    # rotations about axes in the image plane swing bones toward the camera
    # only, like knee and elbow limits; otherwise depth is sign-ambiguous
    one_sided_depth: bool = True


@dataclass(frozen=True)
class ToyBody:
    spec: BodySpec
    graph: SkeletonGraph
    topology: MeshTopology
    skinning: np.ndarray        # V_full x N, rows sum to 1
    rest_joints: np.ndarray     # N x 3
    bone_of_vertex: np.ndarray  # V_full, index of the child joint of the owning bone
    joint_frames: np.ndarray    # N x 3 x 3, columns (u, v, d); Euler angles act in this frame
    angle_mask: np.ndarray      # N x 3, which Euler components may be nonzero

    @property
    def height(self) -> float:
        y = self.topology.template[:, 1]
        return float(y.max() - y.min())

    @property
    def num_joints(self) -> int:
        return self.graph.num_joints


def rest_positions(graph: SkeletonGraph) -> np.ndarray:
    if graph.parents is None or graph.directions is None:
        raise ConfigError("skeleton needs parent links and bone directions to build a body")
    n = graph.num_joints
    pos = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)
    lengths = {j: graph.edge_length(p, j) for j, p in enumerate(graph.parents) if p >= 0}

    def place(j):
        if done[j]:
            return
        p = graph.parents[j]
        if p >= 0:
            place(p)
            d = np.asarray(graph.directions[j], dtype=np.float64)
            norm = np.linalg.norm(d)
            if norm == 0:
                raise ConfigError(f"joint {graph.names[j]!r} has a zero bone direction")
            pos[j] = pos[p] + lengths[j] * d / norm
        done[j] = True

    for j in range(n):
        place(j)
    return pos


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0])
    if abs(axis @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def generate_toy_body(spec: BodySpec | None = None) -> ToyBody:
    """Build the template tube mesh, skinning weights, and joint regressor.

    Each bone gets ``rings_per_bone`` rings from the parent joint (t=0) to the
    child joint (t=1). Rings at t <= blend_start follow the parent frame
    rigidly; later rings blend linearly toward the child frame, reaching an
    even split at the child joint. The regressor averages, per joint, the
    rings centred on that joint, weighted by their skinning weight to it.
    """
    spec = spec or BodySpec()
    try:
        graph = parse_skeleton_text(spec.skeleton)
    except ValueError as exc:
        raise ConfigError(f"malformed skeleton: {exc}") from exc
    rest = rest_positions(graph)
    n = graph.num_joints
    rc, nr = spec.ring_count, spec.rings_per_bone
    theta = 2.0 * np.pi * np.arange(rc) / rc
    ts = np.linspace(0.0, 1.0, nr)

    verts, faces, weights, owner, centred_on = [], [], [], [], []
    for child, parent in enumerate(graph.parents):
        if parent < 0:
            continue
        a, b = rest[parent], rest[child]
        axis = (b - a) / np.linalg.norm(b - a)
        u, v = _frame(axis)
        base = len(verts)
        for k, t in enumerate(ts):
            centre = a + t * (b - a)
            blend = 0.0 if t <= spec.blend_start else 0.5 * (t - spec.blend_start) / (1.0 - spec.blend_start)
            w = np.zeros(n)
            w[parent] += 1.0 - blend
            w[child] += blend
            joint_here = parent if k == 0 else (child if k == nr - 1 else -1)
            for th in theta:
                verts.append(centre + spec.radius * (np.cos(th) * u + np.sin(th) * v))
                weights.append(w)
                owner.append(child)
                centred_on.append(joint_here)
        for k in range(nr - 1):
            for m in range(rc):
                i0 = base + k * rc + m
                i1 = base + k * rc + (m + 1) % rc
                j0, j1 = i0 + rc, i1 + rc
                faces.append((i0, i1, j1))
                faces.append((i0, j1, j0))
    verts = np.array(verts)
    weights = np.array(weights)
    centred_on = np.array(centred_on)

    R = np.zeros((n, len(verts)))
    for j in range(n):
        mask = centred_on == j
        R[j, mask] = weights[mask, j]
        total = R[j].sum()
        if total <= 0:
            raise ConfigError(f"joint {graph.names[j]!r} has no vertices to regress from")
        R[j] /= total

    num_coarse = max(1, int(round(spec.coarse_ratio * len(verts))))
    topo = MeshTopology.build(verts, np.array(faces), R, num_coarse=num_coarse)
    frames, mask = _joint_frames(graph, rest)
    return ToyBody(spec, graph, topo, weights, rest, np.array(owner), frames, mask)


def _joint_frames(graph: SkeletonGraph, rest: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint rotation frames and the rotation components that are observable.

    Leaf joints drive no bone, so they stay fixed. A joint whose child bones
    are all parallel to one axis cannot twist about it visibly (twisting only
    spins the tube rings), so its third Euler component, aligned with that
    axis, is masked. Other joints rotate freely in the world frame.
    """
    n = graph.num_joints
    frames = np.tile(np.eye(3), (n, 1, 1))
    mask = np.zeros((n, 3))
    for j in range(n):
        kids = [c for c, p in enumerate(graph.parents) if p == j]
        if not kids:
            continue
        dirs = [(rest[c] - rest[j]) / np.linalg.norm(rest[c] - rest[j]) for c in kids]
        if graph.parents[j] >= 0 and all(np.linalg.norm(np.cross(dirs[0], d)) < 1e-9 for d in dirs):
            u, v = _frame(dirs[0])
            frames[j] = np.stack([u, v, dirs[0]], axis=1)
            mask[j] = (1.0, 1.0, 0.0)
        else:
            mask[j] = 1.0
    return frames, mask


# ---------------------------------------------------------------- posing

def euler_to_matrix(angles: np.ndarray) -> np.ndarray:
    """Rotation matrices for XYZ Euler angles, shape (..., 3) -> (..., 3, 3)."""
    x, y, z = angles[..., 0], angles[..., 1], angles[..., 2]
    cx, sx, cy, sy, cz, sz = np.cos(x), np.sin(x), np.cos(y), np.sin(y), np.cos(z), np.sin(z)
    one, zero = np.ones_like(x), np.zeros_like(x)
    Rx = np.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx], -1).reshape(x.shape + (3, 3))
    Ry = np.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy], -1).reshape(x.shape + (3, 3))
    Rz = np.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one], -1).reshape(x.shape + (3, 3))
    return Rz @ Ry @ Rx


def forward_kinematics(body: ToyBody, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World rotations (N x 3 x 3) and posed joint positions (N x 3)."""
    graph, rest = body.graph, body.rest_joints
    B = body.joint_frames
    local = B @ euler_to_matrix(np.asarray(angles, dtype=np.float64)) @ np.swapaxes(B, -1, -2)
    n = graph.num_joints
    G = np.zeros((n, 3, 3))
    X = np.zeros((n, 3))
    for j in _topological(graph.parents):
        p = graph.parents[j]
        if p < 0:
            G[j] = local[j]
            X[j] = rest[j]
        else:
            G[j] = G[p] @ local[j]
            X[j] = X[p] + G[p] @ (rest[j] - rest[p])
    return G, X


def _topological(parents) -> list[int]:
    order, placed = [], set()
    while len(order) < len(parents):
        for j, p in enumerate(parents):
            if j not in placed and (p < 0 or p in placed):
                order.append(j)
                placed.add(j)
    return order


def skin(body: ToyBody, angles: np.ndarray) -> np.ndarray:
    """Linear blend skinning of the template for the given joint angles."""
    G, X = forward_kinematics(body, angles)
    template = body.topology.template
    # per joint: G_j (v - rest_j) + X_j, then blend
    local = template[None, :, :] - body.rest_joints[:, None, :]            # N,V,3
    moved = np.einsum("nij,nvj->nvi", G, local) + X[:, None, :]           # N,V,3
    return np.einsum("vn,nvi->vi", body.skinning, moved)


def sample_angles(body: ToyBody, rng: np.random.Generator) -> np.ndarray:
    """Bounded Euler angles (in each joint's frame) with unobservable components zeroed."""
    n = body.num_joints
    limits = np.full((n, 1), body.spec.joint_angle_limit)
    root = body.graph.parents.index(-1)
    limits[root] = body.spec.root_angle_limit
    angles = rng.uniform(-1.0, 1.0, size=(n, 3)) * limits * body.angle_mask
    if body.spec.one_sided_depth:
        in_plane = np.abs(body.joint_frames[:, 2, :]) < 0.5
        angles = np.where(in_plane, np.abs(angles), angles)
    return angles
