"""Training losses and evaluation metrics.

Losses take a predicted tensor (carrying the tape) and plain ndarray ground
truth, with any number of leading batch dimensions, and average over
everything. Metrics are plain numpy.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gator.errors import ContractError
from gator.numerics import Tensor
from gator.numerics import tensor as T

log = logging.getLogger(__name__)


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vertex: float = Field(1.0, ge=0)
    joint: float = Field(1.0, ge=0)
    normal: float = Field(0.1, ge=0)
    edge: float = Field(20.0, ge=0)
    # weight of the intermediate-pose loss during joint training (off by default)
    pose: float = Field(0.0, ge=0)


def _same_shape(pred: Tensor, gt: np.ndarray, what: str) -> None:
    if pred.shape != gt.shape:
        raise ContractError(f"{what}: prediction {pred.shape} vs target {gt.shape}")


def vertex_loss(pred_mesh: Tensor, gt_mesh) -> Tensor:
    gt = np.asarray(gt_mesh, dtype=np.float64)
    _same_shape(pred_mesh, gt, "vertex_loss")
    return T.mean(T.absolute(T.sub(pred_mesh, gt)))


def regress_joints(mesh: Tensor, regressor: np.ndarray) -> Tensor:
    return T.matmul(Tensor(regressor), mesh)


def joint_loss(pred_mesh: Tensor, regressor, gt_pose3d) -> Tensor:
    gt = np.asarray(gt_pose3d, dtype=np.float64)
    joints = regress_joints(pred_mesh, np.asarray(regressor, dtype=np.float64))
    _same_shape(joints, gt, "joint_loss")
    return T.mean(T.absolute(T.sub(joints, gt)))


def pretrain_pose_loss(pose3d_pred: Tensor, pose3d_gt) -> Tensor:
    gt = np.asarray(pose3d_gt, dtype=np.float64)
    _same_shape(pose3d_pred, gt, "pretrain_pose_loss")
    return T.mean(T.absolute(T.sub(pose3d_pred, gt)))


def face_normals(mesh: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals per face and a mask of non-degenerate faces."""
    v0, v1, v2 = (mesh[..., faces[:, k], :] for k in range(3))
    n = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    ok = norm[..., 0] > 1e-12
    return np.where(ok[..., None], n / np.where(norm > 0, norm, 1.0), 0.0), ok


def _unit(x: Tensor) -> Tensor:
    return T.div(x, T.sqrt(T.sum(T.square(x), axis=-1, keepdims=True)))


def normal_loss(pred_mesh: Tensor, gt_mesh, faces, return_skipped: bool = False):
    """Mean |<unit predicted edge, unit GT face normal>| over face edges.

    Faces that are degenerate in the ground truth are skipped; with
    ``return_skipped`` the count is returned alongside the loss.
    """
    gt = np.asarray(gt_mesh, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    _same_shape(pred_mesh, gt, "normal_loss")
    normals, ok = face_normals(gt, faces)
    skipped = int(ok.size - ok.sum())
    if skipped:
        log.warning("normal_loss: skipped %d degenerate ground-truth faces", skipped)
    axis = pred_mesh.ndim - 2
    corners = [T.gather(pred_mesh, faces[:, k], axis=axis) for k in range(3)]
    n_t = Tensor(normals)
    weight = Tensor(ok.astype(np.float64))
    # skipped faces may have zero-length predicted edges; replace those edges
    # by a fixed unit vector so their masked-out terms stay finite
    keep = Tensor(ok[..., None].astype(np.float64))
    filler = Tensor(np.where(ok[..., None], 0.0, np.array([1.0, 0.0, 0.0])))
    total = None
    for a, b in ((0, 1), (1, 2), (2, 0)):
        edge = T.add(T.mul(T.sub(corners[b], corners[a]), keep), filler)
        cos = T.absolute(T.sum(T.mul(_unit(edge), n_t), axis=-1))
        term = T.sum(T.mul(cos, weight))
        total = term if total is None else T.add(total, term)
    count = 3.0 * max(int(ok.sum()), 1)
    loss = T.scale(total, 1.0 / count)
    return (loss, skipped) if return_skipped else loss


def edge_lengths(mesh, edges: np.ndarray):
    if isinstance(mesh, Tensor):
        axis = mesh.ndim - 2
        diff = T.sub(T.gather(mesh, edges[:, 1], axis=axis), T.gather(mesh, edges[:, 0], axis=axis))
        return T.sqrt(T.sum(T.square(diff), axis=-1))
    mesh = np.asarray(mesh, dtype=np.float64)
    return np.linalg.norm(mesh[..., edges[:, 1], :] - mesh[..., edges[:, 0], :], axis=-1)


def edge_loss(pred_mesh: Tensor, gt_mesh, edges) -> Tensor:
    gt = np.asarray(gt_mesh, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64)
    _same_shape(pred_mesh, gt, "edge_loss")
    return T.mean(T.absolute(T.sub(edge_lengths(pred_mesh, edges), edge_lengths(gt, edges))))


def total_loss(components: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """Weighted sum of named loss terms (vertex, joint, normal, edge, pose)."""
    w = weights.model_dump()
    total = None
    for name, value in components.items():
        if name not in w:
            raise KeyError(f"unknown loss component {name!r}")
        if not np.all(np.isfinite(value.values)):
            raise FloatingPointError(f"loss component {name!r} is not finite")
        term = T.scale(value, w[name])
        total = term if total is None else T.add(total, term)
    return total if total is not None else Tensor(0.0)


# ---------------------------------------------------------------- metrics

def jacobi_svd(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a small square matrix by one-sided cyclic Jacobi rotations.

    Returns ``U, s, Vt`` with ``s`` descending. Columns of ``U`` belonging to
    zero singular values are completed to an orthonormal basis.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[1]
    W = A.copy()
    V = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = W[:, p] @ W[:, p]
                beta = W[:, q] @ W[:, q]
                gamma = W[:, p] @ W[:, q]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                with np.errstate(over="ignore"):   # zeta -> inf gives t -> 0, no rotation
                    zeta = (beta - alpha) / (2.0 * gamma)
                    t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp, wq = W[:, p].copy(), W[:, q].copy()
                W[:, p], W[:, q] = c * wp - s * wq, s * wp + c * wq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    U = np.zeros_like(W)
    scale = sigma[0] if sigma[0] > 0 else 1.0
    for k in range(n):
        if sigma[k] > 1e-13 * scale:
            U[:, k] = W[:, k] / sigma[k]
        else:
            U[:, k] = _orthonormal_complement(U[:, :k])
    return U, sigma, V.T


def _orthonormal_complement(basis: np.ndarray) -> np.ndarray:
    n = basis.shape[0]
    for e in np.eye(n):
        v = e - basis @ (basis.T @ e)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm
    raise ValueError("basis already spans the space")


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, bool]:
    """Similarity-align ``pred`` onto ``gt`` (rotation, uniform scale, translation).

    Returns the aligned points and whether alignment fell back to
    translation only because the cross-covariance had rank < 2.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    P, G = pred - mu_p, gt - mu_g
    U, s, Vt = jacobi_svd(P.T @ G)
    if s[0] <= 1e-12 or s[1] <= 1e-10 * s[0]:
        return P + mu_g, True
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    scale = np.trace(D @ np.diag(s)) / (P * P).sum()
    return scale * P @ R.T + mu_g, False


def mpjpe(pred, gt) -> np.ndarray:
    """Mean Euclidean joint error per sample (leading dims preserved)."""
    return np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=-1).mean(axis=-1)


def pa_mpjpe(pred, gt) -> float:
    aligned, _ = procrustes_align(pred, gt)
    return float(mpjpe(aligned, gt))


@dataclass
class MetricReport:
    mpjpe: np.ndarray
    pa_mpjpe: np.ndarray
    mpve: np.ndarray
    pa_fallback: np.ndarray
    unit_scale: float = 1000.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def compute(cls, pred_joints, gt_joints, pred_mesh, gt_mesh, unit_scale: float = 1000.0
                ) -> "MetricReport":
        pj = np.asarray(pred_joints, dtype=np.float64).reshape(-1, *np.shape(gt_joints)[-2:])
        gj = np.asarray(gt_joints, dtype=np.float64).reshape(pj.shape)
        pm = np.asarray(pred_mesh, dtype=np.float64).reshape(-1, *np.shape(gt_mesh)[-2:])
        gm = np.asarray(gt_mesh, dtype=np.float64).reshape(pm.shape)
        pa, flags = [], []
        for a, b in zip(pj, gj):
            aligned, fb = procrustes_align(a, b)
            pa.append(mpjpe(aligned, b))
            flags.append(fb)
        return cls(mpjpe(pj, gj) * unit_scale, np.array(pa) * unit_scale,
                   mpjpe(pm, gm) * unit_scale, np.array(flags), unit_scale)

    def mean(self) -> dict[str, float]:
        return {"mpjpe": float(self.mpjpe.mean()), "pa_mpjpe": float(self.pa_mpjpe.mean()),
                "mpve": float(self.mpve.mean()), "pa_fallbacks": int(self.pa_fallback.sum())}

    def to_json(self) -> str:
        return json.dumps({
            "unit_scale": self.unit_scale,
            "mean": self.mean(),
            "per_sample": [
                {"mpjpe": float(a), "pa_mpjpe": float(b), "mpve": float(c), "pa_fallback": bool(d)}
                for a, b, c, d in zip(self.mpjpe, self.pa_mpjpe, self.mpve, self.pa_fallback)
            ],
            **self.extra,
        }, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "mpjpe", "pa_mpjpe", "mpve", "pa_fallback"])
        for i, row in enumerate(zip(self.mpjpe, self.pa_mpjpe, self.mpve, self.pa_fallback)):
            w.writerow([i, repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])
        return buf.getvalue()
