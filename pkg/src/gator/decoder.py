"""Motion-disentangled mesh decoder.

Vertex tokens attend to joint tokens (a feature-level analogue of linear blend
skinning), then to each other. A regression head composes per-vertex offsets
on the coarse mesh from a small set of base motions, and a linear map lifts
them to full resolution before they are added to the template.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from gator import layers as L
from gator.errors import ConfigError, ContractError
from gator.numerics import ModelParams, Tensor, xavier_uniform
from gator.numerics import tensor as T


class DecoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_layers: int = 3
    feature_dim: int = 64
    heads: int = 4
    ffn_multiple: int = 2
    base_motions: int = 20
    head: str = "mdr"                 # "mdr" or "linear"
    use_lbf: bool = True
    head_params_static: bool = False
    freeze_upsample: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.base_motions < 1:
            raise ValueError("base_motions must be >= 1")
        if self.feature_dim % self.heads:
            raise ValueError("feature_dim must be divisible by heads")
        if self.head not in ("mdr", "linear"):
            raise ValueError("head must be 'mdr' or 'linear'")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        return self


# ---------------------------------------------------------------- topology

def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    f = np.asarray(faces, dtype=np.int64)
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def farthest_point_sampling(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point subset of ``k`` indices, first index ``start``."""
    n = len(points)
    if not 1 <= k <= n:
        raise ConfigError(f"cannot sample {k} of {n} points")
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


def inverse_distance_upsampler(full: np.ndarray, coarse: np.ndarray, k: int = 3) -> np.ndarray:
    """V_full x V_c rows of inverse-distance weights over the k nearest coarse vertices."""
    k = min(k, len(coarse))
    d = np.linalg.norm(full[:, None, :] - coarse[None, :, :], axis=-1)
    U = np.zeros((len(full), len(coarse)))
    for v in range(len(full)):
        order = np.argsort(d[v], kind="stable")[:k]
        dv = d[v, order]
        if dv[0] <= 1e-12:
            U[v, order[0]] = 1.0
            continue
        w = 1.0 / dv
        U[v, order] = w / w.sum()
    return U


@dataclass(frozen=True)
class MeshTopology:
    template: np.ndarray          # V_full x 3
    faces: np.ndarray             # F x 3
    edges: np.ndarray             # E x 2
    regressor: np.ndarray         # N x V_full
    coarse_index: np.ndarray      # V_c
    coarse_template: np.ndarray   # V_c x 3
    upsample_init: np.ndarray     # V_full x V_c
    nearest_joint: np.ndarray     # V_c

    @property
    def num_vertices(self) -> int:
        return len(self.template)

    @property
    def num_coarse(self) -> int:
        return len(self.coarse_template)

    @property
    def num_joints(self) -> int:
        return self.regressor.shape[0]

    @property
    def template_joints(self) -> np.ndarray:
        return self.regressor @ self.template

    @classmethod
    def build(cls, template, faces, regressor, num_coarse: int | None = None) -> "MeshTopology":
        template = np.asarray(template, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        regressor = np.asarray(regressor, dtype=np.float64)
        if template.ndim != 2 or template.shape[1] != 3:
            raise ContractError(f"template must be V x 3, got {template.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(template)):
            raise ContractError("face references a missing vertex")
        if regressor.ndim != 2 or regressor.shape[1] != len(template):
            raise ContractError(f"regressor must be N x {len(template)}, got {regressor.shape}")
        if np.any(regressor < 0) or np.any(np.abs(regressor.sum(axis=1) - 1.0) > 1e-9):
            raise ContractError("regressor rows must be nonnegative and sum to 1")
        if num_coarse is None:
            num_coarse = max(1, len(template) // 4)
        coarse_index = farthest_point_sampling(template, num_coarse)
        coarse = template[coarse_index]
        joints = regressor @ template
        d = np.linalg.norm(coarse[:, None, :] - joints[None, :, :], axis=-1)
        nearest = np.argmin(d, axis=1)
        return cls(template, faces, edges_from_faces(faces), regressor, coarse_index, coarse,
                   inverse_distance_upsampler(template, coarse), nearest)


# ---------------------------------------------------------------- params

def init_decoder_params(params: ModelParams, cfg: DecoderConfig, enc_dim: int,
                        topo: MeshTopology, rng: np.random.Generator) -> None:
    d, vc = cfg.feature_dim, topo.num_coarse
    L.add_linear(params, "dec.joint_in", 5 + enc_dim, d, rng)
    L.add_linear(params, "dec.vertex_in", 6, d, rng)
    if cfg.use_lbf:
        for i in range(cfg.num_layers):
            p = f"dec.l{i}"
            L.add_layer_norm(params, f"{p}.ln_v", d)
            L.add_layer_norm(params, f"{p}.ln_j", d)
            L.add_attention(params, f"{p}.cross", d, rng)
            L.add_layer_norm(params, f"{p}.ln_s", d)
            L.add_attention(params, f"{p}.self", d, rng)
            L.add_layer_norm(params, f"{p}.ln_f", d)
            L.add_ffn(params, f"{p}.ffn", d, cfg.ffn_multiple * d, rng)
    L.add_layer_norm(params, "dec.ln_out", d)
    init_head_params(params, cfg, vc, rng)
    params.add("dec.upsample", topo.upsample_init.copy())
    if cfg.freeze_upsample:
        params.frozen.add("dec.upsample")


def init_head_params(params: ModelParams, cfg: DecoderConfig, num_coarse: int,
                     rng: np.random.Generator) -> None:
    d, vc, m = cfg.feature_dim, num_coarse, cfg.base_motions
    if cfg.head == "linear":
        L.add_linear(params, "dec.head.lin", d, 3, rng, zero=True)
    elif cfg.head_params_static:
        params.add("dec.head.M_A", xavier_uniform(rng, vc, m))
        params.add("dec.head.M_B", np.zeros((m, 3)))
        params.add("dec.head.M_C", np.zeros((vc, 3)))
        params.add("dec.head.alpha", np.zeros((vc, 1)))
    else:
        # random motion logits break the symmetry between base motions; zero
        # base motions and biases still make the initial offsets vanish
        L.add_linear(params, "dec.head.A", d, m, rng)
        L.add_linear(params, "dec.head.B", d, 3 * m, rng, zero=True)
        L.add_linear(params, "dec.head.C", d, 3, rng, zero=True)
        L.add_linear(params, "dec.head.alpha", d, 1, rng, zero=True)


# ---------------------------------------------------------------- tokens

def build_joint_tokens(pose2d, pose3d: Tensor, joint_features: Tensor, params: ModelParams) -> Tensor:
    x = T.concat([T.as_tensor(pose2d), pose3d, joint_features], axis=-1)
    return L.linear(x, params["dec.joint_in.W"], params["dec.joint_in.b"])


def build_vertex_tokens(coarse_template: np.ndarray, pose3d: Tensor, nearest_joint: np.ndarray,
                        params: ModelParams) -> Tensor:
    lead = pose3d.shape[:-2]
    tmpl = Tensor(np.broadcast_to(coarse_template, lead + coarse_template.shape))
    near = T.gather(pose3d, nearest_joint, axis=pose3d.ndim - 2)
    x = T.concat([tmpl, near], axis=-1)
    return L.linear(x, params["dec.vertex_in.W"], params["dec.vertex_in.b"])


def lbf_layer(Xv: Tensor, Xj: Tensor, params: ModelParams, layer: int, cfg: DecoderConfig
              ) -> tuple[Tensor, Tensor]:
    """Joint->vertex cross-attention, vertex self-attention, feed-forward."""
    p = f"dec.l{layer}"
    cross, weights = L.mha(params, f"{p}.cross", L.ln(params, f"{p}.ln_v", Xv),
                           L.ln(params, f"{p}.ln_j", Xj), cfg.heads)
    Xv = T.add(Xv, cross)
    h = L.ln(params, f"{p}.ln_s", Xv)
    Xv = T.add(Xv, L.mha(params, f"{p}.self", h, h, cfg.heads)[0])
    Xv = T.add(Xv, L.ffn(params, f"{p}.ffn", L.ln(params, f"{p}.ln_f", Xv)))
    return Xv, weights


# ---------------------------------------------------------------- head

@dataclass
class MDRHeadOutput:
    motion_logits: Tensor     # ... x V_c x m
    base_motions: Tensor      # ... x m x 3
    biases: Tensor            # ... x V_c x 3
    alpha: Tensor             # ... x V_c x 1
    motion_weights: Tensor    # softmax of motion_logits
    delta_coarse: Tensor      # ... x V_c x 3


def compose_offsets(motion_logits: Tensor, base_motions: Tensor, biases: Tensor, alpha: Tensor
                    ) -> tuple[Tensor, Tensor]:
    """alpha * softmax(M_A) @ M_B + M_C; returns (offsets, softmax weights)."""
    weights = T.softmax(motion_logits, axis=-1)
    delta = T.add(T.mul(alpha, T.matmul(weights, base_motions)), biases)
    return delta, weights


def mdr_head(Xv: Tensor, params: ModelParams, cfg: DecoderConfig) -> MDRHeadOutput:
    m = cfg.base_motions
    if m < 1:
        raise ConfigError("base_motions must be >= 1")
    if cfg.head_params_static:
        M_A, M_B = params["dec.head.M_A"], params["dec.head.M_B"]
        M_C = params["dec.head.M_C"]
        alpha = T.softplus(params["dec.head.alpha"])
    else:
        M_A = L.linear(Xv, params["dec.head.A.W"], params["dec.head.A.b"])
        M_C = L.linear(Xv, params["dec.head.C.W"], params["dec.head.C.b"])
        alpha = T.softplus(L.linear(Xv, params["dec.head.alpha.W"], params["dec.head.alpha.b"]))
        pooled = T.mean(Xv, axis=-2, keepdims=True)
        flat = L.linear(pooled, params["dec.head.B.W"], params["dec.head.B.b"])
        M_B = T.reshape(flat, Xv.shape[:-2] + (m, 3))
    delta, weights = compose_offsets(M_A, M_B, M_C, alpha)
    if np.abs(weights.values.sum(axis=-1) - 1.0).max() > 1e-12:
        raise ContractError("motion weights do not sum to 1")
    if delta.shape[:-2] != Xv.shape[:-2]:
        delta = T.broadcast_to(delta, Xv.shape[:-1] + (3,))
    return MDRHeadOutput(M_A, M_B, M_C, alpha, weights, delta)


def upsample_offsets(delta_coarse: Tensor, U: Tensor) -> Tensor:
    return T.matmul(U, delta_coarse)


@dataclass
class DecoderOutput:
    mesh: Tensor
    delta_coarse: Tensor
    head: MDRHeadOutput | None
    cross_attention: list[Tensor]


def decoder_forward(pose2d, pose3d: Tensor, joint_features: Tensor, params: ModelParams,
                    cfg: DecoderConfig, topo: MeshTopology) -> DecoderOutput:
    Xj = build_joint_tokens(pose2d, pose3d, joint_features, params)
    Xv = build_vertex_tokens(topo.coarse_template, pose3d, topo.nearest_joint, params)
    cross = []
    if cfg.use_lbf:
        for i in range(cfg.num_layers):
            Xv, w = lbf_layer(Xv, Xj, params, i, cfg)
            cross.append(w)
    Xv = L.ln(params, "dec.ln_out", Xv)
    head = None
    if cfg.head == "linear":
        delta = L.linear(Xv, params["dec.head.lin.W"], params["dec.head.lin.b"])
    else:
        head = mdr_head(Xv, params, cfg)
        delta = head.delta_coarse
    full = upsample_offsets(delta, params["dec.upsample"])
    mesh = T.add(Tensor(topo.template), full)
    return DecoderOutput(mesh, delta, head, cross)
