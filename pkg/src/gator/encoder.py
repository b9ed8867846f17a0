"""Graph-aware transformer encoder: 2D joints -> joint features + 3D pose.

Each block runs two branches on the same normalized input and sums them into
the residual stream: multi-head self-attention whose logits carry hop and
path biases, and a GCN over the fixed skeleton adjacency with a learnable
additive modulation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from gator import layers as L
from gator.errors import DataError
from gator.numerics import ModelParams, Tensor
from gator.numerics import tensor as T
from gator.skeleton import (
    HopMatrix, PathTable, SkeletonGraph, hop_distance_matrix, hop_encoding,
    init_graph_encoding, normalized_adjacency, path_encoding, shortest_path_table,
)


class EncoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_layers: int = 6
    feature_dim: int = 128
    heads: int = 4
    ffn_multiple: int = 2
    edge_dim: int = 8
    enable_he: bool = True
    enable_pe: bool = True
    enable_gcn: bool = True
    enable_pos_embed: bool = True
    share_graph_encoding: bool = True
    path_weights: str = "shared"

    @model_validator(mode="after")
    def _check(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.feature_dim % self.heads:
            raise ValueError("feature_dim must be divisible by heads")
        if self.path_weights not in ("shared", "per_pair"):
            raise ValueError("path_weights must be 'shared' or 'per_pair'")
        return self


@dataclass(frozen=True)
class SkeletonContext:
    """Everything the encoder derives once from the skeleton."""
    graph: SkeletonGraph
    hops: HopMatrix
    paths: PathTable
    adjacency: np.ndarray

    @classmethod
    def build(cls, graph: SkeletonGraph) -> "SkeletonContext":
        return cls(graph, hop_distance_matrix(graph), shortest_path_table(graph),
                   normalized_adjacency(graph))

    @property
    def num_joints(self) -> int:
        return self.graph.num_joints


def _ge_prefix(cfg: EncoderConfig, layer: int) -> str:
    return "enc.ge" if cfg.share_graph_encoding else f"enc.l{layer}.ge"


def init_encoder_params(params: ModelParams, cfg: EncoderConfig, ctx: SkeletonContext,
                        rng: np.random.Generator) -> None:
    d, n = cfg.feature_dim, ctx.num_joints
    L.add_linear(params, "enc.embed", 2, d, rng)
    params.add("enc.pos", np.zeros((n, d)))
    prefixes = ["enc.ge"] if cfg.share_graph_encoding else [f"enc.l{i}.ge" for i in range(cfg.num_layers)]
    for prefix in prefixes:
        init_graph_encoding(params, prefix, ctx.hops.max_hop, cfg.heads, cfg.edge_dim, rng,
                            n, cfg.path_weights)
    for i in range(cfg.num_layers):
        p = f"enc.l{i}"
        L.add_layer_norm(params, f"{p}.ln1", d)
        L.add_attention(params, f"{p}.attn", d, rng)
        L.add_linear(params, f"{p}.gcn", d, d, rng, bias=False)
        params.add(f"{p}.gcn.M", np.zeros((n, n)))
        L.add_layer_norm(params, f"{p}.ln2", d)
        L.add_ffn(params, f"{p}.ffn", d, cfg.ffn_multiple * d, rng)
    L.add_layer_norm(params, "enc.ln_f", d)
    L.add_linear(params, "enc.pose", d, 3, rng)


def graph_biases(params: ModelParams, cfg: EncoderConfig, ctx: SkeletonContext, layer: int
                 ) -> tuple[Tensor, Tensor]:
    """Hop and path encodings for one layer, each shaped N x N x H."""
    p = _ge_prefix(cfg, layer)
    he = hop_encoding(ctx.hops, params[f"{p}.hop_table"])
    pe = path_encoding(ctx.paths, params[f"{p}.edge_W"], params[f"{p}.edge_b"],
                       params[f"{p}.path_w"], cfg.path_weights)
    return he, pe


def attention_logits(X: Tensor, params: ModelParams, layer: int, heads: int) -> Tensor:
    p = f"enc.l{layer}.attn"
    return L.attention_logits(X, X, params[f"{p}.Wq"], params[f"{p}.Wk"], heads)


def biased_logits(A: Tensor, he: Tensor | None, pe: Tensor | None) -> Tensor:
    """A' = A + HE + PE, added left to right; HE/PE arrive as N x N x H."""
    out = A
    if he is not None:
        out = T.add(out, T.transpose(he, (2, 0, 1)))
    if pe is not None:
        out = T.add(out, T.transpose(pe, (2, 0, 1)))
    return out


def ga_sa_forward(X: Tensor, he: Tensor, pe: Tensor, params: ModelParams, layer: int,
                  cfg: EncoderConfig) -> tuple[Tensor, Tensor]:
    """Graph-aware self-attention. Returns (output, post-softmax weights)."""
    A = attention_logits(X, params, layer, cfg.heads)
    logits = biased_logits(A, he if cfg.enable_he else None, pe if cfg.enable_pe else None)
    p = f"enc.l{layer}.attn"
    return L.attend(logits, X, params[f"{p}.Wv"], params[f"{p}.out.W"], params[f"{p}.out.b"],
                    cfg.heads)


def gcn_forward(X: Tensor, adjacency: np.ndarray, params: ModelParams, layer: int) -> Tensor:
    p = f"enc.l{layer}.gcn"
    mixed = T.add(Tensor(adjacency), params[f"{p}.M"])
    return T.relu(T.matmul(T.matmul(mixed, X), params[f"{p}.W"]))


def sdga_block(X: Tensor, ctx: SkeletonContext, params: ModelParams, layer: int,
               cfg: EncoderConfig, he: Tensor, pe: Tensor) -> tuple[Tensor, Tensor]:
    p = f"enc.l{layer}"
    h = L.ln(params, f"{p}.ln1", X)
    att, weights = ga_sa_forward(h, he, pe, params, layer, cfg)
    Y = T.add(X, att)
    if cfg.enable_gcn:
        Y = T.add(Y, gcn_forward(h, ctx.adjacency, params, layer))
    out = T.add(Y, L.ffn(params, f"{p}.ffn", L.ln(params, f"{p}.ln2", Y)))
    return out, weights


def check_pose2d(pose2d, num_joints: int) -> np.ndarray:
    arr = np.asarray(pose2d, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.shape[-2:] != (num_joints, 2):
        raise DataError(f"expected pose of shape (..., {num_joints}, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("2D pose contains NaN or Inf")
    return arr


@dataclass
class EncoderOutput:
    features: Tensor
    pose3d: Tensor
    attention: list[Tensor]
    biases: list[tuple[Tensor, Tensor]]


def encoder_forward(pose2d, params: ModelParams, cfg: EncoderConfig, ctx: SkeletonContext
                    ) -> EncoderOutput:
    """Embed joints, run the SDGA stack, read off features and a 3D pose.

    ``pose2d`` is (N, 2) or batched (B, N, 2); outputs keep the same leading
    shape.
    """
    x = Tensor(check_pose2d(pose2d, ctx.num_joints))
    X = L.linear(x, params["enc.embed.W"], params["enc.embed.b"])
    if cfg.enable_pos_embed:
        X = T.add(X, params["enc.pos"])
    shared = graph_biases(params, cfg, ctx, 0) if cfg.share_graph_encoding else None
    attention, biases = [], []
    for i in range(cfg.num_layers):
        he, pe = shared if shared is not None else graph_biases(params, cfg, ctx, i)
        X, weights = sdga_block(X, ctx, params, i, cfg, he, pe)
        attention.append(weights)
        biases.append((he, pe))
    feats = L.ln(params, "enc.ln_f", X)
    pose3d = L.linear(feats, params["enc.pose.W"], params["enc.pose.b"])
    return EncoderOutput(feats, pose3d, attention, biases)
