"""Building blocks shared by the encoder and decoder."""
from __future__ import annotations

import math

import numpy as np

from gator.numerics import ModelParams, Tensor, xavier_uniform
from gator.numerics import tensor as T


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    y = T.matmul(x, W)
    return y if b is None else T.add(y, b)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return T.add(T.mul(T.layer_norm(x), gain), bias)


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    y = T.reshape(x, (*lead, n, heads, d // heads))
    axes = list(range(y.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.transpose(y, axes)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.reshape(T.transpose(x, axes), (*lead, n, h * dh))


def attention_logits(xq: Tensor, xk: Tensor, Wq: Tensor, Wk: Tensor, heads: int) -> Tensor:
    """Per-head scaled dot products, shape (..., H, Nq, Nk)."""
    dh = Wq.shape[1] // heads
    q = split_heads(T.matmul(xq, Wq), heads)
    k = split_heads(T.matmul(xk, Wk), heads)
    return T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(dh))


def attend(logits: Tensor, xv: Tensor, Wv: Tensor, Wo: Tensor, bo: Tensor, heads: int
           ) -> tuple[Tensor, Tensor]:
    """Softmax over keys, weight the value projections, merge heads, project out."""
    weights = T.softmax(logits, axis=-1)
    v = split_heads(T.matmul(xv, Wv), heads)
    out = linear(merge_heads(T.matmul(weights, v)), Wo, bo)
    return out, weights


def feed_forward(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    return linear(T.relu(linear(x, W1, b1)), W2, b2)


# ---------------------------------------------------------------- init helpers

def add_linear(params: ModelParams, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator, bias: bool = True, zero: bool = False) -> None:
    W = np.zeros((fan_in, fan_out)) if zero else xavier_uniform(rng, fan_in, fan_out)
    params.add(f"{name}.W", W)
    if bias:
        params.add(f"{name}.b", np.zeros(fan_out))


def add_layer_norm(params: ModelParams, name: str, dim: int) -> None:
    params.add(f"{name}.g", np.ones(dim))
    params.add(f"{name}.b", np.zeros(dim))


def add_attention(params: ModelParams, name: str, dim: int, rng: np.random.Generator) -> None:
    for proj in ("q", "k", "v"):
        params.add(f"{name}.W{proj}", xavier_uniform(rng, dim, dim))
    add_linear(params, f"{name}.out", dim, dim, rng)


def add_ffn(params: ModelParams, name: str, dim: int, hidden: int, rng: np.random.Generator) -> None:
    add_linear(params, f"{name}.fc1", dim, hidden, rng)
    add_linear(params, f"{name}.fc2", hidden, dim, rng)


def ln(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def ffn(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return feed_forward(x, params[f"{name}.fc1.W"], params[f"{name}.fc1.b"],
                        params[f"{name}.fc2.W"], params[f"{name}.fc2.b"])


def mha(params: ModelParams, name: str, xq: Tensor, xkv: Tensor, heads: int,
        bias: Tensor | None = None) -> tuple[Tensor, Tensor]:
    logits = attention_logits(xq, xkv, params[f"{name}.Wq"], params[f"{name}.Wk"], heads)
    if bias is not None:
        logits = T.add(logits, bias)
    return attend(logits, xkv, params[f"{name}.Wv"], params[f"{name}.out.W"],
                  params[f"{name}.out.b"], heads)
