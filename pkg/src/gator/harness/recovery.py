"""Standalone fit of the base-motion head on a synthetic clustered offset field.

Coarse vertices are split into clusters that each translate rigidly by a
per-sample random vector. Vertex features carry the cluster identity one-hot
plus the sample's flattened cluster translations, so pooled features can
produce the sample's base motions while per-vertex features can only choose
among them. A good fit therefore needs one dominant base motion per cluster.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gator.decoder import DecoderConfig, init_head_params, mdr_head
from gator.numerics import AdamState, ModelParams, Tensor, adam_step, backward
from gator.numerics import tensor as T


@dataclass
class RecoveryResult:
    mse: float            # against the noisy targets
    clean_mse: float
    concentration: np.ndarray   # per cluster, largest mean softmax mass on one base motion
    dominant: np.ndarray        # per cluster, index of that base motion
    sigma: float

    @property
    def mse_ok(self) -> bool:
        return self.mse < 2.0 * self.sigma ** 2

    @property
    def concentrated(self) -> bool:
        return bool(np.all(self.concentration > 0.8))

    @property
    def passed(self) -> bool:
        return self.mse_ok and self.concentrated


def clustered_field(rng: np.random.Generator, samples: int, num_coarse: int, clusters: int,
                    sigma: float, spread: float = 0.2):
    labels = np.arange(num_coarse) % clusters
    moves = rng.uniform(-spread, spread, size=(samples, clusters, 3))
    clean = moves[:, labels, :]
    onehot = np.eye(clusters)[labels]
    feats = np.concatenate([
        np.broadcast_to(onehot, (samples,) + onehot.shape),
        np.broadcast_to(moves.reshape(samples, 1, -1), (samples, num_coarse, 3 * clusters)),
    ], axis=-1)
    noisy = clean + rng.normal(0.0, sigma, size=clean.shape)
    return feats, clean, noisy, labels


def base_motion_recovery(seed: int = 0, clusters: int = 4, base_motions: int = 8,
                         num_coarse: int = 60, samples: int = 64, sigma: float = 0.01,
                         steps: int = 1500, lr: float = 1e-2) -> RecoveryResult:
    rng = np.random.default_rng(seed)
    feats, clean, noisy, labels = clustered_field(rng, samples, num_coarse, clusters, sigma)
    cfg = DecoderConfig(feature_dim=feats.shape[-1], heads=1, base_motions=base_motions)
    params = ModelParams()
    init_head_params(params, cfg, num_coarse, rng)
    trainable = params.trainable()
    state = AdamState(lr=lr)
    X = Tensor(feats)
    for _ in range(steps):
        out = mdr_head(X, params, cfg)
        loss = T.mean(T.square(T.sub(out.delta_coarse, noisy)))
        adam_step(state, trainable, backward(loss, wrt=trainable))
    out = mdr_head(X, params, cfg)
    pred = out.delta_coarse.values
    w = out.motion_weights.values.reshape(-1, num_coarse, base_motions)
    per_cluster = np.stack([w[:, labels == c].mean(axis=(0, 1)) for c in range(clusters)])
    return RecoveryResult(float(np.mean((pred - noisy) ** 2)), float(np.mean((pred - clean) ** 2)),
                          per_cluster.max(axis=1), per_cluster.argmax(axis=1), sigma)
