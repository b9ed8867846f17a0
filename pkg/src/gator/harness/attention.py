"""JSON dumps of encoder attention maps and their graph biases."""
from __future__ import annotations

import json

import numpy as np

from gator.encoder import check_pose2d
from gator.model import GatorModel
from gator.numerics import no_grad


def attention_dump(model: GatorModel, pose2d) -> dict:
    """Post-softmax attention per layer and head for one 2D pose, plus hop/path biases."""
    pose2d = check_pose2d(pose2d, model.graph.num_joints)
    if pose2d.ndim != 2:
        raise ValueError("attention_dump takes a single pose, not a batch")
    with no_grad():
        enc = model.encode(pose2d)
    layers = []
    for i, (weights, (he, pe)) in enumerate(zip(enc.attention, enc.biases)):
        layers.append({
            "layer": i,
            "attention": weights.values.tolist(),                      # H x N x N
            "hop_encoding": np.moveaxis(he.values, -1, 0).tolist(),    # H x N x N
            "path_encoding": np.moveaxis(pe.values, -1, 0).tolist(),
        })
    return {
        "joints": list(model.graph.names),
        "heads": model.enc_cfg.heads,
        "flags": {"he": model.enc_cfg.enable_he, "pe": model.enc_cfg.enable_pe,
                  "gcn": model.enc_cfg.enable_gcn},
        "hops": model.context.hops.D.tolist(),
        "layers": layers,
    }


def write_attention_dump(model: GatorModel, pose2d, path) -> dict:
    dump = attention_dump(model, pose2d)
    with open(path, "w") as fh:
        json.dump(dump, fh)
    return dump
