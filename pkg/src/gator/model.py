"""The full skeleton-to-mesh model: encoder followed by decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gator.decoder import DecoderConfig, DecoderOutput, MeshTopology, decoder_forward, init_decoder_params
from gator.encoder import EncoderConfig, EncoderOutput, SkeletonContext, encoder_forward, init_encoder_params
from gator.errors import ConfigError
from gator.numerics import ModelParams
from gator.skeleton import SkeletonGraph


@dataclass
class ModelOutput:
    encoder: EncoderOutput
    decoder: DecoderOutput

    @property
    def pose3d(self):
        return self.encoder.pose3d

    @property
    def mesh(self):
        return self.decoder.mesh


class GatorModel:
    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, graph: SkeletonGraph,
                 topology: MeshTopology, params: ModelParams | None = None, seed: int = 0):
        if topology.num_joints != graph.num_joints:
            raise ConfigError(f"topology regresses {topology.num_joints} joints, "
                              f"skeleton has {graph.num_joints}")
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.context = SkeletonContext.build(graph)
        self.topology = topology
        if params is None:
            params = ModelParams()
            rng = np.random.default_rng(seed)
            init_encoder_params(params, enc_cfg, self.context, rng)
            init_decoder_params(params, dec_cfg, enc_cfg.feature_dim, topology, rng)
        self.params = params

    @property
    def graph(self) -> SkeletonGraph:
        return self.context.graph

    def encode(self, pose2d) -> EncoderOutput:
        return encoder_forward(pose2d, self.params, self.enc_cfg, self.context)

    def forward(self, pose2d) -> ModelOutput:
        enc = self.encode(pose2d)
        dec = decoder_forward(np.asarray(pose2d, dtype=np.float64), enc.pose3d, enc.features,
                              self.params, self.dec_cfg, self.topology)
        return ModelOutput(enc, dec)

    def encoder_params(self):
        return [t for n, t in self.params.items() if n.startswith("enc.") and n not in self.params.frozen]

    def trainable(self):
        return self.params.trainable()
