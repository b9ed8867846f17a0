"""Finite-difference check of the whole model on a tiny configuration.

A six-joint branching tree drives a tube of four rings of twelve vertices. Every
parameter is randomized, including the zero-initialized ones, so that no
gradient path is hidden behind a zero, and every coordinate is probed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gator import losses as Ls
from gator.decoder import DecoderConfig, MeshTopology
from gator.encoder import EncoderConfig
from gator.model import GatorModel
from gator.numerics import GradCheckResult, finite_diff_check
from gator.skeleton import SkeletonGraph

TOLERANCE = 1e-5


def tube_mesh(rings: int = 4, per_ring: int = 12, length: float = 1.0, radius: float = 0.1
              ) -> tuple[np.ndarray, np.ndarray]:
    theta = 2.0 * np.pi * np.arange(per_ring) / per_ring
    verts = [(radius * np.cos(t), y, radius * np.sin(t))
             for y in np.linspace(0.0, length, rings) for t in theta]
    faces = []
    for k in range(rings - 1):
        for m in range(per_ring):
            i0, i1 = k * per_ring + m, k * per_ring + (m + 1) % per_ring
            faces += [(i0, i1, i1 + per_ring), (i0, i1 + per_ring, i0 + per_ring)]
    return np.array(verts), np.array(faces)


@dataclass
class GradCheckSetup:
    model: GatorModel
    pose2d: np.ndarray
    gt_pose3d: np.ndarray
    gt_mesh: np.ndarray

    def loss(self):
        out = self.model.forward(self.pose2d)
        topo = self.model.topology
        terms = [
            Ls.vertex_loss(out.mesh, self.gt_mesh),
            Ls.joint_loss(out.mesh, topo.regressor, self.gt_pose3d),
            Ls.normal_loss(out.mesh, self.gt_mesh, topo.faces),
            Ls.edge_loss(out.mesh, self.gt_mesh, topo.edges),
            Ls.pretrain_pose_loss(out.pose3d, self.gt_pose3d),
        ]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total


def build_setup(seed: int = 0, batch: int = 2) -> GradCheckSetup:
    rng = np.random.default_rng(seed)
    n = 6
    graph = SkeletonGraph.from_parents([f"j{i}" for i in range(n)], [-1, 0, 1, 1, 0, 4],
                                       rng.uniform(0.1, 0.3, size=n))
    template, faces = tube_mesh()
    regressor = rng.uniform(0.0, 1.0, size=(n, len(template)))
    regressor /= regressor.sum(axis=1, keepdims=True)
    topo = MeshTopology.build(template, faces, regressor, num_coarse=12)
    enc = EncoderConfig(num_layers=1, feature_dim=16, heads=2, edge_dim=4)
    dec = DecoderConfig(num_layers=1, feature_dim=8, heads=2, base_motions=3)
    model = GatorModel(enc, dec, graph, topo, seed=seed)
    for _, p in model.params.items():
        p.values = p.values + rng.normal(0.0, 0.3, size=p.shape)
    gt_mesh = template[None] + rng.normal(0.0, 0.05, size=(batch,) + template.shape)
    return GradCheckSetup(model, rng.normal(0.0, 0.5, size=(batch, n, 2)),
                          rng.normal(0.0, 0.5, size=(batch, n, 3)), gt_mesh)


def run_gradcheck(seed: int = 0, eps: float = 1e-6, max_coords: int | None = None
                  ) -> GradCheckResult:
    setup = build_setup(seed)
    params = [p for _, p in setup.model.params.items()]
    return finite_diff_check(setup.loss, params, eps=eps, max_coords=max_coords)
