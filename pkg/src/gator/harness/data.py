"""Synthetic samples: random poses, skinned meshes, regressed joints, 2D views."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gator.harness.body import ToyBody, sample_angles, skin

SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class Sample:
    pose2d: np.ndarray     # N x 2
    gt_pose3d: np.ndarray  # N x 3
    gt_mesh: np.ndarray    # V x 3
    seed: int

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "pose2d": self.pose2d.tolist(),
                           "gt_pose3d": self.gt_pose3d.tolist(), "gt_mesh": self.gt_mesh.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Sample":
        d = json.loads(text)
        return cls(np.array(d["pose2d"], dtype=np.float64), np.array(d["gt_pose3d"], dtype=np.float64),
                   np.array(d["gt_mesh"], dtype=np.float64), int(d["seed"]))


def synthesize_sample(body: ToyBody, rng: np.random.Generator, noise_sigma: float = 0.0,
                      seed: int = -1) -> Sample:
    """Pose the body at random, skin it, regress joints, project orthographically.

    ``noise_sigma`` is in model units and perturbs only the 2D view.
    """
    angles = sample_angles(body, rng)
    mesh = skin(body, angles)
    joints = body.topology.regressor @ mesh
    pose2d = joints[:, :2].copy()
    if noise_sigma > 0:
        pose2d += rng.normal(0.0, noise_sigma, size=pose2d.shape)
    return Sample(pose2d, joints, mesh, seed)


def sample_seed(run_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([run_seed, SPLITS[split], index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class Dataset:
    pose2d: np.ndarray     # S x N x 2
    gt_pose3d: np.ndarray  # S x N x 3
    gt_mesh: np.ndarray    # S x V x 3
    seeds: np.ndarray

    def __len__(self) -> int:
        return len(self.seeds)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.pose2d[idx], self.gt_pose3d[idx], self.gt_mesh[idx], self.seeds[idx])

    def samples(self) -> list[Sample]:
        return [Sample(self.pose2d[i], self.gt_pose3d[i], self.gt_mesh[i], int(self.seeds[i]))
                for i in range(len(self))]

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "Dataset":
        return cls(np.stack([s.pose2d for s in samples]), np.stack([s.gt_pose3d for s in samples]),
                   np.stack([s.gt_mesh for s in samples]), np.array([s.seed for s in samples]))

    def save_dir(self, path) -> list[Path]:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        written = []
        for i, s in enumerate(self.samples()):
            f = path / f"sample_{i:05d}.json"
            f.write_text(s.to_json())
            written.append(f)
        return written

    @classmethod
    def load_dir(cls, path) -> "Dataset":
        files = sorted(Path(path).glob("sample_*.json"))
        if not files:
            raise FileNotFoundError(f"no sample_*.json files in {path}")
        return cls.from_samples([Sample.from_json(f.read_text()) for f in files])


def make_dataset(body: ToyBody, n: int, run_seed: int, split: str = "train",
                 noise: float = 0.0) -> Dataset:
    """``n`` samples whose seeds derive from (run seed, split, index).

    ``noise`` is a fraction of body height.
    """
    sigma = noise * body.height
    samples = []
    for i in range(n):
        seed = sample_seed(run_seed, split, i)
        samples.append(synthesize_sample(body, np.random.default_rng(seed), sigma, seed))
    if not samples:
        v, j = body.topology.num_vertices, body.num_joints
        return Dataset(np.zeros((0, j, 2)), np.zeros((0, j, 3)), np.zeros((0, v, 3)), np.zeros(0, dtype=np.int64))
    return Dataset.from_samples(samples)
