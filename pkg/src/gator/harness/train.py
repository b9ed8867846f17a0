"""Two-stage training: encoder pretraining on 3D joints, then the full model."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gator import losses as Ls
from gator.errors import CheckpointError, ConfigError, DataError, TrainingDiverged
from gator.harness.body import ToyBody, generate_toy_body
from gator.harness.checkpoint import load_checkpoint, save_checkpoint
from gator.harness.config import RunConfig, parse_config
from gator.harness.data import Dataset, make_dataset
from gator.model import GatorModel
from gator.numerics import AdamState, adam_step, backward, no_grad

log = logging.getLogger(__name__)

EVAL_CHUNK = 128


@dataclass
class RunReport:
    config_digest: str
    history: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    checkpoints: list[str] = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"config_digest": self.config_digest, "history": self.history, "final": self.final,
                "checkpoints": self.checkpoints}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def history_csv(self) -> str:
        keys = sorted({k for row in self.history for k in row} - {"stage", "epoch"})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "epoch", *keys])
        for row in self.history:
            w.writerow([row["stage"], row["epoch"], *[repr(row[k]) if k in row else "" for k in keys]])
        return buf.getvalue()

    def last(self, stage: str) -> dict:
        rows = [r for r in self.history if r["stage"] == stage]
        return rows[-1] if rows else {}

    def first(self, stage: str) -> dict:
        rows = [r for r in self.history if r["stage"] == stage]
        return rows[0] if rows else {}


def build_model(cfg: RunConfig, body: ToyBody | None = None) -> tuple[GatorModel, ToyBody]:
    body = body or generate_toy_body(cfg.body)
    model = GatorModel(cfg.encoder, cfg.decoder, body.graph, body.topology, seed=cfg.seed)
    return model, body


def predict(model: GatorModel, pose2d: np.ndarray, encoder_only: bool = False):
    """Batched inference without recording gradients. Returns (pose3d, mesh or None)."""
    poses, meshes = [], []
    with no_grad():
        for s in range(0, len(pose2d), EVAL_CHUNK):
            chunk = pose2d[s:s + EVAL_CHUNK]
            if encoder_only:
                poses.append(model.encode(chunk).pose3d.values)
            else:
                out = model.forward(chunk)
                poses.append(out.pose3d.values)
                meshes.append(out.mesh.values)
    pose = np.concatenate(poses) if poses else np.zeros((0,) + pose2d.shape[1:-1] + (3,))
    return pose, (np.concatenate(meshes) if meshes else None)


def pose_metrics(model: GatorModel, data: Dataset) -> dict:
    if len(data) == 0:
        return {}
    pose, _ = predict(model, data.pose2d, encoder_only=True)
    return {"pose_mpjpe": float(Ls.mpjpe(pose, data.gt_pose3d).mean())}


def mesh_metrics(model: GatorModel, data: Dataset) -> dict:
    if len(data) == 0:
        return {}
    pose, mesh = predict(model, data.pose2d)
    joints = np.einsum("nv,svi->sni", model.topology.regressor, mesh)
    return {"pose_mpjpe": float(Ls.mpjpe(pose, data.gt_pose3d).mean()),
            "mpjpe": float(Ls.mpjpe(joints, data.gt_pose3d).mean()),
            "mpve": float(Ls.mpjpe(mesh, data.gt_mesh).mean())}


def loss_components(model: GatorModel, out, batch: Dataset, cfg: RunConfig) -> dict:
    topo = model.topology
    comps = {
        "vertex": Ls.vertex_loss(out.mesh, batch.gt_mesh),
        "joint": Ls.joint_loss(out.mesh, topo.regressor, batch.gt_pose3d),
        "normal": Ls.normal_loss(out.mesh, batch.gt_mesh, topo.faces),
        "edge": Ls.edge_loss(out.mesh, batch.gt_mesh, topo.edges),
    }
    if cfg.loss.pose > 0:
        comps["pose"] = Ls.pretrain_pose_loss(out.pose3d, batch.gt_pose3d)
    return comps


def _check_finite(comps: dict) -> None:
    for name, value in comps.items():
        if not np.all(np.isfinite(value.values)):
            raise FloatingPointError(name)


def _prefixed(prefix: str, metrics: dict) -> dict:
    return {f"{prefix}_{k}": v for k, v in metrics.items()}


def train(cfg: RunConfig, out_dir=None, write: bool = True, body: ToyBody | None = None,
          data: tuple[Dataset, Dataset] | None = None) -> tuple[RunReport, GatorModel]:
    """Run both stages and return the report together with the trained model.

    When ``write`` is set, checkpoints, ``report.json``, ``history.csv`` and
    validation ``metrics.{json,csv}`` go to ``out_dir`` (default: the config's).
    """
    t_start = time.perf_counter()
    out = Path(out_dir or cfg.out_dir)
    model, body = build_model(cfg, body)
    if data is None:
        train_set = make_dataset(body, cfg.data.n_train, cfg.seed, "train", cfg.data.noise)
        val_set = make_dataset(body, cfg.data.n_val, cfg.seed, "val", cfg.data.noise)
    else:
        train_set, val_set = data
    report = RunReport(cfg.digest())
    shuffle_rng = np.random.default_rng([cfg.seed, 7])
    bs = cfg.optim.batch_size

    def checkpoint(name: str, extra: dict | None = None) -> None:
        if write:
            path = out / name
            save_checkpoint(model.params, path, cfg.model_dump(), cfg.digest(), extra)
            report.checkpoints.append(path.with_suffix(".bin").name)

    def run_stage(stage: str, epochs: int, lr: float, params, step_loss, metrics) -> None:
        state = AdamState(lr=lr, beta1=cfg.optim.beta1, beta2=cfg.optim.beta2, eps=cfg.optim.eps)
        row = {"stage": stage, "epoch": 0, **_prefixed("train", metrics(model, train_set)),
               **_prefixed("val", metrics(model, val_set))}
        report.history.append(row)
        for epoch in range(1, epochs + 1):
            perm = shuffle_rng.permutation(len(train_set))
            losses = []
            for s in range(0, len(perm), bs):
                batch = train_set.subset(perm[s:s + bs])
                try:
                    loss = step_loss(batch)
                    grads = backward(loss, wrt=params)
                    adam_step(state, params, grads)
                except FloatingPointError as exc:
                    checkpoint("last_good", {"diverged": str(exc), "stage": stage, "epoch": epoch})
                    raise TrainingDiverged(f"{stage} epoch {epoch}: non-finite {exc}",
                                           term=str(exc), checkpoint=str(out / "last_good.bin")) from None
                losses.append(float(loss.values[0]))
            row = {"stage": stage, "epoch": epoch, "train_loss": float(np.mean(losses)) if losses else 0.0,
                   **_prefixed("train", metrics(model, train_set)), **_prefixed("val", metrics(model, val_set))}
            report.history.append(row)
            log.info("%s epoch %d: %s", stage, epoch, row)

    def pretrain_loss(batch):
        pose = model.encode(batch.pose2d).pose3d
        loss = Ls.pretrain_pose_loss(pose, batch.gt_pose3d)
        _check_finite({"pose": loss})
        return loss

    def full_loss(batch):
        out_ = model.forward(batch.pose2d)
        comps = loss_components(model, out_, batch, cfg)
        _check_finite(comps)
        return Ls.total_loss(comps, cfg.loss)

    run_stage("pretrain", cfg.epochs_pretrain, cfg.optim.lr_pretrain, model.encoder_params(),
              pretrain_loss, pose_metrics)
    checkpoint("pretrain")
    run_stage("train", cfg.epochs_train, cfg.optim.lr_train, model.trainable(), full_loss, mesh_metrics)
    checkpoint("checkpoint")

    final = evaluate(model, val_set) if len(val_set) else None
    report.final = final.mean() if final is not None else {}
    report.seconds = time.perf_counter() - t_start
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "history.csv").write_text(report.history_csv())
        if final is not None:
            (out / "metrics.json").write_text(final.to_json())
            (out / "metrics.csv").write_text(final.to_csv())
    return report, model


def evaluate(model: GatorModel, data: Dataset) -> Ls.MetricReport:
    """MPJPE (mesh-regressed joints), PA-MPJPE and MPVE over ``data``."""
    n, v = model.topology.num_joints, model.topology.num_vertices
    if data.pose2d.shape[1:] != (n, 2) or data.gt_mesh.shape[1:] != (v, 3):
        raise CheckpointError(f"dataset ({data.pose2d.shape[1]} joints, {data.gt_mesh.shape[1]} vertices) "
                              f"does not match model ({n} joints, {v} vertices)")
    _, mesh = predict(model, data.pose2d)
    joints = np.einsum("nv,svi->sni", model.topology.regressor, mesh)
    return Ls.MetricReport.compute(joints, data.gt_pose3d, mesh, data.gt_mesh)


def load_model(path) -> tuple[GatorModel, RunConfig, ToyBody]:
    """Rebuild a model from a checkpoint written by ``train``."""
    try:
        state, manifest = load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    cfg = parse_config(manifest["config"])
    model, body = build_model(cfg)
    try:
        model.params.load_state(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit its own config: {exc}") from None
    return model, cfg, body
