"""Component and regressor ablations at identical seeds and budgets."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gator.harness.body import generate_toy_body
from gator.harness.config import RunConfig
from gator.harness.data import make_dataset
from gator.harness.train import evaluate, train

log = logging.getLogger(__name__)

# (hop, path, gcn) in the usual table order: none, singles, pairs, all
COMPONENT_GRID = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
]

REGRESSORS = {
    "linear": {"decoder.head": "linear", "decoder.use_lbf": False},
    "linear+lbf": {"decoder.head": "linear"},
    "mdr20-no-lbf": {"decoder.head": "mdr", "decoder.base_motions": 20, "decoder.use_lbf": False},
    **{f"mdr{m}": {"decoder.head": "mdr", "decoder.base_motions": m} for m in (1, 5, 10, 20, 40)},
}

COMPONENT_COLUMNS = ["he", "pe", "gcn", "seed", "pose_mpjpe", "mpjpe", "pa_mpjpe", "mpve", "train_loss"]
REGRESSOR_COLUMNS = ["regressor", "seed", "pa_mpjpe", "mpve", "mpjpe", "params", "train_loss"]


def component_overrides(he: bool, pe: bool, gcn: bool) -> dict:
    return {"encoder.enable_he": he, "encoder.enable_pe": pe, "encoder.enable_gcn": gcn}


def run_variant(cfg: RunConfig, overrides: dict, seed: int, body=None, data=None) -> dict:
    """Train one variant and return validation metrics in millimetres."""
    run_cfg = cfg.with_overrides(**overrides, seed=seed)
    report, model = train(run_cfg, write=False, body=body, data=data)
    _, val = data if data is not None else (None, None)
    if val is None:
        body = body or generate_toy_body(run_cfg.body)
        val = make_dataset(body, run_cfg.data.n_val, seed, "val", run_cfg.data.noise)
    metrics = evaluate(model, val).mean()
    last = report.last("train") if run_cfg.epochs_train else report.last("pretrain")
    return {
        "seed": seed,
        "pose_mpjpe": 1000.0 * last.get("val_pose_mpjpe", float("nan")),
        "mpjpe": metrics["mpjpe"],
        "pa_mpjpe": metrics["pa_mpjpe"],
        "mpve": metrics["mpve"],
        "params": model.params.count(),
        "train_loss": last.get("train_loss", float("nan")),
    }


def shared_data(cfg: RunConfig, seed: int):
    body = generate_toy_body(cfg.body)
    train_set = make_dataset(body, cfg.data.n_train, seed, "train", cfg.data.noise)
    val_set = make_dataset(body, cfg.data.n_val, seed, "val", cfg.data.noise)
    return body, (train_set, val_set)


def component_table(cfg: RunConfig, seeds=(0,), grid=COMPONENT_GRID) -> list[dict]:
    rows = []
    for seed in seeds:
        body, data = shared_data(cfg, seed)
        for he, pe, gcn in grid:
            row = run_variant(cfg, component_overrides(he, pe, gcn), seed, body, data)
            rows.append({"he": int(he), "pe": int(pe), "gcn": int(gcn), **row})
            log.info("components %s", rows[-1])
    return rows


def regressor_table(cfg: RunConfig, seeds=(0,), names=tuple(REGRESSORS)) -> list[dict]:
    rows = []
    for seed in seeds:
        body, data = shared_data(cfg, seed)
        for name in names:
            rows.append({"regressor": name, **run_variant(cfg, REGRESSORS[name], seed, body, data)})
            log.info("regressors %s", rows[-1])
    return rows


def mean_over_seeds(rows: list[dict], keys: list[str]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, members in groups.items():
        avg = {k: v for k, v in zip(keys, key)}
        avg["seed"] = "mean"
        for col in members[0]:
            if col not in keys and col != "seed":
                avg[col] = float(np.mean([m[col] for m in members]))
        out.append(avg)
    return out


def to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


@dataclass
class AblationResult:
    components: list[dict] = field(default_factory=list)
    regressors: list[dict] = field(default_factory=list)

    def components_csv(self) -> str:
        rows = self.components + mean_over_seeds(self.components, ["he", "pe", "gcn"])
        return to_csv(rows, COMPONENT_COLUMNS)

    def regressors_csv(self) -> str:
        rows = self.regressors + mean_over_seeds(self.regressors, ["regressor"])
        return to_csv(rows, REGRESSOR_COLUMNS)


def ablation_suite(cfg: RunConfig, seeds=(0,), out_dir=None, components: bool = True,
                   regressors: bool = True) -> AblationResult:
    """Run the component grid and the regressor variants; write CSVs to ``out_dir``."""
    result = AblationResult()
    if components:
        result.components = component_table(cfg, seeds)
    if regressors:
        result.regressors = regressor_table(cfg, seeds)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if components:
            (out / "components.csv").write_text(result.components_csv())
        if regressors:
            (out / "regressors.csv").write_text(result.regressors_csv())
    return result
