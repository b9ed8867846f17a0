"""Run configuration loaded from JSON; unknown keys are rejected."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from gator.decoder import DecoderConfig
from gator.encoder import EncoderConfig
from gator.errors import ConfigError
from gator.harness.body import BodySpec
from gator.losses import LossWeights


class OptimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr_pretrain: float = Field(8e-4, gt=0)
    lr_train: float = Field(1e-4, gt=0)
    batch_size: int = Field(32, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_train: int = Field(512, ge=0)
    n_val: int = Field(128, ge=0)
    # 2D input noise as a fraction of body height; 0 means ground-truth 2D
    noise: float = Field(0.01, ge=0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    body: BodySpec = BodySpec()
    encoder: EncoderConfig = EncoderConfig()
    decoder: DecoderConfig = DecoderConfig()
    loss: LossWeights = LossWeights()
    optim: OptimConfig = OptimConfig()
    data: DataConfig = DataConfig()
    epochs_pretrain: int = Field(30, ge=0)
    epochs_train: int = Field(30, ge=0)
    seed: int = 0
    out_dir: str = "runs/default"

    def digest(self) -> str:
        """Hash of everything that shapes the model or the data (not out_dir)."""
        payload = self.model_dump(exclude={"out_dir"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> "RunConfig":
        data = self.model_dump()
        for dotted, value in changes.items():
            node = data
            *head, last = dotted.split(".")
            for key in head:
                node = node[key]
            if last not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node[last] = value
        return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(data)
