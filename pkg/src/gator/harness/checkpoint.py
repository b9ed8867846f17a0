"""Checkpoints: a flat little-endian float64 blob plus a JSON manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from gator.numerics import ModelParams

FORMAT = "gator-checkpoint-v1"


def save_checkpoint(params: ModelParams, path, config_json: dict, digest: str, extra: dict | None = None
                    ) -> tuple[Path, Path]:
    """Write ``<path>.bin`` and ``<path>.json``; returns both paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.values, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes())
    bin_path, json_path = path.with_suffix(".bin"), path.with_suffix(".json")
    bin_path.write_bytes(b"".join(chunks))
    manifest = {"format": FORMAT, "config_digest": digest, "config": config_json,
                "frozen": sorted(params.frozen), "params": entries, "count": offset}
    if extra:
        manifest.update(extra)
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return bin_path, json_path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    json_path = path.with_suffix(".json")
    manifest = json.loads(json_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{json_path} is not a {FORMAT} manifest")
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if blob.size != manifest["count"]:
        raise ValueError(f"checkpoint blob has {blob.size} values, manifest says {manifest['count']}")
    state = {}
    for e in manifest["params"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        state[e["name"]] = blob[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return state, manifest
