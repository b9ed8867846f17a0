"""Command line: gator {train,eval,ablate,gradcheck,export-obj,dump-attention,synth}.

Exit status is 0 on success, 1 for usage or validation errors and 2 when a
run fails at runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from gator.errors import CheckpointError, ConfigError, DataError, TrainingDiverged

log = logging.getLogger("gator")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args):
    from gator.harness.config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key] = _parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) and args.command in ("train", "ablate"):
        overrides["out_dir"] = str(args.out)
    return cfg.with_overrides(**overrides) if overrides else cfg


def _model_and_body(args, cfg):
    from gator.harness.train import build_model, load_model

    if getattr(args, "checkpoint", None):
        model, cfg, body = load_model(args.checkpoint)
        return model, cfg, body
    model, body = build_model(cfg)
    return model, cfg, body


def cmd_train(args) -> int:
    from gator.harness.train import train

    cfg = _config(args)
    report, _ = train(cfg, out_dir=cfg.out_dir)
    print(json.dumps({"out_dir": cfg.out_dir, "seconds": round(report.seconds, 2), **report.final}))
    return 0


def cmd_eval(args) -> int:
    from gator.harness.data import Dataset, make_dataset
    from gator.harness.train import evaluate, load_model

    model, cfg, body = load_model(args.checkpoint)
    if args.data:
        data = Dataset.load_dir(args.data)
    else:
        seed = cfg.seed if args.seed is None else args.seed
        data = make_dataset(body, args.n or cfg.data.n_val, seed, args.split, cfg.data.noise)
    report = evaluate(model, data)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(report.to_json())
        (out / "metrics.csv").write_text(report.to_csv())
    print(json.dumps(report.mean()))
    return 0


def cmd_ablate(args) -> int:
    from gator.harness.ablation import ablation_suite

    cfg = _config(args)
    seeds = args.seeds if args.seeds else [cfg.seed]
    result = ablation_suite(cfg, seeds, out_dir=cfg.out_dir,
                            components=args.only in (None, "components"),
                            regressors=args.only in (None, "regressors"))
    if result.components:
        print(result.components_csv(), end="")
    if result.regressors:
        print(result.regressors_csv(), end="")
    return 0


def cmd_gradcheck(args) -> int:
    from gator.harness.gradcheck import TOLERANCE, run_gradcheck

    t0 = time.perf_counter()
    res = run_gradcheck(seed=args.seed or 0, eps=args.eps)
    elapsed = time.perf_counter() - t0
    if res.failure:
        print(f"gradcheck failed: {res.failure}")
        return 2
    name, coord = res.worst
    print(f"max rel error {res.max_rel_error:.3e} at {name}{list(coord)} "
          f"over {res.coordinates} coordinates in {elapsed:.1f}s")
    return 0 if res.max_rel_error < TOLERANCE else 2


def cmd_export_obj(args) -> int:
    from gator.harness.data import make_dataset
    from gator.harness.objio import export_obj
    from gator.harness.train import predict

    cfg = _config(args)
    model, cfg, body = _model_and_body(args, cfg)
    topo = model.topology
    if args.what == "template":
        mesh = topo.template
    else:
        sample = make_dataset(body, args.index + 1, cfg.seed, args.split, cfg.data.noise)
        if args.what == "gt":
            mesh = sample.gt_mesh[args.index]
        else:
            _, meshes = predict(model, sample.pose2d[args.index:args.index + 1])
            mesh = meshes[0]
    path = export_obj(mesh, topo.faces, args.out)
    print(f"wrote {path} ({len(mesh)} vertices, {len(topo.faces)} faces)")
    return 0


def cmd_dump_attention(args) -> int:
    from gator.harness.attention import write_attention_dump
    from gator.harness.data import make_dataset

    cfg = _config(args)
    model, cfg, body = _model_and_body(args, cfg)
    data = make_dataset(body, args.index + 1, cfg.seed, args.split, cfg.data.noise)
    dump = write_attention_dump(model, data.pose2d[args.index], args.out)
    print(f"wrote {args.out} ({len(dump['layers'])} layers, {dump['heads']} heads)")
    return 0


def cmd_synth(args) -> int:
    from gator.harness.body import generate_toy_body
    from gator.harness.data import make_dataset

    cfg = _config(args)
    body = generate_toy_body(cfg.body)
    data = make_dataset(body, args.n, cfg.seed, args.split, cfg.data.noise)
    files = data.save_dir(args.out)
    print(f"wrote {len(files)} samples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. optim.lr_train=3e-4 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="gator", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="two-stage training on the toy body")
    p.add_argument("--out", help="output directory (checkpoints, report, metrics)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint", help="checkpoint .bin (its .json manifest must sit beside it)")
    p.add_argument("--data", help="directory of sample_*.json files (default: synthesize)")
    p.add_argument("--n", type=int, help="number of synthesized samples")
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--out", help="directory for metrics.json and metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="component and regressor ablations")
    p.add_argument("--out", help="directory for components.csv and regressors.csv")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--only", choices=["components", "regressors"])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check at toy sizes")
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-obj", parents=[common], help="write a mesh as Wavefront OBJ")
    p.add_argument("--out", required=True, help="output .obj path")
    p.add_argument("--checkpoint")
    p.add_argument("--what", default="template", choices=["template", "gt", "pred"])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_export_obj)

    p = sub.add_parser("dump-attention", parents=[common], help="encoder attention maps as JSON")
    p.add_argument("--out", required=True, help="output .json path")
    p.add_argument("--checkpoint")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("synth", parents=[common], help="write synthesized samples to disk")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="train", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n", None) is not None and args.n < 0:
        print("--n must be nonnegative", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} (last good checkpoint: {exc.checkpoint})", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
