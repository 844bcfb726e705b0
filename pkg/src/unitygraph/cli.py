"""Command-line entry point: ``unitygraph {train,eval,predict,params,gen}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError, DataError, UnityGraphError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional(conv):
    def parse(text: str):
        return None if text.strip().lower() in ("none", "null", "") else conv(text)
    return parse


def _list_of_str(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _converter(hint):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        inner = next(a for a in args if a is not type(None))
        return _optional(_converter(inner))
    if origin in (list, List):
        return _list_of_str
    if hint is bool:
        return _parse_bool
    return hint


def add_config_overrides(parser: argparse.ArgumentParser) -> None:
    from .config import RunConfig

    hints = typing.get_type_hints(RunConfig)
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(RunConfig):
        group.add_argument(f"--{f.name}", type=_converter(hints[f.name]), default=None,
                           metavar=f.name.upper(), help=f"override {f.name}")


def config_from_args(args: argparse.Namespace):
    from .config import RunConfig, large_config

    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
    elif getattr(args, "preset", None) == "large":
        cfg = large_config()
    else:
        cfg = RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg.with_env_seed()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .training import TrainingAborted, train

    cfg = config_from_args(args)
    ckpt_path = Path(cfg.checkpoint_path)
    log_path = Path(cfg.log_path) if cfg.log_path else ckpt_path.with_suffix(".log.json")
    try:
        result = train(cfg, on_epoch=lambda e: print(
            f"epoch {e['epoch']:4d}  step {e['step']:5d}  lr {e['lr']:.2e}  total {e['total']:.5f}  "
            f"pre {e['pre']:.5f}  rec {e['rec']:.5f}  inf {e['inf']:.5f}", flush=True))
    except TrainingAborted as exc:
        exc.checkpoint.save(ckpt_path)
        print(f"error: {exc}; last good checkpoint written to {ckpt_path}", file=sys.stderr)
        return EXIT_NUMERIC
    result.checkpoint.save(ckpt_path)
    log_path.write_text(result.log.to_json() + "\n")
    totals = result.log.totals()
    print(f"trained {result.checkpoint.step} steps in {result.log.seconds:.1f}s; "
          f"total loss {totals[0]:.5f} -> {totals[-1]:.5f}")
    print(f"checkpoint: {ckpt_path}\nlog: {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .training import evaluate, evaluate_baseline

    ckpt = load_checkpoint(args.ckpt)
    report = evaluate(ckpt, args.data)
    print(f"model ({report.scenes} scenes)")
    print(report.table())
    doc = {"model": report.to_dict()}
    if args.baseline:
        base = evaluate_baseline(args.data, ckpt.config["T"], ckpt.config["P"])
        print("constant-pose baseline")
        print(base.table())
        doc["baseline"] = base.to_dict()
    if args.json:
        from .export import write_json
        write_json(args.json, doc)
        print(f"report: {args.json}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .training import predict

    files = predict(args.ckpt, args.scene, args.out, plots=not args.no_plots)
    for key, path in files.items():
        print(f"{key}: {path}")
    return EXIT_OK


def cmd_params(args) -> int:
    from .model import parameter_count, parameter_groups
    from .training import build_model

    cfg = config_from_args(args)
    model = build_model(cfg)
    total = parameter_count(model)
    for name, params in parameter_groups(model).items():
        print(f"{name:20s} {sum(p.numel() for p in params):>12,d}")
    print(f"{'total':20s} {total:>12,d}  ({total / 1e6:.2f} M)")
    return EXIT_OK


def cmd_gen(args) -> int:
    from .motion_data import SyntheticSceneConfig, generate_synthetic, write_dataset

    try:
        doc = json.loads(Path(args.synthetic_config).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.synthetic_config}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("synthetic config must be a JSON object")
    count = int(doc.pop("num_scenes", 1))
    test = int(doc.pop("test_scenes", 0))
    unknown = set(doc) - {f.name for f in dataclasses.fields(SyntheticSceneConfig)}
    if unknown:
        raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
    if count < 1 or not 0 <= test <= count:
        raise ConfigError("need num_scenes >= 1 and 0 <= test_scenes <= num_scenes")
    base = SyntheticSceneConfig.from_dict(doc)
    scenes = [generate_synthetic(dataclasses.replace(base, seed=base.seed + i)) for i in range(count)]
    splits = ["train"] * (count - test) + ["test"] * test
    manifest = write_dataset(args.out, scenes, splits)
    print(f"wrote {count} scenes ({count - test} train, {test} test); manifest: {manifest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unitygraph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="RunConfig JSON")
    add_config_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--baseline", action="store_true", help="report the constant-pose baseline too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one scene and export files")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("params", help="report the parameter count of a configuration")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--preset", choices=["large"], help="built-in configuration")
    add_config_overrides(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--synthetic-config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UnityGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
