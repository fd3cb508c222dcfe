"""Command-line entry point.

    ngd-sampling figure1 [--config FILE] [--seed S] [--out-dir DIR] [--format csv|json]
    ngd-sampling sweep-temperature ...
    ngd-sampling sweep-batch ...
    ngd-sampling fokker-planck ...
    ngd-sampling verify [--only 1,4,7]

Settings are layered: experiment preset, then ``--config``, then each
``--set key=value``, then ``--seed``/``--out-dir``/``--format``. Exit status
is 0 on success, 1 on any error, and 2 when ``verify`` finds a failing
criterion.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    FOKKER_COLUMNS,
    ConfigError,
    ExperimentConfig,
    emit,
    emit_table,
    run_batch_sweep,
    run_figure1,
    run_fokker_planck_suite,
    run_temperature_sweep,
)

SUBCOMMANDS = ("figure1", "sweep-temperature", "sweep-batch", "fokker-planck", "verify")
FIGURE1_COLUMNS = ("mode", "rule", "temperature", "batch_size", "mean_mahalanobis", "cov_frobenius_rel", "eig_ratio_max", "runtime_s")
VERIFY_COLUMNS = ("criterion", "title", "passed", "runtime_s", "budget_s", "note")


class _Parser(argparse.ArgumentParser):
    # usage errors share the execution-error status; 2 is reserved for verify
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ngd-sampling", description="Langevin and natural-gradient posterior sampling experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value settings file with dotted keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting (repeatable)")
        if name == "verify":
            p.add_argument("--only", help="comma-separated criterion numbers, e.g. 4,5,7")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.preset(args.command)
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, base=cfg)
        if cfg["experiment"] != args.command:
            raise ConfigError(f"config file is for {cfg['experiment']!r}, not {args.command!r}")
    updates = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        updates[key.strip()] = value.strip()
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out_dir is not None:
        updates["output.dir"] = args.out_dir
    if args.format is not None:
        updates["output.format"] = args.format
    return cfg.with_updates(**updates) if updates else cfg


def _with_mnist(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg["data.source"] != "mnist" or cfg["data.train_images"]:
        return cfg
    from .acceptance import locate_mnist

    paths = locate_mnist()
    if paths is None:
        raise ConfigError("no MNIST files: set data.train_images and friends, or NGD_MNIST_DIR")
    return cfg.with_updates(**{f"data.{k}": v for k, v in paths.items()})


def _prepare_out(cfg) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def cmd_figure1(cfg) -> int:
    out = _prepare_out(cfg)
    summary = run_figure1(cfg, out)
    rows = [{"mode": label, **m} for label, m in summary["modes"].items() if not m["diverged"]]
    if rows:
        emit_table(rows, FIGURE1_COLUMNS, cfg["output.format"], out / f"figure1.{cfg['output.format']}")
    for label, m in summary["modes"].items():
        if m["diverged"]:
            print(f"{label}: diverged ({m['error']})")
        else:
            print(f"{label}: cov_frobenius_rel={m['cov_frobenius_rel']:.4f} mean_mahalanobis={m['mean_mahalanobis']:.4f}")
    return 0


def cmd_sweep_temperature(cfg) -> int:
    cfg = _with_mnist(cfg)
    out = _prepare_out(cfg)
    fmt = cfg["output.format"]
    for rule, rows in run_temperature_sweep(cfg).items():
        path = emit(rows, fmt, out / f"sweep_temperature_{rule}.{fmt}")
        print(f"{rule}: {len(rows)} points -> {path}")
    return 0


def cmd_sweep_batch(cfg) -> int:
    cfg = _with_mnist(cfg)
    out = _prepare_out(cfg)
    fmt = cfg["output.format"]
    path = emit(run_batch_sweep(cfg), fmt, out / f"sweep_batch.{fmt}")
    print(f"batch sweep -> {path}")
    return 0


def cmd_fokker_planck(cfg) -> int:
    out = _prepare_out(cfg)
    fmt = cfg["output.format"]
    rows = run_fokker_planck_suite(cfg)
    path = emit_table(rows, FOKKER_COLUMNS, fmt, out / f"fokker_planck.{fmt}")
    for r in rows:
        print(f"{r['system']:>10} {r['rule']:<20} tv={r['tv']:.4f}")
    print(f"-> {path}")
    return 0


def cmd_verify(cfg, only=None) -> int:
    from . import acceptance

    out = _prepare_out(cfg)
    fmt = cfg["output.format"]
    results = acceptance.run_acceptance(only, seed=cfg["seed"])
    rows = [{
        "criterion": r.number, "title": r.title, "passed": r.passed,
        "runtime_s": r.runtime_s, "budget_s": r.budget_s, "note": r.note,
    } for r in results]
    emit_table(rows, VERIFY_COLUMNS, fmt, out / f"verify.{fmt}")
    (out / "verify_details.json").write_text(json.dumps({r.number: r.details for r in results}, indent=1, default=str))
    return 0 if all(r.passed for r in results) else 2


def _parse_only(text):
    if not text:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--only expects criterion numbers, got {text!r}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "verify":
            return cmd_verify(cfg, _parse_only(args.only))
        handler = {
            "figure1": cmd_figure1,
            "sweep-temperature": cmd_sweep_temperature,
            "sweep-batch": cmd_sweep_batch,
            "fokker-planck": cmd_fokker_planck,
        }[args.command]
        return handler(cfg)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
