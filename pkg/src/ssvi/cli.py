"""Command-line surface: train / eval / criteria-table / ablate.

Exit codes: 0 success, 2 invalid config or arguments, 3 missing or
unreadable data, 4 numerical abort during training. Run artifacts land
in one directory per run under --out or $SSVI_RUN_ROOT (default
./runs); nothing is written elsewhere.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import (
    apply_overrides,
    build_datasets,
    config_for_json,
    default_config,
    load_config,
    to_train_config,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionMismatchError,
    NonFiniteLossError,
    SsviError,
)
from .gaussian_stats import (
    CriterionKind,
    GaussParam,
    criterion_value,
)
from .metrics import export_metrics_csv, flops_ratio
from .trainer import evaluate, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

RUN_ROOT_ENV = "SSVI_RUN_ROOT"

CRITERIA_TABLE_COLUMNS = (
    "abs_mu", "snr_theta", "e_abs", "snr_abs", "e_exp_abs", "snr_exp_abs"
)


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _run_dir(cfg, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    name = cfg["run.name"]
    if not name:
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        name = f"{cfg['data.kind']}-s{cfg['train.seed']}-{stamp}"
    return root / name


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _write_manifest(out_dir: Path, cfg) -> None:
    """Snapshot of everything needed to reproduce the run, written
    atomically before training starts and not touched afterwards."""
    _write_json_atomic(out_dir / "manifest.json", {
        "config": config_for_json(cfg),
        "git_describe": _git_describe(),
        "package_version": __version__,
        "seed": cfg["train.seed"],
        "started_at": _utc_now(),
        "outputs": {
            "metrics": "metrics.jsonl",
            "metrics_csv": "metrics.csv",
            "mask_events": "mask_events.jsonl",
            "checkpoint": "final.ckpt",
            "result": "result.json",
        },
    })


def _load_effective_config(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    return apply_overrides(cfg, args.set or [])


def cmd_train(args) -> int:
    cfg = _load_effective_config(args)
    train_config = to_train_config(cfg)
    train_ds, test_ds = build_datasets(cfg)

    out_dir = _run_dir(cfg, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, cfg)
    try:
        result = train(train_config, train_ds, test_ds, out_dir=out_dir)
    except NonFiniteLossError as exc:
        _write_json_atomic(out_dir / "result.json",
                           {"status": "numerical-abort", "error": str(exc),
                            "ended_at": _utc_now()})
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    final = result.final_record
    export_metrics_csv(result.records, out_dir / "metrics.csv")
    _write_json_atomic(out_dir / "result.json",
                       {"status": "ok", "ended_at": _utc_now(), "final": final})
    print(json.dumps({"run_dir": str(out_dir), "final": final}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        net, step, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_DATA
    cfg = _load_effective_config(args)
    train_ds, test_ds = build_datasets(cfg)
    ds = train_ds if args.split == "train" else test_ds
    rng = np.random.default_rng(args.seed)
    try:
        scores = evaluate(net, ds, args.samples, rng)
    except DimensionMismatchError as exc:
        print(f"checkpoint/dataset mismatch: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps({"step": step, "n_samples": args.samples, **scores}, sort_keys=True))
    return EXIT_OK


def _parse_grid(text: str, name: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"{name} grid {text!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"{name} grid is empty")
    return values


def cmd_criteria_table(args) -> int:
    mu_grid = _parse_grid(args.mu, "mu")
    sigma_grid = _parse_grid(args.sigma, "sigma")
    if min(sigma_grid) <= 0.0:
        raise ConfigError(f"sigma grid must be > 0, got {min(sigma_grid)}")
    if args.lam <= 0.0:
        raise ConfigError(f"lam must be > 0, got {args.lam}")

    writer = csv.writer(sys.stdout)
    writer.writerow(["mu", "sigma", *CRITERIA_TABLE_COLUMNS])
    for mu in mu_grid:
        for sigma in sigma_grid:
            p = GaussParam(mu, sigma)
            row = [mu, sigma]
            for name in CRITERIA_TABLE_COLUMNS:
                kind = CriterionKind.parse(name, args.lam)
                row.append(repr(criterion_value(p, kind)))
            writer.writerow(row)
    return EXIT_OK


ABLATE_AXES = {
    "sparsity": ("train.sparsity", float),
    "criterion": ("train.criterion", str),
    "sigma_init": ("train.sigma_init_mean", float),
    "mc_steps": ("train.addition_mc_steps", int),
}


def cmd_ablate(args) -> int:
    if args.axis not in ABLATE_AXES:
        raise ConfigError(f"unknown ablation axis {args.axis!r}; expected {sorted(ABLATE_AXES)}")
    key, caster = ABLATE_AXES[args.axis]
    try:
        values = [caster(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse values for axis {args.axis}: {exc}") from exc
    if not values:
        raise ConfigError("no ablation values given")

    base_cfg = _load_effective_config(args)
    sweep_dir = Path(args.out) if args.out else _run_dir(base_cfg, None).with_name(
        f"ablate-{args.axis}"
    )
    sweep_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for value in values:
        leg_cfg = apply_overrides(base_cfg, [f"{key}={value}"])
        leg_dir = sweep_dir / f"{args.axis}={value}"
        leg_dir.mkdir(parents=True, exist_ok=True)
        _write_manifest(leg_dir, leg_cfg)
        try:
            tc = to_train_config(leg_cfg)
            train_ds, test_ds = build_datasets(leg_cfg)
            result = train(tc, train_ds, test_ds, out_dir=leg_dir)
        except SsviError as exc:
            rows.append({"value": value, "status": type(exc).__name__,
                         "final_acc": "", "final_ece": "", "flops_ratio": ""})
            print(f"leg {args.axis}={value} failed: {exc}", file=sys.stderr)
            continue
        final = result.final_record
        rows.append({
            "value": value,
            "status": "ok",
            "final_acc": final["acc"],
            "final_ece": final["ece"],
            "flops_ratio": flops_ratio(result.net),
        })

    combined = sweep_dir / "combined.csv"
    with combined.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["value", "status", "final_acc",
                                                "final_ece", "flops_ratio"])
        writer.writeheader()
        writer.writerows(rows)
    print(str(combined))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssvi",
        description="Sparse-subspace variational inference for small Bayesian nets",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("config", nargs="?", help="config file (defaults apply if omitted)")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
    p_train.add_argument("--out", help="run directory (default under $SSVI_RUN_ROOT)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--config", help="config file describing the dataset")
    p_eval.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_eval.add_argument("--samples", type=int, default=5,
                        help="posterior samples per prediction (default 5)")
    p_eval.add_argument("--split", choices=("train", "test"), default="test")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_table = sub.add_parser("criteria-table",
                             help="CSV of all six criteria over a (mu, sigma) grid")
    p_table.add_argument("--mu", required=True, help="comma-separated mu values")
    p_table.add_argument("--sigma", required=True, help="comma-separated sigma values (> 0)")
    p_table.add_argument("--lam", type=float, default=1.0)
    p_table.set_defaults(func=cmd_criteria_table)

    p_abl = sub.add_parser("ablate", help="one training per value of one axis")
    p_abl.add_argument("config", nargs="?")
    p_abl.add_argument("--axis", required=True, choices=sorted(ABLATE_AXES))
    p_abl.add_argument("--values", required=True, help="comma-separated values")
    p_abl.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_abl.add_argument("--out", help="sweep directory")
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
