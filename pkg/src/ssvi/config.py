"""Flat dotted-key run configuration.

The on-disk format is one ``section.key = value`` per line with ``#``
comments, chosen so sweep legs diff textually. ``--set key=value``
overrides land on top. Every key is declared below with its type;
unknown keys and malformed values raise ``ConfigError`` naming the
field.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from .data import (
    CsvSchema,
    Dataset,
    apply_normalization,
    fit_normalization,
    gen_sine,
    gen_two_moons,
    load_csv,
    load_idx,
)
from .errors import ConfigError, DataError
from .trainer import TrainConfig


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_hidden(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


# key -> (parser, default); a None default means optional/unset
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "train.outer_steps": (int, 50),
    "train.inner_steps": (int, 100),
    "train.batch_size": (int, 64),
    "train.lr0": (float, 0.1),
    "train.lr_decay": (str, "cosine"),
    "train.beta_max": (float, 1.0),
    "train.warmup_fraction": (float, 0.3),
    "train.prior_sigma": (float, 1.0),
    "train.sparsity": (float, 0.5),
    "train.criterion": (str, "snr_abs"),
    "train.lam": (float, 1.0),
    "train.addition_estimator": (str, "one_step_sampled"),
    "train.addition_mc_steps": (int, 1),
    "train.r0": (float, 0.3),
    "train.r_decay": (str, "cosine"),
    "train.sigma_init_mean": (float, 0.001),
    "train.reinit_strategy": (str, "module_mean"),
    "train.reinit_epsilon": (float, 1e-3),
    "train.rank_scope": (str, "global"),
    "train.hidden": (_parse_hidden, (32, 32)),
    "train.seed": (int, 0),
    "train.eval_samples": (int, 5),
    "train.ece_bins": (int, 15),
    "data.kind": (str, "two_moons"),
    "data.n": (int, 2000),
    "data.test_n": (int, 1000),
    "data.noise": (float, 0.1),
    "data.seed": (int, 100),
    "data.normalize": (_parse_bool, False),
    "data.images": (str, None),
    "data.labels": (str, None),
    "data.test_images": (str, None),
    "data.test_labels": (str, None),
    "data.limit": (int, 5000),
    "data.test_limit": (int, 1000),
    "data.path": (str, None),
    "data.test_path": (str, None),
    "data.label_column": (str, "label"),
    "data.task": (str, "classification"),
    "run.name": (str, None),
}

_TRAIN_FIELDS = {
    "train.outer_steps": "outer_steps",
    "train.inner_steps": "inner_steps",
    "train.batch_size": "batch_size",
    "train.lr0": "lr0",
    "train.lr_decay": "lr_decay",
    "train.beta_max": "beta_max",
    "train.warmup_fraction": "warmup_fraction",
    "train.prior_sigma": "prior_sigma",
    "train.sparsity": "sparsity",
    "train.criterion": "criterion",
    "train.lam": "lam",
    "train.addition_estimator": "addition_estimator",
    "train.addition_mc_steps": "addition_mc_steps",
    "train.r0": "r0",
    "train.r_decay": "r_decay",
    "train.sigma_init_mean": "sigma_init_mean",
    "train.reinit_strategy": "reinit_strategy",
    "train.reinit_epsilon": "reinit_epsilon",
    "train.rank_scope": "rank_scope",
    "train.hidden": "hidden",
    "train.seed": "seed",
    "train.eval_samples": "eval_samples",
    "train.ece_bins": "ece_bins",
}


def default_config() -> dict[str, Any]:
    return {k: d for k, (_, d) in SCHEMA.items()}


def _set_key(cfg: dict[str, Any], key: str, raw: str) -> None:
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser, _ = SCHEMA[key]
    try:
        cfg[key] = parser(raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw.strip()!r}: {exc}") from exc


def parse_config_text(text: str, *, base: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = dict(base) if base is not None else default_config()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        _set_key(cfg, key, raw)
    return cfg


def load_config(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config_text(path.read_text())


def apply_overrides(cfg: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply repeated ``--set key=value`` strings in order."""
    out = dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_key(out, key, raw)
    return out


def to_train_config(cfg: dict[str, Any]) -> TrainConfig:
    tc = TrainConfig(**{field: cfg[key] for key, field in _TRAIN_FIELDS.items()})
    tc.validate()
    return tc


def build_datasets(cfg: dict[str, Any]) -> tuple[Dataset, Dataset]:
    """Materialize (train, test) splits per the data.* section."""
    kind = cfg["data.kind"]
    if kind == "two_moons":
        train = gen_two_moons(cfg["data.n"], cfg["data.noise"], cfg["data.seed"])
        test = gen_two_moons(cfg["data.test_n"], cfg["data.noise"],
                             cfg["data.seed"] + 1, split="test")
    elif kind == "sine":
        train = gen_sine(cfg["data.n"], cfg["data.noise"], cfg["data.seed"])
        test = gen_sine(cfg["data.test_n"], cfg["data.noise"],
                        cfg["data.seed"] + 1, split="test")
    elif kind == "idx":
        for key in ("data.images", "data.labels", "data.test_images", "data.test_labels"):
            if cfg[key] is None:
                raise DataError(f"data.kind=idx requires {key}")
        train = load_idx(cfg["data.images"], cfg["data.labels"], limit=cfg["data.limit"])
        test = load_idx(cfg["data.test_images"], cfg["data.test_labels"],
                        limit=cfg["data.test_limit"], split="test")
    elif kind == "csv":
        if cfg["data.path"] is None or cfg["data.test_path"] is None:
            raise DataError("data.kind=csv requires data.path and data.test_path")
        schema = CsvSchema(label_column=cfg["data.label_column"], task=cfg["data.task"])
        train = load_csv(cfg["data.path"], schema)
        test = load_csv(cfg["data.test_path"], schema, split="test")
    else:
        raise ConfigError(f"unknown data.kind {kind!r}")

    if cfg["data.normalize"]:
        stats = fit_normalization(train)
        train = apply_normalization(train, stats)
        test = apply_normalization(test, stats)
    return train, test


def config_for_json(cfg: dict[str, Any]) -> dict[str, Any]:
    """JSON-safe copy (tuples become lists)."""
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
