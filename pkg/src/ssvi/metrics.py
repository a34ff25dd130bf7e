"""Evaluation statistics: accuracy, NLL, calibration, FLOPs, set overlap."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DimensionMismatchError
from .layers import VariationalNet


@dataclass(frozen=True)
class EceConfig:
    """Equal-width confidence binning on [0, 1]."""

    n_bins: int = 15

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")


def ece(confidences: np.ndarray, correct: np.ndarray, cfg: EceConfig = EceConfig()) -> float:
    """Expected calibration error: sum_b (n_b/N) |acc_b - conf_b|.

    ``confidences`` in [0, 1]; ``correct`` is the 0/1 hit indicator.
    """
    confidences = np.asarray(confidences, dtype=np.float64).ravel()
    correct = np.asarray(correct, dtype=np.float64).ravel()
    if confidences.size == 0:
        raise ValueError("ece of an empty sample is undefined")
    if confidences.shape != correct.shape:
        raise DimensionMismatchError(
            f"confidences {confidences.shape} vs correct {correct.shape}"
        )
    if confidences.min() < 0.0 or confidences.max() > 1.0:
        raise ValueError("confidences must lie in [0, 1]")

    n = confidences.size
    # right-closed bins; confidence 1.0 lands in the last bin
    idx = np.minimum((confidences * cfg.n_bins).astype(int), cfg.n_bins - 1)
    total = 0.0
    for b in range(cfg.n_bins):
        sel = idx == b
        n_b = int(sel.sum())
        if n_b == 0:
            continue
        gap = abs(float(correct[sel].mean()) - float(confidences[sel].mean()))
        total += (n_b / n) * gap
    return total


def criterion_iou(set_a: Iterable[int], set_b: Iterable[int]) -> float:
    """|A n B| / |A u B|; two empty sets agree perfectly (1.0)."""
    a, b = set(set_a), set(set_b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


@dataclass(frozen=True)
class FlopsModel:
    """Multiply-add accounting for one training step.

    Forward counts active-weight MAs twice (mean path and variance
    path of the sampled-pre-activation forward); backward is charged at
    twice the forward, the usual convention. Only ratios against the
    dense baseline of the same architecture are meaningful; bias adds
    and activation costs are excluded.
    """

    dense_per_layer: tuple[int, ...]
    active_per_layer: tuple[int, ...]
    batch_size: int
    forward_passes: int = 2
    backward_ratio: float = 2.0

    def __post_init__(self):
        if any(a > d for a, d in zip(self.active_per_layer, self.dense_per_layer)):
            raise ValueError("active counts cannot exceed dense counts")
        if any(c < 0 for c in self.active_per_layer):
            raise ValueError("counts must be >= 0")

    @classmethod
    def of_net(cls, net: VariationalNet, batch_size: int) -> "FlopsModel":
        return cls(
            dense_per_layer=tuple(l.mu.size for l in net.layers),
            active_per_layer=tuple(int(l.mask.sum()) for l in net.layers),
            batch_size=batch_size,
        )

    def per_step(self, dense: bool = False) -> float:
        weights = self.dense_per_layer if dense else self.active_per_layer
        mas = float(sum(weights)) * self.batch_size * self.forward_passes
        return mas * (1.0 + self.backward_ratio)


def flops_estimate(net: VariationalNet, batch_size: int, total_steps: int) -> float:
    """Estimated training multiply-adds for the active subspace."""
    return FlopsModel.of_net(net, batch_size).per_step() * total_steps


def flops_dense_baseline(net: VariationalNet, batch_size: int, total_steps: int) -> float:
    """The same estimate with every coordinate active."""
    return FlopsModel.of_net(net, batch_size).per_step(dense=True) * total_steps


def flops_ratio(net: VariationalNet, batch_size: int = 1, total_steps: int = 1) -> float:
    """Sparse-to-dense training cost ratio; convention-independent."""
    model = FlopsModel.of_net(net, batch_size)
    return model.per_step() / model.per_step(dense=True)


def accuracy_nll(probabilities: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Top-1 accuracy and mean negative log true-class probability.

    ``probabilities`` is [n, C] with rows summing to 1; probabilities
    are clamped at 1e-12 inside the log.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if probabilities.ndim != 2 or labels.shape != (probabilities.shape[0],):
        raise DimensionMismatchError(
            f"probabilities {probabilities.shape} vs labels {labels.shape}"
        )
    if not np.allclose(probabilities.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    pred = probabilities.argmax(axis=1)
    acc = float((pred == labels).mean())
    picked = probabilities[np.arange(labels.size), labels]
    nll = float(-np.log(np.maximum(picked, 1e-12)).mean())
    return acc, nll


METRICS_CSV_COLUMNS = ("step", "beta", "lr", "r_t", "nll", "kl", "acc", "ece",
                       "sparsity", "flops_est")


def export_metrics_csv(records: Iterable[dict], path: str | Path) -> None:
    """Plot-friendly CSV mirror of the metrics records, one row per
    evaluation."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_CSV_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: rec.get(k) for k in METRICS_CSV_COLUMNS})


def export_metrics_csv_from_jsonl(jsonl_path: str | Path, csv_path: str | Path) -> None:
    records = [json.loads(line) for line in Path(jsonl_path).read_text().splitlines() if line]
    export_metrics_csv(records, csv_path)
