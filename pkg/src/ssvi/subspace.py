"""Ownership of the sparse subspace: budgeted mask, removal, addition.

The active set is a single global budget of ``s`` coordinates spread
over all weight matrices. One update replaces K coordinates: the K
lowest-scoring active ones are dropped (their mu/sigma zeroed at once)
and the K highest-probe masked ones are re-activated. Between the two
halves the mask transiently holds s-K bits; every point the trainer can
observe has exactly s.

Ranking is global across layers by default so the budget can migrate
between layers; per-layer mode keeps each layer's count fixed. Ties are
broken by ascending flat coordinate index for reproducibility.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import BudgetError, DegenerateSigmaError, InsufficientCandidatesError
from .gaussian_stats import CriterionKind, ranking_scores
from .layers import VariationalNet, dense_grad_probe

log = logging.getLogger(__name__)

#: Sigma assigned when the module-mean strategy finds an empty module.
EMPTY_MODULE_SIGMA = 1e-3

RankScope = Literal["global", "per_layer"]


@dataclass
class Mask:
    """Per-layer binary inclusion arrays under one global budget."""

    per_layer: list[np.ndarray]
    budget: int

    def __post_init__(self):
        self.per_layer = [np.asarray(m, dtype=bool) for m in self.per_layer]
        if not (1 <= self.budget <= self.total_dim):
            raise BudgetError(f"budget {self.budget} outside [1, {self.total_dim}]")

    @property
    def total_dim(self) -> int:
        return sum(m.size for m in self.per_layer)

    def nnz(self) -> int:
        return int(sum(int(m.sum()) for m in self.per_layer))

    def flat(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.per_layer])

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.flat())

    def copy(self) -> "Mask":
        return Mask([m.copy() for m in self.per_layer], self.budget)

    def layer_slices(self) -> list[slice]:
        out, start = [], 0
        for m in self.per_layer:
            out.append(slice(start, start + m.size))
            start += m.size
        return out

    def set_flat(self, flat: np.ndarray) -> None:
        for m, sl in zip(self.per_layer, self.layer_slices()):
            m[...] = flat[sl].reshape(m.shape)


def init_mask(shapes: Sequence[tuple[int, int]], s: int, rng: np.random.Generator) -> Mask:
    """Uniformly random layer-agnostic choice of s active coordinates."""
    d = sum(o * i for o, i in shapes)
    if not (1 <= s <= d):
        raise BudgetError(f"budget s={s} outside [1, d={d}]")
    chosen = rng.permutation(d)[:s]
    flat = np.zeros(d, dtype=bool)
    flat[chosen] = True
    mask = Mask([np.zeros(shape, dtype=bool) for shape in shapes], s)
    mask.set_flat(flat)
    return mask


def sync_net_mask(net: VariationalNet, mask: Mask) -> None:
    """Point the net's layers at the mask arrays and zero masked params."""
    for layer, m in zip(net.layers, mask.per_layer):
        layer.mask = m
    net.apply_masks()


def _gather_params(net: VariationalNet) -> tuple[np.ndarray, np.ndarray]:
    mu = np.concatenate([l.mu.ravel() for l in net.layers])
    sigma = np.concatenate([l.sigma.ravel() for l in net.layers])
    return mu, sigma


def _k_smallest(indices: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((indices, scores))
    return indices[order[:k]]


def _k_largest(indices: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((indices, -scores))
    return indices[order[:k]]


def _per_layer_quota(counts: np.ndarray, k: int) -> np.ndarray:
    """Largest-remainder split of k over layers, capped by availability."""
    total = int(counts.sum())
    if total == 0 or k == 0:
        return np.zeros_like(counts)
    raw = counts * (k / total)
    quota = np.floor(raw).astype(int)
    rem = k - int(quota.sum())
    order = np.argsort(-(raw - quota), kind="stable")
    for i in order[:rem]:
        quota[i] += 1
    # cap and redistribute any overflow deterministically
    for _ in range(len(counts)):
        over = quota - counts
        if (over <= 0).all():
            break
        excess = int(over[over > 0].sum())
        quota = np.minimum(quota, counts)
        room = counts - quota
        order = np.argsort(-room, kind="stable")
        for i in order:
            if excess == 0:
                break
            take = min(excess, int(room[i]))
            quota[i] += take
            excess -= take
    return quota


def removal(
    mask: Mask,
    net: VariationalNet,
    k: int,
    kind: CriterionKind,
    scope: RankScope = "global",
) -> Mask:
    """Drop the k lowest-scoring active coordinates; zero their mu/sigma.

    The k applies globally (or per layer under ``per_layer`` scope via a
    largest-remainder quota). Requires sigma > 0 on every active
    coordinate.
    """
    if k < 0 or k > mask.nnz():
        raise BudgetError(f"removal count {k} outside [0, {mask.nnz()}]")
    if k == 0:
        return mask.copy()

    mu, sigma = _gather_params(net)
    flat = mask.flat()
    active = np.flatnonzero(flat)
    if kind.name != "abs_mu" and float(sigma[active].min()) <= 0.0:
        raise DegenerateSigmaError("active coordinate with sigma == 0 cannot be ranked")

    if scope == "global":
        scores = ranking_scores(mu[active], sigma[active], kind)
        drop = _k_smallest(active, scores, k)
    else:
        slices = mask.layer_slices()
        counts = np.array([int(flat[sl].sum()) for sl in slices])
        quotas = _per_layer_quota(counts, k)
        parts = []
        for sl, q in zip(slices, quotas):
            if q == 0:
                continue
            act_l = np.flatnonzero(flat[sl.start:sl.stop]) + sl.start
            scores = ranking_scores(mu[act_l], sigma[act_l], kind)
            parts.append(_k_smallest(act_l, scores, int(q)))
        drop = np.concatenate(parts) if parts else np.empty(0, dtype=int)

    flat[drop] = False
    out = Mask([m.copy() for m in mask.per_layer], mask.budget)
    out.set_flat(flat)
    sync_net_mask(net, out)
    return out


def addition(
    mask: Mask,
    probe: list[np.ndarray],
    k: int,
    scope: RankScope = "global",
) -> Mask:
    """Re-activate the k masked coordinates with the largest probe scores.

    ``probe`` holds one dense nonnegative score array per layer
    (gradient magnitudes over the full coordinate space).
    """
    if k < 0:
        raise BudgetError(f"addition count {k} must be >= 0")
    if k == 0:
        return mask.copy()
    if len(probe) != len(mask.per_layer):
        raise InsufficientCandidatesError(
            f"probe covers {len(probe)} layers, mask has {len(mask.per_layer)}"
        )
    for p, m in zip(probe, mask.per_layer):
        if p.shape != m.shape:
            raise InsufficientCandidatesError(
                f"probe shape {p.shape} does not cover mask shape {m.shape}"
            )

    flat = mask.flat()
    scores_flat = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in probe])
    pool = np.flatnonzero(~flat)
    if pool.size < k:
        raise InsufficientCandidatesError(f"only {pool.size} masked coordinates, need {k}")

    if scope == "global":
        grow = _k_largest(pool, scores_flat[pool], k)
    else:
        slices = mask.layer_slices()
        counts = np.array([int((~flat[sl.start:sl.stop]).sum()) for sl in slices])
        quotas = _per_layer_quota(counts, k)
        parts = []
        for sl, q in zip(slices, quotas):
            if q == 0:
                continue
            pool_l = np.flatnonzero(~flat[sl.start:sl.stop]) + sl.start
            parts.append(_k_largest(pool_l, scores_flat[pool_l], int(q)))
        grow = np.concatenate(parts) if parts else np.empty(0, dtype=int)

    flat[grow] = True
    out = Mask([m.copy() for m in mask.per_layer], mask.budget)
    out.set_flat(flat)
    return out


@dataclass(frozen=True)
class AdditionEstimator:
    """How the dense gradient probe for addition is estimated."""

    kind: Literal["one_step_sampled", "one_step_mean", "multi_step"]
    mc_steps: int = 1

    def __post_init__(self):
        if self.kind not in ("one_step_sampled", "one_step_mean", "multi_step"):
            raise ValueError(f"unknown addition estimator {self.kind!r}")
        if self.mc_steps < 1:
            raise ValueError(f"mc_steps must be >= 1, got {self.mc_steps}")

    @classmethod
    def parse(cls, kind: str, mc_steps: int = 1) -> "AdditionEstimator":
        return cls(kind.strip().lower(), int(mc_steps))


def addition_scores(
    net: VariationalNet,
    batches: Iterable[tuple[np.ndarray, np.ndarray]],
    estimator: AdditionEstimator,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Dense probe per the chosen estimator.

    one_step_sampled: |batch-mean gradient| at one posterior draw.
    one_step_mean:    same with the weights set to mu.
    multi_step:       average of |batch-mean gradient| over mc_steps
                      fresh (draw, batch) pairs; mc_steps=1 reproduces
                      one_step_sampled bit-for-bit under the same rng.
    """
    it = iter(batches)
    if estimator.kind == "one_step_mean":
        return dense_grad_probe(net, next(it), "mean")
    steps = estimator.mc_steps if estimator.kind == "multi_step" else 1
    acc: list[np.ndarray] | None = None
    for _ in range(steps):
        probe = dense_grad_probe(net, next(it), "sampled", rng)
        acc = probe if acc is None else [a + p for a, p in zip(acc, probe)]
    assert acc is not None
    if steps > 1:
        acc = [a / steps for a in acc]
    return acc


def reinit_sigma(
    net: VariationalNet,
    newly_added: list[np.ndarray],
    strategy: Literal["module_mean", "epsilon"] = "module_mean",
    epsilon: float = 1e-3,
) -> None:
    """Give freshly re-activated coordinates a nonzero sigma in place.

    module_mean averages sigma over the layer's surviving active
    coordinates (falling back to epsilon=1e-3 when a layer has none);
    epsilon assigns the fixed value. mu stays 0: the probe already voted
    for these coordinates and a zero mean leaves the forward unchanged
    until gradients move it.
    """
    if strategy == "epsilon" and not (epsilon > 0.0):
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    for layer, new in zip(net.layers, newly_added):
        new = np.asarray(new, dtype=bool)
        if not new.any():
            continue
        if strategy == "epsilon":
            value = epsilon
        else:
            survivors = layer.mask & ~new
            if survivors.any():
                value = float(layer.sigma[survivors].mean())
            else:
                log.warning(
                    "module-mean reinit found no surviving coordinates in a "
                    "%dx%d layer; falling back to sigma=%g",
                    layer.out_dim, layer.in_dim, EMPTY_MODULE_SIGMA,
                )
                value = EMPTY_MODULE_SIGMA
        layer.sigma[new] = value
        layer.mu[new] = 0.0


@dataclass(frozen=True)
class ReplacementSchedule:
    """Fraction of the budget replaced at each update step."""

    r0: float
    total_updates: int
    decay: Literal["cosine", "constant"] = "cosine"

    def __post_init__(self):
        if not (0.0 < self.r0 <= 1.0):
            raise ValueError(f"r0 must be in (0, 1], got {self.r0}")
        if self.total_updates < 1:
            raise ValueError(f"total_updates must be >= 1, got {self.total_updates}")
        if self.decay not in ("cosine", "constant"):
            raise ValueError(f"unknown decay {self.decay!r}")


def replacement_rate(t: int, sched: ReplacementSchedule) -> float:
    """r_t for update t; cosine anneals r0 -> 0 over total_updates."""
    if not (0 <= t <= sched.total_updates):
        raise ValueError(f"t={t} outside [0, {sched.total_updates}]")
    if sched.decay == "constant":
        return sched.r0
    return 0.5 * sched.r0 * (1.0 + math.cos(math.pi * t / sched.total_updates))


def replacement_count(t: int, sched: ReplacementSchedule, budget: int) -> int:
    """K_t = round(r_t * s); the same count is removed and added."""
    return max(int(round(replacement_rate(t, sched) * budget)), 0)
