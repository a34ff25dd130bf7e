"""Alternating optimization of variational parameters and the subspace.

One run is T outer steps. Each outer step re-initializes the sigma of
coordinates re-activated by the previous mask update, takes M SGD steps
on the masked ELBO (sampled-pre-activation forward, analytic KL), then
replaces K_t = round(r_t * s) coordinates: lowest-criterion out, largest
gradient-probe in. The active count is exactly s at every point the
caller can observe; a sparsity-0 run forces K_t = 0 and degenerates to
dense mean-field VI.

The objective per step is the per-example normalized ELBO:

    loss = mean_batch NLL + beta * KL_active / (num_batches * batch_size)

so the per-epoch sum recovers the full data NLL plus beta * KL up to the
constant 1/batch_size, and learning rates transfer across batch sizes.
beta ramps linearly from 0 to beta_max over the warm-up fraction.

Randomness is split into five independent child streams of the config
seed (parameter init, forward noise, batch order, mask operations,
evaluation), so runs are bit-reproducible and a dense run consumes
exactly the same draws as a mask-free VI loop.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Literal

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset
from .errors import ConfigError, NonFiniteLossError
from .gaussian_stats import CriterionKind
from .layers import (
    SIGMA_FLOOR,
    BayesLinear,
    LayerGrads,
    VariationalNet,
    gaussian_nll,
    head_loss,
    net_backward_lrt,
    net_forward_lrt,
    softmax,
)
from .metrics import EceConfig, FlopsModel, accuracy_nll, ece
from .subspace import (
    AdditionEstimator,
    Mask,
    ReplacementSchedule,
    addition,
    addition_scores,
    init_mask,
    reinit_sigma,
    removal,
    replacement_count,
    replacement_rate,
    sync_net_mask,
)


@dataclass(frozen=True)
class TrainConfig:
    outer_steps: int = 50               # T: number of mask updates
    inner_steps: int = 100              # M: SGD steps between mask updates
    batch_size: int = 64
    lr0: float = 0.1
    lr_decay: Literal["cosine", "constant"] = "cosine"
    beta_max: float = 1.0
    warmup_fraction: float = 0.3
    prior_sigma: float = 1.0
    sparsity: float = 0.5               # 1 - s/d
    criterion: str = "snr_abs"
    lam: float = 1.0                    # exponent scale for exp criteria
    addition_estimator: str = "one_step_sampled"
    addition_mc_steps: int = 1
    r0: float = 0.3
    r_decay: Literal["cosine", "constant"] = "cosine"
    sigma_init_mean: float = 0.001
    reinit_strategy: Literal["module_mean", "epsilon"] = "module_mean"
    reinit_epsilon: float = 1e-3
    rank_scope: Literal["global", "per_layer"] = "global"
    hidden: tuple[int, ...] = (32, 32)
    seed: int = 0
    eval_samples: int = 5
    ece_bins: int = 15

    def validate(self) -> None:
        checks = [
            ("outer_steps", self.outer_steps >= 1),
            ("inner_steps", self.inner_steps >= 1),
            ("batch_size", self.batch_size >= 1),
            ("lr0", self.lr0 > 0.0),
            ("lr_decay", self.lr_decay in ("cosine", "constant")),
            ("beta_max", self.beta_max >= 0.0),
            ("warmup_fraction", 0.0 <= self.warmup_fraction <= 1.0),
            ("prior_sigma", self.prior_sigma > 0.0),
            ("sparsity", 0.0 <= self.sparsity < 1.0),
            ("lam", self.lam > 0.0),
            ("addition_mc_steps", self.addition_mc_steps >= 1),
            ("r0", 0.0 < self.r0 <= 1.0),
            ("r_decay", self.r_decay in ("cosine", "constant")),
            ("sigma_init_mean", self.sigma_init_mean > 0.0),
            ("reinit_epsilon", self.reinit_epsilon > 0.0),
            ("rank_scope", self.rank_scope in ("global", "per_layer")),
            ("hidden", all(h >= 1 for h in self.hidden)),
            ("eval_samples", self.eval_samples >= 1),
            ("ece_bins", self.ece_bins >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid config field {name} = {getattr(self, name)!r}")
        try:
            CriterionKind.parse(self.criterion, self.lam)
            AdditionEstimator.parse(self.addition_estimator, self.addition_mc_steps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def total_steps(self) -> int:
        return self.outer_steps * self.inner_steps


@dataclass(frozen=True)
class ElboBreakdown:
    """Loss decomposition of one step; total = nll + beta * kl_scaled."""

    nll: float
    kl: float
    kl_scaled: float
    beta: float
    total: float


def kl_warmup(step: int, total: int, beta_max: float, warmup_fraction: float) -> float:
    """Linear ramp 0 -> beta_max over the first warmup_fraction of steps."""
    if not (0 <= step <= total):
        raise ValueError(f"step {step} outside [0, {total}]")
    ramp_len = warmup_fraction * total
    if ramp_len <= 0:
        return beta_max
    return beta_max * min(step / ramp_len, 1.0)


def lr_at(step: int, total: int, lr0: float, decay: str) -> float:
    if decay == "constant":
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total))


def kl_active_sum(net: VariationalNet, prior_sigma: float) -> float:
    """KL(q||p) summed over active coordinates (masked ones contribute 0)."""
    total = 0.0
    sp2 = prior_sigma * prior_sigma
    for layer in net.layers:
        m = layer.mask
        if not m.any():
            continue
        sig = layer.sigma[m]
        mu = layer.mu[m]
        total += float(np.sum(
            np.log(prior_sigma / sig) + (sig * sig + mu * mu) / (2.0 * sp2) - 0.5
        ))
    return total


def elbo_step(
    net: VariationalNet,
    batch: tuple[np.ndarray, np.ndarray],
    beta: float,
    prior_sigma: float,
    kl_scale: float,
    rng: np.random.Generator,
) -> tuple[ElboBreakdown, list[LayerGrads]]:
    """One sampled forward/backward plus the analytic KL term and gradients."""
    x, targets = batch
    out, tapes = net_forward_lrt(net, x, rng)
    nll, dl_dout = head_loss(net, out, targets)
    grads = net_backward_lrt(net, tapes, dl_dout)

    kl = kl_active_sum(net, prior_sigma)
    w = beta * kl_scale
    if w != 0.0:
        sp2 = prior_sigma * prior_sigma
        for layer, g in zip(net.layers, grads):
            g.dmu[...] += w * (layer.mu / sp2) * layer.mask
            dkl_dsigma = np.where(layer.mask, -1.0 / np.where(layer.mask, layer.sigma, 1.0)
                                  + layer.sigma / sp2, 0.0)
            g.dsigma[...] += w * dkl_dsigma

    kl_scaled = kl_scale * kl
    total = nll + beta * kl_scaled
    if not math.isfinite(total):
        raise NonFiniteLossError(f"loss is {total} (nll={nll}, kl={kl}, beta={beta})")
    return ElboBreakdown(nll=nll, kl=kl, kl_scaled=kl_scaled, beta=beta, total=total), grads


#: Largest relative sigma move per step. The KL term's -1/sigma barrier
#: gradient is unbounded near the floor; a full SGD step there launches
#: sigma by lr*beta/(N*sigma_floor) (~1e2 at desk scale) and the 1/N-scaled
#: restoring force needs ~N/(lr*beta) steps to recover. Capping each
#: sigma step at half its current value bounds log-sigma moves instead,
#: which is inert for ordinary steps and turns floor recovery into a
#: geometric climb.
SIGMA_TRUST = 0.5


def sgd_update(net: VariationalNet, grads: list[LayerGrads], lr: float) -> VariationalNet:
    """In-place SGD on mu, sigma, bias; sigma floored, masks re-applied."""
    for layer, g in zip(net.layers, grads):
        layer.mu -= lr * g.dmu
        cap = SIGMA_TRUST * layer.sigma
        layer.sigma -= np.clip(lr * g.dsigma, -cap, cap)
        layer.bias -= lr * g.dbias
        np.clip(layer.sigma, SIGMA_FLOOR, None, out=layer.sigma)
        layer.apply_mask()
    return net


def predict(
    net: VariationalNet,
    x: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Posterior-averaged class probabilities, rows summing to 1.

    x is [n, dim] sample-major; the result is [n, n_classes].
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    xt = np.asarray(x, dtype=np.float64).T
    acc = None
    for _ in range(n_samples):
        out, _ = net_forward_lrt(net, xt, rng)
        p = softmax(out)
        acc = p if acc is None else acc + p
    return (acc / n_samples).T


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------


def init_net(
    in_dim: int,
    hidden: tuple[int, ...],
    out_dim: int,
    task: str,
    sigma_mean: float,
    rng: np.random.Generator,
) -> VariationalNet:
    """Fan-in uniform mu, sigma ~ N(m, (m/10)^2) truncated positive."""
    dims = [in_dim, *hidden, out_dim]
    layers = []
    for i, o in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(i)
        mu = rng.uniform(-bound, bound, (o, i))
        sigma = rng.normal(sigma_mean, sigma_mean / 10.0, (o, i))
        while (sigma <= 0.0).any():  # ~10-sigma event, kept for correctness
            bad = sigma <= 0.0
            sigma[bad] = rng.normal(sigma_mean, sigma_mean / 10.0, int(bad.sum()))
        layers.append(BayesLinear(
            mu=mu, sigma=sigma, bias=np.zeros(o), mask=np.ones((o, i), dtype=bool)
        ))
    return VariationalNet(layers, task=task)  # type: ignore[arg-type]


def minibatches(
    ds: Dataset, batch_size: int, rng: np.random.Generator
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless shuffled batches; partial tail batches are dropped."""
    n = ds.n
    bs = min(batch_size, n)
    features = ds.features
    labels = ds.labels
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            idx = perm[start:start + bs]
            x = features[idx].T
            if ds.task == "regression":
                yield x, labels[idx][None, :]
            else:
                yield x, labels[idx]


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    net: VariationalNet
    mask: Mask
    records: list[dict] = field(default_factory=list)
    mask_events: list[dict] = field(default_factory=list)

    @property
    def final_record(self) -> dict:
        return self.records[-1]


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(5)
    names = ("init", "noise", "data", "mask", "eval")
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def evaluate(
    net: VariationalNet,
    ds: Dataset,
    n_samples: int,
    rng: np.random.Generator,
    ece_bins: int = 15,
) -> dict:
    """acc/nll/ece on one dataset (classification) or nll alone (regression)."""
    if net.task == "classification":
        probs = predict(net, ds.features, n_samples, rng)
        acc, nll = accuracy_nll(probs, ds.labels)
        conf = probs.max(axis=1)
        correct = (probs.argmax(axis=1) == ds.labels).astype(float)
        return {"acc": acc, "nll": nll, "ece": ece(conf, correct, EceConfig(ece_bins))}
    # regression: posterior-mean NLL under the fixed-noise likelihood
    xt = ds.features.T
    preds = []
    for _ in range(n_samples):
        out, _ = net_forward_lrt(net, xt, rng)
        preds.append(out)
    mean_pred = np.mean(preds, axis=0)
    nll, _ = gaussian_nll(mean_pred, ds.labels[None, :])
    return {"acc": None, "nll": nll, "ece": None}


def train(
    config: TrainConfig,
    train_ds: Dataset,
    test_ds: Dataset | None = None,
    out_dir: str | Path | None = None,
    on_gamma_update: Callable[[int, VariationalNet, Mask], None] | None = None,
) -> TrainResult:
    """Run the full alternating loop; see the module docstring."""
    config.validate()
    eval_ds = test_ds if test_ds is not None else train_ds
    streams = rng_streams(config.seed)

    out_dim = train_ds.n_classes if train_ds.task == "classification" else 1
    net = init_net(train_ds.dim, config.hidden, out_dim, train_ds.task,
                   config.sigma_init_mean, streams["init"])

    d = net.weight_count
    s = max(int(round((1.0 - config.sparsity) * d)), 1)
    dense = s == d
    mask = init_mask(net.layer_shapes(), s, streams["mask"])
    sync_net_mask(net, mask)

    kind = CriterionKind.parse(config.criterion, config.lam)
    estimator = AdditionEstimator.parse(config.addition_estimator, config.addition_mc_steps)
    sched = ReplacementSchedule(config.r0, config.outer_steps, config.r_decay)
    batches = minibatches(train_ds, config.batch_size, streams["data"])
    num_batches = max(train_ds.n // min(config.batch_size, train_ds.n), 1)
    kl_scale = 1.0 / (num_batches * min(config.batch_size, train_ds.n))
    flops = FlopsModel.of_net(net, min(config.batch_size, train_ds.n))
    total = config.total_steps

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_fh = events_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_fh = (out_path / "metrics.jsonl").open("w")
        events_fh = (out_path / "mask_events.jsonl").open("w")

    result = TrainResult(net=net, mask=mask)
    step = 0
    newly_added: list[np.ndarray] | None = None
    prev_removed: set[int] = set()
    last_breakdown: ElboBreakdown | None = None

    def emit(record: dict, fh) -> None:
        if fh is not None:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

    try:
        for t in range(config.outer_steps):
            if newly_added is not None:
                reinit_sigma(net, newly_added, config.reinit_strategy, config.reinit_epsilon)
                newly_added = None

            for _ in range(config.inner_steps):
                beta = kl_warmup(step, total, config.beta_max, config.warmup_fraction)
                lr = lr_at(step, total, config.lr0, config.lr_decay)
                try:
                    last_breakdown, grads = elbo_step(
                        net, next(batches), beta, config.prior_sigma, kl_scale, streams["noise"]
                    )
                except NonFiniteLossError:
                    if out_path is not None:
                        save_checkpoint(out_path / "abort.ckpt", net, step)
                    raise
                sgd_update(net, grads, lr)
                step += 1

            if on_gamma_update is not None:
                on_gamma_update(t, net, mask)

            # KL is recorded here, while every active sigma is still > 0;
            # right after addition the not-yet-reinitialized coordinates
            # would make it infinite.
            kl_now = kl_active_sum(net, config.prior_sigma)

            k = 0 if dense else replacement_count(t, sched, s)
            r_t = 0.0 if dense else replacement_rate(t, sched)
            removed_set: set[int] = set()
            if k > 0:
                before = mask.flat()
                reduced = removal(mask, net, k, kind, config.rank_scope)
                probe = addition_scores(net, batches, estimator, streams["mask"])
                grown = addition(reduced, probe, k, config.rank_scope)
                removed_set = set(np.flatnonzero(before & ~reduced.flat()).tolist())
                newly_added = [g & ~r for g, r in zip(grown.per_layer, reduced.per_layer)]
                mask = grown
                sync_net_mask(net, mask)
                result.mask = mask

            assert mask.nnz() == s, f"budget violated: {mask.nnz()} != {s}"

            overlap = _iou(removed_set, prev_removed)
            prev_removed = removed_set
            event = {
                "step": step,
                "removed_count": len(removed_set),
                "added_count": len(removed_set),
                "criterion": kind.name,
                "overlap_with_previous": overlap,
            }
            result.mask_events.append(event)
            emit(event, events_fh)

            scores = evaluate(net, eval_ds, config.eval_samples, streams["eval"], config.ece_bins)
            record = {
                "step": step,
                "beta": kl_warmup(step, total, config.beta_max, config.warmup_fraction),
                "lr": lr_at(step, total, config.lr0, config.lr_decay),
                "r_t": r_t,
                "nll": scores["nll"],
                "kl": kl_now,
                "acc": scores["acc"],
                "ece": scores["ece"],
                "sparsity": 1.0 - mask.nnz() / d,
                "flops_est": flops.per_step() * step,
            }
            result.records.append(record)
            emit(record, metrics_fh)

        if out_path is not None:
            save_checkpoint(out_path / "final.ckpt", net, step,
                            streams["noise"].bit_generator.state)
    finally:
        for fh in (metrics_fh, events_fh):
            if fh is not None:
                fh.close()
    return result


def _iou(a: set[int], b: set[int]) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)
