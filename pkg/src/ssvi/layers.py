"""Masked Bayesian linear layers with manual forward/backward passes.

A layer holds per-weight Gaussian parameters (mu, sigma), a
deterministic bias, and a binary inclusion mask. The training forward
pass samples pre-activations instead of weights:

    y = (mu*x) + sqrt((sigma^2)(x^2)) * eps + bias,   eps ~ N(0, I)

which matches the per-example weight-sampling forward in distribution
while costing two matrix products for the whole batch. The noise draw is
recorded on a tape so the backward pass is a deterministic function of
(tape, upstream gradient) and can be checked by finite differences.

Conventions: activations are column-major, x is [in, B], y is [out, B].
Masked coordinates participate with value 0; where the pre-activation
std is exactly 0 the sigma-gradient is defined as 0 (the 0/0 limit of
the chain rule, and the reason freshly re-activated coordinates need
their sigma re-initialized rather than grown by gradient descent).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .errors import DimensionMismatchError, TapeMismatchError

Task = Literal["classification", "regression"]

#: Fixed observation noise of the regression likelihood.
REGRESSION_NOISE = 0.1

#: Smallest sigma retained on an active coordinate after an update.
SIGMA_FLOOR = 1e-8


@dataclass
class BayesLinear:
    """One fully-connected layer: weight posterior N(mu, sigma^2) * mask."""

    mu: np.ndarray      # [out, in]
    sigma: np.ndarray   # [out, in], >= 0
    bias: np.ndarray    # [out]
    mask: np.ndarray    # [out, in] bool

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (self.mu.ndim == 2 and self.mu.shape == self.sigma.shape == self.mask.shape):
            raise DimensionMismatchError(
                f"mu/sigma/mask must share a 2-D shape, got {self.mu.shape}, "
                f"{self.sigma.shape}, {self.mask.shape}"
            )
        if self.bias.shape != (self.mu.shape[0],):
            raise DimensionMismatchError(
                f"bias shape {self.bias.shape} does not match out dim {self.mu.shape[0]}"
            )

    @property
    def out_dim(self) -> int:
        return self.mu.shape[0]

    @property
    def in_dim(self) -> int:
        return self.mu.shape[1]

    def apply_mask(self) -> None:
        """Re-impose mu = mu*mask, sigma = sigma*mask in place."""
        np.multiply(self.mu, self.mask, out=self.mu)
        np.multiply(self.sigma, self.mask, out=self.sigma)

    def copy(self) -> "BayesLinear":
        return BayesLinear(self.mu.copy(), self.sigma.copy(), self.bias.copy(), self.mask.copy())


@dataclass
class ForwardTape:
    """Everything the backward pass needs to be deterministic."""

    layer: BayesLinear
    x: np.ndarray         # [in, B]
    eps: np.ndarray       # [out, B]
    pre_mean: np.ndarray  # [out, B], mu x
    pre_std: np.ndarray   # [out, B], sqrt((sigma^2)(x^2)) >= 0
    y: np.ndarray         # [out, B], pre-activation output


class LayerGrads(NamedTuple):
    dmu: np.ndarray
    dsigma: np.ndarray
    dbias: np.ndarray
    dx: np.ndarray


def _check_input(layer: BayesLinear, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != layer.in_dim:
        raise DimensionMismatchError(
            f"input must be [in={layer.in_dim}, B], got {x.shape}"
        )
    return x


def lrt_forward(
    layer: BayesLinear,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
    *,
    eps: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardTape]:
    """Sampled pre-activation forward; one shared eps per layer per call.

    ``eps`` overrides the draw (tests and finite-difference harnesses);
    otherwise it is drawn from ``rng``.
    """
    x = _check_input(layer, x)
    mu_eff = layer.mu * layer.mask
    sigma_eff = layer.sigma * layer.mask
    pre_mean = mu_eff @ x
    pre_var = (sigma_eff * sigma_eff) @ (x * x)
    pre_std = np.sqrt(pre_var)
    if eps is None:
        if rng is None:
            raise ValueError("lrt_forward needs rng when eps is not supplied")
        eps = rng.standard_normal(pre_mean.shape)
    elif eps.shape != pre_mean.shape:
        raise DimensionMismatchError(f"eps shape {eps.shape} != {pre_mean.shape}")
    y = pre_mean + pre_std * eps + layer.bias[:, None]
    tape = ForwardTape(layer=layer, x=x, eps=eps, pre_mean=pre_mean, pre_std=pre_std, y=y)
    return y, tape


def naive_forward(
    layer: BayesLinear,
    x: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-column weight sampling; distributional oracle for lrt_forward."""
    x = _check_input(layer, x)
    mu_eff = layer.mu * layer.mask
    sigma_eff = layer.sigma * layer.mask
    B = x.shape[1]
    y = np.empty((layer.out_dim, B))
    for b in range(B):
        eta = rng.standard_normal(mu_eff.shape)
        y[:, b] = (mu_eff + sigma_eff * eta) @ x[:, b]
    return y + layer.bias[:, None]


def lrt_backward(layer: BayesLinear, tape: ForwardTape, dl_dy: np.ndarray) -> LayerGrads:
    """Exact gradients of the tape-frozen forward.

    dl/dsigma chains through the std term:
        dl/dsigma_ij = sigma_ij * sum_b dl/dy_ib * eps_ib * x_jb^2 / std_ib
    with the std=0 entries contributing 0.
    """
    if tape.layer is not layer:
        raise TapeMismatchError("tape was produced by a different layer")
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    if dl_dy.shape != tape.y.shape:
        raise DimensionMismatchError(f"dl_dy shape {dl_dy.shape} != {tape.y.shape}")

    x = tape.x
    # noise path weight, guarded where std == 0 (masked rows / zero input)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_noise = np.where(tape.pre_std > 0.0, dl_dy * tape.eps / tape.pre_std, 0.0)

    sigma_eff = layer.sigma * layer.mask
    dmu = (dl_dy @ x.T) * layer.mask
    dsigma = sigma_eff * (g_noise @ (x * x).T) * layer.mask
    dbias = dl_dy.sum(axis=1)
    dx = (layer.mu * layer.mask).T @ dl_dy + x * ((sigma_eff * sigma_eff).T @ g_noise)
    return LayerGrads(dmu=dmu, dsigma=dsigma, dbias=dbias, dx=dx)


# ---------------------------------------------------------------------------
# Networks: stacks of BayesLinear with ReLU between them
# ---------------------------------------------------------------------------


@dataclass
class VariationalNet:
    """MLP of masked Bayesian layers; ReLU between layers, linear head."""

    layers: list[BayesLinear]
    task: Task = "classification"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("net needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.in_dim != a.out_dim:
                raise DimensionMismatchError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )

    @property
    def weight_count(self) -> int:
        return sum(l.mu.size for l in self.layers)

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(l.out_dim, l.in_dim) for l in self.layers]

    def apply_masks(self) -> None:
        for l in self.layers:
            l.apply_mask()

    def copy(self) -> "VariationalNet":
        return VariationalNet([l.copy() for l in self.layers], self.task)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def net_forward_lrt(
    net: VariationalNet,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
    *,
    eps_list: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, list[ForwardTape]]:
    """Full sampled forward; returns head pre-activations and all tapes."""
    tapes = []
    h = np.asarray(x, dtype=np.float64)
    for i, layer in enumerate(net.layers):
        eps = None if eps_list is None else eps_list[i]
        y, tape = lrt_forward(layer, h, rng, eps=eps)
        tapes.append(tape)
        if i < len(net.layers) - 1:
            h = relu(y)
        else:
            h = y
    return h, tapes


def net_backward_lrt(
    net: VariationalNet,
    tapes: list[ForwardTape],
    dl_dout: np.ndarray,
) -> list[LayerGrads]:
    """Backprop the head gradient through ReLUs and every tape."""
    grads: list[LayerGrads] = [None] * len(net.layers)  # type: ignore[list-item]
    g = dl_dout
    for i in range(len(net.layers) - 1, -1, -1):
        lg = lrt_backward(net.layers[i], tapes[i], g)
        grads[i] = lg
        if i > 0:
            # ReLU subgradient 1 at the kink: a unit whose pre-activation
            # is identically 0 (no active inputs, zero bias) still passes
            # gradient, so the addition probe can re-colonize it
            g = lg.dx * (tapes[i - 1].y >= 0.0)
    return grads


# ---------------------------------------------------------------------------
# Loss heads
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax of [C, B] logits."""
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean NLL over the batch and its gradient w.r.t. the logits."""
    B = logits.shape[1]
    if labels.shape != (B,):
        raise DimensionMismatchError(f"labels shape {labels.shape} != ({B},)")
    p = softmax(logits)
    picked = p[labels, np.arange(B)]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = p.copy()
    grad[labels, np.arange(B)] -= 1.0
    return loss, grad / B


def gaussian_nll(pred: np.ndarray, targets: np.ndarray,
                 noise: float = REGRESSION_NOISE) -> tuple[float, np.ndarray]:
    """Mean Gaussian NLL with fixed observation noise, plus gradient."""
    if pred.shape != targets.shape:
        raise DimensionMismatchError(f"pred shape {pred.shape} != targets {targets.shape}")
    B = pred.shape[1]
    resid = pred - targets
    loss = float(0.5 * np.mean(np.sum((resid / noise) ** 2, axis=0))
                 + pred.shape[0] * np.log(noise * np.sqrt(2.0 * np.pi)))
    grad = resid / (noise * noise * B)
    return loss, grad


def head_loss(net: VariationalNet, out: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    if net.task == "classification":
        return softmax_cross_entropy(out, targets)
    return gaussian_nll(out, targets)


# ---------------------------------------------------------------------------
# Dense gradient probe (coordinate scores for subspace addition)
# ---------------------------------------------------------------------------


def dense_grad_probe(
    net: VariationalNet,
    batch: tuple[np.ndarray, np.ndarray],
    mode: Literal["sampled", "mean"],
    rng: np.random.Generator | None = None,
) -> list[np.ndarray]:
    """|batch-mean loss gradient| for every weight coordinate, masked ones
    included (they participate with value 0).

    ``sampled`` draws one weight realization from the posterior for the
    active coordinates; ``mean`` uses mu. Deterministic given rng state.
    """
    x, targets = batch
    x = np.asarray(x, dtype=np.float64)
    weights = []
    for layer in net.layers:
        w = layer.mu * layer.mask
        if mode == "sampled":
            if rng is None:
                raise ValueError("sampled mode needs rng")
            w = w + (layer.sigma * layer.mask) * rng.standard_normal(layer.mu.shape)
        weights.append(w)

    # deterministic forward at theta
    acts = [x]
    h = x
    pre = []
    for i, (layer, w) in enumerate(zip(net.layers, weights)):
        if h.shape[0] != layer.in_dim:
            raise DimensionMismatchError(f"input dim {h.shape[0]} != layer in {layer.in_dim}")
        y = w @ h + layer.bias[:, None]
        pre.append(y)
        h = relu(y) if i < len(net.layers) - 1 else y
        acts.append(h)

    _, g = head_loss(net, h, targets)
    grads: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        grads[i] = np.abs(g @ acts[i].T)
        if i > 0:
            g = weights[i].T @ g
            g = g * (pre[i - 1] >= 0.0)  # same kink convention as training
    return grads
