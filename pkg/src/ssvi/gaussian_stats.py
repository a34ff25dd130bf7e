"""Closed-form importance statistics of a Gaussian-distributed weight.

For a weight theta ~ N(mu, sigma^2) this module evaluates the six
removal criteria used to rank active coordinates:

* ``abs_mu``       |mu|
* ``snr_theta``    |mu| / sigma
* ``e_abs``        E|theta|  (folded-normal mean)
                   = mu (2 Phi(mu/sigma) - 1)
                     + sigma sqrt(2/pi) exp(-mu^2 / (2 sigma^2))
* ``snr_abs``      E|theta| / sqrt(sigma^2 + mu^2 - (E|theta|)^2)
* ``e_exp_abs``    E exp(lam |theta|)
                   = Phi(mu/sigma + lam sigma) exp(lam^2 sigma^2/2 + lam mu)
                   + Phi(-mu/sigma + lam sigma) exp(lam^2 sigma^2/2 - lam mu)
* ``snr_exp_abs``  mean/std of exp(lam |theta|); the second moment is the
                   same expression with lam replaced by 2 lam

plus the Gaussian-to-prior KL term. Exponential criteria are evaluated
in log space (log-sum-exp over the two Phi*exp terms) so lam*sigma and
lam*mu far beyond the naive overflow point stay finite. SNR radicands
that cancel to <= 0 in floating point are floored at 1e-30 and counted
(``variance_clamp_count``): ranking robustness is preferred over a hard
failure deep inside a training loop.

All functions are pure; the clamp counter is a best-effort diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import CriterionOverflowError, DegenerateSigmaError

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_LOG_MAX_DOUBLE = math.log(np.finfo(np.float64).max)

RADICAND_FLOOR = 1e-30

#: Default exponent scale for the exponential criteria when a run config
#: does not set one explicitly.
DEFAULT_LAMBDA = 1.0

_EXP_KINDS = ("e_exp_abs", "snr_exp_abs")
CRITERION_NAMES = ("abs_mu", "snr_theta", "e_abs", "snr_abs") + _EXP_KINDS

_clamp_count = 0


def variance_clamp_count() -> int:
    """Number of SNR radicand floors applied since the last reset."""
    return _clamp_count


def reset_variance_clamp_count() -> None:
    global _clamp_count
    _clamp_count = 0


def _note_clamps(n: int) -> None:
    global _clamp_count
    _clamp_count += n


@dataclass(frozen=True)
class GaussParam:
    """Mean and standard deviation of one weight's posterior marginal.

    sigma == 0 is the degenerate value reserved for masked weights.
    """

    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0.0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class CriterionKind:
    """A removal criterion; ``lam`` is present iff the kind is exponential."""

    name: str
    lam: float | None = None

    def __post_init__(self):
        if self.name not in CRITERION_NAMES:
            raise ValueError(f"unknown criterion {self.name!r}; expected one of {CRITERION_NAMES}")
        if self.name in _EXP_KINDS:
            if self.lam is None or not (self.lam > 0.0):
                raise ValueError(f"criterion {self.name!r} requires lam > 0, got {self.lam}")
        elif self.lam is not None:
            raise ValueError(f"criterion {self.name!r} takes no lam")

    @classmethod
    def parse(cls, name: str, lam: float | None = None) -> "CriterionKind":
        name = name.strip().lower()
        if name in _EXP_KINDS:
            return cls(name, DEFAULT_LAMBDA if lam is None else float(lam))
        return cls(name)


def std_normal_cdf(x: float) -> float:
    """Standard-normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _log_std_normal_cdf(x: float) -> float:
    c = std_normal_cdf(x)
    if c > 0.0:
        return math.log(c)
    # erfc underflow (x < ~-37.5); the term's relative weight in the
    # log-sum-exp is below exp(-350), so -inf loses nothing.
    return -math.inf


def _require_positive_sigma(sigma: float) -> None:
    if not (sigma > 0.0):
        raise DegenerateSigmaError(f"criterion undefined at sigma={sigma}; masked weights must not be ranked")


def crit_abs_mu(p: GaussParam) -> float:
    return abs(p.mu)


def crit_snr_theta(p: GaussParam) -> float:
    _require_positive_sigma(p.sigma)
    return abs(p.mu) / p.sigma


def crit_e_abs(p: GaussParam) -> float:
    """Folded-normal mean E|theta|."""
    _require_positive_sigma(p.sigma)
    r = p.mu / p.sigma
    return p.mu * (2.0 * std_normal_cdf(r) - 1.0) + p.sigma * _SQRT_2_OVER_PI * math.exp(-0.5 * r * r)


def crit_snr_abs(p: GaussParam) -> float:
    """Mean/std of |theta|; radicand floored at 1e-30 on cancellation."""
    _require_positive_sigma(p.sigma)
    m = crit_e_abs(p)
    rad = p.sigma * p.sigma + p.mu * p.mu - m * m
    if rad <= 0.0:
        rad = RADICAND_FLOOR
        _note_clamps(1)
    return m / math.sqrt(rad)


def _log_e_exp_abs(mu: float, sigma: float, lam: float) -> float:
    r = mu / sigma
    ls = lam * sigma
    c = 0.5 * ls * ls
    t_pos = _log_std_normal_cdf(r + ls) + c + lam * mu
    t_neg = _log_std_normal_cdf(-r + ls) + c - lam * mu
    if t_pos == -math.inf:
        return t_neg
    if t_neg == -math.inf:
        return t_pos
    m = max(t_pos, t_neg)
    return m + math.log1p(math.exp(-abs(t_pos - t_neg)))


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (lam > 0.0):
        raise ValueError(f"lam must be > 0, got {lam}")
    return lam


def crit_e_exp_abs(p: GaussParam, lam: float) -> float:
    """E exp(lam |theta|), >= 1."""
    lam = _check_lambda(lam)
    _require_positive_sigma(p.sigma)
    log_val = _log_e_exp_abs(p.mu, p.sigma, lam)
    if log_val > _LOG_MAX_DOUBLE:
        raise CriterionOverflowError(
            f"E exp(lam|theta|) ~ exp({log_val:.1f}) exceeds double range "
            f"at mu={p.mu}, sigma={p.sigma}, lam={lam}"
        )
    return math.exp(log_val)


def crit_snr_exp_abs(p: GaussParam, lam: float) -> float:
    """Mean/std of exp(lam |theta|), computed from log moments."""
    lam = _check_lambda(lam)
    _require_positive_sigma(p.sigma)
    l1 = _log_e_exp_abs(p.mu, p.sigma, lam)
    l2 = _log_e_exp_abs(p.mu, p.sigma, 2.0 * lam)
    # SNR = M1 / sqrt(M2 - M1^2) = 1 / sqrt(expm1(log M2 - 2 log M1))
    arg = l2 - 2.0 * l1
    if arg > _LOG_MAX_DOUBLE:
        # variance overwhelms the mean; SNR underflows to 0
        return 0.0
    ratio = math.expm1(arg)
    if ratio <= 0.0:
        ratio = RADICAND_FLOOR
        _note_clamps(1)
    return 1.0 / math.sqrt(ratio)


def kl_gauss_to_prior(p: GaussParam, prior_sigma: float) -> float:
    """KL(N(mu, sigma^2) || N(0, prior_sigma^2))."""
    _require_positive_sigma(p.sigma)
    if not (prior_sigma > 0.0):
        raise ValueError(f"prior_sigma must be > 0, got {prior_sigma}")
    s2 = prior_sigma * prior_sigma
    return math.log(prior_sigma / p.sigma) + (p.sigma * p.sigma + p.mu * p.mu) / (2.0 * s2) - 0.5


def criterion_value(p: GaussParam, kind: CriterionKind) -> float:
    """Scalar criterion dispatch (value scale, not ranking scale)."""
    if kind.name == "abs_mu":
        return crit_abs_mu(p)
    if kind.name == "snr_theta":
        return crit_snr_theta(p)
    if kind.name == "e_abs":
        return crit_e_abs(p)
    if kind.name == "snr_abs":
        return crit_snr_abs(p)
    if kind.name == "e_exp_abs":
        return crit_e_exp_abs(p, kind.lam)
    return crit_snr_exp_abs(p, kind.lam)


def ranking_scores(mu: np.ndarray, sigma: np.ndarray, kind: CriterionKind) -> np.ndarray:
    """Vectorized criterion scores for removal ranking.

    Dispatches to the active kernel backend. For ``e_exp_abs`` the
    returned scores are the *log* of the criterion (same ordering,
    overflow-free); all other kinds return the criterion value itself.
    sigma must be strictly positive elementwise.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    if mu.shape != sigma.shape:
        raise ValueError(f"mu/sigma length mismatch: {mu.shape} vs {sigma.shape}")
    if kind.name != "abs_mu" and mu.size and float(sigma.min()) <= 0.0:
        raise DegenerateSigmaError("ranking_scores requires sigma > 0 for every scored coordinate")
    kernels = backend.active_backend()
    if kind.name == "abs_mu":
        scores, n = kernels.score_abs_mu(mu, sigma)
    elif kind.name == "snr_theta":
        scores, n = kernels.score_snr_theta(mu, sigma)
    elif kind.name == "e_abs":
        scores, n = kernels.score_e_abs(mu, sigma)
    elif kind.name == "snr_abs":
        scores, n = kernels.score_snr_abs(mu, sigma)
    elif kind.name == "e_exp_abs":
        scores, n = kernels.score_log_e_exp_abs(mu, sigma, kind.lam)
    else:
        scores, n = kernels.score_snr_exp_abs(mu, sigma, kind.lam)
    if n:
        _note_clamps(n)
    return scores


def std_normal_cdf_array(x: np.ndarray) -> np.ndarray:
    """Vectorized standard-normal CDF on the active backend."""
    return backend.active_backend().cdf_array(np.asarray(x, dtype=np.float64))
