"""Pure-numpy criterion kernels (fallback backend).

Arithmetic mirrors the numba backend operation-for-operation so the two
paths agree to roundoff. All functions take 1-D float64 arrays of equal
length with sigma > 0 (validated by the caller) and return
``(scores, n_clamped)`` where ``n_clamped`` counts radicand floors hit
in SNR denominators.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# Floor applied to SNR radicands that cancel to <= 0 in floating point.
RADICAND_FLOOR = 1e-30


def _phi(x: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(-x / _SQRT2)


def _log_phi(x: np.ndarray) -> np.ndarray:
    # -inf once erfc underflows (x < ~-37.5); such terms carry relative
    # weight < exp(-350) in the log-sum-exp below, so the loss is nil.
    with np.errstate(divide="ignore"):
        return np.log(_phi(x))


def cdf_array(x: np.ndarray) -> np.ndarray:
    """Standard-normal CDF, elementwise."""
    return _phi(np.asarray(x, dtype=np.float64))


def _folded_mean(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    r = mu / sigma
    return mu * (2.0 * _phi(r) - 1.0) + sigma * _SQRT_2_OVER_PI * np.exp(-0.5 * r * r)


def score_abs_mu(mu: np.ndarray, sigma: np.ndarray):
    return np.abs(mu), 0


def score_snr_theta(mu: np.ndarray, sigma: np.ndarray):
    return np.abs(mu) / sigma, 0


def score_e_abs(mu: np.ndarray, sigma: np.ndarray):
    return _folded_mean(mu, sigma), 0


def score_snr_abs(mu: np.ndarray, sigma: np.ndarray):
    m = _folded_mean(mu, sigma)
    rad = sigma * sigma + mu * mu - m * m
    bad = rad <= 0.0
    n_clamped = int(np.count_nonzero(bad))
    rad = np.where(bad, RADICAND_FLOOR, rad)
    return m / np.sqrt(rad), n_clamped


def _log_exp_moment(mu: np.ndarray, sigma: np.ndarray, lam: float) -> np.ndarray:
    r = mu / sigma
    ls = lam * sigma
    c = 0.5 * ls * ls
    t_pos = _log_phi(r + ls) + c + lam * mu
    t_neg = _log_phi(-r + ls) + c - lam * mu
    return np.logaddexp(t_pos, t_neg)


def score_log_e_exp_abs(mu: np.ndarray, sigma: np.ndarray, lam: float):
    return _log_exp_moment(mu, sigma, lam), 0


def score_snr_exp_abs(mu: np.ndarray, sigma: np.ndarray, lam: float):
    l1 = _log_exp_moment(mu, sigma, lam)
    l2 = _log_exp_moment(mu, sigma, 2.0 * lam)
    ratio = np.expm1(l2 - 2.0 * l1)
    bad = ratio <= 0.0
    n_clamped = int(np.count_nonzero(bad))
    ratio = np.where(bad, RADICAND_FLOOR, ratio)
    return 1.0 / np.sqrt(ratio), n_clamped
