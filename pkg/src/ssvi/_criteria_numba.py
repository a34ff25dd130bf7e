"""Numba criterion kernels (hot backend).

Same interface and arithmetic as ``_criteria_numpy``; scalar loops are
compiled with ``@njit(cache=True)`` so the first call per process pays a
one-off compile (cached on disk afterwards).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
RADICAND_FLOOR = 1e-30
_NEG_INF = -math.inf


@njit(cache=True)
def _phi(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit(cache=True)
def _log_phi(x):
    c = _phi(x)
    if c > 0.0:
        return math.log(c)
    return _NEG_INF


@njit(cache=True)
def _logaddexp(a, b):
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))


@njit(cache=True)
def _cdf_kernel(x, out):
    for i in range(x.size):
        out[i] = _phi(x[i])


@njit(cache=True)
def _folded_mean_one(mu, sigma):
    r = mu / sigma
    return mu * (2.0 * _phi(r) - 1.0) + sigma * _SQRT_2_OVER_PI * math.exp(-0.5 * r * r)


@njit(cache=True)
def _abs_mu_kernel(mu, sigma, out):
    for i in range(mu.size):
        out[i] = abs(mu[i])
    return 0


@njit(cache=True)
def _snr_theta_kernel(mu, sigma, out):
    for i in range(mu.size):
        out[i] = abs(mu[i]) / sigma[i]
    return 0


@njit(cache=True)
def _e_abs_kernel(mu, sigma, out):
    for i in range(mu.size):
        out[i] = _folded_mean_one(mu[i], sigma[i])
    return 0


@njit(cache=True)
def _snr_abs_kernel(mu, sigma, out):
    n_clamped = 0
    for i in range(mu.size):
        m = _folded_mean_one(mu[i], sigma[i])
        rad = sigma[i] * sigma[i] + mu[i] * mu[i] - m * m
        if rad <= 0.0:
            rad = RADICAND_FLOOR
            n_clamped += 1
        out[i] = m / math.sqrt(rad)
    return n_clamped


@njit(cache=True)
def _log_exp_moment_one(mu, sigma, lam):
    r = mu / sigma
    ls = lam * sigma
    c = 0.5 * ls * ls
    t_pos = _log_phi(r + ls) + c + lam * mu
    t_neg = _log_phi(-r + ls) + c - lam * mu
    return _logaddexp(t_pos, t_neg)


@njit(cache=True)
def _log_e_exp_abs_kernel(mu, sigma, lam, out):
    for i in range(mu.size):
        out[i] = _log_exp_moment_one(mu[i], sigma[i], lam)
    return 0


@njit(cache=True)
def _snr_exp_abs_kernel(mu, sigma, lam, out):
    n_clamped = 0
    for i in range(mu.size):
        l1 = _log_exp_moment_one(mu[i], sigma[i], lam)
        l2 = _log_exp_moment_one(mu[i], sigma[i], 2.0 * lam)
        ratio = math.expm1(l2 - 2.0 * l1)
        if ratio <= 0.0:
            ratio = RADICAND_FLOOR
            n_clamped += 1
        out[i] = 1.0 / math.sqrt(ratio)
    return n_clamped


def cdf_array(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _cdf_kernel(x, out)
    return out


def _run(kernel, mu, sigma, *extra):
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    out = np.empty_like(mu)
    n_clamped = kernel(mu, sigma, *extra, out)
    return out, int(n_clamped)


def score_abs_mu(mu, sigma):
    return _run(_abs_mu_kernel, mu, sigma)


def score_snr_theta(mu, sigma):
    return _run(_snr_theta_kernel, mu, sigma)


def score_e_abs(mu, sigma):
    return _run(_e_abs_kernel, mu, sigma)


def score_snr_abs(mu, sigma):
    return _run(_snr_abs_kernel, mu, sigma)


def score_log_e_exp_abs(mu, sigma, lam):
    return _run(_log_e_exp_abs_kernel, mu, sigma, float(lam))


def score_snr_exp_abs(mu, sigma, lam):
    return _run(_snr_exp_abs_kernel, mu, sigma, float(lam))
