"""Gaussian density estimation of log weights and exceedance probabilities.

These drive targeted exploration: given the log weights already seen in a
region, how likely is it that a further batch of ``T`` draws would produce a
weight above the current best (volume-adjusted) weight?
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

SD_FLOOR = 1e-6


@dataclass(frozen=True)
class LogWeightFit:
    mean: float
    sd: float
    n: int

    def log_cdf(self, v: float) -> float:
        return float(log_ndtr((v - self.mean) / self.sd))


def fit(log_weights) -> LogWeightFit | None:
    """Gaussian fit to the finite log weights; ``None`` if fewer than two."""
    lw = np.asarray(log_weights, dtype=float)
    lw = lw[np.isfinite(lw)]
    if lw.size < 2:
        return None
    sd = max(float(np.std(lw, ddof=1)), SD_FLOOR)
    return LogWeightFit(float(np.mean(lw)), sd, int(lw.size))


def _log1mexp(a: float) -> float:
    """log(1 - exp(a)) for a <= 0."""
    if a == 0.0:
        return -np.inf
    if a > -np.log(2.0):
        return float(np.log(-np.expm1(a)))
    return float(np.log1p(-np.exp(a)))


def prob_exceed_lookahead(fit: LogWeightFit, log_w_th: float, T: int = 1000) -> float:
    """P(max of ``T`` fresh log weights > ``log_w_th``) = 1 - F(th)^T."""
    if T < 1:
        raise ValueError("lookahead T must be >= 1")
    return float(-np.expm1(T * fit.log_cdf(log_w_th)))


def prob_exceed_given_none(fit: LogWeightFit, log_w_th: float, log_w_gap: float = 10.0,
                           n: int = 0, T: int = 1000) -> float:
    """Exceedance probability conditioned on none of ``n`` past draws exceeding.

    The likelihood of the past draws uses the fitted distribution truncated at
    ``log_w_th + log_w_gap``: ``L = (F(th) / F(tr))^n``. The complementary
    hypothesis (no exceedance in ``T`` draws) has likelihood one.
    """
    log_f_th = fit.log_cdf(log_w_th)
    log_prior_no = T * log_f_th
    log_prior_yes = _log1mexp(log_prior_no)
    if n == 0 or log_prior_yes == -np.inf:
        return float(np.exp(log_prior_yes))
    log_f_tr = fit.log_cdf(log_w_th + log_w_gap)
    log_lik = 0.0 if log_f_tr == -np.inf else n * (log_f_th - log_f_tr)
    log_num = log_prior_yes + log_lik
    log_den = np.logaddexp(log_num, log_prior_no)
    return float(np.clip(np.exp(log_num - log_den), 0.0, 1.0))


def leaf_term(p_exceed: float | None, ess: float) -> float:
    """Local exceedance probability scaled by the effective sample size.

    ``p_exceed`` of ``None`` means there was no usable fit; the region is then
    treated as maximally promising.
    """
    p = 1.0 if p_exceed is None else p_exceed
    if ess <= 0:
        return float(np.clip(p, 0.0, 1.0))
    return float(np.clip(p / ess, 0.0, 1.0))


def combine_ps(c: float, local: float, p_left: float, p_right: float) -> float:
    """Mix the local term with the children, treating siblings as independent."""
    union = p_left + p_right - p_left * p_right
    return float(np.clip((1.0 - c) * local + c * union, 0.0, 1.0))
