"""Reference methods: plain importance sampling and particle marginal MH.

The optimism-only tree preset lives in :mod:`inftree.traversal` and is
re-exported here for convenience.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .base_infer import particle_filter
from .reparam import HyperRect, truncated_log_weight
from .traversal import naive_it_preset

__all__ = ["vanilla_is", "PmmhState", "pmmh_init", "pmmh_step", "run_pmmh",
           "write_chain_csv", "naive_it_preset", "DEFAULT_STEP_VAR"]

DEFAULT_STEP_VAR = 0.0004


def vanilla_is(model, budget: int, rng: np.random.Generator):
    """Importance sampling from the untruncated proposal.

    Returns ``(log_Z, ess, (x, normalized_weights))``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rect = HyperRect.unit(model.dim)
    z = rng.random((int(budget), model.dim))
    x, lw = truncated_log_weight(model, rect, z)
    if not np.any(lw > -np.inf):
        return -np.inf, 0.0, (x, np.zeros(lw.size))
    total = logsumexp(lw)
    ess = float(np.exp(2 * total - logsumexp(2 * lw)))
    return float(total - np.log(lw.size)), ess, (x, np.exp(lw - total))


@dataclass
class PmmhState:
    """Current point of a PMMH chain and its history.

    ``trace`` holds one ``(theta, log_Z, accepted)`` row per step taken.
    """

    theta: np.ndarray
    log_z: float
    step_var: float = DEFAULT_STEP_VAR
    trace: list = field(default_factory=list)
    evals: int = 0

    @property
    def n_accepted(self) -> int:
        return sum(1 for row in self.trace if row[2])

    def samples(self) -> np.ndarray:
        if not self.trace:
            return self.theta[None, :]
        return np.array([row[0] for row in self.trace])


def _default_estimator(n_particles: int):
    def estimate(model, theta, rng):
        log_z, _ = particle_filter(model, theta, n_particles, rng, keep_trajectory=False)
        return log_z, n_particles * model.n_steps

    return estimate


def _log_prior(model, theta) -> float:
    return float(np.asarray(model.log_prior(theta)).reshape(-1)[0])


def pmmh_init(model, rng: np.random.Generator, n_particles: int = 500,
              step_var: float = DEFAULT_STEP_VAR, estimator=None) -> PmmhState:
    """Start a chain at a prior draw."""
    est = estimator or _default_estimator(n_particles)
    theta = np.asarray(model.transform(rng.random(model.dim)), dtype=float).reshape(-1)
    log_z, cost = est(model, theta, rng)
    return PmmhState(theta, float(log_z), step_var, [], int(cost))


def pmmh_step(model, state: PmmhState, rng: np.random.Generator, n_particles: int = 500,
              estimator=None) -> PmmhState:
    """One random-walk PMMH step; mutates and returns ``state``.

    ``estimator(model, theta, rng) -> (log_Z_hat, evals)`` replaces the
    particle filter when given (e.g. with an exact likelihood).
    """
    est = estimator or _default_estimator(n_particles)
    prop = state.theta + np.sqrt(state.step_var) * rng.standard_normal(state.theta.size)
    lp_new = _log_prior(model, prop)
    accepted = False
    if lp_new > -np.inf:
        try:
            log_z_new, cost = est(model, prop, rng)
        except (FloatingPointError, ValueError):
            log_z_new, cost = -np.inf, 0
        state.evals += int(cost)
        log_ratio = log_z_new + lp_new - state.log_z - _log_prior(model, state.theta)
        if log_z_new > -np.inf and (state.log_z == -np.inf or np.log(rng.random()) < log_ratio):
            state.theta, state.log_z = prop, float(log_z_new)
            accepted = True
    state.trace.append((state.theta.copy(), state.log_z, accepted))
    return state


def run_pmmh(model, n_iter: int, rng: np.random.Generator, n_particles: int = 500,
             step_var: float = DEFAULT_STEP_VAR, estimator=None, budget: int | None = None) -> PmmhState:
    """Run a chain for ``n_iter`` steps, or until ``budget`` evaluations are used."""
    state = pmmh_init(model, rng, n_particles, step_var, estimator)
    for _ in range(n_iter):
        if budget is not None and state.evals >= budget:
            break
        pmmh_step(model, state, rng, n_particles, estimator)
    return state


def write_chain_csv(state: PmmhState, path) -> Path:
    path = Path(path)
    dim = state.theta.size
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + [f"theta_{i}" for i in range(dim)] + ["log_z", "accepted"])
        for i, (theta, log_z, acc) in enumerate(state.trace):
            w.writerow([i] + [repr(float(t)) for t in theta] + [repr(float(log_z)), int(acc)])
    return path
