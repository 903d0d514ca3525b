"""Base inference algorithms run under a truncated proposal.

A *run* returns a handful of weighted samples plus one amalgamated weight
summarising it. For importance sampling the amalgamated weight is the mean of
the sample weights; for SMC it is the likelihood estimate of the sweep times
the region volume. Either way it is an unbiased estimate of the target mass of
the region, which is all the tree needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .reparam import HyperRect, sample_in_rect, truncated_log_weight


@dataclass
class RunResult:
    """One base-inference run.

    ``sample_log_w`` are the within-run weights, scaled so that their mean
    equals the amalgamated weight ``exp(log_w)``.
    """

    log_w: float
    x: np.ndarray
    z: np.ndarray
    sample_log_w: np.ndarray
    evals: int
    log_abs_wf: float | None = None
    wf_sign: float = 1.0
    latent: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_samples(self) -> int:
        return self.sample_log_w.size

    def scaled(self, log_factor: float) -> "RunResult":
        """Copy with every weight multiplied by ``exp(log_factor)``."""
        return RunResult(
            log_w=self.log_w + log_factor,
            x=self.x,
            z=self.z,
            sample_log_w=self.sample_log_w + log_factor,
            evals=self.evals,
            log_abs_wf=None if self.log_abs_wf is None else self.log_abs_wf + log_factor,
            wf_sign=self.wf_sign,
            latent=self.latent,
        )

    def to_dict(self) -> dict:
        return {
            "log_w": _enc(self.log_w),
            "x": self.x.tolist(),
            "z": self.z.tolist(),
            "sample_log_w": [_enc(v) for v in self.sample_log_w],
            "evals": int(self.evals),
            "log_abs_wf": None if self.log_abs_wf is None else _enc(self.log_abs_wf),
            "wf_sign": self.wf_sign,
            "latent": None if self.latent is None else self.latent.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(
            log_w=_dec(d["log_w"]),
            x=np.asarray(d["x"], dtype=float),
            z=np.asarray(d["z"], dtype=float),
            sample_log_w=np.array([_dec(v) for v in d["sample_log_w"]], dtype=float),
            evals=int(d["evals"]),
            log_abs_wf=None if d.get("log_abs_wf") is None else _dec(d["log_abs_wf"]),
            wf_sign=float(d.get("wf_sign", 1.0)),
            latent=None if d.get("latent") is None else np.asarray(d["latent"], dtype=float),
        )


_NEG_INF = "-inf"


def _enc(v: float):
    v = float(v)
    return _NEG_INF if v == -np.inf else v


def _dec(v) -> float:
    return -np.inf if v == _NEG_INF else float(v)


def _integrand_summary(integrand, x, sample_log_w):
    """log|mean(w f)| and its sign over the run's samples."""
    f = np.asarray(integrand(x), dtype=float).reshape(-1)
    nz = (f != 0) & (sample_log_w > -np.inf)
    if not np.any(nz):
        return -np.inf, 1.0
    log_abs, sign = logsumexp(sample_log_w[nz] + np.log(np.abs(f[nz])), b=np.sign(f[nz]),
                              return_sign=True)
    if not np.isfinite(log_abs):
        return -np.inf, 1.0
    return float(log_abs - np.log(f.size)), float(sign)


def is_run(model, rect: HyperRect, batch_size: int, rng: np.random.Generator,
           integrand=None, z: np.ndarray | None = None) -> RunResult:
    """Importance sampling with the proposal truncated to ``rect``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if z is None:
        z = sample_in_rect(rect, rng, size=batch_size)
    x, logw = truncated_log_weight(model, rect, np.atleast_2d(z))
    top = logw.max()
    # plain max-shift: scipy's logsumexp dominates the cost for small batches
    log_w = float(top + np.log(np.mean(np.exp(logw - top)))) if top > -np.inf else -np.inf
    run = RunResult(log_w=log_w, x=x, z=np.atleast_2d(z), sample_log_w=logw, evals=logw.size)
    if integrand is not None:
        run.log_abs_wf, run.wf_sign = _integrand_summary(integrand, x, logw)
    return run


def systematic_resample(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices by systematic resampling from (unnormalized) ``weights``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("cannot resample: all weights are zero")
    cdf = np.cumsum(w / total)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, u, side="right")


def particle_filter(ssm, theta, n_particles: int, rng: np.random.Generator,
                    keep_trajectory: bool = True):
    """Bootstrap particle filter with systematic resampling at every step.

    Returns ``(log_Z_hat, trajectory)``; the trajectory is one ancestral path
    drawn in proportion to the final weights (``None`` if the sweep died or
    ``keep_trajectory`` is false).
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    theta = np.asarray(theta, dtype=float)
    T = ssm.n_steps
    particles = ssm.initial(theta, n_particles, rng)
    history = np.empty((T,) + particles.shape) if keep_trajectory else None
    ancestry = np.empty((T, n_particles), dtype=np.int64) if keep_trajectory else None
    log_z = 0.0
    w = None
    for t in range(T):
        if t > 0:
            idx = systematic_resample(w, n_particles, rng)
            particles = particles[idx]
            if keep_trajectory:
                ancestry[t] = idx
        elif keep_trajectory:
            ancestry[0] = np.arange(n_particles)
        particles = ssm.transition(theta, particles, t, rng)
        logw = ssm.log_obs(theta, particles, t)
        if np.any(np.isnan(logw)):
            raise FloatingPointError("NaN in observation log-density")
        m = logw.max()
        if m == -np.inf:
            return -np.inf, None
        # shifted weights serve both the evidence increment and the next resampling
        w = np.exp(logw - m)
        log_z += float(m + np.log(np.mean(w)))
        if keep_trajectory:
            history[t] = particles
    if not keep_trajectory:
        return log_z, None
    k = int(systematic_resample(w, 1, rng)[0])
    path = np.empty((T,) + particles.shape[1:])
    for t in range(T - 1, -1, -1):
        path[t] = history[t, k]
        k = ancestry[t, k]
    return log_z, path


def smc_sweep(ssm, rect: HyperRect, n_particles: int, rng: np.random.Generator,
              integrand=None, z: np.ndarray | None = None) -> RunResult:
    """One SMC sweep with ``theta`` drawn from the prior truncated to ``rect``.

    The proposal on ``theta`` is the prior, so the weight of ``theta`` is the
    likelihood estimate times the volume of ``rect``.
    """
    if z is None:
        z = sample_in_rect(rect, rng)
    z = np.asarray(z, dtype=float).reshape(-1)
    theta = np.asarray(ssm.transform(z), dtype=float).reshape(-1)
    log_z, path = particle_filter(ssm, theta, n_particles, rng)
    log_w = log_z + rect.log_volume() if np.isfinite(log_z) else -np.inf
    run = RunResult(
        log_w=float(log_w),
        x=theta[None, :],
        z=z[None, :],
        sample_log_w=np.array([log_w]),
        evals=n_particles * ssm.n_steps,
        latent=None if path is None else path[None],
    )
    if integrand is not None:
        run.log_abs_wf, run.wf_sign = _integrand_summary(integrand, run.x, run.sample_log_w)
    return run


class ImportanceSampling:
    """Callable base algorithm: ``batch_size`` importance samples per run."""

    def __init__(self, batch_size: int = 100):
        self.batch_size = int(batch_size)

    def __call__(self, model, rect, rng, integrand=None):
        return is_run(model, rect, self.batch_size, rng, integrand=integrand)

    def cost(self, model) -> int:
        return self.batch_size


class SMC:
    """Callable base algorithm: one bootstrap SMC sweep per run."""

    def __init__(self, n_particles: int = 500):
        self.n_particles = int(n_particles)

    def __call__(self, model, rect, rng, integrand=None):
        return smc_sweep(model, rect, self.n_particles, rng, integrand=integrand)

    def cost(self, model) -> int:
        return self.n_particles * model.n_steps
