"""Target models with explicit unit-hypercube reparameterizations.

Two families live here:

* static targets (``TargetModel``) used with importance sampling: they expose
  ``transform`` (the map ``g``), ``log_gamma``, ``log_proposal`` and
  ``log_weight = log_gamma - log_proposal``;
* state-space models (``StateSpaceModel``) used with SMC: global parameters
  ``theta = g(z)`` are drawn from the prior and latent states are filtered, so
  the importance weight of ``theta`` is the SMC likelihood estimate.

All log-densities are vectorized over rows.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from scipy import special, stats


def _std_normal_ppf(z):
    return special.ndtri(z)


def _mvn_logpdf_iso(x, mean, var):
    """log N(x; mean, var*I) summed over the last axis."""
    d = x.shape[-1]
    r = x - mean
    return -0.5 * (np.sum(r * r, axis=-1) / var + d * np.log(2 * np.pi * var))


class TargetModel:
    """Unnormalized target ``gamma`` with a proposal reparameterized by ``g``."""

    dim: int
    integrand = None

    def transform(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_gamma(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_proposal(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_weight(self, x: np.ndarray) -> np.ndarray:
        return self.log_gamma(x) - self.log_proposal(x)


class ConjugateGaussian(TargetModel):
    """1-D Gaussian mean with Gaussian observations; evidence is closed form.

    Prior (and proposal) ``x ~ N(prior_mean, prior_sd^2)``, observations
    ``y_i ~ N(x, noise_sd^2)``.
    """

    dim = 1

    def __init__(self, y, prior_mean=0.0, prior_sd=1.0, noise_sd=1.0, scale=1.0):
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.noise_sd = float(noise_sd)
        # multiplies gamma by a constant; only used by scale-invariance checks
        self.log_scale = float(np.log(scale))

    def transform(self, z):
        z = np.asarray(z, dtype=float)
        return self.prior_mean + self.prior_sd * _std_normal_ppf(z).reshape(z.shape)

    def log_proposal(self, x):
        return stats.norm.logpdf(x[..., 0], self.prior_mean, self.prior_sd)

    def log_likelihood(self, x):
        r = x[..., :1] - self.y
        n = self.y.size
        return -0.5 * np.sum(r * r, axis=-1) / self.noise_sd**2 - n * np.log(
            np.sqrt(2 * np.pi) * self.noise_sd
        )

    def log_gamma(self, x):
        return self.log_proposal(x) + self.log_likelihood(x) + self.log_scale

    def log_weight(self, x):
        return self.log_likelihood(x) + self.log_scale

    @property
    def log_evidence(self) -> float:
        n = self.y.size
        cov = self.prior_sd**2 * np.ones((n, n)) + self.noise_sd**2 * np.eye(n)
        mean = np.full(n, self.prior_mean)
        return float(stats.multivariate_normal.logpdf(self.y, mean, cov)) + self.log_scale

    @property
    def posterior_var(self) -> float:
        return 1.0 / (1.0 / self.prior_sd**2 + self.y.size / self.noise_sd**2)

    @property
    def posterior_mean(self) -> float:
        return self.posterior_var * (
            self.prior_mean / self.prior_sd**2 + self.y.sum() / self.noise_sd**2
        )

    def region_log_mass(self, lo: float, hi: float) -> float:
        """log of the integral of gamma over the x-interval ``[lo, hi]``."""
        sd = np.sqrt(self.posterior_var)
        p = stats.norm.cdf(hi, self.posterior_mean, sd) - stats.norm.cdf(lo, self.posterior_mean, sd)
        return float(self.log_evidence + np.log(p))

    def params(self) -> dict:
        return {
            "prior_mean": self.prior_mean,
            "prior_sd": self.prior_sd,
            "noise_sd": self.noise_sd,
        }


class GaussianMixtureModel(TargetModel):
    """Cluster means of a K-component mixture with equal weights.

    ``mu_k ~ N(0, cov_mu)``, ``y_n ~ (1/K) sum_k N(mu_k, cov_y)``; the
    assignments are summed out. The parameter vector is ``mu_1:K`` flattened
    component-major, so ``dim = K * D``. The prior is the proposal.
    """

    def __init__(self, y, n_components=4, cov_mu=None, cov_y=None):
        self.y = np.atleast_2d(np.asarray(y, dtype=float))
        self.n_obs, self.obs_dim = self.y.shape
        self.n_components = int(n_components)
        D = self.obs_dim
        self.cov_mu = np.eye(D) if cov_mu is None else np.atleast_2d(np.asarray(cov_mu, float))
        self.cov_y = 0.2 * np.eye(D) if cov_y is None else np.atleast_2d(np.asarray(cov_y, float))
        self._chol_mu = np.linalg.cholesky(self.cov_mu)
        self._chol_y = np.linalg.cholesky(self.cov_y)
        self._logdet_mu = 2 * np.sum(np.log(np.diag(self._chol_mu)))
        self._logdet_y = 2 * np.sum(np.log(np.diag(self._chol_y)))
        self._prec_mu = np.linalg.inv(self._chol_mu)
        self._prec_y = np.linalg.inv(self._chol_y)
        self.dim = self.n_components * D

    def _means(self, x):
        x = np.atleast_2d(x)
        return x.reshape(x.shape[0], self.n_components, self.obs_dim)

    def transform(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        eps = _std_normal_ppf(z).reshape(z.shape[0], self.n_components, self.obs_dim)
        return (eps @ self._chol_mu.T).reshape(z.shape[0], self.dim)

    def _gauss_logpdf(self, r, chol_inv, logdet):
        sol = r @ chol_inv.T
        maha = np.sum(sol * sol, axis=-1)
        return -0.5 * (maha + logdet + self.obs_dim * np.log(2 * np.pi))

    def log_proposal(self, x):
        mu = self._means(x)
        return np.sum(self._gauss_logpdf(mu, self._prec_mu, self._logdet_mu), axis=-1)

    def log_likelihood(self, x):
        mu = self._means(x)
        # whitened data and means; |y - mu|^2 expanded so the cross term is one matmul
        yw = self.y @ self._prec_y.T  # (n, D)
        mw = mu @ self._prec_y.T  # (S, K, D)
        S, K = mw.shape[:2]
        cross = (yw @ mw.reshape(S * K, -1).T).reshape(-1, S, K).transpose(1, 0, 2)  # (S, n, K)
        maha = (np.sum(yw * yw, axis=-1)[None, :, None] - 2.0 * cross
                + np.sum(mw * mw, axis=-1)[:, None, :])
        comp = -0.5 * (maha + self._logdet_y + self.obs_dim * np.log(2 * np.pi))
        top = comp.max(axis=-1, keepdims=True)
        per_point = (top[..., 0] + np.log(np.sum(np.exp(comp - top), axis=-1))
                     - np.log(self.n_components))
        return np.sum(per_point, axis=-1)

    def log_gamma(self, x):
        return self.log_proposal(x) + self.log_likelihood(x)

    def log_weight(self, x):
        return self.log_likelihood(x)

    def params(self) -> dict:
        return {
            "n_components": self.n_components,
            "cov_mu": self.cov_mu.tolist(),
            "cov_y": self.cov_y.tolist(),
        }


class NetworkModel(TargetModel):
    """Noisy edge weights of a graph with a shortest-path threshold integrand.

    ``x ~ N(mean, cov)``; ``y_t = x_t + scale * eps_t`` with ``eps_t`` Student-t
    with ``dof`` degrees of freedom. The integrand is the indicator that the
    shortest source-to-sink path exceeds ``threshold``. Edges are undirected;
    negative weights are clamped at zero for the path computation only.
    """

    def __init__(self, y, edges, source, sink, mean=None, cov=None, scale=0.1, dof=5.0,
                 threshold=3.8):
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.edges = [tuple(map(int, e)) for e in edges]
        self.dim = len(self.edges)
        if self.y.size != self.dim:
            raise ValueError("one observation per edge required")
        self.source, self.sink = int(source), int(sink)
        self.mean = np.full(self.dim, 3.0) if mean is None else np.asarray(mean, float)
        self.cov = np.eye(self.dim) if cov is None else np.asarray(cov, float)
        self.scale, self.dof, self.threshold = float(scale), float(dof), float(threshold)
        self._chol = np.linalg.cholesky(self.cov)
        nu = self.dof
        self._t_const = (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
                         - 0.5 * np.log(nu * np.pi) - np.log(self.scale))
        nodes = {v for e in self.edges for v in e} | {self.source, self.sink}
        self.n_nodes = max(nodes) + 1
        if not self._connected():
            raise ValueError("sink is not reachable from source")
        self.integrand = self.path_exceeds

    def _connected(self):
        seen, stack = {self.source}, [self.source]
        while stack:
            u = stack.pop()
            for a, b in self.edges:
                for s, t in ((a, b), (b, a)):
                    if s == u and t not in seen:
                        seen.add(t)
                        stack.append(t)
        return self.sink in seen

    def transform(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self.mean + _std_normal_ppf(z) @ self._chol.T

    def log_proposal(self, x):
        return stats.multivariate_normal.logpdf(np.atleast_2d(x), self.mean, self.cov).reshape(-1)

    def log_likelihood(self, x):
        r = (self.y - np.atleast_2d(x)) / self.scale
        # closed form: scipy.stats call overhead dominates single-sample runs
        return np.sum(self._t_const - 0.5 * (self.dof + 1) * np.log1p(r * r / self.dof), axis=-1)

    def log_gamma(self, x):
        return self.log_proposal(x) + self.log_likelihood(x)

    def log_weight(self, x):
        return self.log_likelihood(x)

    def shortest_path(self, x):
        """Source-to-sink shortest path length, vectorized over rows of ``x``.

        Bellman-Ford relaxation over the undirected edge list.
        """
        w = np.maximum(np.atleast_2d(x), 0.0)
        S = w.shape[0]
        dist = np.full((S, self.n_nodes), np.inf)
        dist[:, self.source] = 0.0
        for _ in range(self.n_nodes - 1):
            changed = False
            for k, (a, b) in enumerate(self.edges):
                for s, t in ((a, b), (b, a)):
                    cand = dist[:, s] + w[:, k]
                    better = cand < dist[:, t]
                    if np.any(better):
                        dist[better, t] = cand[better]
                        changed = True
            if not changed:
                break
        return dist[:, self.sink]

    def path_exceeds(self, x):
        return (self.shortest_path(x) > self.threshold).astype(float)

    def params(self) -> dict:
        return {
            "edges": [list(e) for e in self.edges],
            "source": self.source,
            "sink": self.sink,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "scale": self.scale,
            "dof": self.dof,
            "threshold": self.threshold,
            # the graph layout is our own choice; record that with every dataset
            "topology_assumed": True,
        }


def layered_graph(n_chains=2, chain_length=5):
    """Source 0 and sink 1 joined by ``n_chains`` disjoint chains of edges."""
    edges = []
    nxt = 2
    for _ in range(n_chains):
        prev = 0
        for i in range(chain_length):
            if i == chain_length - 1:
                node = 1
            else:
                node = nxt
                nxt += 1
            edges.append((prev, node))
            prev = node
    return edges, 0, 1


# ---------------------------------------------------------------------------
# state-space models


class StateSpaceModel:
    """Global parameters ``theta`` plus latent Markov states.

    Subclasses define the prior reparameterization and the bootstrap
    filter ingredients: ``initial`` draws ``x_0``, then for each observation
    index ``t`` the filter calls ``transition`` and weights with ``log_obs``.
    ``n_steps`` is the series length; one sweep costs ``n_particles * n_steps``
    target evaluations.
    """

    dim: int
    n_steps: int

    def transform(self, z):
        raise NotImplementedError

    def log_prior(self, theta):
        raise NotImplementedError

    def initial(self, theta, n, rng):
        raise NotImplementedError

    def transition(self, theta, particles, t, rng):
        raise NotImplementedError

    def log_obs(self, theta, particles, t):
        raise NotImplementedError


def pickover_step(theta, x):
    """Deterministic Pickover map; ``x`` may be ``(3,)`` or ``(n, 3)``."""
    a, b, c, d = theta
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [
            np.sin(b * x2) - np.cos(a * x1) * x3,
            np.sin(d * x1) * x3 - np.cos(c * x2),
            np.sin(x1),
        ],
        axis=-1,
    )


class ChaosModel(StateSpaceModel):
    """Pickover-attractor tracking with linear Gaussian observations.

    ``x_0 ~ N(0, I)``, ``x_t = A(x_{t-1}; theta) + N(0, trans_var I)``,
    ``y_t = C x_t + N(0, obs_var I)`` for ``t = 1..T``; each of ``a, b, c, d``
    has a uniform prior on ``[-pi, pi]``.
    """

    dim = 4
    TRUE_THETA = (2.5, -2.3, 1.25, -1.5)

    def __init__(self, y, C, trans_var=0.01, obs_var=0.2):
        self.y = np.atleast_2d(np.asarray(y, dtype=float))
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.n_steps = self.y.shape[0]
        self.trans_var, self.obs_var = float(trans_var), float(obs_var)

    def transform(self, z):
        z = np.asarray(z, dtype=float)
        return -np.pi + 2 * np.pi * z

    def log_prior(self, theta):
        theta = np.atleast_2d(theta)
        inside = np.all(np.abs(theta) <= np.pi, axis=-1)
        return np.where(inside, -self.dim * np.log(2 * np.pi), -np.inf)

    def initial(self, theta, n, rng):
        return rng.standard_normal((n, 3))

    def transition(self, theta, particles, t, rng):
        mean = pickover_step(theta, particles)
        return mean + np.sqrt(self.trans_var) * rng.standard_normal(particles.shape)

    def log_obs(self, theta, particles, t):
        pred = particles @ self.C.T
        return _mvn_logpdf_iso(self.y[t], pred, self.obs_var)

    def truncated(self, n_steps):
        return ChaosModel(self.y[:n_steps], self.C, self.trans_var, self.obs_var)

    def params(self) -> dict:
        return {"C": self.C.tolist(), "trans_var": self.trans_var, "obs_var": self.obs_var}


class LinearGaussianSSM(StateSpaceModel):
    """Scalar AR(1) state observed in Gaussian noise; the Kalman filter is exact.

    ``theta = phi`` with a uniform prior on ``[phi_lo, phi_hi]``;
    ``x_0 ~ N(0, init_var)``, ``x_t = phi x_{t-1} + N(0, q)``,
    ``y_t = x_t + N(0, r)``.
    """

    dim = 1

    def __init__(self, y, q=1.0, r=1.0, init_var=1.0, phi_lo=-1.0, phi_hi=1.0):
        self.y = np.asarray(y, dtype=float).reshape(-1)
        self.n_steps = self.y.size
        self.q, self.r, self.init_var = float(q), float(r), float(init_var)
        self.phi_lo, self.phi_hi = float(phi_lo), float(phi_hi)

    def transform(self, z):
        z = np.asarray(z, dtype=float)
        return self.phi_lo + (self.phi_hi - self.phi_lo) * z

    def log_prior(self, theta):
        theta = np.atleast_2d(theta)[:, 0]
        inside = (theta >= self.phi_lo) & (theta <= self.phi_hi)
        return np.where(inside, -np.log(self.phi_hi - self.phi_lo), -np.inf)

    def initial(self, theta, n, rng):
        return np.sqrt(self.init_var) * rng.standard_normal((n, 1))

    def transition(self, theta, particles, t, rng):
        return theta[0] * particles + np.sqrt(self.q) * rng.standard_normal(particles.shape)

    def log_obs(self, theta, particles, t):
        return stats.norm.logpdf(self.y[t], particles[:, 0], np.sqrt(self.r))

    def kalman_log_likelihood(self, phi: float) -> float:
        m, P = 0.0, self.init_var
        ll = 0.0
        for yt in self.y:
            m, P = phi * m, phi * phi * P + self.q
            S = P + self.r
            ll += stats.norm.logpdf(yt, m, np.sqrt(S))
            K = P / S
            m, P = m + K * (yt - m), (1 - K) * P
        return float(ll)


# ---------------------------------------------------------------------------
# synthetic data


def simulate_chaos(theta, C, n_steps, rng, trans_var=0.01, obs_var=0.2):
    K = C.shape[0]
    x = rng.standard_normal(3)
    ys = np.empty((n_steps, K))
    xs = np.empty((n_steps, 3))
    for t in range(n_steps):
        x = pickover_step(theta, x) + np.sqrt(trans_var) * rng.standard_normal(3)
        xs[t] = x
        ys[t] = C @ x + np.sqrt(obs_var) * rng.standard_normal(K)
    return xs, ys


def generate_synthetic(kind: str, seed: int = 0, **overrides) -> dict:
    """Generate a dataset deterministically from ``seed``.

    Returns a dict with ``kind``, ``observations`` (2-D array, one row per
    observation) and ``params`` (everything needed to rebuild the model).
    """
    rng = np.random.default_rng(seed)
    if kind == "gmm":
        K = overrides.get("n_components", 4)
        D = overrides.get("obs_dim", 2)
        n = overrides.get("n_obs", 200)
        cov_mu = np.asarray(overrides.get("cov_mu", np.eye(D)), float)
        cov_y = np.asarray(overrides.get("cov_y", 0.2 * np.eye(D)), float)
        mu = rng.multivariate_normal(np.zeros(D), cov_mu, size=K)
        labels = rng.integers(K, size=n)
        y = mu[labels] + rng.multivariate_normal(np.zeros(D), cov_y, size=n)
        params = {"n_components": K, "cov_mu": cov_mu.tolist(), "cov_y": cov_y.tolist(),
                  "true_means": mu.tolist()}
        return {"kind": kind, "seed": seed, "observations": y, "params": params}
    if kind == "chaos":
        K = overrides.get("n_obs_rows", 20)
        T = overrides.get("n_steps", 200)
        theta = np.asarray(overrides.get("theta", ChaosModel.TRUE_THETA), float)
        C = rng.dirichlet(np.full(K, 0.1), size=3).T
        _, y = simulate_chaos(theta, C, T, rng)
        params = {"C": C.tolist(), "trans_var": 0.01, "obs_var": 0.2, "true_theta": theta.tolist()}
        return {"kind": kind, "seed": seed, "observations": y, "params": params}
    if kind == "network":
        if "edges" in overrides:
            edges, source, sink = overrides["edges"], overrides["source"], overrides["sink"]
        else:
            edges, source, sink = layered_graph()
        T = len(edges)
        mean = np.asarray(overrides.get("mean", np.full(T, 3.0)), float)
        cov = np.asarray(overrides.get("cov", np.eye(T)), float)
        scale = overrides.get("scale", 0.1)
        dof = overrides.get("dof", 5.0)
        x = rng.multivariate_normal(mean, cov)
        y = x + scale * rng.standard_t(dof, size=T)
        params = {"edges": [list(e) for e in edges], "source": source, "sink": sink,
                  "mean": mean.tolist(), "cov": cov.tolist(), "scale": scale, "dof": dof,
                  "threshold": overrides.get("threshold", 3.8), "true_x": x.tolist(),
                  "topology_assumed": "edges" not in overrides}
        return {"kind": kind, "seed": seed, "observations": y[:, None], "params": params}
    if kind == "conjugate":
        n = overrides.get("n_obs", 10)
        prior_mean = overrides.get("prior_mean", 0.0)
        prior_sd = overrides.get("prior_sd", 1.0)
        noise_sd = overrides.get("noise_sd", 1.0)
        x = overrides.get("true_x", prior_mean + prior_sd * rng.standard_normal())
        y = x + noise_sd * rng.standard_normal(n)
        params = {"prior_mean": prior_mean, "prior_sd": prior_sd, "noise_sd": noise_sd,
                  "true_x": float(x)}
        return {"kind": kind, "seed": seed, "observations": y[:, None], "params": params}
    if kind == "lgssm":
        T = overrides.get("n_steps", 20)
        phi = overrides.get("phi", 0.8)
        q, r, init_var = overrides.get("q", 1.0), overrides.get("r", 1.0), overrides.get("init_var", 1.0)
        x = np.sqrt(init_var) * rng.standard_normal()
        y = np.empty(T)
        for t in range(T):
            x = phi * x + np.sqrt(q) * rng.standard_normal()
            y[t] = x + np.sqrt(r) * rng.standard_normal()
        params = {"q": q, "r": r, "init_var": init_var, "true_phi": phi}
        return {"kind": kind, "seed": seed, "observations": y[:, None], "params": params}
    raise ValueError(f"unknown model kind {kind!r}")


def model_from_dataset(dataset: dict):
    kind, y, p = dataset["kind"], np.asarray(dataset["observations"], float), dataset["params"]
    if kind == "gmm":
        return GaussianMixtureModel(y, p["n_components"], p["cov_mu"], p["cov_y"])
    if kind == "chaos":
        return ChaosModel(y, np.asarray(p["C"]), p["trans_var"], p["obs_var"])
    if kind == "network":
        return NetworkModel(y[:, 0], p["edges"], p["source"], p["sink"], p["mean"], p["cov"],
                            p["scale"], p["dof"], p["threshold"])
    if kind == "conjugate":
        return ConjugateGaussian(y[:, 0], p["prior_mean"], p["prior_sd"], p["noise_sd"])
    if kind == "lgssm":
        return LinearGaussianSSM(y[:, 0], p["q"], p["r"], p["init_var"])
    raise ValueError(f"unknown model kind {kind!r}")


def save_dataset(dataset: dict, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (observations) and ``<path>.json`` (parameters)."""
    path = Path(path)
    y = np.atleast_2d(np.asarray(dataset["observations"], float))
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y{i}" for i in range(y.shape[1])])
        for row in y:
            writer.writerow([repr(float(v)) for v in row])
    meta = {"kind": dataset["kind"], "seed": dataset.get("seed"), "params": dataset["params"]}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return csv_path, json_path


def load_dataset(path) -> dict:
    path = Path(path)
    with open(path.with_suffix(".json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(path.with_suffix(".csv"), encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    meta["observations"] = np.array([[float(v) for v in r] for r in rows])
    return meta
