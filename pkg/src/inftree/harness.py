"""Experiment configuration, the refinement loop, and on-disk outputs.

A run writes four files into its output directory:

``trace.csv``
    one row per logged iteration with ``evals_used, iteration,
    log_ml_estimate, ess, n_leaves, max_depth`` (plus ``integral_estimate``
    when an integrand is tracked);
``measure.jsonl``
    the final weighted sample set, one ``{"x", "weight"}`` record per line;
``checkpoint.json``
    everything needed to continue the run with :func:`resume`;
``config.json``
    the fully resolved configuration.
"""

from __future__ import annotations

import copy
import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import models as _models
from .base_infer import SMC, ImportanceSampling
from .baselines import DEFAULT_STEP_VAR, PmmhState, pmmh_init, pmmh_step, write_chain_csv
from .refine import RefineConfig, refine
from .streams import Streams
from .traversal import TraversalParams, constant, default_schedules, naive_it_preset, select_leaf
from .tree import InferenceTree

ALGORITHMS = ("it", "naive_it", "is", "pmmh", "smc")
SSM_KINDS = ("chaos", "lgssm")
TRACE_COLUMNS = ["evals_used", "iteration", "log_ml_estimate", "ess", "n_leaves", "max_depth"]
CHECKPOINT_FORMAT = "inftree-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str
    algorithm: str = "it"
    budget: int = 100_000
    seed: int = 0
    out: str = "run"
    model: dict = field(default_factory=dict)
    dataset: str | None = None
    trace_every: int = 1
    workers: int = 1
    base: dict = field(default_factory=dict)
    traversal: dict = field(default_factory=dict)
    refine: dict = field(default_factory=dict)
    pmmh: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.experiment not in ("gmm", "chaos", "network", "conjugate", "lgssm"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not isinstance(self.budget, int) or self.budget <= 0:
            raise ConfigError("budget must be a positive integer")
        if self.trace_every < 1 or self.workers < 1:
            raise ConfigError("trace_every and workers must be >= 1")
        if self.algorithm in ("pmmh", "smc") and self.experiment not in SSM_KINDS:
            raise ConfigError(f"{self.algorithm} needs a state-space experiment, got {self.experiment!r}")
        for key in ("model", "base", "traversal", "refine", "pmmh"):
            if not isinstance(getattr(self, key), dict):
                raise ConfigError(f"section {key!r} must be a mapping")
        # resolve eagerly so bad values fail before any work is done
        self.traversal_params()
        self.refine_config()

    @property
    def label(self) -> str:
        return self.name or self.algorithm

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "experiment" not in d:
            raise ConfigError("config must name an experiment")
        try:
            return cls(**copy.deepcopy(d))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig.from_dict(d)

    # -- resolved pieces ---------------------------------------------------

    def is_ssm(self) -> bool:
        return self.experiment in SSM_KINDS

    def runs_per_refinement(self) -> int:
        default = 8 if self.is_ssm() else 16
        return int(self.base.get("runs_per_refinement", default))

    def base_algorithm(self):
        if self.is_ssm():
            return SMC(int(self.base.get("n_particles", 500)))
        return ImportanceSampling(int(self.base.get("batch_size", 100)))

    def traversal_params(self) -> TraversalParams:
        t = dict(self.traversal)
        sched = t.pop("schedules", "chaos" if self.experiment == "chaos" else "gmm")
        allowed = {"kappa", "beta", "lam", "lookahead", "log_w_gap", "beta_cutoff", "integration"}
        if set(t) - allowed:
            raise ConfigError(f"unknown traversal keys: {sorted(set(t) - allowed)}")
        try:
            if isinstance(sched, str):
                delta, alpha = default_schedules(sched)
            elif isinstance(sched, dict):
                delta, alpha = constant(sched.get("delta", 0.0)), constant(sched.get("alpha", 0.0))
            else:
                raise ConfigError("traversal.schedules must be a name or {delta, alpha}")
            if self.algorithm == "naive_it":
                return naive_it_preset(**t)
            return TraversalParams(delta=delta, alpha=alpha, **t)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def refine_config(self) -> RefineConfig:
        r = dict(self.refine)
        if self.algorithm in ("is", "smc"):
            # root-only: never split
            r["min_runs"] = np.iinfo(np.int64).max
        try:
            return RefineConfig(runs_per_refinement=self.runs_per_refinement(), **r)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def load_config(path, **overrides) -> RunConfig:
    """Read a YAML config; non-``None`` keyword overrides replace top-level keys."""
    try:
        with open(path, encoding="utf-8") as fh:
            d = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def build_model(cfg: RunConfig):
    if cfg.dataset:
        ds = _models.load_dataset(cfg.dataset)
    else:
        kw = dict(cfg.model)
        data_seed = kw.pop("data_seed", 0)
        ds = _models.generate_synthetic(cfg.experiment, seed=data_seed, **kw)
    return _models.model_from_dataset(ds)


# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


class Sampler:
    """Owns the tree (or chain) and advances it one refinement at a time."""

    def __init__(self, cfg: RunConfig, model=None):
        self.cfg = cfg
        self.model = build_model(cfg) if model is None else model
        self.streams = Streams(cfg.seed)
        self.iteration = 0
        self.evals_used = 0
        self.trace: list[list] = []
        self.tree: InferenceTree | None = None
        self.chain: PmmhState | None = None
        if cfg.algorithm == "pmmh":
            return
        self.params = cfg.traversal_params()
        self.refine_cfg = cfg.refine_config()
        self.base = cfg.base_algorithm()
        self.integrand = getattr(self.model, "integrand", None) if self.params.integration else None
        if self.params.integration and self.integrand is None:
            raise ConfigError(f"experiment {cfg.experiment!r} has no integrand to track")
        self.tree = InferenceTree(self.model.dim, self.params.lam, self.params.lookahead,
                                  self.params.log_w_gap)

    @property
    def columns(self) -> list[str]:
        if self.tree is not None and self.integrand is not None:
            return TRACE_COLUMNS + ["integral_estimate"]
        return list(TRACE_COLUMNS)

    @property
    def done(self) -> bool:
        return self.iteration > 0 and self.evals_used >= self.cfg.budget

    def rho(self) -> float:
        return min(self.evals_used / self.cfg.budget, 1.0)

    # -- one iteration -------------------------------------------------------

    def step(self, executor=None):
        if self.cfg.algorithm == "pmmh":
            self._pmmh_step()
        else:
            self._tree_step(executor)
        self.iteration += 1
        if self.iteration % self.cfg.trace_every == 0 or self.done:
            self._log()

    def _tree_step(self, executor):
        it = self.iteration
        path = select_leaf(self.tree, self.params, self.rho(), self.streams.traverse(it))
        out = refine(self.tree, path[-1], self.model, self.base, self.refine_cfg,
                     lambda k: self.streams.run(it, k), self.streams.split(it),
                     integrand=self.integrand, executor=executor)
        self.evals_used += out.evals

    def _pmmh_step(self):
        rng = self.streams.run(self.iteration, 0)
        n_particles = int(self.cfg.base.get("n_particles", 500))
        if self.chain is None:
            step_var = float(self.cfg.pmmh.get("step_var", DEFAULT_STEP_VAR))
            self.chain = pmmh_init(self.model, rng, n_particles, step_var)
        else:
            pmmh_step(self.model, self.chain, rng, n_particles)
        self.evals_used = self.chain.evals

    def _log(self):
        if self.tree is not None:
            row = [self.evals_used, self.iteration, self.tree.log_ml, self.tree.ess,
                   self.tree.n_leaves, self.tree.max_depth()]
            if self.integrand is not None:
                from .integration import tracked_integral
                try:
                    row.append(tracked_integral(self.tree))
                except ValueError:
                    row.append(float("nan"))
        else:
            # a chain has no evidence estimate; report its current log Z-hat
            row = [self.evals_used, self.iteration, self.chain.log_z, float("nan"), 1, 0]
        self.trace.append(row)

    # -- driving -------------------------------------------------------------

    def run(self, max_iterations: int | None = None):
        """Iterate until the budget is used (at least one iteration)."""
        executor = ThreadPoolExecutor(self.cfg.workers) if self.cfg.workers > 1 else None
        try:
            n = 0
            while not self.done and (max_iterations is None or n < max_iterations):
                self.step(executor)
                n += 1
        finally:
            if executor is not None:
                executor.shutdown()
        return self

    # -- outputs -------------------------------------------------------------

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.trace:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def measure(self):
        """Yield ``(x, weight, latent)`` records of the final weighted measure."""
        if self.tree is None:
            samples = self.chain.samples() if self.chain is not None else np.empty((0, self.model.dim))
            for x in samples:
                yield x, 1.0 / len(samples), None
            return
        recs = [(run, lf) for _, run, lf in self.tree.weighted_runs()]
        if not recs:
            return
        total = np.logaddexp.reduce(np.concatenate([lf + r.sample_log_w for r, lf in recs]))
        if total == -np.inf:
            return
        for run, lf in recs:
            w = np.exp(lf + run.sample_log_w - total)
            for i in range(run.n_samples):
                latent = None if run.latent is None else run.latent[i]
                yield run.x[i], float(w[i]), latent

    def checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "iteration": self.iteration,
            "evals_used": self.evals_used,
            "trace": [[_fmt(v) for v in row] for row in self.trace],
            "tree": None if self.tree is None else self.tree.to_dict(),
            "chain": None if self.chain is None else _chain_to_dict(self.chain),
        }

    @classmethod
    def from_checkpoint(cls, d: dict, cfg: RunConfig | None = None, model=None) -> "Sampler":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a compatible checkpoint")
        s = cls(cfg or RunConfig.from_dict(d["config"]), model)
        s.iteration, s.evals_used = int(d["iteration"]), int(d["evals_used"])
        s.trace = [[_parse(v) for v in row] for row in d["trace"]]
        if d["tree"] is not None:
            s.tree = InferenceTree.from_dict(d["tree"])
        if d["chain"] is not None:
            s.chain = _chain_from_dict(d["chain"])
        return s

    def write_outputs(self, out: Path | None = None):
        out = Path(out or self.cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(self.trace_csv(), encoding="utf-8")
        (out / "config.json").write_text(json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True),
                                         encoding="utf-8")
        (out / "checkpoint.json").write_text(json.dumps(self.checkpoint()), encoding="utf-8")
        with (out / "measure.jsonl").open("w", encoding="utf-8") as fh:
            for x, w, latent in self.measure():
                rec = {"x": [float(v) for v in np.atleast_1d(x)], "weight": w}
                if latent is not None:
                    rec["latent"] = np.asarray(latent).tolist()
                fh.write(json.dumps(rec) + "\n")
        if self.chain is not None:
            write_chain_csv(self.chain, out / "chain.csv")
        return out


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        return float(v)


def _chain_to_dict(c: PmmhState) -> dict:
    return {
        "theta": c.theta.tolist(), "log_z": repr(float(c.log_z)), "step_var": c.step_var,
        "evals": c.evals,
        "trace": [[t.tolist(), repr(float(lz)), bool(a)] for t, lz, a in c.trace],
    }


def _chain_from_dict(d: dict) -> PmmhState:
    return PmmhState(np.asarray(d["theta"], float), float(d["log_z"]), float(d["step_var"]),
                     [(np.asarray(t, float), float(lz), bool(a)) for t, lz, a in d["trace"]],
                     int(d["evals"]))


# ---------------------------------------------------------------------------


def _guarded(sampler: Sampler, out, max_iterations=None) -> Sampler:
    try:
        sampler.run(max_iterations)
    except FloatingPointError:
        sampler.write_outputs(out)
        raise
    sampler.write_outputs(out)
    return sampler


def run(cfg: RunConfig, out=None, model=None, max_iterations: int | None = None) -> Sampler:
    """Run ``cfg`` to completion and write its outputs."""
    return _guarded(Sampler(cfg, model), out, max_iterations)


def resume(checkpoint_path, budget: int | None = None, out=None, model=None,
           max_iterations: int | None = None) -> Sampler:
    """Continue a run from its checkpoint, optionally with a larger budget."""
    d = json.loads(Path(checkpoint_path).read_text(encoding="utf-8"))
    cfg = RunConfig.from_dict(d["config"]).with_(budget=budget)
    sampler = Sampler.from_checkpoint(d, cfg, model)
    return _guarded(sampler, out or Path(checkpoint_path).parent, max_iterations)


# ---------------------------------------------------------------------------


def quantile_traces(traces: list[list[list]], grid) -> np.ndarray:
    """25/50/75% quantiles of log ML and ESS on ``grid``.

    Each trace is read as a step function of ``evals_used``; grid points
    before a trace's first row are missing for that trace.
    Returns an array of shape ``(len(grid), 6)``.
    """
    grid = np.asarray(grid, dtype=float)
    vals = np.full((len(traces), grid.size, 2), np.nan)
    for i, tr in enumerate(traces):
        arr = np.asarray([[r[0], r[2], r[3]] for r in tr], dtype=float)
        idx = np.searchsorted(arr[:, 0], grid, side="right") - 1
        ok = idx >= 0
        vals[i, ok] = arr[idx[ok], 1:]
    out = np.full((grid.size, 6), np.nan)
    for g in range(grid.size):
        for j in range(2):
            col = vals[:, g, j]
            col = col[~np.isnan(col)]
            if col.size:
                out[g, 3 * j:3 * j + 3] = np.quantile(col, [0.25, 0.5, 0.75])
    return out


def compare(configs: list[RunConfig], replications: int, out) -> Path:
    """Run every config ``replications`` times (seeds ``seed + r``) and
    summarize median and interquartile traces per algorithm label."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    budgets = {c.budget for c in configs}
    if len(budgets) > 1:
        raise ConfigError(f"configs have mismatched budgets: {sorted(budgets)}")
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError("config labels must be unique; set `name` to disambiguate")
    out = Path(out)
    rows = []
    for cfg in configs:
        traces = []
        for r in range(replications):
            sub = out / cfg.label / f"rep_{r}"
            s = run(cfg.with_(seed=cfg.seed + r, out=str(sub)), out=sub)
            traces.append(s.trace)
        grid = sorted({row[0] for tr in traces for row in tr})
        q = quantile_traces(traces, grid)
        for g, qs in zip(grid, q):
            rows.append([cfg.label, g] + list(qs))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "evals", "log_ml_q25", "log_ml_median", "log_ml_q75",
                    "ess_q25", "ess_median", "ess_q75"])
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path
