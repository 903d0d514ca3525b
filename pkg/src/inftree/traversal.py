"""Choosing which leaf to refine next.

Starting at the root, the child with the larger utility is taken until a leaf
is reached. The utility adds three terms, each divided by the child's
traversal count: an exploitation ratio of ``tau`` values, a targeted
exploration share of ``p_s`` between siblings, and a volume-scaled optimism
boost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .tree import InferenceTree, Node, node_log_sigma2

Schedule = Callable[[float], float]


def constant(value: float) -> Schedule:
    return _Constant(float(value))


class _Constant:
    def __init__(self, value):
        self.value = value

    def __call__(self, rho):
        return self.value

    def __repr__(self):
        return f"constant({self.value})"


class _TanhSchedule:
    """``min(cap, scale/2 * (1 + tanh(rate * (centre - rho))))``."""

    def __init__(self, scale, rate, centre, cap=1.0):
        self.scale, self.rate, self.centre, self.cap = scale, rate, centre, cap

    def __call__(self, rho):
        return min(self.cap, 0.5 * self.scale * (1.0 + np.tanh(self.rate * (self.centre - rho))))

    def __repr__(self):
        return (f"tanh_schedule(scale={self.scale}, rate={self.rate}, centre={self.centre}, "
                f"cap={self.cap})")


_SCHEDULES = {
    "gmm": (_TanhSchedule(1.0, 20.0, 0.9), _TanhSchedule(1.25, 25.0, 0.95)),
    "chaos": (_TanhSchedule(1.0, 4.0, 0.7), _TanhSchedule(1.25, 10.0, 0.8)),
}


def default_schedules(experiment: str) -> tuple[Schedule, Schedule]:
    """``(delta, alpha)`` annealing schedules for a named experiment."""
    try:
        return _SCHEDULES[experiment]
    except KeyError:
        raise ValueError(f"no annealing schedules for experiment {experiment!r}") from None


@dataclass
class TraversalParams:
    kappa: float = 1.0
    beta: float = 0.1
    lam: float = 1.2
    delta: Schedule = field(default_factory=lambda: default_schedules("gmm")[0])
    alpha: Schedule = field(default_factory=lambda: default_schedules("gmm")[1])
    lookahead: int = 1000
    log_w_gap: float = 10.0
    beta_cutoff: float = 0.75
    integration: bool = False

    def __post_init__(self):
        if not (self.kappa >= 0 and np.isfinite(self.kappa)) or not (self.beta >= 0 and np.isfinite(self.beta)):
            raise ValueError("kappa and beta must be finite and non-negative")
        if self.lam < 1:
            raise ValueError("lam must be >= 1")

    def beta_at(self, rho: float) -> float:
        return 0.0 if rho >= self.beta_cutoff else self.beta

    def with_(self, **kw) -> "TraversalParams":
        return replace(self, **kw)


def log_exploitation_target(node: Node, kappa: float) -> float:
    """log tau = 0.5 * log(omega^2 + (1 + kappa) sigma^2)."""
    ls2 = node_log_sigma2(node)
    return 0.5 * float(np.logaddexp(2 * node.log_omega, np.log1p(kappa) + ls2))


def exploitation_target(node: Node, kappa: float) -> float:
    return float(np.exp(log_exploitation_target(node, kappa)))


def _ratio_pow(log_num: float, log_den: float, power: float) -> float:
    if power == 0.0 or log_den == -np.inf or (log_num == np.inf and log_den == np.inf):
        # parent carries no signal: ratio is uninformative
        return 1.0
    v = power * (log_num - log_den)
    # an unbounded target (fewer than two runs) must still compare as a number
    return float(np.exp(v)) if v < _LOG_MAX else _MAX


_MAX = float(np.finfo(float).max)
_LOG_MAX = float(np.log(_MAX))


def optimism(child: Node, parent: Node, beta: float) -> float:
    if beta == 0.0:
        return 0.0
    rel_vol = np.exp(child.log_volume - parent.log_volume)
    return beta * rel_vol * np.log(parent.M) / np.sqrt(child.M)


def _unit(v: float) -> float:
    return min(max(float(v), 0.0), 1.0)


def utility(child: Node, parent: Node, sibling: Node, params: TraversalParams, rho: float) -> float:
    # an exponent 1 - alpha below zero would reward the smallest targets
    delta, alpha = _unit(params.delta(rho)), _unit(params.alpha(rho))
    exploit = _ratio_pow(log_exploitation_target(child, params.kappa),
                         log_exploitation_target(parent, params.kappa), 1.0 - alpha)
    ps_total = child.ps + sibling.ps
    explore = child.ps / ps_total if ps_total > 0 else 0.0
    boost = optimism(child, parent, params.beta_at(rho))
    return ((1.0 - delta) * exploit + delta * explore + boost) / max(child.M, 1)


def _choose(u_left: float, u_right: float, rng) -> int:
    if u_left == u_right or (np.isnan(u_left) and np.isnan(u_right)):
        return int(rng.integers(2))
    return 0 if u_left > u_right else 1


def select_leaf(tree: InferenceTree, params: TraversalParams, rho: float,
                rng: np.random.Generator) -> list[Node]:
    """Path from the root to the chosen leaf."""
    from .integration import utility_int

    util = utility_int if params.integration else utility
    node = tree.root
    path = [node]
    while not node.is_leaf:
        ul = util(node.left, node, node.right, params, rho)
        ur = util(node.right, node, node.left, params, rho)
        node = (node.left, node.right)[_choose(ul, ur, rng)]
        path.append(node)
    return path


def update_global_threshold(tree: InferenceTree, node: Node, run) -> bool:
    """Fold one run into the volume-free maximum log weight.

    Returns whether the reference moved (all ``p_s`` are then stale).
    """
    return tree.observe_runs(node, [run])


def naive_it_preset(**overrides) -> TraversalParams:
    """Optimism-only exploration: no targeted term, no tail annealing."""
    kw = dict(delta=constant(0.0), alpha=constant(0.0), beta=0.5)
    kw.update(overrides)
    return TraversalParams(**kw)
