"""Refining a leaf: either more runs in place or a split into two children.

A leaf is considered for splitting once it has enough runs and its weights are
degenerate (low ESS relative to run count). Random axis-aligned cuts are scored
by how far they move mass away from the volume-proportional split, the best one
is pulled towards the heavier side, and a Welch t-test on fresh runs in each
half decides whether the split is kept. A rejected split still contributes its
runs to the leaf, as a stratified sample.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .reparam import SPLIT_MARGIN, HyperRect, split_rect
from .tree import InferenceTree, Node, node_ess

SHRINK = 0.25


@dataclass(frozen=True)
class RefineConfig:
    min_runs: int = 16
    max_ess_ratio: float = 0.5
    sig_level: float = 0.05
    n_candidates: int = 100
    runs_per_refinement: int = 1

    def __post_init__(self):
        if self.runs_per_refinement < 1 or self.n_candidates < 1:
            raise ValueError("runs_per_refinement and n_candidates must be >= 1")
        if not 0 < self.sig_level < 1:
            raise ValueError("sig_level must lie in (0, 1)")


@dataclass(frozen=True)
class SplitCandidate:
    """A cut of ``rect`` at ``point`` along ``dim``.

    ``log_omega_*`` are the estimated masses of each half from the leaf's
    existing samples; ``log_vol_*`` the log volumes of the halves.
    """

    rect: HyperRect
    dim: int
    point: float
    log_omega_left: float
    log_omega_right: float

    @property
    def log_vol_left(self) -> float:
        lo, hi = self.rect.lo[self.dim], self.rect.hi[self.dim]
        return self.rect.log_volume() - np.log(hi - lo) + np.log(self.point - lo)

    @property
    def log_vol_right(self) -> float:
        lo, hi = self.rect.lo[self.dim], self.rect.hi[self.dim]
        return self.rect.log_volume() - np.log(hi - lo) + np.log(hi - self.point)

    def halves(self) -> tuple[HyperRect, HyperRect]:
        return split_rect(self.rect, self.dim, self.point)

    @property
    def one_sided(self) -> bool:
        return self.log_omega_left == -np.inf or self.log_omega_right == -np.inf


def should_split(node: Node, cfg: RefineConfig) -> bool:
    return node.is_leaf and node.N >= cfg.min_runs and node_ess(node) / node.N <= cfg.max_ess_ratio


def _sample_log_masses(node: Node):
    """Per-sample z and log contribution to the local weight estimate."""
    zs, lws = [], []
    n = node.N
    for run in node.runs:
        zs.append(run.z)
        lws.append(run.sample_log_w - np.log(run.n_samples) - np.log(n))
    return np.concatenate(zs), np.concatenate(lws)


def propose_candidates(node: Node, n_candidates: int, rng: np.random.Generator) -> list[SplitCandidate]:
    """Random cuts with masses attributed from the leaf's stored samples."""
    rect = node.rect
    dims = rng.integers(rect.dim, size=n_candidates)
    u = rng.uniform(SPLIT_MARGIN, 1.0 - SPLIT_MARGIN, size=n_candidates)
    points = rect.lo[dims] + u * rect.widths[dims]
    z, lw = _sample_log_masses(node)
    finite = lw > -np.inf
    if not np.any(finite):
        return [SplitCandidate(rect, int(d), float(p), -np.inf, -np.inf) for d, p in zip(dims, points)]
    z, lw = z[finite], lw[finite]
    top = lw.max()
    w = np.exp(lw - top)
    left = z[:, dims] < points  # samples x candidates
    with np.errstate(divide="ignore"):
        log_left = top + np.log(w @ left)
        log_right = top + np.log(w @ ~left)
    return [SplitCandidate(rect, int(d), float(p), float(a), float(b))
            for d, p, a, b in zip(dims, points, log_left, log_right)]


def split_loss(cand: SplitCandidate) -> float:
    """``sum_i P_i log(V_i / P_i)`` over the two halves, P the normalized masses.

    Rescaling the masses by a common factor only rescales and shifts the loss,
    so normalizing keeps the ordering of candidates from one leaf while
    avoiding underflow.
    """
    total = np.logaddexp(cand.log_omega_left, cand.log_omega_right)
    if total == -np.inf:
        return 0.0
    loss = 0.0
    for lo, lv in ((cand.log_omega_left, cand.log_vol_left), (cand.log_omega_right, cand.log_vol_right)):
        lp = lo - total
        if lp > -np.inf:
            loss += np.exp(lp) * (lv - lp)
    return float(loss)


def shrink_split(cand: SplitCandidate) -> SplitCandidate:
    """Move the cut so the lighter half loses a quarter of its width.

    On equal masses the right half shrinks.
    """
    lo, hi = cand.rect.lo[cand.dim], cand.rect.hi[cand.dim]
    if cand.log_omega_left < cand.log_omega_right:
        point = cand.point - SHRINK * (cand.point - lo)
    else:
        point = cand.point + SHRINK * (hi - cand.point)
    margin = SPLIT_MARGIN * (hi - lo)
    point = float(np.clip(point, lo + margin, hi - margin))
    return replace(cand, point=point)


def best_candidate(cands: list[SplitCandidate]) -> SplitCandidate | None:
    """Lowest-loss candidate among those with mass on both sides."""
    usable = [c for c in cands if not c.one_sided]
    if not usable:
        return None
    return min(usable, key=split_loss)


def _floor_infs(a: np.ndarray, b: np.ndarray, gap: float):
    finite = np.concatenate([a[np.isfinite(a)], b[np.isfinite(b)]])
    floor = finite.min() - gap
    return np.where(np.isfinite(a), a, floor), np.where(np.isfinite(b), b, floor)


def split_p_value(left_log_w, right_log_w, log_w_gap: float = 10.0) -> float:
    """Welch t-test p-value comparing the children's run log weights.

    Zero-weight runs are placed ``log_w_gap`` below the smallest finite value.
    A side with no finite weight against one with some counts as significant.
    """
    a = np.asarray(left_log_w, dtype=float)
    b = np.asarray(right_log_w, dtype=float)
    fa, fb = np.isfinite(a).any(), np.isfinite(b).any()
    if not (fa or fb):
        return 1.0
    if fa != fb:
        return 0.0
    a, b = _floor_infs(a, b, log_w_gap)
    va = a.var(ddof=1) if a.size > 1 else 0.0
    vb = b.var(ddof=1) if b.size > 1 else 0.0
    if va == 0.0 and vb == 0.0:
        return 0.0 if a.mean() != b.mean() else 1.0
    if a.size < 2 or b.size < 2:
        return 1.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def accept_split(left_log_w, right_log_w, sig_level: float = 0.05, log_w_gap: float = 10.0) -> bool:
    return split_p_value(left_log_w, right_log_w, log_w_gap) < sig_level


@dataclass
class RefineOutcome:
    kind: str  # "extend", "split" or "rejected"
    node: Node
    evals: int
    runs: list
    candidate: SplitCandidate | None = None
    p_value: float | None = None


def _do_runs(base, model, rects, rngs, integrand, executor):
    def one(args):
        rect, rng = args
        return base(model, rect, rng, integrand=integrand)

    jobs = list(zip(rects, rngs))
    if executor is None:
        return [one(j) for j in jobs]
    return list(executor.map(one, jobs))


def _test_values(runs) -> np.ndarray:
    """Amalgamated log weights, or per-sample ones when there is a single run."""
    if len(runs) >= 2:
        return np.array([r.log_w for r in runs])
    return np.concatenate([r.sample_log_w for r in runs])


def refine(tree: InferenceTree, leaf: Node, model, base, cfg: RefineConfig,
           run_rng, split_rng: np.random.Generator, integrand=None, executor=None) -> RefineOutcome:
    """Refine ``leaf`` once.

    ``run_rng(k)`` returns the generator for the ``k``-th run of this step, so
    results do not depend on whether runs are executed in parallel.
    """
    b = cfg.runs_per_refinement
    cand = None
    if should_split(leaf, cfg):
        cand = best_candidate(propose_candidates(leaf, cfg.n_candidates, split_rng))
    if cand is None:
        runs = _do_runs(base, model, [leaf.rect] * b, [run_rng(k) for k in range(b)], integrand, executor)
        tree.add_runs(leaf, runs)
        return RefineOutcome("extend", leaf, sum(r.evals for r in runs), runs)

    cand = shrink_split(cand)
    lrect, rrect = cand.halves()
    runs = _do_runs(base, model, [lrect] * b + [rrect] * b,
                    [run_rng(k) for k in range(2 * b)], integrand, executor)
    left, right = runs[:b], runs[b:]
    evals = sum(r.evals for r in runs)
    p = split_p_value(_test_values(left), _test_values(right), tree.log_w_gap)
    if p < cfg.sig_level:
        tree.split(leaf, cand.dim, cand.point, left, right)
        return RefineOutcome("split", leaf, evals, runs, cand, p)
    # each half is one stratum of two; doubling gives unbiased whole-leaf weights
    merged = [r.scaled(np.log(2.0)) for r in runs]
    tree.add_runs(leaf, merged)
    return RefineOutcome("rejected", leaf, evals, merged, cand, p)
