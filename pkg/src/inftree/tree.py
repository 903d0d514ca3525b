"""The inference tree: local estimates and their recursive combination.

Each node owns a box of the unit hypercube and the base-inference runs made
while it was a leaf. A node's estimate mixes its own runs with the sum of its
children's estimates through the child preference factor ``c``:

    omega_j = (1 - c_j) * mean(local weights) + c_j * (omega_left + omega_right)

The same recursion carries the expected squared weight ``zeta^2 / M`` (from
which the ESS follows), the exploration probability ``p_s`` and, when an
integrand is tracked, the ``w * f`` analogues. The single-traversal variance
``M / (M - 1) (zeta^2 - omega^2)`` is computed from a separately propagated
sum of squared deviations, which avoids cancellation when the weights are
nearly equal. All weight-valued quantities are kept in log space.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import logweight
from .base_infer import RunResult
from .reparam import HyperRect

FORMAT_VERSION = 1


def _log(v: float) -> float:
    return -np.inf if v <= 0.0 else float(np.log(v))


def _log1mexp(a: float) -> float:
    if a >= 0.0:
        return -np.inf
    return float(np.log(-np.expm1(a))) if a > -0.693 else float(np.log1p(-np.exp(a)))


def _lse(values) -> float:
    """log sum exp of a short sequence of floats."""
    top = max(values)
    if top == -math.inf:
        return -math.inf
    return top + math.log(sum(math.exp(v - top) for v in values))


def _lse_array(a: np.ndarray) -> float:
    top = a.max()
    if top == -np.inf:
        return -np.inf
    return float(top + np.log(np.sum(np.exp(a - top))))


def _log_abs_diff(la: float, sa: float, lb: float, sb: float) -> float:
    """log|sa e^la - sb e^lb|."""
    if lb == -math.inf:
        return la
    if la == -math.inf:
        return lb
    if sa != sb:
        return max(la, lb) + math.log1p(math.exp(-abs(la - lb)))
    gap = -abs(la - lb)
    if gap == 0.0:
        return -math.inf
    return max(la, lb) + (math.log(-math.expm1(gap)) if gap > -0.693 else math.log1p(-math.exp(gap)))


def _log_dev2(log_vals: np.ndarray, signs, log_mean: float, mean_sign: float) -> float:
    """log sum (v_i - mean)^2 for signed values given as logs."""
    if log_vals.size == 0:
        return -np.inf
    if log_mean == -np.inf:
        return _lse_array(2 * log_vals)
    signs = np.broadcast_to(np.asarray(signs, dtype=float), log_vals.shape)
    hi = np.maximum(log_vals, log_mean)
    gap = -np.abs(log_vals - log_mean)
    with np.errstate(divide="ignore"):
        same = np.log(-np.expm1(gap))
    log_diff = hi + np.where(signs == mean_sign, same, np.log1p(np.exp(gap)))
    return _lse_array(2 * log_diff)


class Node:
    """One cell of the partition."""

    def __init__(self, node_id: int, rect: HyperRect, depth: int, parent: "Node | None" = None):
        self.id = node_id
        self.rect = rect
        self.depth = depth
        self.parent = parent
        self.left: Node | None = None
        self.right: Node | None = None
        self.split_dim: int | None = None
        self.split_point: float | None = None
        self.runs: list[RunResult] = []
        self._local_cache = None
        self.fit: logweight.LogWeightFit | None = None
        # propagated statistics
        self.M = 0
        self.c = 0.0
        self.leaf_count = 1
        self.leaf_depth_sum = depth
        self.log_omega = -np.inf
        self.log_zeta2_m = -np.inf
        # log of sum over subtree runs of (a_m - omega / M)^2, a_m the flattened weights
        self.log_dev2 = -np.inf
        self.ps = 1.0
        self.log_omega_f = -np.inf
        self.omega_f_sign = 1.0
        self.log_zeta2f_m = -np.inf
        self.log_dev2f = -np.inf

    def __repr__(self):
        kind = "leaf" if self.is_leaf else "internal"
        return f"Node(id={self.id}, {kind}, depth={self.depth}, N={self.N}, M={self.M})"

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def N(self) -> int:
        return len(self.runs)

    @property
    def sibling(self) -> "Node | None":
        if self.parent is None:
            return None
        return self.parent.right if self.parent.left is self else self.parent.left

    @property
    def log_volume(self) -> float:
        return self.rect.log_volume()

    @property
    def mean_child_depth(self) -> float:
        return self.leaf_depth_sum / self.leaf_count

    def add_runs(self, runs):
        self.runs.extend(runs)
        self._local_cache = None

    def local_log_w(self) -> np.ndarray:
        return np.array([r.log_w for r in self.runs], dtype=float)

    def local_sums(self):
        """Sums over local runs, all as logs.

        ``(sum w, sum w^2, |sum wf|, sign of sum wf, sum (wf)^2,
        sum (w - mean w)^2, sum (wf - mean wf)^2)``.
        """
        if self._local_cache is None:
            lw = self.local_log_w()
            n = lw.size
            if n == 0:
                s1 = s2 = dev = -np.inf
            else:
                s1 = _lse_array(lw)
                s2 = _lse_array(2 * lw)
                dev = _log_dev2(lw, 1.0, s1 - np.log(n), 1.0)
            sf, sign, sf2, devf = -np.inf, 1.0, -np.inf, -np.inf
            if self.runs and self.runs[0].log_abs_wf is not None:
                lf = np.array([r.log_abs_wf for r in self.runs])
                sg = np.array([r.wf_sign for r in self.runs])
                if np.any(lf > -np.inf):
                    sf, sign = logsumexp(lf, b=sg, return_sign=True)
                    sf, sign = float(sf), float(sign)
                    if not np.isfinite(sf):
                        sf, sign = -np.inf, 1.0
                    sf2 = _lse_array(2 * lf)
                    devf = _log_dev2(lf, sg, sf - np.log(n), sign)
            self._local_cache = (s1, s2, sf, sign, sf2, dev, devf)
            self.fit = logweight.fit(lw)
        return self._local_cache


# ---------------------------------------------------------------------------
# per-node statistics


def child_preference(node: Node, lam: float = 1.2) -> float:
    """Weight given to the children's combined estimate; 0 for leaves."""
    if node.is_leaf:
        return 0.0
    n = node.N
    scaled = lam ** (node.mean_child_depth - node.depth) * (node.M - n)
    if n + scaled == 0:
        return 1.0
    return scaled / (n + scaled)


def _mix(log_a: float, log_b: float, c: float) -> float:
    """log((1 - c) a + c b) for a, b given as logs."""
    return float(np.logaddexp(_log(1.0 - c) + log_a, _log(c) + log_b))


def propagate_omega(node: Node) -> float:
    s1 = node.local_sums()[0]
    local = s1 - np.log(node.N) if node.N else -np.inf
    if node.is_leaf:
        node.log_omega = local
    else:
        children = float(np.logaddexp(node.left.log_omega, node.right.log_omega))
        node.log_omega = _mix(local, children, node.c)
    return node.log_omega


def propagate_zeta(node: Node) -> float:
    s2 = node.local_sums()[1]
    local = s2 - 2 * np.log(node.N) if node.N else -np.inf
    if node.is_leaf:
        node.log_zeta2_m = local
    else:
        children = float(np.logaddexp(node.left.log_zeta2_m, node.right.log_zeta2_m))
        node.log_zeta2_m = float(np.logaddexp(2 * _log(1.0 - node.c) + local,
                                              2 * _log(node.c) + children))
    return node.log_zeta2_m


def _propagate_integrand(node: Node):
    _, _, sf, sign, sf2, _, _ = node.local_sums()
    n = node.N
    local_f = sf - np.log(n) if n else -np.inf
    local_f2 = sf2 - 2 * np.log(n) if n else -np.inf
    if node.is_leaf:
        node.log_omega_f, node.omega_f_sign = local_f, sign
        node.log_zeta2f_m = local_f2
        return
    c = node.c
    terms = np.array([_log(1 - c) + local_f, _log(c) + node.left.log_omega_f,
                      _log(c) + node.right.log_omega_f])
    signs = np.array([sign, node.left.omega_f_sign, node.right.omega_f_sign])
    keep = terms > -np.inf
    if np.any(keep):
        v, s = logsumexp(terms[keep], b=signs[keep], return_sign=True)
        node.log_omega_f, node.omega_f_sign = (float(v), float(s)) if np.isfinite(v) else (-np.inf, 1.0)
    else:
        node.log_omega_f, node.omega_f_sign = -np.inf, 1.0
    children = float(np.logaddexp(node.left.log_zeta2f_m, node.right.log_zeta2f_m))
    node.log_zeta2f_m = float(np.logaddexp(2 * _log(1 - c) + local_f2, 2 * _log(c) + children))


def _propagate_dev2(node: Node, local_log_sum: float, local_sign: float, local_dev: float,
                    attr_sum: str, attr_sign: str | None, attr_dev: str, log_total: float,
                    total_sign: float) -> float:
    """Pool squared deviations over the local runs and the two child subtrees.

    Each group contributes its own squared deviations plus ``n (mean_g - mean)^2``.
    """
    c, M = node.c, node.M
    groups = []
    if node.N:
        # local runs carry (1 - c) / N times their weight
        a = _log(1.0 - c) - np.log(node.N)
        groups.append((node.N, a + local_log_sum, local_sign, 2 * a + local_dev))
    if not node.is_leaf:
        b = _log(c)
        for child in (node.left, node.right):
            if child.M:
                sign = 1.0 if attr_sign is None else getattr(child, attr_sign)
                groups.append((child.M, b + getattr(child, attr_sum), sign,
                               2 * b + getattr(child, attr_dev)))
    if not groups:
        return -np.inf
    log_mean = log_total - math.log(M)
    terms = []
    for n, log_sum, sign, dev in groups:
        gap = _log_abs_diff(log_sum - math.log(n), sign, log_mean, total_sign)
        terms.extend((dev, math.log(n) + 2 * gap))
    return _lse(terms)


def propagate_dev2(node: Node):
    s1, _, sf, sign, _, dev, devf = node.local_sums()
    node.log_dev2 = _propagate_dev2(node, s1, 1.0, dev, "log_omega", None, "log_dev2",
                                    node.log_omega, 1.0)
    node.log_dev2f = _propagate_dev2(node, sf, sign, devf, "log_omega_f", "omega_f_sign",
                                     "log_dev2f", node.log_omega_f, node.omega_f_sign)


def _log_variance(M: int, log_dev2: float) -> float:
    # M zeta^2 - omega^2 = M^2 * sum (a_m - omega / M)^2
    if M < 2:
        return np.inf
    return float(2 * np.log(M) - np.log(M - 1) + log_dev2)


def node_log_sigma2(node: Node) -> float:
    """log of the Bessel-corrected single-traversal weight variance.

    ``-inf`` for zero variance; ``+inf`` when ``M < 2``.
    """
    return _log_variance(node.M, node.log_dev2)


def node_sigma2(node: Node) -> float:
    return float(np.exp(node_log_sigma2(node)))


def node_log_s2(node: Node) -> float:
    """log of the ``w * f`` analogue of the weight variance."""
    return _log_variance(node.M, node.log_dev2f)


def node_ess(node: Node) -> float:
    if node.log_omega == -np.inf:
        return 0.0
    return float(np.exp(2 * node.log_omega - node.log_zeta2_m))


def update_node(node: Node, lam: float):
    """Recompute every propagated statistic of ``node`` from its children."""
    if node.is_leaf:
        node.M = node.N
        node.leaf_count, node.leaf_depth_sum = 1, node.depth
    else:
        node.M = node.N + node.left.M + node.right.M
        node.leaf_count = node.left.leaf_count + node.right.leaf_count
        node.leaf_depth_sum = node.left.leaf_depth_sum + node.right.leaf_depth_sum
    node.c = child_preference(node, lam)
    propagate_omega(node)
    propagate_zeta(node)
    _propagate_integrand(node)
    propagate_dev2(node)


# ---------------------------------------------------------------------------


class InferenceTree:
    """Hierarchical partition of ``[0, 1]^dim`` with combined estimates.

    ``lam`` is the child-preference base; ``lookahead`` and ``log_w_gap``
    parameterize the exploration probabilities.
    """

    def __init__(self, dim: int, lam: float = 1.2, lookahead: int = 1000, log_w_gap: float = 10.0):
        if lam < 1:
            raise ValueError("lam must be >= 1")
        self.dim = dim
        self.lam = float(lam)
        self.lookahead = int(lookahead)
        self.log_w_gap = float(log_w_gap)
        self.root = Node(0, HyperRect.unit(dim), 0)
        self.nodes: list[Node] = [self.root]
        # max over all runs of (log w - log volume); None until the first run
        self.log_w_ref: float | None = None

    # -- structure ---------------------------------------------------------

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.is_leaf]

    def iter_preorder(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def iter_postorder(self):
        return reversed(list(self._reverse_postorder()))

    def _reverse_postorder(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.left)
                stack.append(node.right)

    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes)

    @property
    def n_leaves(self) -> int:
        return self.root.leaf_count

    # -- mutation ----------------------------------------------------------

    def add_runs(self, node: Node, runs) -> bool:
        """Append runs to ``node`` and propagate. Returns whether the
        exploration threshold moved."""
        node.add_runs(runs)
        changed = self.observe_runs(node, runs)
        self.propagate_from(node, refresh_all_ps=changed)
        return changed

    def split(self, node: Node, dim: int, point: float, left_runs, right_runs) -> bool:
        """Turn leaf ``node`` into an internal node with two initialized children."""
        from .reparam import split_rect

        if not node.is_leaf:
            raise ValueError("only leaves can be split")
        lrect, rrect = split_rect(node.rect, dim, point)
        node.left = Node(len(self.nodes), lrect, node.depth + 1, node)
        node.right = Node(len(self.nodes) + 1, rrect, node.depth + 1, node)
        self.nodes.extend([node.left, node.right])
        node.split_dim, node.split_point = int(dim), float(point)
        node.left.add_runs(left_runs)
        node.right.add_runs(right_runs)
        changed = self.observe_runs(node.left, left_runs)
        changed = self.observe_runs(node.right, right_runs) or changed
        update_node(node.left, self.lam)
        update_node(node.right, self.lam)
        self.refresh_ps(node.left)
        self.refresh_ps(node.right)
        self.propagate_from(node, refresh_all_ps=changed)
        return changed

    def observe_runs(self, node: Node, runs) -> bool:
        lv = node.log_volume
        best = max((r.log_w - lv for r in runs), default=-np.inf)
        if best > -np.inf and (self.log_w_ref is None or best > self.log_w_ref):
            self.log_w_ref = float(best)
            return True
        return False

    def propagate_from(self, node: Node, refresh_all_ps: bool = False):
        """Update ``node`` and all its ancestors (bottom-up)."""
        cur = node
        while cur is not None:
            update_node(cur, self.lam)
            if not refresh_all_ps:
                self.refresh_ps(cur)
            cur = cur.parent
        if refresh_all_ps:
            self.refresh_all_ps()

    def recompute_all(self):
        for node in self.iter_postorder():
            update_node(node, self.lam)
        self.refresh_all_ps()

    # -- exploration probabilities -----------------------------------------

    def threshold(self, node: Node) -> float | None:
        if self.log_w_ref is None:
            return None
        return self.log_w_ref + node.log_volume

    def local_exceed_prob(self, node: Node) -> float | None:
        node.local_sums()
        th = self.threshold(node)
        if node.fit is None or th is None:
            return None
        return logweight.prob_exceed_given_none(node.fit, th, self.log_w_gap, node.N, self.lookahead)

    def refresh_ps(self, node: Node):
        local = logweight.leaf_term(self.local_exceed_prob(node), node_ess(node))
        if node.is_leaf:
            node.ps = local
        else:
            node.ps = logweight.combine_ps(node.c, local, node.left.ps, node.right.ps)

    def refresh_all_ps(self):
        for node in self.iter_postorder():
            self.refresh_ps(node)

    # -- estimates ---------------------------------------------------------

    @property
    def log_ml(self) -> float:
        return self.root.log_omega

    @property
    def ess(self) -> float:
        return node_ess(self.root)

    def weighted_runs(self):
        """Yield ``(node, run, log_factor)`` for every stored run.

        A sample's combination weight is ``log_factor + sample_log_w``:
        the product of the ``c`` of the node's strict ancestors, times
        ``1 - c`` of the node, divided by ``N`` and by the run's sample count.
        """
        stack = [(self.root, 0.0)]
        while stack:
            node, log_k = stack.pop()
            if node.N:
                base = log_k + _log(1.0 - node.c) - np.log(node.N)
                for run in node.runs:
                    yield node, run, base - np.log(run.n_samples)
            if not node.is_leaf:
                lc = log_k + _log(node.c)
                stack.append((node.right, lc))
                stack.append((node.left, lc))

    def _flat_log_weights(self):
        """``(x, log weight, owner id)`` over all stored samples."""
        xs, logws, owners = [], [], []
        for node, run, lf in self.weighted_runs():
            xs.append(run.x)
            logws.append(lf + run.sample_log_w)
            owners.append(np.full(run.n_samples, node.id))
        if not xs:
            return np.empty((0, self.dim)), np.empty(0), np.empty(0, dtype=int)
        return np.concatenate(xs), np.concatenate(logws), np.concatenate(owners)

    def flatten_measure(self):
        """``(x, weights)`` of the root empirical measure, weights summing to one."""
        x, logw, _ = self._flat_log_weights()
        if logw.size == 0:
            return x, logw
        total = logsumexp(logw)
        if total == -np.inf:
            raise ValueError("no posterior mass located")
        return x, np.exp(logw - total)

    def estimate(self, f) -> float:
        """Self-normalized estimate of ``E[f(x)]`` under the target."""
        if self.root.log_omega == -np.inf:
            raise ValueError("no posterior mass located")
        x, w = self.flatten_measure()
        fx = np.asarray(f(x), dtype=float)
        return float(np.tensordot(w, fx, axes=(0, 0)))

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            nodes.append({
                "id": n.id,
                "parent": None if n.parent is None else n.parent.id,
                "depth": n.depth,
                "rect": n.rect.to_dict(),
                "split": None if n.is_leaf else {"dim": n.split_dim, "point": n.split_point,
                                                 "left": n.left.id, "right": n.right.id},
                "stats": {
                    "M": n.M, "N": n.N, "c": n.c,
                    "log_omega": _enc(n.log_omega),
                    "log_zeta2_over_M": _enc(n.log_zeta2_m),
                    "ps": n.ps,
                    "ess": node_ess(n),
                },
                "runs": [r.to_dict() for r in n.runs],
            })
        return {
            "format": "inference-tree",
            "version": FORMAT_VERSION,
            "dim": self.dim,
            "lam": self.lam,
            "lookahead": self.lookahead,
            "log_w_gap": self.log_w_gap,
            "log_w_ref": None if self.log_w_ref is None else _enc(self.log_w_ref),
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceTree":
        if d.get("format") != "inference-tree" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported tree document")
        tree = cls(d["dim"], d["lam"], d["lookahead"], d["log_w_gap"])
        tree.log_w_ref = None if d["log_w_ref"] is None else _dec(d["log_w_ref"])
        by_id: dict[int, Node] = {}
        tree.nodes = []
        for nd in sorted(d["nodes"], key=lambda n: n["id"]):
            parent = None if nd["parent"] is None else by_id[nd["parent"]]
            node = Node(nd["id"], HyperRect.from_dict(nd["rect"]), nd["depth"], parent)
            node.add_runs([RunResult.from_dict(r) for r in nd["runs"]])
            by_id[node.id] = node
            tree.nodes.append(node)
        for nd in d["nodes"]:
            if nd["split"] is not None:
                node = by_id[nd["id"]]
                node.split_dim, node.split_point = nd["split"]["dim"], nd["split"]["point"]
                node.left, node.right = by_id[nd["split"]["left"]], by_id[nd["split"]["right"]]
        tree.root = by_id[0]
        tree.recompute_all()
        return tree

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "InferenceTree":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _enc(v: float):
    v = float(v)
    if v == -np.inf:
        return "-inf"
    if v == np.inf:
        return "inf"
    return v


def _dec(v) -> float:
    return float(v)
