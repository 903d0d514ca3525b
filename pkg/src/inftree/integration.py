"""Known-integrand variant.

When the function ``f`` whose expectation we want is known up front, each run
also records ``mean(w * f)`` and the tree propagates the matching statistics.
Leaves are then allocated in proportion to ``s``, the standard deviation of
``w * f`` per traversal, with only the optimism boost for exploration.
"""

from __future__ import annotations

import numpy as np

from .tree import InferenceTree, Node, node_log_s2


def log_s_hat(node: Node) -> float:
    return 0.5 * node_log_s2(node)


def s_hat(node: Node) -> float:
    """Standard deviation of ``w * f`` per traversal; ``inf`` when ``M < 2``."""
    return float(np.exp(log_s_hat(node)))


def utility_int(child: Node, parent: Node, sibling: Node | None, params, rho: float) -> float:
    from .traversal import _ratio_pow, _unit, optimism

    alpha = _unit(params.alpha(rho))
    exploit = _ratio_pow(log_s_hat(child), log_s_hat(parent), 1.0 - alpha)
    boost = optimism(child, parent, params.beta_at(rho))
    return (exploit + boost) / max(child.M, 1)


def estimate_integral(tree: InferenceTree, f) -> float:
    """Self-normalized expectation of ``f`` from the tree's weighted samples."""
    return tree.estimate(f)


def tracked_integral(tree: InferenceTree) -> float:
    """Ratio of the propagated ``w * f`` and ``w`` estimates at the root."""
    root = tree.root
    if root.log_omega == -np.inf:
        raise ValueError("no posterior mass located")
    return float(root.omega_f_sign * np.exp(root.log_omega_f - root.log_omega))
