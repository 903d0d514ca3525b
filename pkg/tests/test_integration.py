import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _trees import random_tree
from inftree.integration import estimate_integral, s_hat, tracked_integral, utility_int
from inftree.traversal import TraversalParams, constant, utility
from inftree.tree import node_sigma2


def _with_f_equal_one(tree):
    for n in tree.nodes:
        for r in n.runs:
            r.log_abs_wf, r.wf_sign = r.log_w, 1.0
        n._local_cache = None
    tree.recompute_all()
    return tree


def test_reduction_without_exploration(rng):
    tree = random_tree(rng, n_ops=10)
    p = TraversalParams(alpha=constant(0), beta=0.0)
    for n in tree.nodes:
        if n.parent is not None and n.M > 1 and n.parent.M > 1:
            assert np.isclose(utility_int(n, n.parent, n.sibling, p, 0.1),
                              s_hat(n) / (n.M * s_hat(n.parent)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_unit_integrand_ranks_like_inference_with_large_kappa(seed):
    tree = _with_f_equal_one(random_tree(np.random.default_rng(seed), n_ops=10))
    pi = TraversalParams(alpha=constant(0), beta=0.0, integration=True)
    pf = TraversalParams(delta=constant(0), alpha=constant(0), beta=0.0, kappa=1e12)
    for n in tree.nodes:
        if n.is_leaf or n.left.M < 2 or n.right.M < 2:
            continue
        if np.isclose(node_sigma2(n.left), node_sigma2(n.right), rtol=1e-6):
            continue
        a = utility_int(n.left, n, n.right, pi, 0.0) > utility_int(n.right, n, n.left, pi, 0.0)
        b = utility(n.left, n, n.right, pf, 0.0) > utility(n.right, n, n.left, pf, 0.0)
        assert a == b


def test_tracked_integral_matches_flattened_measure(rng):
    from inftree.base_infer import is_run
    from inftree.models import ConjugateGaussian
    from inftree.reparam import split_rect
    from inftree.tree import InferenceTree

    m = ConjugateGaussian([0.4, 0.1])
    f = lambda x: x[:, 0]
    tree = InferenceTree(1)
    tree.add_runs(tree.root, [is_run(m, tree.root.rect, 5, rng, integrand=f) for _ in range(6)])
    left, right = split_rect(tree.root.rect, 0, 0.4)
    tree.split(tree.root, 0, 0.4, [is_run(m, left, 5, rng, integrand=f) for _ in range(4)],
               [is_run(m, right, 5, rng, integrand=f) for _ in range(3)])
    assert np.isclose(tracked_integral(tree), estimate_integral(tree, f), rtol=1e-10)


def test_tracked_integral_needs_mass():
    from inftree.tree import InferenceTree

    with pytest.raises(ValueError):
        tracked_integral(InferenceTree(1))
