import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _trees import oracle_c, oracle_stats, random_run, random_tree
from inftree import logweight
from inftree.tree import (InferenceTree, node_ess, node_log_s2, node_log_sigma2, node_sigma2)


def _check_node(node, lam, rtol):
    want = oracle_stats(node, lam)
    assert node.M == want["M"]
    assert np.isclose(node.c, oracle_c(node, lam), rtol=rtol, atol=0)
    assert np.isclose(np.exp(node.log_omega), want["omega"], rtol=rtol)
    assert np.isclose(np.exp(node.log_zeta2_m) * node.M, want["zeta2"], rtol=rtol)
    assert np.isclose(node_ess(node), want["ess"], rtol=rtol)
    assert np.isclose(node.omega_f_sign * np.exp(node.log_omega_f), want["omega_f"], rtol=rtol, atol=0)
    if node.M > 1:
        assert np.isclose(node_sigma2(node), want["sigma2"], rtol=rtol, atol=0)
        assert np.isclose(np.exp(node_log_s2(node)), want["s2"], rtol=rtol, atol=0)
    else:
        assert node_log_sigma2(node) == np.inf


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(1.0, 2.0))
def test_propagation_matches_flattening(seed, lam):
    tree = random_tree(np.random.default_rng(seed), lam=lam)
    for node in tree.nodes:
        _check_node(node, lam, 1e-10)


def test_leaf_statistics(rng):
    tree = InferenceTree(1)
    runs = [random_run(rng, 1) for _ in range(5)]
    tree.add_runs(tree.root, runs)
    w = np.exp([r.log_w for r in runs])
    assert np.isclose(np.exp(tree.log_ml), w.mean())
    assert np.isclose(tree.ess, w.sum() ** 2 / (w**2).sum())
    assert tree.root.c == 0.0


def test_single_run_variance_is_infinite(rng):
    tree = InferenceTree(1)
    tree.add_runs(tree.root, [random_run(rng, 1)])
    assert node_log_sigma2(tree.root) == np.inf


def test_equal_weights_give_zero_variance():
    from inftree.base_infer import RunResult

    tree = InferenceTree(1)
    runs = [RunResult(0.5, np.zeros((1, 1)), np.full((1, 1), 0.5), np.array([0.5]), 1) for _ in range(4)]
    tree.add_runs(tree.root, runs)
    assert node_sigma2(tree.root) < 1e-12
    assert np.isclose(tree.ess, 4.0)


def test_child_preference_example():
    # N = 10, M = 30, one split level below: c = 1.2 * 20 / (10 + 1.2 * 20)
    rng = np.random.default_rng(0)
    tree = InferenceTree(1, lam=1.2)
    tree.add_runs(tree.root, [random_run(rng, 1) for _ in range(10)])
    tree.split(tree.root, 0, 0.5, [random_run(rng, 1) for _ in range(10)],
               [random_run(rng, 1) for _ in range(10)])
    assert np.isclose(tree.root.c, 24 / 34)


def test_child_preference_grows_with_child_runs(rng):
    tree = InferenceTree(1)
    tree.add_runs(tree.root, [random_run(rng, 1) for _ in range(8)])
    tree.split(tree.root, 0, 0.5, [random_run(rng, 1)], [random_run(rng, 1)])
    cs = [tree.root.c]
    for _ in range(20):
        tree.add_runs(tree.root.left, [random_run(rng, 1)])
        cs.append(tree.root.c)
    assert np.all(np.diff(cs) > 0) and cs[-1] < 1


def test_flatten_measure_matches_oracle(rng):
    tree = random_tree(rng, n_ops=8)
    x, w = tree.flatten_measure()
    assert np.isclose(w.sum(), 1.0)
    # oracle: per-sample weights = k_m * within-run weight / samples per run
    expect = []

    def walk(n, k):
        c = oracle_c(n, tree.lam)
        for r in n.runs:
            expect.extend(k * (1 - c) / n.N * np.exp(r.sample_log_w) / r.n_samples)
        if not n.is_leaf:
            walk(n.left, k * c)
            walk(n.right, k * c)

    walk(tree.root, 1.0)
    expect = np.asarray(expect)
    # the sum of flattened sample weights is the root estimate
    assert np.isclose(expect.sum(), np.exp(tree.log_ml), rtol=1e-10)
    np.testing.assert_allclose(np.sort(w), np.sort(expect / expect.sum()), rtol=1e-10)


def test_estimate_requires_mass():
    tree = InferenceTree(1)
    with pytest.raises(ValueError):
        tree.estimate(lambda x: x)


def test_leaves_partition_after_random_growth(rng):
    for _ in range(20):
        tree = random_tree(rng, dim=3)
        vols = [np.exp(n.log_volume) for n in tree.leaves()]
        assert np.isclose(sum(vols), 1.0)
        z = rng.random((300, 3))
        assert np.all(np.sum([n.rect.contains(z) for n in tree.leaves()], axis=0) == 1)


def test_threshold_and_ps(rng):
    tree = random_tree(rng, n_ops=6)
    ref = max(r.log_w - n.log_volume for n in tree.nodes for r in n.runs)
    assert np.isclose(tree.log_w_ref, ref)
    for n in tree.iter_postorder():
        local = logweight.leaf_term(tree.local_exceed_prob(n), node_ess(n))
        want = local if n.is_leaf else logweight.combine_ps(n.c, local, n.left.ps, n.right.ps)
        assert np.isclose(n.ps, want)
        assert 0.0 <= n.ps <= 1.0


def test_round_trip_preserves_statistics(rng, tmp_path):
    tree = random_tree(rng, n_ops=10)
    tree.save(tmp_path / "t.json")
    back = InferenceTree.load(tmp_path / "t.json")
    assert [n.id for n in back.nodes] == [n.id for n in tree.nodes]
    for a, b in zip(tree.nodes, back.nodes):
        assert a.log_omega == b.log_omega and a.log_zeta2_m == b.log_zeta2_m
        assert a.ps == b.ps and a.c == b.c and a.rect == b.rect
    assert back.log_w_ref == tree.log_w_ref


def test_bad_document_rejected():
    with pytest.raises(ValueError):
        InferenceTree.from_dict({"format": "other"})


def test_traversal_orders(rng):
    tree = random_tree(rng, n_ops=10)
    post = list(tree.iter_postorder())
    pre = list(tree.iter_preorder())
    assert post[-1] is tree.root and pre[0] is tree.root
    seen = set()
    for n in post:
        if not n.is_leaf:
            assert n.left.id in seen and n.right.id in seen
        seen.add(n.id)
    assert tree.max_depth() == max(n.depth for n in tree.leaves())
