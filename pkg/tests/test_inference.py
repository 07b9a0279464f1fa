import numpy as np
import pytest

from oracles import brute_force, forward_backward, random_instance, viterbi
from thmm.corpus import DepTree
from thmm.inference import (Forest, NumericalError, ProjectionConfig, beliefs,
                            forest_log_likelihoods, forest_posteriors, joint_log_prob,
                            max_product_decode, tree_log_likelihood, upward_pass)
from thmm.model import ConfigError, ModelMeta, ModelParams, init_random, uniform_params


def test_single_node_hand_arithmetic(backend):
    meta = ModelMeta(2, 2, 1)
    p = ModelParams(meta, np.full((1, 2, 2), 0.5), np.array([[[0.2, 0.8], [0.8, 0.2]]]),
                    np.array([[0.5, 0.5]]))
    tree = DepTree.from_arrays([0], [0], [0])
    assert upward_pass(tree, p).log_likelihood == pytest.approx(np.log(0.5), abs=1e-15)


def test_uniform_loglik_and_posteriors(backend, example_tree):
    p = uniform_params(ModelMeta(3, 7, 4))
    bt = beliefs(example_tree, p)
    assert bt.log_likelihood == pytest.approx(6 * np.log(1 / 7), abs=1e-12)
    np.testing.assert_allclose(bt.node_posteriors, 1 / 3, atol=1e-15)
    assert tree_log_likelihood(DepTree.from_arrays([2], [1], [0]), p) == pytest.approx(
        np.log(1 / 7))


def test_uniform_decodes_to_zero(backend, example_tree):
    assert max_product_decode(example_tree, uniform_params(ModelMeta(4, 7, 4))).tolist() == [0] * 6


def test_one_hot_evidence(backend, example_tree):
    # word w is emitted only by state w % N
    N, V, S = 3, 6, 4
    emis = np.zeros((S, N, V))
    for w in range(V):
        emis[:, w % N, w] = 1.0
    emis /= emis.sum(-1, keepdims=True)
    base = init_random(ModelMeta(N, V, S, seed=2))
    p = ModelParams(base.meta, base.trans, emis, base.root)
    forced = example_tree.words % N
    bt = beliefs(example_tree, p)
    np.testing.assert_allclose(bt.node_posteriors, np.eye(N)[forced], atol=1e-12)
    assert max_product_decode(example_tree, p).tolist() == forced.tolist()


@pytest.mark.parametrize("seed", range(150))
def test_matches_enumeration(backend, seed):
    tree, p = random_instance(np.random.default_rng(seed))
    ll, nodes, edges, best, best_lp = brute_force(tree, p)
    bt = beliefs(tree, p)
    assert bt.log_likelihood == pytest.approx(ll, abs=1e-9)
    np.testing.assert_allclose(bt.node_posteriors, nodes, atol=1e-9)
    np.testing.assert_allclose(bt.edge_posteriors(tree, p), edges, atol=1e-9)
    states = max_product_decode(tree, p)
    assert joint_log_prob(tree, p, states) == pytest.approx(best_lp, abs=1e-9)
    assert states.tolist() == best.tolist()


@pytest.mark.parametrize("seed", range(30))
def test_edge_posteriors_consistent(backend, seed):
    tree, p = random_instance(np.random.default_rng(1000 + seed), K_max=8, N_max=5)
    bt = beliefs(tree, p)
    np.testing.assert_allclose(bt.node_posteriors.sum(1), 1.0, atol=1e-8)
    for k in range(len(tree)):
        e = bt.edge_posterior(k, tree, p)
        assert e.sum() == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_allclose(e.sum(1), bt.node_posteriors[k], atol=1e-8)
        if tree.parents[k]:
            np.testing.assert_allclose(e.sum(0), bt.node_posteriors[tree.parents[k] - 1],
                                       atol=1e-8)


@pytest.mark.parametrize("seed", range(25))
def test_chain_equals_forward_backward(backend, seed):
    rng = np.random.default_rng(seed)
    K, N, V = int(rng.integers(1, 30)), int(rng.integers(1, 6)), 8
    p = init_random(ModelMeta(N, V, 1, seed))
    words = rng.integers(0, V, K)
    tree = DepTree.from_arrays(words, np.zeros(K), np.arange(K))
    ll, gamma = forward_backward(words, p.root[0], p.trans[0], p.emis[0])
    bt = beliefs(tree, p)
    assert bt.log_likelihood == pytest.approx(ll, abs=1e-9)
    np.testing.assert_allclose(bt.node_posteriors, gamma, atol=1e-9)
    path = max_product_decode(tree, p)
    assert joint_log_prob(tree, p, path) == pytest.approx(
        joint_log_prob(tree, p, viterbi(words, p.root[0], p.trans[0], p.emis[0])), abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_projection_keep_all_is_identity(backend, seed):
    tree, p = random_instance(np.random.default_rng(seed), K_max=8)
    exact = beliefs(tree, p)
    full = beliefs(tree, p, ProjectionConfig(True, p.N))
    assert full.log_likelihood == exact.log_likelihood
    np.testing.assert_array_equal(full.up, exact.up)
    np.testing.assert_array_equal(full.node_posteriors, exact.node_posteriors)
    np.testing.assert_array_equal(full.edge_weights, exact.edge_weights)


def test_projection_keeps_k(backend, example_tree):
    p = init_random(ModelMeta(8, 7, 4, seed=1))
    bt = beliefs(example_tree, p, ProjectionConfig(True, 2))
    assert ((bt.up > 0).sum(axis=1) <= 2).all()
    np.testing.assert_allclose(bt.node_posteriors.sum(1), 1.0, atol=1e-12)
    assert ((bt.node_posteriors > 0) <= (bt.up > 0)).all()
    for k in range(len(example_tree)):
        e = bt.edge_posterior(k, example_tree, p)
        np.testing.assert_allclose(e.sum(1), bt.node_posteriors[k], atol=1e-12)
        if example_tree.parents[k]:
            np.testing.assert_allclose(
                e.sum(0), bt.node_posteriors[example_tree.parents[k] - 1], atol=1e-12)


def test_projection_range_checked():
    with pytest.raises(ConfigError):
        ProjectionConfig(True, 0).active_k(4)
    with pytest.raises(ConfigError):
        ProjectionConfig(True, 5).active_k(4)


@pytest.mark.parametrize("seed", range(20))
def test_sibling_order_irrelevant(backend, seed):
    # same tree, nodes renumbered so siblings appear in another order
    tree, p = random_instance(np.random.default_rng(seed), K_max=7)
    K = len(tree)
    perm = np.random.default_rng(seed + 99).permutation(K)  # new index of old node
    heads = np.zeros(K, dtype=np.int64)
    words = np.zeros(K, dtype=np.int64)
    funcs = np.zeros(K, dtype=np.int64)
    for old in range(K):
        h = tree.parents[old]
        heads[perm[old]] = 0 if h == 0 else perm[h - 1] + 1
        words[perm[old]] = tree.words[old]
        funcs[perm[old]] = tree.funcs[old]
    other = DepTree.from_arrays(words, funcs, heads)
    a, b = beliefs(tree, p), beliefs(other, p)
    assert a.log_likelihood == pytest.approx(b.log_likelihood, abs=1e-12)
    np.testing.assert_allclose(a.node_posteriors, b.node_posteriors[perm], atol=1e-12)
    assert max_product_decode(tree, p).tolist() == max_product_decode(other, p)[perm].tolist()


def test_copied_function_slice_changes_nothing(backend, example_tree):
    p = init_random(ModelMeta(3, 7, 4, seed=4))
    q = ModelParams(ModelMeta(3, 7, 5, seed=4), np.concatenate([p.trans, p.trans[:1]]),
                    np.concatenate([p.emis, p.emis[:1]]), np.concatenate([p.root, p.root[:1]]))
    assert tree_log_likelihood(example_tree, q) == tree_log_likelihood(example_tree, p)


def test_dimension_mismatch(backend, example_tree):
    with pytest.raises(ConfigError):
        upward_pass(example_tree, init_random(ModelMeta(2, 3, 4)))
    with pytest.raises(ConfigError):
        upward_pass(example_tree, init_random(ModelMeta(2, 7, 2)))


def test_zero_mass_raises(backend):
    p = uniform_params(ModelMeta(2, 3, 1))
    p.emis[0, :, 2] = 0.0
    p.emis[0] /= p.emis[0].sum(-1, keepdims=True)
    with pytest.raises(NumericalError, match="node 2"):
        upward_pass(DepTree.from_arrays([0, 2], [0, 0], [0, 1]), p)


def test_long_tree_no_underflow(backend):
    # 400-node star: unscaled products would underflow
    K = 400
    p = init_random(ModelMeta(4, 50, 1, seed=0))
    tree = DepTree.from_arrays(np.arange(K) % 50, np.zeros(K), [0] + [1] * (K - 1))
    bt = beliefs(tree, p)
    assert np.isfinite(bt.log_likelihood) and bt.log_likelihood < -K
    np.testing.assert_allclose(bt.node_posteriors.sum(1), 1.0, atol=1e-12)


def test_forest_matches_single_tree(backend, small_corpus, small_generator):
    trees = small_corpus[:20]
    lls = forest_log_likelihoods(Forest.pack(trees), small_generator)
    np.testing.assert_allclose(lls, [tree_log_likelihood(t, small_generator) for t in trees],
                               atol=1e-12)
    posts, total = forest_posteriors(Forest.pack(trees), small_generator)
    assert total == pytest.approx(lls.sum(), abs=1e-9)
    np.testing.assert_allclose(posts[:len(trees[0])],
                               beliefs(trees[0], small_generator).node_posteriors, atol=1e-12)


def test_backends_agree(small_corpus, small_generator):
    from thmm import kernels
    out = {}
    for name in sorted(kernels.BACKENDS):
        prev = kernels.set_backend(name)
        try:
            out[name] = forest_posteriors(Forest.pack(small_corpus), small_generator,
                                          ProjectionConfig(True, 2))
        finally:
            kernels.set_backend(prev.name)
    if len(out) == 2:
        (pa, la), (pb, lb) = out.values()
        np.testing.assert_allclose(pa, pb, atol=1e-12)
        assert la == pytest.approx(lb, rel=1e-12)
