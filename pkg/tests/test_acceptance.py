"""Acceptance criteria, one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -s`` (or the whole suite; the lines are
repeated in the terminal summary), or ``python tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import brute_force, forward_backward, random_instance  # noqa: E402
from thmm import sample_data  # noqa: E402
from thmm.cli import main as cli_main  # noqa: E402
from thmm.corpus import (CorpusConfig, DepTree, build_corpus, parse_conll,  # noqa: E402
                         DEFAULT_EXCLUDED_LABELS)
from thmm.inference import (EXACT, Forest, ProjectionConfig, beliefs,  # noqa: E402
                            max_product_decode, tree_log_likelihood)
from thmm.model import (BrownClusterMap, ModelMeta, init_brown, init_random,  # noqa: E402
                        transition_entropy, validate)
from thmm.representations import post_type  # noqa: E402
from thmm.serialize import save_model  # noqa: E402
from thmm.synthetic import (block_emissions, dirichlet_params, sample_corpus,  # noqa: E402
                            to_raw)
from thmm.training import (TrainConfig, estep, heldout_log_likelihood,  # noqa: E402
                           split_heldout, split_states, train, train_batch_em,
                           train_stepwise_em)

RESULTS: list[str] = []


def report(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} -- {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def synthetic_generator(seed, N=4, V=20, S=3, function_perms=False):
    rng = np.random.default_rng(seed)
    meta = ModelMeta(N, V, S)
    gen = dirichlet_params(meta, rng, trans_conc=0.5)
    if function_perms:
        # each function routes parent states through its own permutation
        for l in range(S):
            gen.trans[l] = 0.85 * np.eye(N)[rng.permutation(N)] + 0.15 / N
    gen.emis = block_emissions(meta, rng, 0.9)
    return gen, rng


def unlabeled(trees):
    return [DepTree.from_arrays(t.words, np.zeros(len(t)), t.parents, t.sentence_id)
            for t in trees]


def test_c1_oracle_inference():
    t0 = time.perf_counter()
    n, worst = 1000, 0.0
    decode_ok = True
    for seed in range(n):
        tree, p = random_instance(np.random.default_rng(10_000 + seed))
        ll, nodes, edges, best, best_lp = brute_force(tree, p)
        bt = beliefs(tree, p)
        worst = max(worst, abs(bt.log_likelihood - ll),
                    np.abs(bt.node_posteriors - nodes).max(),
                    np.abs(bt.edge_posteriors(tree, p) - edges).max())
        decode_ok &= max_product_decode(tree, p).tolist() == best.tolist()
    secs = time.perf_counter() - t0
    report(1, "oracle inference", worst < 1e-9 and decode_ok and secs < 60,
           f"{n} instances, max abs error {worst:.2e}, decode exact={decode_ok}, "
           f"{secs:.1f}s")


def test_c2_em_monotone():
    t0 = time.perf_counter()
    worst = 0.0
    gen, rng = synthetic_generator(2)
    trees, _ = sample_corpus(gen, 200, rng)
    cfg = TrainConfig(mode="batch", epochs=20, projection=False, heldout_fraction=0)
    for seed in range(10):
        trace = np.array(train_batch_em(trees, init_random(ModelMeta(4, 20, 3, seed)),
                                        cfg).trace)
        drop = (trace[:-1] - trace[1:]) / np.abs(trace[:-1])
        worst = max(worst, drop.max())
    secs = time.perf_counter() - t0
    report(2, "EM monotonicity", worst <= 1e-8 and secs < 60,
           f"10 seeds x 20 iterations, largest relative decrease {max(worst, 0):.2e}, "
           f"{secs:.1f}s")


def matched_tv(est, true):
    """Greedy one-to-one state matching on function-averaged TV distance."""
    N = true.shape[1]
    d = 0.5 * np.abs(est[:, :, None, :] - true[:, None, :, :]).sum(-1).mean(0)
    out, used_e, used_t = [], set(), set()
    for idx in np.argsort(d, axis=None, kind="stable"):
        i, j = divmod(int(idx), N)
        if i not in used_e and j not in used_t:
            used_e.add(i)
            used_t.add(j)
            out.append(d[i, j])
    return np.array(out)


def test_c3_recovery():
    t0 = time.perf_counter()
    passes, details = 0, []
    clusters = BrownClusterMap.from_pairs([(w, w % 4) for w in range(20)])
    for seed in range(5):
        gen, rng = synthetic_generator(300 + seed)
        trees, _ = sample_corpus(gen, 2000, rng)
        train_trees, held = split_heldout(trees, 0.1, seed)
        p0 = init_brown(ModelMeta(4, 20, 3, seed), clusters, 1000.0)
        cfg = TrainConfig(epochs=10, minibatch_size=100, projection=False,
                          heldout_fraction=0, seed=seed)
        params = train(train_trees, p0, cfg).params
        forest = Forest.pack(held)
        ll, ref = heldout_log_likelihood(forest, params), heldout_log_likelihood(forest, gen)
        gap = abs(ll - ref) / abs(ref)
        tv = matched_tv(params.emis, gen.emis)
        ok = gap < 0.05 and (tv < 0.15).sum() >= 3
        passes += ok
        details.append(f"gap {gap:.3f} tv<=.15 on {(tv < 0.15).sum()}/4")
    secs = time.perf_counter() - t0
    report(3, "model recovery", passes >= 3 and secs < 300,
           f"{passes}/5 seeds pass ({'; '.join(details)}), {secs:.1f}s")


def test_c4_degenerate_equivalences(tmp_path):
    # (a) labels present but none kept, versus the unlabeled configuration
    gen, rng = synthetic_generator(4)
    trees, _ = sample_corpus(gen, 300, rng, min_len=5, max_len=10)
    forms = [f"w{i}" for i in range(20)]
    raw = [to_raw(t, forms, ["nmod", "sub", "obj"]) for t in trees]
    a_corpus = build_corpus(raw, CorpusConfig(min_count=1, top_k=0))
    b_corpus = build_corpus(raw, CorpusConfig(min_count=1, top_k=5,
                                              excluded=frozenset({"nmod", "sub", "obj"})))
    cfg = TrainConfig(minibatch_size=50, epochs=2, keep_k=2, heldout_fraction=0.1)
    outs = []
    for i, corpus in enumerate((a_corpus, b_corpus)):
        meta = ModelMeta(8, len(corpus.vocab), corpus.inventory.size, 3)
        save_model(tmp_path / f"{i}", train(corpus.trees, init_random(meta), cfg).params)
        outs.append((corpus.inventory.size, (tmp_path / f"{i}").read_bytes()))
    a_ok = outs[0][0] == outs[1][0] == 1 and outs[0][1] == outs[1][1]

    # (b) chain topology against flat forward-backward
    b_err = 0.0
    for seed in range(50):
        r = np.random.default_rng(seed)
        K, N = int(r.integers(1, 40)), int(r.integers(1, 7))
        p = init_random(ModelMeta(N, 10, 1, seed))
        words = r.integers(0, 10, K)
        bt = beliefs(DepTree.from_arrays(words, np.zeros(K), np.arange(K)), p)
        ll, gamma = forward_backward(words, p.root[0], p.trans[0], p.emis[0])
        b_err = max(b_err, abs(bt.log_likelihood - ll), np.abs(bt.node_posteriors - gamma).max())

    # (c) keep-k = N
    c_ok = True
    for seed in range(200):
        tree, p = random_instance(np.random.default_rng(20_000 + seed), K_max=8)
        e, f = beliefs(tree, p, EXACT), beliefs(tree, p, ProjectionConfig(True, p.N))
        c_ok &= (e.log_likelihood == f.log_likelihood
                 and np.array_equal(e.node_posteriors, f.node_posteriors)
                 and np.array_equal(e.edge_weights, f.edge_weights))
    report(4, "degenerate equivalences", a_ok and b_err < 1e-9 and c_ok,
           f"(a) S=1 bit-identical={a_ok}, (b) chain max error {b_err:.2e}, "
           f"(c) keep-k=N bit-identical={c_ok}")


def test_c5_entropy_direction():
    wins, pairs = 0, []
    for seed in range(10):
        gen, rng = synthetic_generator(500 + seed, function_perms=True)
        trees, _ = sample_corpus(gen, 500, rng)
        cfg = TrainConfig(mode="batch", epochs=30, projection=False, heldout_fraction=0,
                          seed=seed)
        syn = train(trees, init_random(ModelMeta(4, 20, 3, seed)), cfg).params
        flat = train(unlabeled(trees), init_random(ModelMeta(4, 20, 1, seed)), cfg).params
        hs, hf = transition_entropy(syn), transition_entropy(flat)
        wins += hs < hf
        pairs.append(f"{hs:.2f}/{hf:.2f}")
    report(5, "entropy direction", wins >= 8,
           f"synfunc lower in {wins}/10 seeds (bits synfunc/S=1: {' '.join(pairs)})")


def test_c6_stepwise_batch_consistency():
    gen, rng = synthetic_generator(6)
    trees, _ = sample_corpus(gen, 200, rng)
    p0 = init_random(ModelMeta(4, 20, 3, seed=6))
    step = train_stepwise_em(trees, p0, TrainConfig(minibatch_size=len(trees), epochs=1,
                                                    projection=False, heldout_fraction=0,
                                                    step_offset=1))
    stats, _ = estep(Forest.pack(trees), p0)
    batch = train_batch_em(trees, p0, TrainConfig(mode="batch", epochs=1, projection=False,
                                                  heldout_fraction=0))
    stats_ok = step.state.mu.equals(stats)
    diff = max(np.abs(getattr(step.params, n) - getattr(batch.params, n)).max()
               for n in ("trans", "emis", "root"))
    report(6, "stepwise/batch consistency", stats_ok and diff <= 1e-12,
           f"statistics bitwise equal={stats_ok}, max parameter difference {diff:.1e}")


def test_c7_splitting():
    gen, rng = synthetic_generator(7)
    trees, _ = sample_corpus(gen, 300, rng)
    p = init_random(ModelMeta(4, 20, 3, seed=7))
    q = split_states(p, 1e-6, seed=7)
    worst = max(abs(tree_log_likelihood(t, q) - tree_log_likelihood(t, p)) for t in trees)
    ok = worst < 1e-4 and q.N == 2 * p.N and validate(q).ok
    report(7, "state splitting", ok,
           f"N {p.N} -> {q.N}, max log-likelihood change {worst:.1e}, "
           f"validate {validate(q)}")


def test_c8_post_type_contract():
    with open(sample_data(), encoding="utf-8") as f:
        corpus = build_corpus(parse_conll(f), CorpusConfig(min_count=1, top_k=5,
                                                           excluded=DEFAULT_EXCLUDED_LABELS))
    meta = ModelMeta(16, len(corpus.vocab), corpus.inventory.size, 8)
    params = train(corpus.trees, init_random(meta),
                   TrainConfig(epochs=1, minibatch_size=100, heldout_fraction=0)).params
    table = post_type(corpus.trees, params)
    V, N = meta.n_words, meta.n_states
    sums, counts = np.zeros((V, N)), np.zeros(V)
    lo, hi = np.full((V, N), np.inf), np.full((V, N), -np.inf)
    for t in corpus.trees:
        post = beliefs(t, params).node_posteriors
        for k, w in enumerate(t.words):
            sums[w] += post[k]
            counts[w] += 1
            lo[w] = np.minimum(lo[w], post[k])
            hi[w] = np.maximum(hi[w], post[k])
    seen = counts > 0
    err = np.abs(table.vectors[seen] - sums[seen] / counts[seen, None]).max()
    hull = bool((table.vectors[seen] >= lo[seen] - 1e-12).all()
                and (table.vectors[seen] <= hi[seen] + 1e-12).all())
    report(8, "Post-Type contract", err < 1e-10 and hull,
           f"{int(seen.sum())} types, max deviation from direct average {err:.1e}, "
           f"convex-hull bounds hold={hull}")


def test_c9_reproducible_threads(tmp_path):
    outs = []
    for threads in (1, 4):
        path = tmp_path / f"m{threads}.thmm"
        code = cli_main(["train", "--corpus", sample_data(), "--model-out", str(path),
                         "--states", "16", "--batch-size", "100", "--keep-k", "4",
                         "--seed", "9", "--threads", str(threads), "--log-level", "WARNING"])
        assert code == 0
        outs.append(path.read_bytes())
    same = outs[0] == outs[1]
    report(9, "reproducibility", same,
           f"model files at 1 and 4 threads byte-identical={same} ({len(outs[0])} bytes)")


if __name__ == "__main__":
    import tempfile
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
