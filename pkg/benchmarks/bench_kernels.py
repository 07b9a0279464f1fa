"""Time the E-step and decoding kernels under the numba and numpy backends.

    python benchmarks/bench_kernels.py --trees 500 --states 16 64

Each backend runs once untimed (numba compilation) before the timed repeats.
Results from the two backends are checked against each other.
"""

import argparse
import time

import numpy as np

from thmm import kernels
from thmm.inference import Forest, ProjectionConfig, log_params, max_product_decode
from thmm.model import ModelMeta, init_random
from thmm.synthetic import dirichlet_params, sample_corpus
from thmm.training import estep


def corpus(n_trees, seed):
    rng = np.random.default_rng(seed)
    gen = dirichlet_params(ModelMeta(8, 200, 4), rng)
    trees, _ = sample_corpus(gen, n_trees, rng, min_len=5, max_len=40)
    return trees


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trees", type=int, default=500)
    ap.add_argument("--states", type=int, nargs="+", default=[16, 64])
    ap.add_argument("--keep-k", type=int, default=None, help="projection width (default N/8)")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    trees = corpus(args.trees, args.seed)
    forest = Forest.pack(trees)
    print(f"{len(trees)} trees, {forest.n_tokens} tokens, backends: {sorted(kernels.BACKENDS)}")
    print(f"{'N':>4} {'kernel':<12} {'backend':<7} {'seconds':>9} {'tokens/s':>11}")
    for N in args.states:
        params = init_random(ModelMeta(N, 200, 4, args.seed))
        logs = log_params(params)
        proj = ProjectionConfig(True, args.keep_k or max(1, N // 8))
        results = {}
        for name in sorted(kernels.BACKENDS):
            prev = kernels.set_backend(name)
            try:
                jobs = {
                    "estep": lambda: estep(forest, params),
                    "estep-kbest": lambda: estep(forest, params, proj),
                    "decode": lambda: [max_product_decode(t, params, logs) for t in trees[:100]],
                }
                for kernel, fn in jobs.items():
                    fn()
                    secs, out = best_of(fn, args.repeats)
                    results[name, kernel] = out
                    n_tok = forest.n_tokens if kernel != "decode" else sum(map(len, trees[:100]))
                    print(f"{N:>4} {kernel:<12} {name:<7} {secs:>9.4f} {n_tok / secs:>11.0f}")
            finally:
                kernels.set_backend(prev.name)
        if len(kernels.BACKENDS) == 2:
            (sa, la), (sb, lb) = results["numba", "estep"], results["numpy", "estep"]
            assert abs(la - lb) <= 1e-9 * abs(la), "backends disagree on log-likelihood"
            assert np.allclose(sa.tau, sb.tau, atol=1e-9)
            da, db = results["numba", "decode"], results["numpy", "decode"]
            assert all(np.array_equal(a, b) for a, b in zip(da, db))


if __name__ == "__main__":
    main()
