"""EM estimation: batch and mini-batch stepwise EM, plus state splitting.

Expected counts are accumulated per fixed-size chunk of trees (tree-index
order inside a chunk) and chunks are merged in chunk order, so the result
does not depend on the number of worker threads.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import DepTree
from .inference import (EXACT, Forest, NumericalError, ProjectionConfig, beliefs)
from .model import ConfigError, ModelMeta, ModelParams, rng_stream

logger = logging.getLogger(__name__)

CHUNK_TREES = 64


@dataclass(eq=False)
class SufficientStats:
    """Expected counts, stored like the parameters they estimate:
    ``tau[l, j, i]`` (parent j -> child i), ``omega[l, j, w]``, ``rho[l, i]``."""

    tau: np.ndarray
    omega: np.ndarray
    rho: np.ndarray
    tree_count: float = 0.0

    @classmethod
    def zeros(cls, meta: ModelMeta) -> "SufficientStats":
        N, V, S = meta.n_states, meta.n_words, meta.n_funcs
        return cls(np.zeros((S, N, N)), np.zeros((S, N, V)), np.zeros((S, N)))

    def copy(self) -> "SufficientStats":
        return SufficientStats(self.tau.copy(), self.omega.copy(), self.rho.copy(),
                               self.tree_count)

    def __iadd__(self, other: "SufficientStats") -> "SufficientStats":
        self.tau += other.tau
        self.omega += other.omega
        self.rho += other.rho
        self.tree_count += other.tree_count
        return self

    def scaled(self, factor: float) -> "SufficientStats":
        return SufficientStats(self.tau * factor, self.omega * factor, self.rho * factor,
                               self.tree_count * factor)

    def interpolate(self, other: "SufficientStats", eta: float, scale: float = 1.0
                    ) -> "SufficientStats":
        """``(1 - eta) * self + eta * scale * other``."""
        a, b = 1.0 - eta, eta * scale
        return SufficientStats(a * self.tau + b * other.tau, a * self.omega + b * other.omega,
                               a * self.rho + b * other.rho,
                               a * self.tree_count + b * other.tree_count)

    def equals(self, other: "SufficientStats") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("tau", "omega", "rho"))


def accumulate_estep(tree: DepTree, params: ModelParams, proj: ProjectionConfig,
                     stats: SufficientStats) -> SufficientStats:
    """Add one tree's expected counts to ``stats`` (in place) and return it.

    The tree's counts are summed on their own first, then added.
    """
    bt = beliefs(tree, params, proj)
    own = SufficientStats.zeros(params.meta)
    for k in range(len(tree)):
        r, w = tree.funcs[k], tree.words[k]
        post = bt.node_posteriors[k]
        if tree.parents[k] == 0:
            own.rho[r] += post
        else:
            own.tau[r] += bt.edge_posterior(k, tree, params).T
        own.omega[r, :, w] += post
    own.tree_count = 1
    stats += own
    return stats


def _estep_chunk(forest: Forest, params: ModelParams, keep_k: int):
    N, S = params.N, params.meta.n_funcs
    tau, rho = np.zeros((S, N, N)), np.zeros((S, N))
    posts = np.empty((forest.n_tokens, N))
    ll, n, bad = kernels.backend().estep_forest(
        forest.words, forest.funcs, forest.parents, forest.order, forest.offsets,
        params.trans, params.emis, params.root, keep_k, tau, rho, posts)
    if n >= 0:
        raise NumericalError(f"tree {n} of chunk: node {bad + 1} has zero mass")
    return tau, rho, posts, ll


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("THMM_THREADS", "1") or 1)
    return max(1, threads)


def estep(forest: Forest, params: ModelParams, proj: ProjectionConfig = EXACT,
          threads: int | None = 1, chunk_trees: int = CHUNK_TREES
          ) -> tuple[SufficientStats, float]:
    """Expected counts and total log-likelihood over a forest."""
    forest.check(params)
    keep = proj.active_k(params.N)
    stats = SufficientStats.zeros(params.meta)
    bounds = [(a, min(a + chunk_trees, len(forest)))
              for a in range(0, len(forest), chunk_trees)]
    total = 0.0
    backend = kernels.backend()

    def run(ab):
        sub = forest.slice(*ab)
        return sub, _estep_chunk(sub, params, keep)

    def merge(item):
        nonlocal total
        sub, (tau, rho, posts, ll) = item
        stats.tau += tau
        stats.rho += rho
        backend.scatter_emissions(stats.omega, sub.funcs, sub.words, posts)
        total += ll

    n_threads = resolve_threads(threads)
    if n_threads == 1 or len(bounds) <= 1:
        for ab in bounds:
            merge(run(ab))
    else:
        window = 2 * n_threads
        with ThreadPoolExecutor(n_threads) as pool:
            for s in range(0, len(bounds), window):
                for item in pool.map(run, bounds[s:s + window]):
                    merge(item)
    stats.tree_count = float(len(forest))
    return stats, total


def _normalize_columns(counts: np.ndarray, smoothing: float, what: str) -> np.ndarray:
    a = counts + smoothing if smoothing else counts.copy()
    mass = a.sum(axis=-1, keepdims=True)
    empty = ~(mass > 0)
    if empty.any():
        logger.warning("%d zero-mass %s columns reset to uniform", int(empty.sum()), what)
        a = np.where(empty, 1.0, a)
        mass = a.sum(axis=-1, keepdims=True)
    return a / mass


def m_step(stats: SufficientStats, smoothing: float = 0.0, seed: int = 0) -> ModelParams:
    """Normalize expected counts over the child-state / word axis."""
    if smoothing < 0:
        raise ConfigError("smoothing must be >= 0")
    S, N, V = stats.omega.shape
    meta = ModelMeta(N, V, S, seed)
    return ModelParams(meta, _normalize_columns(stats.tau, smoothing, "transition"),
                       _normalize_columns(stats.omega, smoothing, "emission"),
                       _normalize_columns(stats.rho, smoothing, "root"))


@dataclass(frozen=True)
class TrainConfig:
    """``keep_k=None`` means N/8 (at least 1) when projection is on.

    Stepwise step sizes are ``(t + step_offset) ** -alpha``.
    """

    mode: str = "stepwise"
    alpha: float = 1.0
    minibatch_size: int = 1000
    epochs: int = 2
    projection: bool = True
    keep_k: int | None = None
    smoothing: float = 0.0
    heldout_fraction: float = 0.05
    seed: int = 0
    threads: int | None = 1
    step_offset: int = 2
    rel_tol: float | None = None

    def check(self) -> None:
        if self.mode not in ("batch", "stepwise"):
            raise ConfigError(f"mode must be batch or stepwise, not {self.mode!r}")
        if self.mode == "stepwise" and not 0.5 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0.5, 1]")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.smoothing < 0:
            raise ConfigError("smoothing must be >= 0")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ConfigError("heldout_fraction must lie in [0, 1)")
        if self.step_offset < 1:
            raise ConfigError("step_offset must be >= 1")

    def projection_for(self, n_states: int) -> ProjectionConfig:
        if not self.projection:
            return EXACT
        k = self.keep_k if self.keep_k is not None else max(1, n_states // 8)
        return ProjectionConfig(True, min(k, n_states))


@dataclass
class TrainerState:
    """Resumable stepwise-EM state."""

    t: int = 0
    epoch: int = 0
    mu: SufficientStats | None = None


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[float] = field(default_factory=list)
    heldout_trace: list[float] = field(default_factory=list)
    state: TrainerState | None = None
    round_ends: list[int] = field(default_factory=list)


def split_heldout(trees: Sequence[DepTree], fraction: float, seed: int
                  ) -> tuple[list[DepTree], list[DepTree]]:
    """Deterministic train/held-out partition; both keep corpus order."""
    n_held = int(round(fraction * len(trees)))
    if n_held == 0:
        return list(trees), []
    mask = np.zeros(len(trees), dtype=bool)
    mask[rng_stream(seed, "heldout").choice(len(trees), n_held, replace=False)] = True
    return ([t for t, m in zip(trees, mask) if not m], [t for t, m in zip(trees, mask) if m])


def heldout_log_likelihood(forest: Forest, params: ModelParams) -> float:
    """Exact log-likelihood; ``-inf`` if some tree is impossible under params."""
    if len(forest) == 0:
        return float("nan")
    forest.check(params)
    out = np.zeros(len(forest))
    n, _ = kernels.backend().loglik_forest(forest.words, forest.funcs, forest.parents,
                                           forest.order, forest.offsets, params.trans,
                                           params.emis, params.root, 0, out)
    if n >= 0:
        logger.warning("held-out tree %d has zero probability; consider smoothing", n)
        return float("-inf")
    return float(out.sum())


def _prepare(corpus, params0: ModelParams, config: TrainConfig, heldout):
    config.check()
    trees = list(corpus)
    if not trees:
        raise ConfigError("empty corpus")
    if heldout is None:
        trees, heldout = split_heldout(trees, config.heldout_fraction, config.seed)
    return trees, Forest.pack(list(heldout))


def _converged(trace: list[float], rel_tol: float | None) -> bool:
    if rel_tol is None or len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(cur - prev) <= rel_tol * abs(prev)


def train_batch_em(corpus: Sequence[DepTree], params0: ModelParams, config: TrainConfig,
                   heldout: Sequence[DepTree] | None = None) -> TrainResult:
    """``config.epochs`` full E/M iterations.  ``trace[i]`` is the training
    log-likelihood under the parameters entering iteration i."""
    trees, held = _prepare(corpus, params0, config, heldout)
    forest = Forest.pack(trees)
    proj = config.projection_for(params0.N)
    params = params0
    result = TrainResult(params)
    for it in range(config.epochs):
        stats, ll = estep(forest, params, proj, config.threads)
        result.trace.append(ll)
        params = m_step(stats, config.smoothing, params0.meta.seed)
        if len(held):
            result.heldout_trace.append(heldout_log_likelihood(held, params))
        logger.info("batch EM iteration %d: train ll %.6f%s", it + 1, ll,
                    f", held-out ll {result.heldout_trace[-1]:.6f}" if len(held) else "")
        if _converged(result.trace, config.rel_tol):
            break
    result.params = params
    return result


def prior_stats(params: ModelParams, n_tokens: int, n_trees: int) -> SufficientStats:
    """Pseudo-counts that reproduce ``params`` under m_step, spread evenly
    over columns with one epoch's worth of total mass."""
    S, N = params.meta.n_funcs, params.N
    per_col = n_tokens / (S * N)
    return SufficientStats(params.trans * per_col, params.emis * per_col,
                           params.root * (n_trees / S), float(n_trees))


def stepwise_eta(t: int, alpha: float, offset: int = 2) -> float:
    return float((t + offset) ** -alpha)


def train_stepwise_em(corpus: Sequence[DepTree], params0: ModelParams, config: TrainConfig,
                      heldout: Sequence[DepTree] | None = None,
                      state: TrainerState | None = None) -> TrainResult:
    """Mini-batch stepwise EM on sufficient statistics.

    The running statistics start from :func:`prior_stats` of ``params0``.
    Each mini-batch's counts are scaled to the training-set size, then
    interpolated with step size ``eta_t``; parameters are re-estimated after
    every mini-batch.  Trees inside a mini-batch are processed in corpus
    order.  ``heldout_trace`` gets one value per epoch.
    """
    trees, held = _prepare(corpus, params0, config, heldout)
    n = len(trees)
    proj = config.projection_for(params0.N)
    state = state or TrainerState()
    if state.mu is None:
        state.mu = prior_stats(params0, sum(len(t) for t in trees), n)
    params = params0 if state.t == 0 else m_step(state.mu, config.smoothing,
                                                 params0.meta.seed)
    result = TrainResult(params, state=state)
    while state.epoch < config.epochs:
        perm = rng_stream(config.seed, f"shuffle-{state.epoch}").permutation(n)
        epoch_ll = 0.0
        for a in range(0, n, config.minibatch_size):
            idx = np.sort(perm[a:a + config.minibatch_size])
            batch = Forest.pack([trees[i] for i in idx])
            stats, ll = estep(batch, params, proj, config.threads)
            epoch_ll += ll
            eta = stepwise_eta(state.t, config.alpha, config.step_offset)
            state.mu = state.mu.interpolate(stats, eta, n / len(idx))
            params = m_step(state.mu, config.smoothing, params0.meta.seed)
            state.t += 1
        state.epoch += 1
        result.trace.append(epoch_ll)
        if len(held):
            result.heldout_trace.append(heldout_log_likelihood(held, params))
        logger.info("stepwise EM epoch %d (%d updates): train ll %.6f%s", state.epoch,
                    state.t, epoch_ll,
                    f", held-out ll {result.heldout_trace[-1]:.6f}" if len(held) else "")
        if _converged(result.heldout_trace or result.trace, config.rel_tol):
            break
    result.params = params
    return result


def train(corpus: Sequence[DepTree], params0: ModelParams, config: TrainConfig,
          heldout: Sequence[DepTree] | None = None) -> TrainResult:
    fn = train_batch_em if config.mode == "batch" else train_stepwise_em
    return fn(corpus, params0, config, heldout)


def split_states(params: ModelParams, noise: float = 0.01, seed: int = 0,
                 stream: str = "split") -> ModelParams:
    """Clone every state s into 2s and 2s+1, perturb each entry by a factor
    ``1 + u`` with ``u ~ U(-noise, noise)``, renormalize.

    Clones split the child-side transition mass in half, so as noise goes to
    zero the represented distribution is unchanged.
    """
    if not noise > 0:
        raise ConfigError("noise must be > 0")
    rng = rng_stream(seed, stream)
    trans = np.repeat(np.repeat(params.trans, 2, axis=1), 2, axis=2) / 2.0
    emis = np.repeat(params.emis, 2, axis=1)
    root = np.repeat(params.root, 2, axis=1) / 2.0
    out = []
    for a in (trans, emis, root):
        a = a * (1.0 + rng.uniform(-noise, noise, size=a.shape))
        out.append(a / a.sum(axis=-1, keepdims=True))
    meta = replace(params.meta, n_states=2 * params.N)
    return ModelParams(meta, out[0], out[1], out[2])


def train_with_splitting(corpus: Sequence[DepTree], params0: ModelParams,
                         config: TrainConfig, schedule: Sequence[tuple[int, bool]],
                         noise: float = 0.01,
                         heldout: Sequence[DepTree] | None = None) -> TrainResult:
    """Alternate training rounds of ``epochs`` with state splits.

    Each schedule entry is ``(epochs, split_after)``.  Traces concatenate
    across rounds; ``round_ends`` on the result marks round boundaries.
    """
    if not schedule:
        raise ConfigError("empty split schedule")
    trees = list(corpus)
    if not trees:
        raise ConfigError("empty corpus")
    if heldout is None:
        trees, heldout = split_heldout(trees, config.heldout_fraction, config.seed)
    params = params0
    result = TrainResult(params)
    for rnd, (epochs, do_split) in enumerate(schedule):
        res = train(trees, params, replace(config, epochs=epochs), heldout)
        params = res.params
        result.trace += res.trace
        result.heldout_trace += res.heldout_trace
        result.round_ends.append(len(result.heldout_trace))
        if do_split:
            params = split_states(params, noise, config.seed, f"split-{rnd}")
            logger.info("split round %d: %d -> %d states", rnd + 1, params.N // 2, params.N)
    result.params = params
    return result
