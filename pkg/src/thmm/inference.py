"""Exact (optionally k-best projected) message passing on one tree."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .corpus import DepTree
from .model import ConfigError, ModelParams


class NumericalError(ArithmeticError):
    """A belief or message lost all probability mass."""


@dataclass(frozen=True)
class ProjectionConfig:
    """Keep only the ``keep_k`` largest belief coefficients per node."""

    enabled: bool = False
    keep_k: int = 0

    def active_k(self, n_states: int) -> int:
        """Kernel argument: 0 disables projection, as does keep_k >= N."""
        if not self.enabled:
            return 0
        if not 1 <= self.keep_k <= n_states:
            raise ConfigError(f"keep_k={self.keep_k} outside [1, {n_states}]")
        return self.keep_k if self.keep_k < n_states else 0


EXACT = ProjectionConfig()


@dataclass
class BeliefTable:
    """Per-node quantities for one tree (0-based node rows).

    ``up`` holds the normalized, possibly projected belief of each node and
    ``up_msgs`` the normalized message sent to its parent (zero rows for
    root-attached nodes).  ``edge_weights`` encodes edge posteriors
    compactly; use :meth:`edge_posterior`.
    """

    up: np.ndarray
    up_msgs: np.ndarray
    scale: np.ndarray
    log_likelihood: float
    projected: bool = False
    node_posteriors: np.ndarray | None = None
    edge_weights: np.ndarray | None = None

    def edge_posterior(self, k: int, tree: DepTree, params: ModelParams) -> np.ndarray:
        """``E[i, j] = p(c_k = i, c_parent = j | w, r)``; for a root-attached
        node a single column holding the node posterior."""
        if self.edge_weights is None:
            raise ValueError("downward pass not run")
        if tree.parents[k] == 0:
            return self.node_posteriors[k][:, None].copy()
        r = tree.funcs[k]
        return params.trans[r].T * self.up[k][:, None] * self.edge_weights[k][None, :]

    def edge_posteriors(self, tree: DepTree, params: ModelParams) -> np.ndarray:
        """Stacked ``[K, N, N]`` edge posteriors; root-attached rows are zero."""
        N = params.N
        out = np.zeros((len(tree), N, N))
        for k in range(len(tree)):
            if tree.parents[k]:
                out[k] = self.edge_posterior(k, tree, params)
        return out


def _check(tree: DepTree, params: ModelParams) -> None:
    meta = params.meta
    if len(tree) == 0:
        raise ConfigError("empty tree")
    if tree.words.max() >= meta.n_words or tree.words.min() < 0:
        raise ConfigError(f"word id outside vocabulary of size {meta.n_words}")
    if tree.funcs.max() >= meta.n_funcs or tree.funcs.min() < 0:
        raise ConfigError(f"function id outside inventory of size {meta.n_funcs}")


def upward_pass(tree: DepTree, params: ModelParams, proj: ProjectionConfig = EXACT
                ) -> BeliefTable:
    _check(tree, params)
    K, N = len(tree), params.N
    keep = proj.active_k(N)
    up, msgs, scale = np.empty((K, N)), np.empty((K, N)), np.empty(K)
    ll, bad = kernels.backend().upward(tree.words, tree.funcs, tree.parents, tree.order,
                                       params.trans, params.emis, params.root, keep,
                                       up, msgs, scale)
    if bad >= 0:
        raise NumericalError(f"sentence {tree.sentence_id}: node {bad + 1} has zero mass")
    return BeliefTable(up, msgs, scale, float(ll), projected=keep > 0)


def downward_pass(partial: BeliefTable, tree: DepTree, params: ModelParams,
                  proj: ProjectionConfig = EXACT) -> BeliefTable:
    K, N = len(tree), params.N
    post, edge_w = np.empty((K, N)), np.empty((K, N))
    bad = kernels.backend().downward(tree.words, tree.funcs, tree.parents, tree.order,
                                     params.trans, params.emis, params.root, partial.up,
                                     partial.up_msgs, partial.projected, post, edge_w)
    if bad >= 0:
        raise NumericalError(f"sentence {tree.sentence_id}: node {bad + 1} has zero mass")
    partial.node_posteriors = post
    partial.edge_weights = edge_w
    return partial


def beliefs(tree: DepTree, params: ModelParams, proj: ProjectionConfig = EXACT
            ) -> BeliefTable:
    return downward_pass(upward_pass(tree, params, proj), tree, params, proj)


def tree_log_likelihood(tree: DepTree, params: ModelParams) -> float:
    return upward_pass(tree, params).log_likelihood


class LogParams(NamedTuple):
    trans: np.ndarray
    emis: np.ndarray
    root: np.ndarray


def log_params(params: ModelParams) -> LogParams:
    """Elementwise logs of the parameter tables (zeros become -inf)."""
    with np.errstate(divide="ignore"):
        return LogParams(np.log(params.trans), np.log(params.emis), np.log(params.root))


def max_product_decode(tree: DepTree, params: ModelParams,
                       logs: LogParams | None = None) -> np.ndarray:
    """Most probable joint state assignment; ties go to the lowest state.

    Pass ``logs = log_params(params)`` when decoding many trees.
    """
    _check(tree, params)
    if logs is None:
        logs = log_params(params)
    states = np.zeros(len(tree), dtype=np.int64)
    kernels.backend().max_product(tree.words, tree.funcs, tree.parents, tree.order,
                                  logs.trans, logs.emis, logs.root, states)
    return states


def joint_log_prob(tree: DepTree, params: ModelParams, states: Sequence[int]) -> float:
    """log p(w, c | r) of one full assignment."""
    with np.errstate(divide="ignore"):
        total = 0.0
        for k, c in enumerate(states):
            r, p = tree.funcs[k], tree.parents[k]
            prior = params.root[r, c] if p == 0 else params.trans[r, states[p - 1], c]
            total += np.log(prior) + np.log(params.emis[r, c, tree.words[k]])
    return float(total)


@dataclass(eq=False)
class Forest:
    """Trees packed into flat arrays for the batch kernels."""

    words: np.ndarray
    funcs: np.ndarray
    parents: np.ndarray
    order: np.ndarray
    offsets: np.ndarray

    @classmethod
    def pack(cls, trees: Sequence[DepTree]) -> "Forest":
        offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        np.cumsum([len(t) for t in trees], out=offsets[1:])

        def cat(name):
            if not trees:
                return np.zeros(0, dtype=np.int64)
            return np.concatenate([getattr(t, name) for t in trees])

        return cls(cat("words"), cat("funcs"), cat("parents"), cat("order"), offsets)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_tokens(self) -> int:
        return int(self.offsets[-1])

    def check(self, params: ModelParams) -> None:
        if self.n_tokens == 0:
            return
        if self.words.max() >= params.meta.n_words or self.funcs.max() >= params.meta.n_funcs:
            raise ConfigError("corpus ids exceed model dimensions")

    def slice(self, a: int, b: int) -> "Forest":
        lo, hi = self.offsets[a], self.offsets[b]
        return Forest(self.words[lo:hi], self.funcs[lo:hi], self.parents[lo:hi],
                      self.order[lo:hi], self.offsets[a:b + 1] - lo)


def forest_log_likelihoods(forest: Forest, params: ModelParams,
                           proj: ProjectionConfig = EXACT) -> np.ndarray:
    """Per-tree log-likelihoods."""
    forest.check(params)
    out = np.zeros(len(forest))
    n, bad = kernels.backend().loglik_forest(forest.words, forest.funcs, forest.parents,
                                             forest.order, forest.offsets, params.trans,
                                             params.emis, params.root,
                                             proj.active_k(params.N), out)
    if n >= 0:
        raise NumericalError(f"tree {n}: node {bad + 1} has zero mass")
    return out


def forest_posteriors(forest: Forest, params: ModelParams,
                      proj: ProjectionConfig = EXACT) -> tuple[np.ndarray, float]:
    """Node posteriors of every token, stacked ``[n_tokens, N]``, and the
    total log-likelihood."""
    forest.check(params)
    N, S = params.N, params.meta.n_funcs
    posts = np.empty((forest.n_tokens, N))
    ll, n, bad = kernels.backend().estep_forest(
        forest.words, forest.funcs, forest.parents, forest.order, forest.offsets,
        params.trans, params.emis, params.root, proj.active_k(N),
        np.zeros((S, N, N)), np.zeros((S, N)), posts)
    if n >= 0:
        raise NumericalError(f"tree {n}: node {bad + 1} has zero mass")
    return posts, float(ll)
