"""Sampling trees from a known model, for recovery experiments and fixtures."""

from __future__ import annotations

import numpy as np

from .corpus import DepTree, RawSentence, Token
from .model import ModelMeta, ModelParams


def dirichlet_params(meta: ModelMeta, rng: np.random.Generator, trans_conc: float = 0.3,
                     emis_conc: float = 0.1, root_conc: float = 1.0) -> ModelParams:
    """Random generating model with Dirichlet-distributed columns."""
    N, V, S = meta.n_states, meta.n_words, meta.n_funcs
    trans = rng.dirichlet(np.full(N, trans_conc), size=(S, N))
    emis = rng.dirichlet(np.full(V, emis_conc), size=(S, N))
    root = rng.dirichlet(np.full(N, root_conc), size=S)
    return ModelParams(meta, trans, emis, root)


def block_emissions(meta: ModelMeta, rng: np.random.Generator, purity: float = 0.9
                    ) -> np.ndarray:
    """Emissions where state j mostly emits its own block of V/N words.

    Returns ``[S, N, V]`` with ``purity`` of each column's mass on the block.
    """
    N, V, S = meta.n_states, meta.n_words, meta.n_funcs
    own = np.arange(V) % N
    emis = np.empty((S, N, V))
    for l in range(S):
        for j in range(N):
            w = rng.uniform(0.5, 1.5, size=V)
            mine = own == j
            col = np.where(mine, purity * w / w[mine].sum(), (1 - purity) * w / w[~mine].sum())
            emis[l, j] = col
    return emis


def random_shape(k: int, rng: np.random.Generator) -> np.ndarray:
    """CoNLL heads of a random recursive tree over k tokens, one root."""
    perm = rng.permutation(k)  # perm[pos] = node created pos-th
    heads = np.zeros(k, dtype=np.int64)
    for pos in range(1, k):
        heads[perm[pos]] = perm[rng.integers(0, pos)] + 1
    return heads


def sample_tree(params: ModelParams, heads: np.ndarray, funcs: np.ndarray,
                rng: np.random.Generator, sentence_id: int = 0
                ) -> tuple[DepTree, np.ndarray]:
    """Sample states top-down, then words.  Returns the tree and its states."""
    tree = DepTree.from_arrays(np.zeros(len(heads), dtype=np.int64), funcs, heads,
                               sentence_id)
    N, V = params.N, params.meta.n_words
    states = np.zeros(len(heads), dtype=np.int64)
    words = np.zeros(len(heads), dtype=np.int64)
    for k in tree.order:
        r, p = funcs[k], heads[k]
        dist = params.root[r] if p == 0 else params.trans[r, states[p - 1]]
        states[k] = rng.choice(N, p=dist)
        words[k] = rng.choice(V, p=params.emis[r, states[k]])
    return DepTree.from_arrays(words, funcs, heads, sentence_id), states


def sample_corpus(params: ModelParams, n_trees: int, rng: np.random.Generator,
                  min_len: int = 3, max_len: int = 8, func_probs=None
                  ) -> tuple[list[DepTree], list[np.ndarray]]:
    S = params.meta.n_funcs
    func_probs = np.full(S, 1.0 / S) if func_probs is None else np.asarray(func_probs)
    trees, states = [], []
    for n in range(n_trees):
        k = int(rng.integers(min_len, max_len + 1))
        heads = random_shape(k, rng)
        funcs = rng.choice(S, size=k, p=func_probs)
        t, s = sample_tree(params, heads, funcs, rng, n)
        trees.append(t)
        states.append(s)
    return trees, states


def to_raw(tree: DepTree, forms: list[str], labels: list[str]) -> RawSentence:
    return RawSentence(tuple(Token(forms[w], int(h), labels[f])
                             for w, f, h in zip(tree.words, tree.funcs, tree.parents)),
                       tree.sentence_id)
