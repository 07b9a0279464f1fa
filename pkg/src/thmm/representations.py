"""Word representations from a trained model: per-token posteriors,
per-type averaged posteriors, and max-product state labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .corpus import DepTree, Vocabulary, OOV_FORM
from .inference import (EXACT, Forest, ProjectionConfig, forest_posteriors, log_params,
                        max_product_decode)


@dataclass
class TokenRep:
    sentence_id: int
    token_index: int
    word_id: int
    vector: np.ndarray


def post_token(tree: DepTree, params, proj: ProjectionConfig = EXACT) -> list[TokenRep]:
    posts, _ = forest_posteriors(Forest.pack([tree]), params, proj)
    return [TokenRep(tree.sentence_id, k, int(tree.words[k]), posts[k])
            for k in range(len(tree))]


class _Neumaier:
    """Compensated running sum of row vectors, one accumulator per key."""

    def __init__(self, n_keys: int, dim: int):
        self.sum = np.zeros((n_keys, dim))
        self.comp = np.zeros((n_keys, dim))

    def add(self, keys: np.ndarray, x: np.ndarray) -> None:
        """Add row ``x[q]`` to accumulator ``keys[q]``; keys must be unique."""
        s = self.sum[keys]
        t = s + x
        big = np.abs(s) >= np.abs(x)
        self.comp[keys] += np.where(big, (s - t) + x, (x - t) + s)
        self.sum[keys] = t

    def total(self) -> np.ndarray:
        return self.sum + self.comp


@dataclass
class TypeRepTable:
    """``vectors[w]`` is the mean posterior of word id w; ``counts[w]`` its
    occurrences.  Rows with zero count were never observed."""

    vectors: np.ndarray
    counts: np.ndarray

    def observed(self) -> np.ndarray:
        return np.nonzero(self.counts)[0]


def post_type(corpus: Sequence[DepTree], params, proj: ProjectionConfig = EXACT,
              chunk_trees: int = 256) -> TypeRepTable:
    """Average token posteriors per word type over ``corpus``."""
    if not len(corpus):
        raise ValueError("empty corpus")
    V, N = params.meta.n_words, params.N
    acc = _Neumaier(V, N)
    counts = np.zeros(V, dtype=np.int64)
    for a in range(0, len(corpus), chunk_trees):
        forest = Forest.pack(list(corpus[a:a + chunk_trees]))
        posts, _ = forest_posteriors(forest, params, proj)
        types, inv = np.unique(forest.words, return_inverse=True)
        partial = np.zeros((len(types), N))
        np.add.at(partial, inv, posts)
        acc.add(types, partial)
        np.add.at(counts, forest.words, 1)
    sums = acc.total()
    with np.errstate(invalid="ignore", divide="ignore"):
        vectors = np.where(counts[:, None] > 0, sums / counts[:, None], 0.0)
    return TypeRepTable(vectors, counts)


def decode_labels(corpus: Iterable[DepTree], params) -> list[np.ndarray]:
    logs = log_params(params)
    return [max_product_decode(t, params, logs) for t in corpus]


def export_type_reps(table: TypeRepTable, vocab: Vocabulary, stream: TextIO,
                     fmt: str = "text-vec") -> None:
    """``text-vec``: header ``"<types> <N>"`` then ``word v1 .. vN``;
    ``tsv``: ``word<TAB>Z<TAB>v1<TAB>..``.  Observed types only, id order,
    6 significant digits."""
    if fmt not in ("text-vec", "tsv"):
        raise ValueError(f"unknown format {fmt!r}")
    ids = table.observed()
    if fmt == "text-vec":
        stream.write(f"{len(ids)} {table.vectors.shape[1]}\n")
    for w in ids:
        vals = [f"{v:.6g}" for v in table.vectors[w]]
        form = vocab.form(int(w))
        if fmt == "text-vec":
            stream.write(" ".join([form, *vals]) + "\n")
        else:
            stream.write("\t".join([form, str(int(table.counts[w])), *vals]) + "\n")


def read_type_reps(stream: TextIO, fmt: str = "text-vec"
                   ) -> dict[str, tuple[np.ndarray, int | None]]:
    out: dict[str, tuple[np.ndarray, int | None]] = {}
    lines = iter(stream)
    if fmt == "text-vec":
        n, dim = map(int, next(lines).split())
    for line in lines:
        if not line.strip():
            continue
        if fmt == "text-vec":
            form, *vals = line.rstrip("\n").split(" ")
            out[form] = (np.array(vals, dtype=float), None)
        else:
            form, z, *vals = line.rstrip("\n").split("\t")
            out[form] = (np.array(vals, dtype=float), int(z))
    return out


def export_token_reps(reps: Iterable[TokenRep], vocab: Vocabulary, stream: TextIO) -> None:
    """One row per token: ``sentence-id<TAB>token-index<TAB>word<TAB>v1 .. vN``
    with 1-based token indices."""
    for rep in reps:
        vals = " ".join(f"{v:.6g}" for v in rep.vector)
        stream.write(f"{rep.sentence_id}\t{rep.token_index + 1}\t"
                     f"{vocab.form(rep.word_id)}\t{vals}\n")


__all__ = ["TokenRep", "TypeRepTable", "post_token", "post_type", "decode_labels",
           "export_type_reps", "read_type_reps", "export_token_reps", "OOV_FORM"]
