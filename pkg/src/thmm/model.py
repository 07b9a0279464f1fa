"""Parameter tensors, initializers and diagnostics.

Storage is function-major so that one conditional distribution is a
contiguous row:

* ``trans[l, j, i] = p(child state i | parent state j, function l)``
* ``emis[l, j, w]  = p(word w | state j, function l)``
* ``root[l, i]     = p(state i | synthetic root, function l)``
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

EPS = 1e-9


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per named stage, all derived from one seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


class ConfigError(ValueError):
    """Raised for inconsistent model or training configuration."""


@dataclass(frozen=True)
class ModelMeta:
    n_states: int
    n_words: int
    n_funcs: int
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.n_states < 1:
            out.append(f"n_states={self.n_states} < 1")
        if self.n_words < 2:
            out.append(f"n_words={self.n_words} < 2")
        if self.n_funcs < 1:
            out.append(f"n_funcs={self.n_funcs} < 1")
        if self.seed < 0:
            out.append(f"seed={self.seed} < 0")
        return out

    def check(self) -> None:
        p = self.problems()
        if p:
            raise ConfigError("; ".join(p))


@dataclass(eq=False)
class ModelParams:
    meta: ModelMeta
    trans: np.ndarray
    emis: np.ndarray
    root: np.ndarray

    def __post_init__(self):
        for name in ("trans", "emis", "root"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))

    @property
    def N(self) -> int:
        return self.meta.n_states

    def copy(self) -> "ModelParams":
        return ModelParams(self.meta, self.trans.copy(), self.emis.copy(), self.root.copy())

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of meta and all tensors."""
        return (self.meta == other.meta
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("trans", "emis", "root")))


def _normalize_last(a: np.ndarray) -> np.ndarray:
    return a / a.sum(axis=-1, keepdims=True)


def _random_tensors(meta: ModelMeta):
    rng = rng_stream(meta.seed, "init")
    N, V, S = meta.n_states, meta.n_words, meta.n_funcs
    trans = rng.uniform(0.0, 1.0, size=(S, N, N))
    root = rng.uniform(0.0, 1.0, size=(S, N))
    emis = rng.uniform(0.0, 1.0, size=(S, N, V))
    return trans, root, emis


def init_random(meta: ModelMeta) -> ModelParams:
    meta.check()
    trans, root, emis = _random_tensors(meta)
    return ModelParams(meta, _normalize_last(trans), _normalize_last(emis),
                       _normalize_last(root))


def uniform_params(meta: ModelMeta) -> ModelParams:
    N, V, S = meta.n_states, meta.n_words, meta.n_funcs
    return ModelParams(meta, np.full((S, N, N), 1.0 / N), np.full((S, N, V), 1.0 / V),
                       np.full((S, N), 1.0 / N))


@dataclass
class BrownClusterMap:
    """Word id -> dense cluster id.  Words absent from the map get no bias."""

    assignment: dict[int, int] = field(default_factory=dict)
    n_clusters: int = 0

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "BrownClusterMap":
        assignment = dict(pairs)
        n = max(assignment.values()) + 1 if assignment else 0
        return cls(assignment, n)


def read_brown_clusters(stream: TextIO, word_ids: dict[str, int],
                        prefix_len: int | None = None) -> BrownClusterMap:
    """Read Liang-format ``bitpath<TAB>word<TAB>count`` lines.

    Bit paths truncated to ``prefix_len`` define clusters; cluster ids are
    assigned in sorted bit-path order.  Words missing from ``word_ids`` are
    ignored.
    """
    by_word: dict[int, str] = {}
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValueError(f"line {lineno}: expected bitpath<TAB>word[<TAB>count]")
        path, word = parts[0], parts[1]
        if prefix_len is not None:
            path = path[:prefix_len]
        if word in word_ids:
            by_word[word_ids[word]] = path
    paths = {p: i for i, p in enumerate(sorted(set(by_word.values())))}
    return BrownClusterMap({w: paths[p] for w, p in by_word.items()}, len(paths))


def init_brown(meta: ModelMeta, clusters: BrownClusterMap, factor: float = 1000.0
               ) -> ModelParams:
    """Random init with emissions of word w boosted by ``factor`` in the
    state matching w's cluster id."""
    meta.check()
    if clusters.n_clusters > meta.n_states:
        raise ConfigError(f"{clusters.n_clusters} clusters exceed {meta.n_states} states")
    if factor < 1:
        raise ConfigError("factor must be >= 1")
    trans, root, emis = _random_tensors(meta)
    if clusters.assignment:
        words = np.fromiter(clusters.assignment.keys(), dtype=np.int64)
        states = np.fromiter(clusters.assignment.values(), dtype=np.int64)
        if words.max() >= meta.n_words:
            raise ConfigError("cluster map references word ids outside the vocabulary")
        emis[:, states, words] *= factor
    return ModelParams(meta, _normalize_last(trans), _normalize_last(emis),
                       _normalize_last(root))


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "ok" if self.ok else "\n".join(self.violations)


def validate(params: ModelParams, eps: float = EPS, limit: int = 10) -> ValidationReport:
    """Check every structural invariant; report at most ``limit`` slices."""
    meta = params.meta
    out = [f"meta: {p}" for p in meta.problems()]
    if out:
        return ValidationReport(out)
    N, V, S = meta.n_states, meta.n_words, meta.n_funcs
    shapes = {"trans": (S, N, N), "emis": (S, N, V), "root": (S, N)}
    for name, shape in shapes.items():
        got = getattr(params, name).shape
        if got != shape:
            out.append(f"{name}: shape {got}, expected {shape}")
    if out:
        return ValidationReport(out)
    for name, label in (("trans", "T[:, j={1}, l={0}]"), ("emis", "O[:, j={1}, l={0}]"),
                        ("root", "root[:, l={0}]")):
        a = getattr(params, name)
        bad_range = ~np.isfinite(a) | (a < 0) | (a > 1)
        dev = np.abs(a.sum(axis=-1) - 1.0)
        dev = np.where(np.isnan(dev), np.inf, dev)
        bad = (dev > eps) | bad_range.any(axis=-1)
        for idx in zip(*np.nonzero(bad)):
            if len(out) >= limit:
                return ValidationReport(out)
            where = label.format(*idx, *([None] * 2))
            out.append(f"{where}: |sum - 1| = {dev[idx]:.3g}"
                       + ("; entries outside [0, 1]" if bad_range[idx].any() else ""))
    return ValidationReport(out)


def _entropy_bits(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=-1)


def transition_entropy(params: ModelParams, flattened: bool = False) -> float:
    """Mean per-column Shannon entropy (bits) over transition and root
    columns.  ``flattened=True`` instead treats every transition entry as
    one distribution (normalized by the total)."""
    cols = np.concatenate([params.trans.reshape(-1, params.N), params.root])
    if flattened:
        flat = cols.ravel()
        return float(_entropy_bits(flat / flat.sum()))
    return float(_entropy_bits(cols).mean())


def param_count(meta: ModelMeta) -> tuple[int, int]:
    N, V, S = meta.n_states, meta.n_words, meta.n_funcs
    return N * N * S + N * S, V * N * S


def top_emissions(params: ModelParams, state: int, func: int, n: int = 10
                  ) -> list[tuple[int, float]]:
    row = params.emis[func, state]
    idx = np.argsort(-row, kind="stable")[:n]
    return [(int(w), float(row[w])) for w in idx]
