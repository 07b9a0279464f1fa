"""CoNLL ingestion: raw sentences, vocabulary, syntactic-function inventory
and integer-encoded dependency trees.

Head indices follow the CoNLL convention throughout: ``0`` is the synthetic
root and ``k`` (1-based) is the k-th token of the sentence.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

OOV_FORM = "<unk>"
OTHER_LABEL = "<other>"

# Function markers never kept as separate functions.  Matched case-insensitively.
# A default only: the right list depends on the parser's label set.
DEFAULT_EXCLUDED_LABELS = frozenset({"p", "punct", "det", "dt"})


class CorpusError(ValueError):
    """Raised for malformed CoNLL input."""


class StructureError(CorpusError):
    """Raised when a sentence is not a single rooted tree."""


@dataclass(frozen=True)
class ColumnMap:
    """1-based CoNLL column numbers.  Defaults are CoNLL-X."""

    id: int = 1
    form: int = 2
    head: int = 7
    deprel: int = 8

    @property
    def width(self) -> int:
        return max(self.id, self.form, self.head, self.deprel)


@dataclass(frozen=True)
class Token:
    form: str
    head: int
    deprel: str


@dataclass(frozen=True)
class RawSentence:
    tokens: tuple[Token, ...]
    sentence_id: int

    def __len__(self) -> int:
        return len(self.tokens)


def _block_to_sentence(rows: list[tuple[int, list[str]]], cols: ColumnMap,
                       sid: int) -> RawSentence:
    tokens = []
    for lineno, fields in rows:
        try:
            head = int(fields[cols.head - 1])
        except ValueError:
            raise CorpusError(f"line {lineno}: non-integer head "
                              f"{fields[cols.head - 1]!r}") from None
        tokens.append(Token(fields[cols.form - 1], head, fields[cols.deprel - 1]))
    n = len(tokens)
    for t in tokens:
        if not 0 <= t.head <= n:
            raise StructureError(
                f"sentence {sid}: head {t.head} out of range for {n} tokens")
    return RawSentence(tuple(tokens), sid)


def iter_conll(stream: TextIO | Iterable[str],
               columns: ColumnMap = ColumnMap()) -> Iterator[RawSentence]:
    """Yield sentences from a CoNLL stream one block at a time.

    Comment lines (``#``) and CoNLL-U multiword/empty-node rows (ids with
    ``-`` or ``.``) are skipped.
    """
    rows: list[tuple[int, list[str]]] = []
    ncols = None
    sid = 0
    for lineno, line in enumerate(stream, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            if rows:
                yield _block_to_sentence(rows, columns, sid)
                sid += 1
                rows, ncols = [], None
            continue
        if line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) < columns.width or (ncols is not None and len(fields) != ncols):
            raise CorpusError(f"line {lineno}: expected "
                              f"{ncols or columns.width} columns, got {len(fields)}")
        ncols = len(fields)
        tok_id = fields[columns.id - 1]
        if "-" in tok_id or "." in tok_id:
            continue
        rows.append((lineno, fields))
    if rows:
        yield _block_to_sentence(rows, columns, sid)


def parse_conll(stream: TextIO | Iterable[str],
                columns: ColumnMap = ColumnMap()) -> list[RawSentence]:
    return list(iter_conll(stream, columns))


def filter_sentences(sentences: Iterable[RawSentence], min_len: int = 4,
                     max_len: float = 40) -> list[RawSentence]:
    """Keep sentences with ``min_len < K < max_len``."""
    if min_len > max_len:
        raise ValueError("min_len must not exceed max_len")
    return [s for s in sentences if min_len < len(s) < max_len]


@dataclass(frozen=True)
class Vocabulary:
    """Frozen word table.  Retained forms get ids ``0..n-1``; ``oov_id == n``."""

    words: tuple[str, ...]
    min_count: int
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {w: i for i, w in enumerate(self.words)})

    @property
    def oov_id(self) -> int:
        return len(self.words)

    def __len__(self) -> int:
        return len(self.words) + 1

    def id(self, form: str) -> int:
        return self.index.get(form, self.oov_id)

    def form(self, wid: int) -> str:
        if wid == self.oov_id:
            return OOV_FORM
        return self.words[wid]

    def forms(self) -> list[str]:
        return list(self.words) + [OOV_FORM]


def build_vocabulary(sentences: Iterable[RawSentence], min_count: int = 40) -> Vocabulary:
    """Forms seen at least ``min_count`` times, most frequent first, ties
    broken lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(t.form for s in sentences for t in s.tokens)
    counts.pop(OOV_FORM, None)
    kept = sorted((w for w, c in counts.items() if c >= min_count),
                  key=lambda w: (-counts[w], w))
    return Vocabulary(tuple(kept), min_count)


@dataclass(frozen=True)
class SynFuncInventory:
    """Retained labels get ids ``0..k-1``; everything else maps to ``other_id == k``."""

    labels: tuple[str, ...]
    excluded: frozenset[str] = DEFAULT_EXCLUDED_LABELS
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {l: i for i, l in enumerate(self.labels)})

    @property
    def other_id(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels) + 1

    def id(self, label: str) -> int:
        return self.index.get(label, self.other_id)

    def label(self, fid: int) -> str:
        return OTHER_LABEL if fid == self.other_id else self.labels[fid]


def build_synfunc_inventory(sentences: Iterable[RawSentence], top_k: int = 5,
                            excluded: Iterable[str] = DEFAULT_EXCLUDED_LABELS
                            ) -> SynFuncInventory:
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    excl = frozenset(e.lower() for e in excluded)
    counts = Counter(t.deprel for s in sentences for t in s.tokens
                     if t.deprel.lower() not in excl)
    ranked = sorted(counts, key=lambda l: (-counts[l], l))
    return SynFuncInventory(tuple(ranked[:top_k]), excl)


def traversal_order(parents: np.ndarray) -> np.ndarray:
    """Breadth-first node order (0-based node indices) from the root.

    ``parents`` holds CoNLL heads (0 = root).  Raises StructureError unless
    the heads form one tree hanging off the synthetic root.
    """
    k = len(parents)
    children: list[list[int]] = [[] for _ in range(k + 1)]
    for node, head in enumerate(parents, 1):
        children[head].append(node)
    order = []
    frontier = children[0]
    while frontier:
        order.extend(frontier)
        frontier = [c for n in frontier for c in children[n]]
    if len(order) != k:
        raise StructureError("head structure contains a cycle")
    return np.asarray(order, dtype=np.int64) - 1


@dataclass(frozen=True, eq=False)
class DepTree:
    """Integer-encoded sentence.

    ``parents[k]`` is the CoNLL head of node ``k + 1`` (0 = root); ``order``
    is a parents-before-children traversal of 0-based node indices.
    """

    words: np.ndarray
    funcs: np.ndarray
    parents: np.ndarray
    order: np.ndarray
    sentence_id: int = 0

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def from_arrays(cls, words: Sequence[int], funcs: Sequence[int],
                    parents: Sequence[int], sentence_id: int = 0) -> "DepTree":
        parents = np.asarray(parents, dtype=np.int64)
        if len(parents) and (parents.min() < 0 or parents.max() > len(parents)):
            raise StructureError(f"sentence {sentence_id}: head out of range")
        order = traversal_order(parents)
        arrs = [np.asarray(a, dtype=np.int64) for a in (words, funcs)]
        for a in (*arrs, parents, order):
            a.setflags(write=False)
        return cls(arrs[0], arrs[1], parents, order, sentence_id)

    def children(self) -> list[list[int]]:
        """0-based child lists per 0-based node, in traversal order."""
        ch: list[list[int]] = [[] for _ in range(len(self))]
        for node in self.order:
            head = self.parents[node]
            if head:
                ch[head - 1].append(int(node))
        return ch


def encode_tree(sentence: RawSentence, vocab: Vocabulary,
                inventory: SynFuncInventory, topology: str = "tree") -> DepTree:
    words = [vocab.id(t.form) for t in sentence.tokens]
    if topology == "chain":
        k = len(words)
        return DepTree.from_arrays(words, [inventory.other_id] * k,
                                   list(range(k)), sentence.sentence_id)
    if topology != "tree":
        raise ValueError(f"unknown topology {topology!r}")
    heads = [t.head for t in sentence.tokens]
    if heads.count(0) != 1:
        raise StructureError(f"sentence {sentence.sentence_id}: "
                             f"{heads.count(0)} root attachments")
    try:
        return DepTree.from_arrays(words, [inventory.id(t.deprel) for t in sentence.tokens],
                                   heads, sentence.sentence_id)
    except StructureError as e:
        raise StructureError(f"sentence {sentence.sentence_id}: {e}") from None


@dataclass(frozen=True)
class CorpusConfig:
    columns: ColumnMap = ColumnMap()
    min_len: int = 4
    max_len: float = 40
    min_count: int = 40
    top_k: int = 5
    excluded: frozenset[str] = DEFAULT_EXCLUDED_LABELS
    topology: str = "tree"


@dataclass
class Corpus:
    trees: list[DepTree]
    vocab: Vocabulary
    inventory: SynFuncInventory

    def __len__(self) -> int:
        return len(self.trees)


def build_corpus(sentences: Iterable[RawSentence], config: CorpusConfig = CorpusConfig(),
                 vocab: Vocabulary | None = None,
                 inventory: SynFuncInventory | None = None,
                 strict: bool = False) -> Corpus:
    """Filter, build (or reuse) the vocabulary/inventory, and encode.

    Structurally invalid sentences are dropped with a warning unless
    ``strict``.
    """
    kept = filter_sentences(sentences, config.min_len, config.max_len)
    if vocab is None:
        vocab = build_vocabulary(kept, config.min_count)
    if inventory is None:
        top_k = 0 if config.topology == "chain" else config.top_k
        inventory = build_synfunc_inventory(kept, top_k, config.excluded)
    trees, bad = [], 0
    for s in kept:
        try:
            trees.append(encode_tree(s, vocab, inventory, config.topology))
        except StructureError:
            if strict:
                raise
            bad += 1
    if bad:
        logger.warning("dropped %d structurally invalid sentences", bad)
    return Corpus(trees, vocab, inventory)


def write_conll(stream: TextIO, sentences: Iterable[RawSentence],
                extra: Iterable[Sequence[object]] | None = None) -> None:
    """Write CoNLL-X rows (id, form, head, deprel filled; rest ``_``).

    ``extra``, if given, supplies one sequence per sentence whose items are
    appended as an 11th column.
    """
    extra_it = iter(extra) if extra is not None else None
    for s in sentences:
        col = next(extra_it) if extra_it is not None else None
        for k, t in enumerate(s.tokens):
            row = [str(k + 1), t.form, "_", "_", "_", "_", str(t.head), t.deprel, "_", "_"]
            if col is not None:
                row.append(str(col[k]))
            stream.write("\t".join(row) + "\n")
        stream.write("\n")
