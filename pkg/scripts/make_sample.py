"""Regenerate the bundled sample corpus and Brown-style cluster file.

    python scripts/make_sample.py src/thmm/data
"""

import sys
from pathlib import Path

import numpy as np

from thmm.corpus import RawSentence, Token, write_conll
from thmm.model import ModelMeta, ModelParams
from thmm.synthetic import block_emissions, dirichlet_params, sample_corpus

LABELS = ["nmod", "pmod", "sub", "obj", "p", "det"]
ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
VOWELS = ["a", "e", "i", "o", "u"]


def forms(n, rng):
    out = set()
    while len(out) < n:
        out.add("".join(rng.choice(ONSETS) + rng.choice(VOWELS)
                        for _ in range(int(rng.integers(1, 4)))))
    return sorted(out)


def main(outdir):
    rng = np.random.default_rng(2015)
    meta = ModelMeta(8, 48, len(LABELS))
    gen = dirichlet_params(meta, rng, trans_conc=0.2)
    gen = ModelParams(meta, gen.trans, block_emissions(meta, rng, 0.9), gen.root)
    trees, states = sample_corpus(gen, 500, rng, min_len=5, max_len=20,
                                  func_probs=[0.3, 0.2, 0.15, 0.15, 0.1, 0.1])
    words = forms(meta.n_words, rng)
    sents = []
    for t in trees:
        toks = tuple(Token(words[w], int(h), "ROOT" if h == 0 else LABELS[f])
                     for w, f, h in zip(t.words, t.funcs, t.parents))
        sents.append(RawSentence(toks, t.sentence_id))
    outdir = Path(outdir)
    with open(outdir / "sample.conll", "w", encoding="utf-8") as f:
        write_conll(f, sents)
    # cluster = state whose block the word belongs to; 3-bit paths
    with open(outdir / "sample_clusters.txt", "w", encoding="utf-8") as f:
        counts = np.bincount(np.concatenate([t.words for t in trees]), minlength=meta.n_words)
        for w, form in enumerate(words):
            f.write(f"{w % meta.n_states:03b}\t{form}\t{counts[w]}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/thmm/data")
