"""Command-line entry point: ``thmm {train,embed,decode,inspect}``.

Options may also come from a flat ``key = value`` file given with
``--config``; keys are long option names (dashes or underscores).
Command-line flags override the file.

Exit codes: 1 configuration error, 2 I/O or input-format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .corpus import (ColumnMap, Corpus, CorpusConfig, CorpusError, DEFAULT_EXCLUDED_LABELS,
                     SynFuncInventory, Vocabulary, build_corpus, iter_conll, write_conll)
from .inference import NumericalError, ProjectionConfig
from .model import (ConfigError, ModelMeta, init_brown, init_random, param_count,
                    read_brown_clusters, top_emissions, transition_entropy, validate)
from .representations import (decode_labels, export_token_reps, export_type_reps,
                              post_token, post_type)
from .serialize import (FormatError, load_model, load_state, read_sidecar, save_model,
                        save_state)
from .training import (TrainConfig, resolve_threads, train, train_stepwise_em,
                       train_with_splitting)

log = logging.getLogger("thmm")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_corpus_opts(p):
    g = p.add_argument_group("corpus")
    g.add_argument("--corpus", help="CoNLL file")
    g.add_argument("--columns", default="2,7,8",
                   help="1-based form,head,deprel columns (default CoNLL-X 2,7,8)")
    g.add_argument("--min-len", type=int, default=4,
                   help="drop sentences with length <= this")
    g.add_argument("--max-len", type=int, default=40,
                   help="drop sentences with length >= this")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value option file")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default $THMM_THREADS or 1)")
    common.add_argument("--log-level", default="INFO")

    parser = _Parser(prog="thmm", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model")
    _add_corpus_opts(t)
    t.add_argument("--model-out", help="output model path")
    t.add_argument("--mode", choices=["tree", "chain"], default="tree",
                   help="dependency trees, or left-to-right chains (sequential HMM)")
    t.add_argument("--topk-funcs", type=int, default=5,
                   help="syntactic functions kept; 0 gives the unlabeled-tree model")
    t.add_argument("--exclude-funcs", default=",".join(sorted(DEFAULT_EXCLUDED_LABELS)),
                   help="comma-separated function-marker labels never kept")
    t.add_argument("--min-count", type=int, default=40)
    t.add_argument("--states", type=int, default=128,
                   help="hidden states (initial count when splitting)")
    t.add_argument("--clusters", help="Brown clusters, bitpath<TAB>word<TAB>count")
    t.add_argument("--cluster-prefix", type=int, default=None)
    t.add_argument("--brown-factor", type=float, default=1000.0)
    t.add_argument("--em", choices=["batch", "stepwise"], default="stepwise")
    t.add_argument("--alpha", type=float, default=1.0)
    t.add_argument("--batch-size", type=int, default=1000)
    t.add_argument("--epochs", type=int, default=2)
    t.add_argument("--keep-k", type=int, default=None, help="k-best projection (default N/8)")
    t.add_argument("--no-projection", action="store_true")
    t.add_argument("--smoothing", type=float, default=0.0)
    t.add_argument("--heldout", type=float, default=0.05, help="held-out fraction")
    t.add_argument("--rel-tol", type=float, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--split-schedule", default=None,
                   help="rounds like '2s,2s,2': epochs per round, 's' = split afterwards")
    t.add_argument("--split-noise", type=float, default=0.01)
    t.add_argument("--checkpoint", help="write resumable trainer state here")
    t.add_argument("--resume", help="continue stepwise EM from a --checkpoint file; "
                                    "--epochs counts the total")

    for name, hlp in (("embed", "extract word representations"),
                      ("decode", "max-product state labels as an extra CoNLL column")):
        e = sub.add_parser(name, parents=[common], help=hlp)
        _add_corpus_opts(e)
        e.add_argument("--model", help="trained model path")
        e.add_argument("--out", help="output path (default stdout)")
        e.add_argument("--keep-all", action="store_true", help="skip length filtering")
        if name == "embed":
            e.add_argument("--method", choices=["post-type", "post-token", "max-product"],
                           default="post-type")
            e.add_argument("--format", choices=["text-vec", "tsv"], default="text-vec")
            e.add_argument("--keep-k", type=int, default=None,
                           help="apply k-best projection during extraction")

    i = sub.add_parser("inspect", parents=[common], help="summarize a model")
    i.add_argument("--model", help="trained model path")
    i.add_argument("--top", type=int, default=5, help="top words per (state, function)")
    return parser


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        sp = _subparser(parser, args.command)
        known = {a.dest: a for a in sp._actions}
        defaults = {}
        for k, v in values.items():
            if k not in known or k == "config":
                raise ConfigError(f"unknown config key {k!r} for {args.command}")
            if isinstance(known[k], argparse._StoreTrueAction):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[k] = v
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) in (None, ""):
            raise ConfigError(f"--{n.replace('_', '-')} is required for {args.command}")


def _columns(spec: str) -> ColumnMap:
    try:
        form, head, deprel = (int(x) for x in spec.split(","))
    except ValueError:
        raise ConfigError(f"--columns expects three integers, got {spec!r}") from None
    return ColumnMap(form=form, head=head, deprel=deprel)


def _schedule(spec: str) -> list[tuple[int, bool]]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        split = part.endswith("s")
        try:
            out.append((int(part.rstrip("s")), split))
        except ValueError:
            raise ConfigError(f"bad split schedule entry {part!r}") from None
    return out


def _read_sentences(path: str, columns: ColumnMap):
    with open(path, encoding="utf-8") as f:
        return list(iter_conll(f, columns))


def _check_ranges(args) -> None:
    if args.min_len > args.max_len:
        raise ConfigError("--min-len exceeds --max-len")
    if args.command == "train":
        if args.states < 1:
            raise ConfigError("--states must be >= 1")
        if args.min_count < 1:
            raise ConfigError("--min-count must be >= 1")
        if args.topk_funcs < 0:
            raise ConfigError("--topk-funcs must be >= 0")
        if args.brown_factor < 1:
            raise ConfigError("--brown-factor must be >= 1")


def cmd_train(args) -> int:
    _need(args, "corpus", "model_out")
    _check_ranges(args)
    ccfg = CorpusConfig(columns=_columns(args.columns), min_len=args.min_len,
                        max_len=args.max_len, min_count=args.min_count,
                        top_k=args.topk_funcs,
                        excluded=frozenset(x.strip().lower() for x in
                                           args.exclude_funcs.split(",") if x.strip()),
                        topology=args.mode)
    tcfg = TrainConfig(mode=args.em, alpha=args.alpha, minibatch_size=args.batch_size,
                       epochs=args.epochs, projection=not args.no_projection,
                       keep_k=args.keep_k, smoothing=args.smoothing,
                       heldout_fraction=args.heldout, seed=args.seed,
                       threads=resolve_threads(args.threads), rel_tol=args.rel_tol)
    tcfg.check()
    schedule = _schedule(args.split_schedule) if args.split_schedule else None
    corpus = build_corpus(_read_sentences(args.corpus, ccfg.columns), ccfg)
    if not corpus.trees:
        raise ConfigError("no sentences left after filtering")
    meta = ModelMeta(args.states, len(corpus.vocab), corpus.inventory.size, args.seed)
    state = None
    if args.resume:
        if args.em != "stepwise" or schedule:
            raise ConfigError("--resume needs --em stepwise and no --split-schedule")
        params0, state = load_state(args.resume)
        if (params0.meta.n_words, params0.meta.n_funcs, params0.meta.seed) != \
                (meta.n_words, meta.n_funcs, meta.seed):
            raise ConfigError("checkpoint does not match this corpus/seed")
        log.info("resuming at update %d, epoch %d", state.t, state.epoch)
    elif args.clusters:
        with open(args.clusters, encoding="utf-8") as f:
            clusters = read_brown_clusters(f, corpus.vocab.index, args.cluster_prefix)
        params0 = init_brown(meta, clusters, args.brown_factor)
        log.info("Brown init: %d clusters, factor %g", clusters.n_clusters, args.brown_factor)
    else:
        params0 = init_random(meta)
    log.info("corpus: %d trees, V=%d, S=%d (%s)", len(corpus), len(corpus.vocab),
             corpus.inventory.size, ",".join(corpus.inventory.labels) or "unlabeled")
    if state is not None:
        result = train_stepwise_em(corpus.trees, params0, tcfg, state=state)
    elif schedule:
        result = train_with_splitting(corpus.trees, params0, tcfg, schedule,
                                      noise=args.split_noise)
    else:
        result = train(corpus.trees, params0, tcfg)
    for epoch, ll in enumerate(result.heldout_trace, 1):
        log.info("epoch %d held-out log-likelihood %.6f", epoch, ll)
    report = validate(result.params)
    if not report.ok:
        raise NumericalError(f"trained model failed validation:\n{report}")
    sidecar = {
        "corpus": {"path": str(args.corpus), "columns": asdict(ccfg.columns),
                   "min_len": ccfg.min_len, "max_len": ccfg.max_len,
                   "min_count": ccfg.min_count, "top_k": ccfg.top_k,
                   "excluded": sorted(ccfg.excluded), "topology": ccfg.topology},
        "vocabulary": corpus.vocab.forms(),
        "functions": list(corpus.inventory.labels),
        "training": {**asdict(tcfg), "split_schedule": args.split_schedule,
                     "split_noise": args.split_noise, "states_initial": args.states,
                     "clusters": args.clusters, "brown_factor": args.brown_factor},
        "trace": {"train": result.trace, "heldout": result.heldout_trace},
    }
    save_model(args.model_out, result.params, sidecar)
    if args.checkpoint and result.state is not None:
        save_state(args.checkpoint, result.params, result.state)
    log.info("wrote %s (N=%d)", args.model_out, result.params.N)
    return 0


def _load_with_sidecar(args):
    _need(args, "model")
    params = load_model(args.model)
    try:
        side = read_sidecar(args.model)
    except FileNotFoundError:
        raise FileNotFoundError(f"{args.model}.json sidecar missing") from None
    vocab = Vocabulary(tuple(side["vocabulary"][:-1]), side["corpus"]["min_count"])
    inv = SynFuncInventory(tuple(side["functions"]), frozenset(side["corpus"]["excluded"]))
    return params, side, vocab, inv


def _extraction_corpus(args, side, vocab, inv) -> tuple[list, Corpus]:
    c = side["corpus"]
    path = args.corpus or c["path"]
    columns = _columns(args.columns) if args.columns != "2,7,8" else ColumnMap(**c["columns"])
    cfg = CorpusConfig(columns=columns, min_len=-1 if args.keep_all else args.min_len,
                       max_len=float("inf") if args.keep_all else args.max_len,
                       topology=c["topology"])
    sentences = _read_sentences(path, columns)
    corpus = build_corpus(sentences, cfg, vocab=vocab, inventory=inv)
    kept = {t.sentence_id for t in corpus.trees}
    return [s for s in sentences if s.sentence_id in kept], corpus


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def _write_labels(out, sentences, corpus, params):
    labels = decode_labels(corpus.trees, params)
    write_conll(out, sentences, extra=labels)


def cmd_embed(args) -> int:
    params, side, vocab, inv = _load_with_sidecar(args)
    sentences, corpus = _extraction_corpus(args, side, vocab, inv)
    if not corpus.trees:
        raise ConfigError("no sentences to embed")
    proj = ProjectionConfig(True, args.keep_k) if args.keep_k else ProjectionConfig()
    out = _open_out(args.out)
    try:
        if args.method == "post-type":
            export_type_reps(post_type(corpus.trees, params, proj), vocab, out, args.format)
        elif args.method == "post-token":
            for tree in corpus.trees:
                export_token_reps(post_token(tree, params, proj), vocab, out)
        else:
            _write_labels(out, sentences, corpus, params)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_decode(args) -> int:
    params, side, vocab, inv = _load_with_sidecar(args)
    sentences, corpus = _extraction_corpus(args, side, vocab, inv)
    out = _open_out(args.out)
    try:
        _write_labels(out, sentences, corpus, params)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_inspect(args) -> int:
    _need(args, "model")
    params = load_model(args.model)
    m = params.meta
    trans_n, emis_n = param_count(m)
    try:
        side = read_sidecar(args.model)
        vocab = side["vocabulary"]
        funcs = side["functions"] + ["<other>"]
    except FileNotFoundError:
        vocab, funcs = None, [str(l) for l in range(m.n_funcs)]
    p = print
    p(f"states N: {m.n_states}")
    p(f"vocabulary V: {m.n_words}")
    p(f"functions S: {m.n_funcs} ({', '.join(funcs)})")
    p(f"seed: {m.seed}")
    p(f"parameters: transitions {trans_n}, emissions {emis_n}")
    p(f"validate: {validate(params)}")
    p(f"transition entropy (column mean): {transition_entropy(params):.6f} bits")
    p(f"transition entropy (flattened): {transition_entropy(params, flattened=True):.6f} bits")
    if args.top > 0:
        p("top emissions:")
        for l in range(m.n_funcs):
            for j in range(m.n_states):
                words = " ".join(f"{vocab[w] if vocab else w}:{pr:.3f}"
                                 for w, pr in top_emissions(params, j, l, args.top))
                p(f"  state {j} function {funcs[l]}: {words}")
    return 0


COMMANDS = {"train": cmd_train, "embed": cmd_embed, "decode": cmd_decode,
            "inspect": cmd_inspect}


def _resolved(args) -> str:
    return json.dumps({k: v for k, v in sorted(vars(args).items())}, sort_keys=True,
                      default=str)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"thmm: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"thmm: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"thmm: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    except ValueError as e:
        print(f"thmm: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(_resolved(args), file=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as e:
        print(f"thmm: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CorpusError, FormatError) as e:
        print(f"thmm: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as e:
        print(f"thmm: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
