"""Command-line entry points.

Four subcommands: ``build-db`` (construct and save a datastore plus its
vocabulary/LM sidecars), ``complete`` (one token or one line from a
context file), ``eval`` (full experiment from a config file), and
``sweep`` (repeat an experiment across one hyper-parameter axis).

Exit codes: 0 success, 2 configuration error, 3 backend unavailable,
4 data error.
"""

from __future__ import annotations

import argparse
import sys

from . import datastore as ds
from .combiner import CombinerConfig, Mode, complete_line, complete_token
from .errors import BackendUnavailable, ConfigError, KnmError
from .harness import (
    human_table,
    parse_config,
    parse_lm_spec,
    run_experiment,
    sweep,
)
from .lm import RemoteLm, load_reference_lm, save_reference_lm, train_reference_lm
from .retrieval import RetrievalIndex
from .tokenizer import EOL_ID, Vocabulary, detokenize, lex, read_corpus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_DATA = 4


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _unit_float(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {value}")
    return value


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knm",
        description="Domain-adaptive code completion: black-box LM plus "
        "a mistakes-only retrieval store.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-db", help="build a datastore from a corpus")
    p.add_argument("--corpus", required=True, help="JSONL corpus (path/text records)")
    p.add_argument("--lm", default="ref:order=2,k=1.0", help="LM spec: ref:order=..,k=.. or remote:URL")
    p.add_argument("--lm-corpus", help="separate training corpus for the reference LM")
    p.add_argument("--mode", choices=[ds.DECOUPLED, ds.FULL], default=ds.DECOUPLED)
    p.add_argument("--out", required=True, help="output datastore path")
    p.add_argument("--d", type=_positive_int, default=64, help="embedding dimension")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_build_db)

    p = sub.add_parser("complete", help="complete the next token or line")
    p.add_argument("--db", required=True, help="datastore built by build-db")
    p.add_argument("--lm", default="ref", help="'ref' (load sidecar) or remote:URL")
    p.add_argument("--context-file", required=True, help="file holding the context source text")
    p.add_argument("--line", action="store_true", help="complete to end of line")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.KNM_BAYESIAN.value)
    p.add_argument("--k", type=_positive_int, default=8)
    p.add_argument("--N", type=_positive_int, default=8, help="observation window size")
    p.add_argument("--fixed-lambda", type=_unit_float, default=0.1)
    p.add_argument("--max-tokens", type=_positive_int, default=32)
    p.set_defaults(func=_cmd_complete)

    p = sub.add_parser("eval", help="run a full evaluation from a config file")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--out", default="knm-out", help="directory for reports and artifacts")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="run an evaluation per hyper-parameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=["k", "N", "lambda"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--csv", default="sweep.csv", help="output CSV path")
    p.set_defaults(func=_cmd_sweep)

    return parser


def _cmd_build_db(args: argparse.Namespace) -> int:
    records = read_corpus(args.corpus)
    token_lists = [lex(text) for _, text in records]
    vocab = Vocabulary.from_token_lists(token_lists)
    sequences = [vocab.encode(tokens) for tokens in token_lists]

    spec = parse_lm_spec(args.lm)
    if spec.kind == "remote":
        lm = RemoteLm(spec.url, vocab.size, dim=args.d)
    else:
        if args.lm_corpus:
            train_lists = [lex(text) for _, text in read_corpus(args.lm_corpus)]
        else:
            train_lists = token_lists
        lm = train_reference_lm(
            [vocab.encode(tokens) for tokens in train_lists],
            spec.order,
            spec.smoothing_k,
            vocab_size=vocab.size,
            dim=args.d,
            seed=args.seed,
        )

    build = ds.build_decoupled if args.mode == ds.DECOUPLED else ds.build_full
    store = build(sequences, lm, args.d)
    ds.save(store, args.out)
    vocab.save(args.out + ".vocab")
    if spec.kind == "ref":
        save_reference_lm(lm, args.out + ".lm")
    print(
        f"{args.mode} store: {len(store)} entries from {store.total_tokens} tokens "
        f"(error rate {store.err():.4f}) -> {args.out}"
    )
    return EXIT_OK


def _cmd_complete(args: argparse.Namespace) -> int:
    store = ds.load(args.db)
    vocab = Vocabulary.load(args.db + ".vocab")
    if args.lm == "ref":
        lm = load_reference_lm(args.db + ".lm")
    else:
        spec = parse_lm_spec(args.lm)
        if spec.kind != "remote":
            raise ConfigError(
                "complete accepts --lm ref (sidecar of --db) or remote:URL"
            )
        lm = RemoteLm(spec.url, vocab.size, dim=store.dim)
    if lm.vocab_size != vocab.size:
        raise ConfigError(
            f"LM vocabulary size {lm.vocab_size} != vocabulary file size {vocab.size}"
        )

    with open(args.context_file, "r", encoding="utf-8") as fh:
        context = vocab.encode(lex(fh.read()))
    index = RetrievalIndex(store)
    config = CombinerConfig(
        mode=Mode(args.mode),
        k=args.k,
        window_size=args.N,
        fixed_lambda=args.fixed_lambda,
    )
    if args.line:
        generated = complete_line(
            context, lm, index, store, config, max_tokens=args.max_tokens
        )
        sys.stdout.write(detokenize(vocab.decode(generated)))
        if not generated or generated[-1] != EOL_ID:
            sys.stdout.write("\n")
    else:
        completion = complete_token(context, lm, index, store, config)
        print(vocab.decode([completion.token])[0])
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    report = run_experiment(config, out_dir=args.out)
    sys.stdout.write(human_table(report))
    print(f"artifacts written to {args.out}/")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    reports = sweep(config, args.axis, values, csv_path=args.csv)
    for value, report in zip(values, reports):
        print(f"== {args.axis} = {value} ==")
        sys.stdout.write(human_table(report))
    print(f"sweep table written to {args.csv}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"knm: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendUnavailable as e:
        print(f"knm: backend unavailable: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (KnmError, OSError) as e:
        print(f"knm: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
