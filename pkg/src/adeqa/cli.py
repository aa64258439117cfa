"""``ade`` command line: ingest, train, eval, predict.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant breach.
``ADE_LOG=debug|info`` raises log verbosity (default: warnings only).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import Label, generate_synthetic_corpus, load_corpus, make_splits, write_corpus
from .errors import AdeError, DataError, InvariantError, StageError
from .nerstage import DrugLexicon, LexiconRecognizer
from .pipeline import PipelineConfig, evaluate_end_to_end, load_bundle, prediction_record, run_sentence, save_bundle, train_pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("adeqa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# flag name -> (PipelineConfig field, type, help)
CONFIG_FLAGS = {
    "--seed": ("seed", int, "single source of randomness"),
    "--relevance-k": ("relevance_k", int, "classifier folds (default 10)"),
    "--qa-k": ("qa_k", int, "QA folds (default 5)"),
    "--relevance-epochs": ("relevance_epochs", int, None),
    "--qa-epochs": ("qa_epochs", int, None),
    "--relevance-lr": ("relevance_lr", float, None),
    "--qa-lr": ("qa_lr", float, None),
    "--relevance-batch": ("relevance_batch", int, None),
    "--qa-batch": ("qa_batch", int, None),
    "--label-smoothing": ("label_smoothing", float, "QA label smoothing (default 0.1)"),
    "--threshold": ("threshold", float, "relevance threshold tau, inclusive (default 0.5)"),
    "--max-answer-len": ("max_answer_len", int, None),
    "--match": ("match", str, "criterion stored in the bundle: exact|overlap"),
    "--multi-pair-rule": ("multi_pair_rule", str, "any|all"),
    "--dim": ("dim", int, "encoder width d (default 32)"),
    "--hidden": ("hidden", int, "classifier hidden width"),
    "--max-positions": ("max_positions", int, None),
    "--min-count": ("min_count", int, "vocabulary frequency cut-off"),
}


def _synthetic(value):
    try:
        n_pos, n_neg = (int(x) for x in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected N_POS,N_NEG") from None
    if n_pos < 0 or n_neg < 0:
        raise argparse.ArgumentTypeError("counts must be non-negative")
    return n_pos, n_neg


def _add_data_args(p, required_msg):
    p.add_argument("--pos", help="positive records file (id|sentence|AE|b|e|drug|b|e)")
    p.add_argument("--neg", help="negative records file (<id> NEG <sentence>)")
    p.add_argument("--synthetic", type=_synthetic, metavar="N_POS,N_NEG", help=f"generated corpus instead of files ({required_msg})")
    p.add_argument("--synthetic-seed", type=int, default=None, help="generator seed (default: --seed)")
    p.add_argument("--lenient", action="store_true", help="drop pairs whose surface is missing instead of failing")


def build_parser():
    parser = _Parser(prog="ade", description="Cascaded drug / adverse-event extraction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate corpus files and print counts")
    p.add_argument("--pos", required=True)
    p.add_argument("--neg", required=True)
    p.add_argument("--lenient", action="store_true")
    p.add_argument("--split-test", type=float, default=None, help="also write a random split; fraction (<1) or count (>=1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help="directory for split files (train.pos, train.neg, test.pos, test.neg)")

    p = sub.add_parser("train", help="train both stages and write a bundle")
    _add_data_args(p, "or --pos/--neg")
    p.add_argument("--out", required=True, help="bundle path")
    p.add_argument("--config", help="JSON file with any subset of the pipeline config; flags override it")
    p.add_argument("--published-defaults", action="store_true", help="start from the published hyperparameters (lr 3e-5, 3 QA epochs)")
    p.add_argument("--lexicon", help="lexicon-v1 file replacing the trained gazetteer")
    p.add_argument("--log-dir", help="loss logs directory (default: <out>.logs)")
    p.add_argument("--jobs", type=int, default=1)
    for flag, (name, typ, hlp) in CONFIG_FLAGS.items():
        p.add_argument(flag, dest=name, type=typ, default=argparse.SUPPRESS, help=hlp)

    p = sub.add_parser("eval", help="end-to-end evaluation of a bundle")
    p.add_argument("--bundle", required=True)
    _add_data_args(p, "or --pos/--neg")
    p.add_argument("--seed", type=int, default=0, help="synthetic test generator seed when --synthetic-seed is absent")
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--match", choices=("exact", "overlap", "both"), default="both")
    p.add_argument("--traces", action="store_true", help="include per-sentence traces in the report")
    p.add_argument("--lexicon", help="lexicon-v1 file replacing the bundle's gazetteer")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("predict", help="run one sentence through the cascade")
    p.add_argument("--bundle", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--lexicon")
    return parser


def _load_data(args, seed):
    if args.synthetic is not None:
        if args.pos or args.neg:
            raise UsageError("--synthetic excludes --pos/--neg")
        syn_seed = seed if args.synthetic_seed is None else args.synthetic_seed
        return generate_synthetic_corpus(*args.synthetic, syn_seed), f"synthetic:{args.synthetic[0]},{args.synthetic[1]},{syn_seed}"
    if not (args.pos and args.neg):
        raise UsageError("give --pos and --neg, or --synthetic N_POS,N_NEG")
    return load_corpus(args.pos, args.neg, strict=not args.lenient), f"files:{Path(args.pos).name},{Path(args.neg).name}"


def _resolve_config(args) -> PipelineConfig:
    values = PipelineConfig.published().to_dict() if args.published_defaults else {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --config: {exc}") from None
    for name, _, _ in CONFIG_FLAGS.values():
        if hasattr(args, name):
            values[name] = getattr(args, name)
    try:
        return PipelineConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def cmd_ingest(args, out):
    corpus = load_corpus(args.pos, args.neg, strict=not args.lenient)
    st = corpus.stats
    print(st.summary(), file=out)
    print("Category\tNumber of Unique Sentences", file=out)
    print(f"ADE\t{st.pos}", file=out)
    print(f"Non-ADE\t{st.neg}", file=out)
    if st.label_conflicts:
        print(f"warning: {st.label_conflicts} sentences in both files kept as ADE", file=out)
    if args.split_test is not None:
        if not args.out_dir:
            raise UsageError("--split-test needs --out-dir")
        size = args.split_test if args.split_test < 1 else int(args.split_test)
        split = make_splits(corpus, size, args.seed)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_corpus(split.train, out_dir / "train.pos", out_dir / "train.neg")
        write_corpus(split.test, out_dir / "test.pos", out_dir / "test.neg")
        for name, part in (("train", split.train), ("test", split.test)):
            n_pos = sum(s.label is Label.POSITIVE for s in part)
            print(f"{name}\tpos={n_pos}\tneg={len(part) - n_pos}", file=out)
    return EXIT_OK


def cmd_train(args, out):
    config = _resolve_config(args)
    corpus, source = _load_data(args, config.seed)
    bundle = train_pipeline(corpus, config, jobs=args.jobs)
    if args.lexicon:
        bundle.lexicon = DrugLexicon.load(args.lexicon)
    save_bundle(bundle, args.out)

    log_dir = Path(args.log_dir) if args.log_dir else Path(str(args.out) + ".logs")
    log_dir.mkdir(parents=True, exist_ok=True)
    print(f"data\t{source}\tpos={len(corpus.positives)}\tneg={len(corpus.negatives)}", file=out)
    print("stage\tfold\tseed\tfirst_loss\tlast_loss\tvalidation", file=out)
    for stage in ("relevance", "qa"):
        for fold in bundle.training[stage]["folds"]:
            trace = fold["loss_trace"]
            lines = ["epoch\tloss"] + [f"{i + 1}\t{loss!r}" for i, loss in enumerate(trace)]
            (log_dir / f"{stage}_fold{fold['fold']}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
            val = fold.get("validation", {})
            if stage == "relevance" and val:
                shown = f"f1={val['f1']:.4f}"
            elif val:
                shown = f"exact_recall={val['token_exact_recall']:.4f}"
            else:
                shown = "-"
            print(f"{stage}\t{fold['fold']}\t{fold['seed']}\t{trace[0]:.6f}\t{trace[-1]:.6f}\t{shown}", file=out)
    print(f"bundle\t{args.out}", file=out)
    return EXIT_OK


def _recognizer(args):
    return LexiconRecognizer(DrugLexicon.load(args.lexicon)) if args.lexicon else None


def cmd_eval(args, out):
    bundle = load_bundle(args.bundle)
    corpus, source = _load_data(args, args.seed)
    report = evaluate_end_to_end(bundle, corpus.sentences, args.match, verbose=args.traces,
                                 test_source=source, recognizer=_recognizer(args), jobs=args.jobs)
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    for crit, tally in report.tallies.items():
        print(f"[{crit}] " + "  ".join(f"{k}={v}" for k, v in tally.as_dict().items()), file=out)
    print("match\tP\tR\tF1", file=out)
    for crit, s in report.scores.items():
        print(f"{crit}\t{100 * s.precision:.2f}\t{100 * s.recall:.2f}\t{100 * s.f1:.2f}", file=out)
    return EXIT_OK


def cmd_predict(args, out):
    if not args.text.strip():
        raise UsageError("--text is empty")
    bundle = load_bundle(args.bundle)
    trace = run_sentence(bundle, args.text, "cli", recognizer=_recognizer(args))
    if trace.eliminated_at:
        print(f"eliminated at {trace.eliminated_at}", file=out)
        return EXIT_OK
    for mention, pred in trace.predictions:
        rec = prediction_record("cli", mention, pred)
        print(f"{rec['drug']}\t{rec['answer_text']}\t{rec['pred_start_char']}-{rec['pred_end_char']}\t{rec['score']:.4f}", file=out)
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def _exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, InvariantError):
        return EXIT_INVARIANT
    return EXIT_DATA


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    level = getattr(logging, os.environ.get("ADE_LOG", "warning").upper(), None)
    level = level if isinstance(level, int) else logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=err)
    log.setLevel(level)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "ade: error: a command is required")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(str(exc), file=err)
        return EXIT_USAGE
    except (AdeError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
