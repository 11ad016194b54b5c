"""Command-line surface: train, generate, evaluate, parse, synthesize, crossval.

Reports are printed as aligned text tables; pass ``--records PATH`` to any
reporting subcommand to also get machine-readable JSON lines (one object
per epoch or per fold).  The ``CFGDEC_LOG`` environment variable sets the
log level (DEBUG, INFO, WARNING, ...; default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Sequence

from . import checkpoint as ckpt
from . import corpus, neural, trainer
from .controller import (DEFAULT_STEP_BUDGET, UNBOUNDED, BudgetExhaustedError,
                         ControllerError, generate, generate_unconstrained)
from .corpus import CorpusError, Example, TemplateError, load_corpus, save_corpus
from .earley import ExplosionError, NoParseError, UnknownTokenError, parse
from .grammar import Grammar, GrammarError, load_grammar
from .neural import BaselineModel, NeuralError
from .trainer import TrainConfig, TrainerError

log = logging.getLogger(__name__)

_ERRORS = (GrammarError, UnknownTokenError, ExplosionError, CorpusError,
           TemplateError, NeuralError, ControllerError, TrainerError,
           ckpt.CheckpointError, OSError)


@dataclass(frozen=True)
class Metrics:
    total: int
    correct: int
    syntax_errors: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def syn_error_rate(self) -> float:
        return self.syntax_errors / self.total if self.total else 0.0


def evaluate(model, g: Grammar, test: Sequence[Example], *,
             ctx_size: float = UNBOUNDED,
             step_budget: int = DEFAULT_STEP_BUDGET,
             max_len: int = 50) -> Metrics:
    """Exact-match accuracy and syntactic-error rate over ``test``.

    An output counts correct only when it is token-identical to the gold
    query; syntactic validity is judged by parsing under ``g``.  A failed
    generation (step budget) counts as both incorrect and a syntax error.
    """
    correct = 0
    syntax_errors = 0
    baseline = isinstance(model, BaselineModel)
    for ex in test:
        ids = model.vocab.encode(ex.source)
        try:
            if baseline:
                out = generate_unconstrained(model, ids, max_len=max_len)
            else:
                out = generate(model, g, ids, ctx_size, step_budget)
        except BudgetExhaustedError:
            syntax_errors += 1
            continue
        valid = bool(out)
        if valid:
            try:
                parse(g, out)
            except (NoParseError, UnknownTokenError):
                valid = False
        if not valid:
            syntax_errors += 1
        elif tuple(out) == tuple(ex.target):
            correct += 1
    return Metrics(total=len(test), correct=correct, syntax_errors=syntax_errors)


def _table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)


def _write_records(path, records: list[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _ctx_size_arg(s: str) -> float:
    if s.strip().lower() in ("inf", "unbounded", "∞"):
        return UNBOUNDED
    try:
        n = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ctx size must be a positive integer or 'inf', got {s!r}")
    if n < 1:
        raise argparse.ArgumentTypeError("ctx size must be >= 1")
    return float(n)


def _ctx_label(v: float) -> str:
    return "inf" if v == UNBOUNDED else str(int(v))


def _read(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_grammar_file(path) -> Grammar:
    try:
        return load_grammar(_read(path))
    except GrammarError as e:
        raise GrammarError(f"{path}: {e}") from None


def _add_model_opts(p, *, hidden=200, embed=300):
    p.add_argument("--hidden", type=int, default=hidden, help="LSTM hidden size")
    p.add_argument("--embed", type=int, default=embed, help="embedding size")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _cmd_train(args) -> int:
    g = _load_grammar_file(args.grammar)
    loaded = load_corpus(args.corpus, g, allow_skip=args.allow_skip)
    if loaded.rejected:
        print(f"skipped {len(loaded.rejected)} invalid line(s)", file=sys.stderr)
    cfg = TrainConfig(epochs=args.epochs, ctx_size=args.ctx_size,
                      hidden_dim=args.hidden, embed_dim=args.embed,
                      seed=args.seed)
    t0 = time.perf_counter()
    if args.baseline:
        model = neural.build_baseline(g, loaded.vocab, embed_dim=args.embed,
                                      hidden_dim=args.hidden, seed=args.seed)
        report = trainer.train_baseline(model, g, loaded.examples, cfg)
    else:
        model = neural.build_model(g, loaded.vocab, embed_dim=args.embed,
                                   hidden_dim=args.hidden, seed=args.seed)
        report = trainer.train(model, g, loaded.examples, cfg)
    dt = time.perf_counter() - t0
    ckpt.save_model(args.checkpoint, model, ctx_size=args.ctx_size,
                    extra={"epochs": args.epochs, "seed": args.seed})
    rows = [[str(e), f"{loss:.4f}", f"{sec:.1f}"]
            for e, (loss, sec) in enumerate(zip(report.epoch_losses,
                                                report.epoch_seconds))]
    print(_table(["epoch", "mean_loss", "seconds"], rows[-10:]))
    print(f"trained {len(loaded.examples)} pairs in {dt:.1f}s; "
          f"checkpoint written to {args.checkpoint}")
    if report.skipped:
        print(f"skipped {len(report.skipped)} unparseable pair(s)", file=sys.stderr)
    if args.records:
        _write_records(args.records, [
            {"event": "epoch", "epoch": e, "mean_loss": loss, "seconds": sec}
            for e, (loss, sec) in enumerate(zip(report.epoch_losses,
                                                report.epoch_seconds))])
    return 0


def _cmd_generate(args) -> int:
    model, header = ckpt.load_model(args.checkpoint)
    g = model.grammar
    sentence = corpus.tokenize_nl(args.sentence)
    if not sentence:
        raise ControllerError("empty sentence")
    ids = model.vocab.encode(sentence)
    if isinstance(model, BaselineModel):
        out = generate_unconstrained(model, ids, max_len=args.max_len)
    else:
        ctx = args.ctx_size if args.ctx_size is not None else ckpt.ctx_size_of(header)
        out = generate(model, g, ids, ctx, args.step_budget)
    print(" ".join(out))
    return 0


def _cmd_evaluate(args) -> int:
    model, header = ckpt.load_model(args.checkpoint)
    g = model.grammar
    loaded = load_corpus(args.corpus, g, allow_skip=args.allow_skip)
    ctx = args.ctx_size if args.ctx_size is not None else ckpt.ctx_size_of(header)
    m = evaluate(model, g, loaded.examples, ctx_size=ctx, max_len=args.max_len)
    print(_table(["total", "correct", "accuracy", "syn_errors", "syn_error_rate"],
                 [[str(m.total), str(m.correct), f"{m.accuracy:.4f}",
                   str(m.syntax_errors), f"{m.syn_error_rate:.4f}"]]))
    if args.records:
        _write_records(args.records, [{
            "event": "evaluate", "total": m.total, "correct": m.correct,
            "accuracy": m.accuracy, "syntax_errors": m.syntax_errors,
            "syn_error_rate": m.syn_error_rate, "ctx_size": _ctx_label(ctx)}])
    return 0


def _cmd_parse(args) -> int:
    g = _load_grammar_file(args.grammar)
    tokens = corpus.tokenize_query(args.query)
    try:
        tree = parse(g, tokens)
    except NoParseError as e:
        print(f"no parse: {e}", file=sys.stderr)
        return 1
    print(tree.pretty())
    return 0


def _cmd_synthesize(args) -> int:
    g = _load_grammar_file(args.grammar)
    table = corpus.load_templates(_read(args.templates))
    n = None if args.exhaustive else args.n
    if n is None and not args.exhaustive:
        raise CorpusError("pass --n COUNT or --exhaustive")
    examples = corpus.synthesize(g, table, n, args.seed)
    save_corpus(args.out, examples)
    print(f"wrote {len(examples)} pairs to {args.out}")
    return 0


def _cmd_crossval(args) -> int:
    g = _load_grammar_file(args.grammar)
    loaded = load_corpus(args.corpus, g, allow_skip=args.allow_skip)
    ctx_sizes = [_ctx_size_arg(s) for s in args.ctx_sizes.split(",") if s.strip()]
    if not ctx_sizes:
        raise TrainerError("no context sizes given")
    rows = []
    records = []
    for ctx in ctx_sizes:
        cfg = TrainConfig(epochs=args.epochs, ctx_size=ctx,
                          hidden_dim=args.hidden, embed_dim=args.embed,
                          seed=args.seed, folds=args.folds)
        rep = trainer.cross_validate(g, loaded.examples, cfg)
        rows.append([_ctx_label(ctx), f"{rep.mean_accuracy:.4f}",
                     f"{rep.mean_syn_error_rate:.4f}",
                     f"{rep.total_train_seconds:.1f}"])
        for f in rep.folds:
            records.append({"event": "fold", "ctx_size": _ctx_label(ctx),
                            "fold": f.fold, "accuracy": f.metrics.accuracy,
                            "syn_error_rate": f.metrics.syn_error_rate,
                            "train_seconds": f.train_seconds,
                            "final_loss": f.final_loss})
    print(_table(["ctx_size", "accuracy", "syn_error_rate", "train_time_s"], rows))
    if args.records:
        _write_records(args.records, records)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="cfgdec",
        description="Grammar-constrained neural translation of questions into queries.")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--grammar", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ctx-size", type=_ctx_size_arg, default=UNBOUNDED,
                   metavar="N|inf", help="context window size (default: inf)")
    _add_model_opts(p)
    p.add_argument("--baseline", action="store_true",
                   help="train the unconstrained encoder-decoder instead")
    p.add_argument("--allow-skip", action="store_true",
                   help="drop corpus lines whose target does not parse")
    p.add_argument("--records", help="write per-epoch JSON lines here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="translate one sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--ctx-size", type=_ctx_size_arg, default=None, metavar="N|inf",
                   help="override the checkpoint's context size")
    p.add_argument("--step-budget", type=int, default=DEFAULT_STEP_BUDGET)
    p.add_argument("--max-len", type=int, default=50,
                   help="baseline decoding cap")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="metrics over a test corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ctx-size", type=_ctx_size_arg, default=None, metavar="N|inf")
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--allow-skip", action="store_true")
    p.add_argument("--records")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("parse", help="parse a query and print its tree")
    p.add_argument("--grammar", required=True)
    p.add_argument("--query", required=True)
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("synthesize", help="build a corpus from templates")
    p.add_argument("--grammar", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("crossval", help="k-fold cross-validation report")
    p.add_argument("--grammar", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--ctx-sizes", default="inf",
                   help="comma-separated, e.g. 3,5,inf")
    _add_model_opts(p)
    p.add_argument("--allow-skip", action="store_true")
    p.add_argument("--records")
    p.set_defaults(func=_cmd_crossval)
    return top


def cli_main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("CFGDEC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
