"""Derivation-walk training and k-fold cross-validation.

Training a pair (W, q) replays q's derivation in generation order
(depth-first, rightmost child first) while maintaining the same context
window the generator would see.  Every rule visit is one teacher-forced
encoder/decoder pass followed immediately by an SGD step on the owning
nonterminal's networks: the gold decoder sequence is the rule tail plus
the stop element, so terminal rules train their single-symbol choice too.
The learning rate decays once per epoch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import neural
from .controller import UNBOUNDED, Context
from .corpus import Example
from .earley import NoParseError, UnknownTokenError, derivation_of, parse
from .grammar import Grammar, term
from .neural import STOP, EOS, BaselineModel, ModelFamily, backward, forward, sgd_update

log = logging.getLogger(__name__)


class TrainerError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    ctx_size: float = UNBOUNDED
    hidden_dim: int = 200
    embed_dim: int = 300
    lr_start: float = 1.0
    lr_decay: float = 0.95
    seed: int = 0
    folds: int = 10
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.folds < 2:
            raise TrainerError("folds must be >= 2")
        if not 0 < self.lr_decay <= 1:
            raise TrainerError("lr_decay must be in (0, 1]")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)  # (example index, reason)
    nonfinite_updates: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def train_pair(model: ModelFamily, g: Grammar, sentence: Sequence[int],
               query: Sequence[str], ctx_size: float = UNBOUNDED, *,
               epoch: int = 0, lr_start: float = 1.0, lr_decay: float = 0.95,
               clip_norm: float = 5.0) -> tuple[dict[str, list[float]], int]:
    """One pass over one pair; returns (per-nonterminal losses, skipped updates).

    Raises NoParseError when the query is not in the grammar's language;
    callers decide whether to skip or abort.
    """
    steps = derivation_of(parse(g, list(query))).steps
    ctx = Context(ctx_size)
    losses: dict[str, list[float]] = {}
    nonfinite = 0
    for rule in steps:
        pair = model.pair_for(rule.head)
        targets = [*rule.tail, STOP]
        tape = forward(pair, sentence, model.vocab.encode(ctx.window), targets)
        if not np.isfinite(tape.loss):
            raise TrainerError(
                f"non-finite loss on rule {rule.head.name} (epoch {epoch})")
        if not sgd_update(pair, backward(pair, tape), epoch,
                          lr_start=lr_start, lr_decay=lr_decay, clip_norm=clip_norm):
            nonfinite += 1
        losses.setdefault(rule.head.name, []).append(tape.loss)
        if rule.is_terminal_rule:
            ctx.push(rule.tail[0].name)
    return losses, nonfinite


def train(model: ModelFamily, g: Grammar, corpus: Sequence[Example],
          cfg: TrainConfig) -> TrainReport:
    """cfg.epochs seeded-shuffle passes of per-rule SGD over the corpus."""
    if not corpus:
        raise TrainerError("empty corpus")
    report = TrainReport()
    encoded = [(model.vocab.encode(ex.source), ex.target) for ex in corpus]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    skipped_idx: set[int] = set()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(encoded))
        total, visits = 0.0, 0
        for i in order:
            if i in skipped_idx:
                continue
            sentence, query = encoded[i]
            try:
                losses, nonfinite = train_pair(
                    model, g, sentence, query, cfg.ctx_size, epoch=epoch,
                    lr_start=cfg.lr_start, lr_decay=cfg.lr_decay,
                    clip_norm=cfg.clip_norm)
            except (NoParseError, UnknownTokenError) as e:
                skipped_idx.add(int(i))
                report.skipped.append((int(i), str(e)))
                log.warning("skipping pair %d: %s", i, e)
                continue
            report.nonfinite_updates += nonfinite
            for ls in losses.values():
                total += sum(ls)
                visits += len(ls)
        if visits == 0:
            raise TrainerError("no trainable pairs in corpus")
        report.epoch_losses.append(total / visits)
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.info("epoch %d: mean loss %.4f (%.1fs)", epoch,
                 report.epoch_losses[-1], report.epoch_seconds[-1])
    return report


def train_baseline(model: BaselineModel, g: Grammar, corpus: Sequence[Example],
                   cfg: TrainConfig) -> TrainReport:
    """Ordinary seq2seq training: whole query plus <eos>, no context."""
    if not corpus:
        raise TrainerError("empty corpus")
    report = TrainReport()
    encoded = [(model.vocab.encode(ex.source),
                [term(t) for t in ex.target] + [EOS]) for ex in corpus]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(encoded))
        total = 0.0
        for i in order:
            sentence, targets = encoded[i]
            tape = forward(model.pair, sentence, [], targets)
            if not np.isfinite(tape.loss):
                raise TrainerError(f"non-finite baseline loss (epoch {epoch})")
            if not sgd_update(model.pair, backward(model.pair, tape), epoch,
                              lr_start=cfg.lr_start, lr_decay=cfg.lr_decay,
                              clip_norm=cfg.clip_norm):
                report.nonfinite_updates += 1
            total += tape.loss
        report.epoch_losses.append(total / len(encoded))
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.info("baseline epoch %d: mean loss %.4f", epoch, report.epoch_losses[-1])
    return report


@dataclass
class FoldResult:
    fold: int
    metrics: "Metrics"
    train_seconds: float
    final_loss: float


@dataclass
class CrossvalReport:
    ctx_size: float
    folds: list[FoldResult]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.metrics.accuracy for f in self.folds]))

    @property
    def mean_syn_error_rate(self) -> float:
        return float(np.mean([f.metrics.syn_error_rate for f in self.folds]))

    @property
    def total_train_seconds(self) -> float:
        return float(sum(f.train_seconds for f in self.folds))


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """One seeded shuffle, then contiguous balanced folds (disjoint, covering)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7d5]))
    return np.array_split(rng.permutation(n), folds)


def cross_validate(g: Grammar, corpus: Sequence[Example],
                   cfg: TrainConfig) -> CrossvalReport:
    from .evalcli import evaluate  # late import; evalcli depends on this module

    if len(corpus) < cfg.folds:
        raise TrainerError(f"corpus of {len(corpus)} smaller than {cfg.folds} folds")
    from .corpus import build_vocab
    parts = fold_indices(len(corpus), cfg.folds, cfg.seed)
    results: list[FoldResult] = []
    for k, held in enumerate(parts):
        held_set = set(int(i) for i in held)
        train_set = [ex for i, ex in enumerate(corpus) if i not in held_set]
        test_set = [corpus[int(i)] for i in held]
        ss = np.random.SeedSequence([cfg.seed, k])
        model_seed, shuffle_seed = (int(s) for s in ss.generate_state(2))
        model = neural.build_model(g, build_vocab(train_set, g),
                                   embed_dim=cfg.embed_dim,
                                   hidden_dim=cfg.hidden_dim, seed=model_seed)
        t0 = time.perf_counter()
        rep = train(model, g, train_set, replace(cfg, seed=shuffle_seed))
        dt = time.perf_counter() - t0
        m = evaluate(model, g, test_set, ctx_size=cfg.ctx_size)
        results.append(FoldResult(k, m, dt, rep.final_loss))
        log.info("fold %d/%d: acc %.3f syn_err %.3f (%.1fs)", k + 1, cfg.folds,
                 m.accuracy, m.syn_error_rate, dt)
    return CrossvalReport(cfg.ctx_size, results)
