"""Grammar-constrained generation.

A generation run keeps a stack of pending nonterminals, initially just the
start symbol.  Each iteration pops a nonterminal X, encodes the sentence
together with the current context window through E_X, lets D_X choose one
of X's rules by the greedy elimination procedure in ``select_rule``, then
either pushes the rule tail (rightmost child on top, so expansion is
depth-first rightmost-first) or emits the terminal at the *front* of the
output.  The output string is therefore built right to left and parses
under the grammar by construction; the only possible failure is running
out of step budget on a recursive grammar.

``generate_unconstrained`` is the comparison baseline: a single ordinary
encoder-decoder emitting terminals left to right with no guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grammar import Grammar, Rule, Symbol
from .neural import (BOS, EOS, BaselineModel, DecoderNet, ModelFamily,
                     decode_step, encode)

UNBOUNDED = float("inf")
DEFAULT_STEP_BUDGET = 10_000


class ControllerError(ValueError):
    pass


class BudgetExhaustedError(ControllerError):
    """Raised when generation does not terminate within the step budget.

    Partial output is deliberately withheld; only the step count is
    reported.
    """

    def __init__(self, steps: int):
        super().__init__(f"step budget exhausted after {steps} expansions")
        self.steps = steps


def _check_capacity(capacity):
    if capacity != UNBOUNDED and (int(capacity) != capacity or capacity < 1):
        raise ControllerError(f"ctx size must be a positive count or UNBOUNDED, got {capacity}")


@dataclass
class Context:
    """Sliding window over the most recently emitted terminals, newest first.

    Newest-first storage is exactly the final-query order of those
    terminals (generation emits right to left), so the window is fed to
    the encoder as stored.
    """

    capacity: float = UNBOUNDED
    window: list[str] = field(default_factory=list)

    def __post_init__(self):
        _check_capacity(self.capacity)

    def push(self, t: str):
        self.window.insert(0, t)
        while len(self.window) > self.capacity:
            self.window.pop()  # oldest element lives at the right end


@dataclass
class GenState:
    stack: list[Symbol]
    context: Context
    emitted: list[str] = field(default_factory=list)
    step_count: int = 0
    step_budget: int = DEFAULT_STEP_BUDGET


def emit_terminal(state: GenState, t: str) -> GenState:
    """Prepend ``t`` to the output and slide it into the context window."""
    state.emitted.insert(0, t)
    state.context.push(t)
    return state


@dataclass
class RuleChoice:
    """Trace of one select_rule invocation, for inspection in tests."""

    candidates: tuple[Rule, ...]
    positions: list[tuple[int, Symbol, float]] = field(default_factory=list)  # (j, v, rho_plus)
    chosen: Rule | None = None
    early_stop: bool = False


def select_rule(d: DecoderNet, c: np.ndarray, candidates: Sequence[Rule], *,
                decode: Callable = decode_step,
                record: RuleChoice | None = None) -> Rule:
    """Greedy elimination over ``candidates`` (all rules of one nonterminal).

    Walk tail positions j = 1, 2, ...; at each, take the decoder's most
    probable symbol v among the distinct j-th symbols of the surviving
    tails (ties broken by candidate file order) and drop every candidate
    that does not continue with v.  If instead some survivor ends at
    length j-1 and the new probability fell below the previous one, that
    finished candidate is selected.  A single candidate is returned
    without consulting the decoder at all.
    """
    survivors = list(candidates)
    if not survivors:
        raise ControllerError("select_rule: no candidates")
    if any(r.head != survivors[0].head for r in survivors):
        raise ControllerError("select_rule: candidates with mixed heads")
    if record is not None:
        record.candidates = tuple(survivors)

    rho = 0.0
    j = 1
    prev: Symbol = BOS
    h = np.zeros(d.hidden_dim)
    cc = np.zeros(d.hidden_dim)
    while True:
        if len(survivors) == 1:
            break
        # distinct j-th symbols of the still-live longer tails, file order
        pool: list[Symbol] = []
        for r in survivors:
            if len(r.tail) >= j and r.tail[j - 1] not in pool:
                pool.append(r.tail[j - 1])
        if not pool:
            # needs two candidates with identical tails; load_grammar forbids
            raise ControllerError("select_rule: duplicate candidate tails")
        dist, h, cc = decode(d, c, prev, h, cc)
        v = pool[0]
        rho_plus = float(dist[d.output_index(v)])
        for sym in pool[1:]:
            p = float(dist[d.output_index(sym)])
            if p > rho_plus:
                v, rho_plus = sym, p
        if record is not None:
            record.positions.append((j, v, rho_plus))

        finished = [r for r in survivors if len(r.tail) == j - 1]
        if finished and rho_plus < rho:
            if len(finished) > 1:
                raise ControllerError(
                    f"ambiguous finished candidates at position {j}: {finished}")
            if record is not None:
                record.chosen = finished[0]
                record.early_stop = True
            return finished[0]

        survivors = [r for r in survivors if len(r.tail) >= j and r.tail[j - 1] == v]
        rho = rho_plus
        prev = v
        j += 1

    if record is not None:
        record.chosen = survivors[0]
    return survivors[0]


def generate(model: ModelFamily, g: Grammar, sentence: Sequence[int],
             ctx_size: float = UNBOUNDED,
             step_budget: int = DEFAULT_STEP_BUDGET, *,
             select: Callable | None = None) -> list[str]:
    """Translate ``sentence`` (vocabulary ids) into a terminal sequence.

    The result always parses under ``g``.  ``select`` may override rule
    selection for replay tests; it receives (pair, c, candidates).
    """
    if model.grammar.digest() != g.digest():
        raise ControllerError("model was built for a different grammar")
    if not len(sentence):
        raise ControllerError("generate: empty sentence")
    state = GenState(stack=[g.start], context=Context(ctx_size),
                     step_budget=step_budget)
    vocab = model.vocab
    while state.stack:
        if state.step_count >= state.step_budget:
            raise BudgetExhaustedError(state.step_count)
        x = state.stack.pop()
        pair = model.pair_for(x)
        c = encode(pair.encoder, sentence, vocab.encode(state.context.window))
        candidates = g.rules_for(x)
        if select is None:
            r = select_rule(pair.decoder, c, candidates)
        else:
            r = select(pair, c, candidates)
        state.step_count += 1
        if r.is_terminal_rule:
            emit_terminal(state, r.tail[0].name)
        else:
            state.stack.extend(r.tail)  # rightmost child ends up on top
    return list(state.emitted)


def generate_unconstrained(model: BaselineModel, sentence: Sequence[int],
                           max_len: int = 50) -> list[str]:
    """Greedy argmax decoding until <eos> or ``max_len``; no guarantee."""
    if not len(sentence):
        raise ControllerError("generate: empty sentence")
    pair = model.pair
    c = encode(pair.encoder, sentence, [])
    h = np.zeros(pair.decoder.hidden_dim)
    cc = np.zeros(pair.decoder.hidden_dim)
    prev = BOS
    out: list[str] = []
    while len(out) < max_len:
        dist, h, cc = decode_step(pair.decoder, c, prev, h, cc)
        sym = pair.decoder.symbols[int(np.argmax(dist))]
        if sym == EOS:
            break
        out.append(sym.name)
        prev = sym
    return out
