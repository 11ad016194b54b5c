"""Earley parsing and derivation extraction.

``parse`` turns a token sequence into a :class:`ParseTree` under a grammar.
Ambiguity is resolved deterministically (lowest-file-order rule at the
leftmost choice point, lexicographically smallest child split) and surfaced
through a diagnostics flag rather than an error, so every parsable query has
exactly one canonical tree.

``derivation_of`` linearizes a tree into the rule-application order used by
the stack controller: depth-first, rightmost child first.  Rule tails are
pushed onto a stack in tail order and the top is expanded next, so terminals
come out right-to-left; prepending each emitted terminal rebuilds the query.

``recognize_all`` enumerates the full bounded-length language by brute force
and serves as the independent oracle for ``parse`` in the test suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .grammar import NONTERMINAL, Grammar, ParseTree, Rule, Symbol

_MAX_RECOGNIZE_LEN = 20
_MAX_LANGUAGE_SIZE = 10**6


class UnknownTokenError(ValueError):
    def __init__(self, token, position):
        super().__init__(f"token {token!r} at index {position} is not a grammar terminal")
        self.token = token
        self.position = position


class NoParseError(ValueError):
    def __init__(self, furthest):
        super().__init__(f"input does not parse; furthest progress at token index {furthest}")
        self.furthest = furthest


class ExplosionError(RuntimeError):
    pass


@dataclass(frozen=True)
class EarleyItem:
    """Dotted rule spanning ``origin..end`` with ``dot`` tail positions matched."""

    rule: Rule
    dot: int
    origin: int

    def next_symbol(self) -> Symbol | None:
        if self.dot >= len(self.rule.tail):
            return None
        return self.rule.tail[self.dot]

    @property
    def complete(self) -> bool:
        return self.dot == len(self.rule.tail)


@dataclass
class ParseDiagnostics:
    ambiguous: bool = False


def _chart(g: Grammar, tokens: list[str]):
    n = len(tokens)
    sets: list[list[EarleyItem]] = [[] for _ in range(n + 1)]
    seen: list[set[EarleyItem]] = [set() for _ in range(n + 1)]

    def add(i, item):
        if item not in seen[i]:
            seen[i].add(item)
            sets[i].append(item)

    for r in g.rules_for(g.start):
        add(0, EarleyItem(r, 0, 0))

    for i in range(n + 1):
        pos = 0
        while pos < len(sets[i]):
            item = sets[i][pos]
            pos += 1
            sym = item.next_symbol()
            if sym is None:
                # Completion: no epsilon rules, so origin < i and that set is final.
                for prev in sets[item.origin]:
                    nxt = prev.next_symbol()
                    if nxt is not None and nxt.kind == NONTERMINAL and nxt.name == item.rule.head.name:
                        add(i, EarleyItem(prev.rule, prev.dot + 1, prev.origin))
            elif sym.kind == NONTERMINAL:
                for r in g.rules_for(sym):
                    add(i, EarleyItem(r, 0, i))
            else:
                if i < n and tokens[i] == sym.name:
                    add(i + 1, EarleyItem(item.rule, item.dot + 1, item.origin))
    return sets


def parse(g: Grammar, tokens: list[str], diagnostics: ParseDiagnostics | None = None) -> ParseTree:
    """Parse ``tokens`` into the canonical tree rooted at the start symbol.

    Raises :class:`UnknownTokenError` for tokens outside the terminal
    alphabet and :class:`NoParseError` (reporting furthest progress) when the
    input is not in the language.  If ``diagnostics`` is given, its
    ``ambiguous`` flag is set when more than one parse existed.
    """
    if not tokens:
        raise NoParseError(0)
    for i, t in enumerate(tokens):
        if not g.is_terminal(t):
            raise UnknownTokenError(t, i)

    n = len(tokens)
    sets = _chart(g, tokens)
    accepted = any(
        it.complete and it.origin == 0 and it.rule.head == g.start for it in sets[n]
    )
    if not accepted:
        furthest = max(i for i in range(n + 1) if sets[i])
        raise NoParseError(furthest)

    # Completed spans, for top-down tree extraction.
    completed: dict[tuple[str, int, int], list[Rule]] = {}
    ends_by: dict[tuple[str, int], list[int]] = {}
    for end, items in enumerate(sets):
        for it in items:
            if it.complete:
                key = (it.rule.head.name, it.origin, end)
                completed.setdefault(key, []).append(it.rule)
                span_key = (it.rule.head.name, it.origin)
                if end not in ends_by.setdefault(span_key, []):
                    ends_by[span_key].append(end)
    for rules in completed.values():
        rules.sort(key=lambda r: r.index)
    for ends in ends_by.values():
        ends.sort()

    diag = diagnostics if diagnostics is not None else ParseDiagnostics()

    def splits(rule: Rule, i: int, k: int):
        """Child-boundary vectors for ``rule`` over [i, k), ascending."""
        m = len(rule.tail)

        def go(j: int, pos: int, acc: list[int]):
            if j == m:
                if pos == k:
                    yield acc.copy()
                return
            sym = rule.tail[j]
            for end in ends_by.get((sym.name, pos), []):
                if end > k:
                    break
                if j == m - 1 and end != k:
                    continue
                acc.append(end)
                yield from go(j + 1, end, acc)
                acc.pop()

        yield from go(0, i, [])

    def build(x: Symbol, i: int, k: int,
              active: frozenset = frozenset()) -> ParseTree:
        rules = completed[(x.name, i, k)]
        if len(rules) > 1:
            diag.ambiguous = True
        # Only unit rules keep the span (no epsilon rules), so a cycle can
        # happen only along a chain of unit rules over one fixed span.  Track
        # that chain and take the first file-order rule and smallest split
        # whose subtrees complete without re-entering it; a descendant can
        # dead-end against the chain, in which case back off to the next
        # alternative (the excised parse is always reachable this way).
        chain = active | {(x.name, i, k)}
        for rule in rules:
            if rule.is_terminal_rule:
                leaf = ParseTree(rule.tail[0])
                return ParseTree(x, (leaf,), rule)
            unit = len(rule.tail) == 1
            if unit and (rule.tail[0].name, i, k) in chain:
                continue
            gen = splits(rule, i, k)
            head = list(itertools.islice(gen, 2))
            if len(head) > 1:
                diag.ambiguous = True
            for ends in itertools.chain(head, gen):
                bounds = [i, *ends]
                try:
                    children = tuple(
                        build(rule.tail[j], bounds[j], bounds[j + 1],
                              chain if unit else frozenset())
                        for j in range(len(rule.tail))
                    )
                except NoParseError:
                    continue
                return ParseTree(x, children, rule)
        raise NoParseError(k)  # no cycle-free completion; caller backtracks

    return build(g.start, 0, n)


@dataclass(frozen=True)
class Derivation:
    """Rule applications in stack-replay order plus the tree they rebuild."""

    steps: tuple[Rule, ...]
    tree: ParseTree


def derivation_of(tree: ParseTree) -> Derivation:
    """Linearize ``tree`` depth-first with the rightmost child expanded first."""
    steps: list[Rule] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.rule is None:
            raise ValueError(f"malformed tree: internal node {node.node!r} has no rule")
        steps.append(node.rule)
        if not node.rule.is_terminal_rule:
            # Tail order on a stack: popping yields the rightmost child first.
            stack.extend(node.children)
    return Derivation(tuple(steps), tree)


def replay(g: Grammar, steps: list[Rule] | tuple[Rule, ...]) -> ParseTree:
    """Rebuild the tree a step sequence encodes by replaying the stack discipline.

    Inverse of :func:`derivation_of`; raises ValueError if the steps do not
    form a complete derivation from the start symbol.
    """
    it = iter(steps)

    def expand(x: Symbol) -> ParseTree:
        try:
            rule = next(it)
        except StopIteration:
            raise ValueError("step sequence ended with nonterminals pending") from None
        if rule.head != x:
            raise ValueError(f"step {rule!r} does not expand pending nonterminal {x!r}")
        if rule.is_terminal_rule:
            return ParseTree(x, (ParseTree(rule.tail[0]),), rule)
        # Children are produced right-to-left; reverse to tree order.
        children = [expand(sym) for sym in reversed(rule.tail)]
        return ParseTree(x, tuple(reversed(children)), rule)

    tree = expand(g.start)
    leftover = sum(1 for _ in it)
    if leftover:
        raise ValueError(f"{leftover} step(s) left over after the derivation completed")
    return tree


def recognize_all(g: Grammar, max_len: int) -> set[tuple[str, ...]]:
    """All token sequences of length <= ``max_len`` derivable from the start.

    Exhaustive breadth-first expansion of sentential forms with a minimum
    completion-length bound (every symbol yields at least one terminal).
    Independent of :func:`parse`; used as its oracle.
    """
    if max_len > _MAX_RECOGNIZE_LEN:
        raise ValueError(f"max_len {max_len} exceeds guard {_MAX_RECOGNIZE_LEN}")
    results: set[tuple[str, ...]] = set()
    if max_len <= 0:
        return results
    start_form = (g.start,)
    frontier = [start_form]
    visited = {start_form}
    while frontier:
        form = frontier.pop()
        nt_at = next((j for j, s in enumerate(form) if s.kind == NONTERMINAL), None)
        if nt_at is None:
            results.add(tuple(s.name for s in form))
            if len(results) > _MAX_LANGUAGE_SIZE:
                raise ExplosionError(f"language exceeds {_MAX_LANGUAGE_SIZE} strings")
            continue
        for rule in g.rules_for(form[nt_at]):
            new_form = form[:nt_at] + rule.tail + form[nt_at + 1 :]
            if len(new_form) > max_len:
                continue
            if new_form not in visited:
                visited.add(new_form)
                frontier.append(new_form)
                if len(visited) > 4 * _MAX_LANGUAGE_SIZE:
                    raise ExplosionError("sentential-form frontier exceeded guard")
    return results
