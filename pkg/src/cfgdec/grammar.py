"""Context-free grammars with a terminal/nonterminal rule partition.

A grammar is the usual 4-tuple (nonterminals, terminals, rules, start), with
one restriction on rule shape: every rule is either a *terminal rule*
``X -> "t"`` (tail is exactly one quoted terminal) or a *nonterminal rule*
``X -> Y1 ... Ym`` (tail is a nonempty sequence of nonterminals).  Mixed
tails, multi-terminal tails and empty tails are rejected at load time.

Grammar files are line-oriented BNF::

    # comment
    S  -> C BL CT BR
    SE -> "SELECT"

Terminals are double-quoted whole tokens, nonterminals are bare identifiers,
and the head of the first rule is the start symbol.  ``Grammar`` and
``ParseTree`` values are immutable after construction and safe for concurrent
reads.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterator

NONTERMINAL = "nt"
TERMINAL = "t"

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class GrammarError(ValueError):
    """Raised for any structural problem found while loading a grammar."""

    def __init__(self, message, line=None, col=None):
        loc = ""
        if line is not None:
            loc = f"line {line}" + (f", col {col}" if col is not None else "")
            message = f"{loc}: {message}"
        super().__init__(message)
        self.line = line
        self.col = col


@dataclass(frozen=True, order=True)
class Symbol:
    """A grammar symbol: ``kind`` is NONTERMINAL or TERMINAL, ``name`` the token."""

    kind: str
    name: str

    def __repr__(self):
        return self.name if self.kind == NONTERMINAL else f'"{self.name}"'


def nt(name: str) -> Symbol:
    return Symbol(NONTERMINAL, name)


def term(name: str) -> Symbol:
    return Symbol(TERMINAL, name)


@dataclass(frozen=True)
class Rule:
    """A production with a classified tail.

    ``index`` is the rule's position in file order; candidate ordering
    everywhere downstream (parsing tie-breaks, rule selection) derives from it.
    """

    head: Symbol
    tail: tuple[Symbol, ...]
    index: int

    @property
    def is_terminal_rule(self) -> bool:
        return len(self.tail) == 1 and self.tail[0].kind == TERMINAL

    def __repr__(self):
        return f"{self.head.name} -> " + " ".join(repr(s) for s in self.tail)


def classify_tail(tail: tuple[Symbol, ...]) -> str:
    """Return the rule kind for ``tail`` or raise GrammarError.

    Total over valid tails: a single terminal is a terminal rule, a nonempty
    all-nonterminal sequence is a nonterminal rule, anything else is invalid.
    """
    if len(tail) == 0:
        raise GrammarError("empty tail (epsilon rules are not supported)")
    kinds = {s.kind for s in tail}
    if kinds == {TERMINAL}:
        if len(tail) != 1:
            raise GrammarError("terminal rule tail must be exactly one terminal")
        return "terminal"
    if kinds == {NONTERMINAL}:
        return "nonterminal"
    raise GrammarError("mixed tail: terminals and nonterminals in one tail")


@dataclass(frozen=True)
class Grammar:
    nonterminals: frozenset[str]
    terminals: frozenset[str]
    rules: tuple[Rule, ...]
    start: Symbol
    _by_head: dict[str, tuple[Rule, ...]] = field(repr=False, hash=False, compare=False, default_factory=dict)

    def rules_for(self, x: Symbol | str) -> tuple[Rule, ...]:
        """All rules headed by ``x``, in file order.  Never empty."""
        name = x.name if isinstance(x, Symbol) else x
        try:
            return self._by_head[name]
        except KeyError:
            raise GrammarError(f"unknown nonterminal {name!r}") from None

    def is_terminal(self, token: str) -> bool:
        return token in self.terminals

    def render(self) -> str:
        """Canonical file text; ``load_grammar(g.render())`` equals ``g``."""
        lines = []
        for r in self.rules:
            tail = " ".join(
                s.name if s.kind == NONTERMINAL else '"%s"' % s.name.replace("\\", "\\\\").replace('"', '\\"')
                for s in r.tail
            )
            lines.append(f"{r.head.name} -> {tail}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """SHA-256 of the canonical rendering; used to pair models with grammars."""
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Grammar):
            return NotImplemented
        return (
            self.nonterminals == other.nonterminals
            and self.terminals == other.terminals
            and self.rules == other.rules
            and self.start == other.start
        )


@dataclass(frozen=True)
class ParseTree:
    """Immutable parse tree node.

    Terminal leaves have no children and no rule; every internal node carries
    the rule expanded there, and its children's root symbols equal the rule
    tail in order.
    """

    node: Symbol
    children: tuple[ParseTree, ...] = ()
    rule: Rule | None = None

    def leaves(self) -> Iterator[ParseTree]:
        if not self.children:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()

    def pretty(self, indent: int = 0) -> str:
        pad = "  " * indent
        if not self.children:
            return f"{pad}{self.node!r}"
        lines = [f"{pad}{self.node.name}"]
        for c in self.children:
            lines.append(c.pretty(indent + 1))
        return "\n".join(lines)


def yield_of(tree: ParseTree) -> list[str]:
    """Left-to-right terminal leaf sequence of ``tree``."""
    return [leaf.node.name for leaf in tree.leaves()]


def _scan_tail(rest: str, lineno: int, col0: int) -> list[Symbol]:
    symbols = []
    i = 0
    n = len(rest)
    while i < n:
        ch = rest[i]
        if ch.isspace():
            i += 1
            continue
        col = col0 + i + 1
        if ch == '"':
            j = i + 1
            buf = []
            while j < n:
                if rest[j] == "\\" and j + 1 < n:
                    buf.append(rest[j + 1])
                    j += 2
                    continue
                if rest[j] == '"':
                    break
                buf.append(rest[j])
                j += 1
            else:
                raise GrammarError("unterminated terminal quote", lineno, col)
            token = "".join(buf)
            if not token or any(c.isspace() for c in token):
                raise GrammarError("terminal must be one nonempty whitespace-free token", lineno, col)
            symbols.append(term(token))
            i = j + 1
        else:
            m = _IDENT_RE.match(rest, i)
            if not m:
                raise GrammarError(f"unexpected character {ch!r}", lineno, col)
            symbols.append(nt(m.group(0)))
            i = m.end()
    return symbols


def _strip_comment(raw: str) -> str:
    """Drop everything from the first '#' that is not inside a quoted terminal."""
    in_quote = False
    i = 0
    while i < len(raw):
        ch = raw[i]
        if in_quote and ch == "\\":
            i += 2
            continue
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return raw[:i]
        i += 1
    return raw


def load_grammar(text: str) -> Grammar:
    """Parse grammar-file contents into a validated :class:`Grammar`.

    Raises :class:`GrammarError` (with line/col where applicable) for syntax
    errors, mixed tails, duplicate rules, name collisions between the
    terminal and nonterminal alphabets, nonterminals with no rules, and a
    missing start symbol (no rules at all).
    """
    rules: list[Rule] = []
    seen: set[tuple[Symbol, tuple[Symbol, ...]]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "->" not in line:
            raise GrammarError("expected 'HEAD -> SYM ...'", lineno, 1)
        head_txt, _, tail_txt = line.partition("->")
        head_txt = head_txt.strip()
        if not _IDENT_RE.fullmatch(head_txt):
            raise GrammarError(f"invalid head {head_txt!r}", lineno, 1)
        tail = tuple(_scan_tail(tail_txt, lineno, line.index("->") + 2))
        try:
            classify_tail(tail)
        except GrammarError as e:
            raise GrammarError(str(e), lineno, 1) from None
        head = nt(head_txt)
        key = (head, tail)
        if key in seen:
            raise GrammarError(f"duplicate rule {head_txt} -> ...", lineno, 1)
        seen.add(key)
        rules.append(Rule(head, tail, index=len(rules)))

    if not rules:
        raise GrammarError("no rules: start symbol missing")

    nonterminal_names = {r.head.name for r in rules}
    terminal_names = {s.name for r in rules for s in r.tail if s.kind == TERMINAL}
    clash = nonterminal_names & terminal_names
    if clash:
        raise GrammarError(f"symbols in both alphabets: {sorted(clash)}")

    for r in rules:
        for s in r.tail:
            if s.kind == NONTERMINAL and s.name not in nonterminal_names:
                raise GrammarError(f"nonterminal {s.name!r} has no rules (undeclared or dead)")

    by_head: dict[str, list[Rule]] = {}
    for r in rules:
        by_head.setdefault(r.head.name, []).append(r)

    return Grammar(
        nonterminals=frozenset(nonterminal_names),
        terminals=frozenset(terminal_names),
        rules=tuple(rules),
        start=rules[0].head,
        _by_head={k: tuple(v) for k, v in by_head.items()},
    )
