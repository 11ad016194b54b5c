"""Parallel corpora: ingestion, validation, tokenization, synthesis.

Corpus files are UTF-8 TSV, one ``source<TAB>target`` pair per line, both
sides pre-tokenized with single spaces; ``#`` lines are comments.  Every
target must parse under the session grammar; offending lines are rejected
with their line number and the load fails unless skipping was requested.

Template files drive synthesis.  A template table has two kinds of lines::

    pattern SE VA BL J P O BR : what {O} is the {P} of {J} ?
    frag    P "p:area"        : area

A ``pattern`` is keyed by the *lexical signature* of a derivation: the
sequence of terminal-rule heads in left-to-right yield order.  Slots
``{X:k}`` substitute the fragment text of the k-th terminal rule headed by
X in that order (``{X}`` is ``{X:1}``); ``frag`` lines map one concrete
terminal choice to its natural-language rendering.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .earley import NoParseError, parse
from .grammar import Grammar, ParseTree, Symbol, yield_of

UNK_ID = 0
EOS_ID = 1
SEP_ID = 2
PAD_ID = 3
BOS_ID = 4
RESERVED = ("<unk>", "<eos>", "<sep>", "<pad>", "<bos>")

_NL_TOKEN_RE = re.compile(r"\?|[^\s?]+")
_SLOT_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)(?::([0-9]+))?\}")
_FRAG_RE = re.compile(r'^frag\s+([A-Za-z_][A-Za-z0-9_]*)\s+"((?:[^"\\]|\\.)*)"\s*:\s*(.*)$')
_PATTERN_RE = re.compile(r"^pattern\s+([A-Za-z_][A-Za-z0-9_ \t]*?)\s*:\s*(.*)$")

_MAX_EXHAUSTIVE = 1_000_000


class CorpusError(ValueError):
    pass


class TemplateError(ValueError):
    pass


def tokenize_nl(text: str) -> list[str]:
    """Lowercase and whitespace-tokenize; '?' always becomes its own token."""
    return _NL_TOKEN_RE.findall(text.lower())


def tokenize_query(text: str) -> list[str]:
    return text.split()


@dataclass(frozen=True)
class Example:
    source: tuple[str, ...]
    target: tuple[str, ...]

    def __post_init__(self):
        if not self.source:
            raise CorpusError("example with empty source")
        if not self.target:
            raise CorpusError("example with empty target")


class Vocabulary:
    """Bidirectional token<->id map with fixed reserved ids 0..4."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._toks: list[str] = list(RESERVED)
        self._ids: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        i = self._ids.get(token)
        if i is None:
            i = len(self._toks)
            self._toks.append(token)
            self._ids[token] = i
        return i

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, i: int) -> str:
        return self._toks[i]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    @property
    def size(self) -> int:
        return len(self._toks)

    def assigned(self) -> list[str]:
        """Non-reserved tokens in id order (for serialization)."""
        return self._toks[len(RESERVED):]

    def __len__(self):
        return len(self._toks)

    def __contains__(self, token):
        return token in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._toks == other._toks


def terminals_in_order(g: Grammar) -> list[str]:
    """Grammar terminals in rule file order (every terminal names one rule tail)."""
    out: list[str] = []
    seen = set()
    for r in g.rules:
        if r.is_terminal_rule and r.tail[0].name not in seen:
            seen.add(r.tail[0].name)
            out.append(r.tail[0].name)
    return out


def build_vocab(examples: Sequence[Example], g: Grammar) -> Vocabulary:
    """Sentence tokens in corpus order, then grammar terminals in rule order.

    The single table serves both the sentence and the context window, so
    terminal tokens are always present even when absent from sources.
    """
    v = Vocabulary()
    for ex in examples:
        for t in ex.source:
            v.add(t)
    for t in terminals_in_order(g):
        v.add(t)
    return v


@dataclass
class LoadedCorpus:
    examples: list[Example]
    vocab: Vocabulary
    rejected: list[tuple[int, str]]  # (line number, reason)


def load_corpus(path, g: Grammar, *, allow_skip: bool = False) -> LoadedCorpus:
    """Read a TSV corpus and validate every target against ``g``.

    Structural problems (missing tab, empty field) abort immediately with
    the line number.  Targets that fail to parse are collected; any reject
    aborts the load unless ``allow_skip``, in which case the bad lines are
    dropped but reported in the result.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    examples: list[Example] = []
    rejected: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise CorpusError(f"{path}: line {lineno}: expected source<TAB>target")
        src_text, _, tgt_text = line.partition("\t")
        source = tuple(tokenize_nl(src_text))
        target = tuple(tokenize_query(tgt_text))
        if not source:
            raise CorpusError(f"{path}: line {lineno}: empty source field")
        if not target:
            raise CorpusError(f"{path}: line {lineno}: empty target field")
        bad = [t for t in target if not g.is_terminal(t)]
        if bad:
            rejected.append((lineno, f"token not in Σ: {bad[0]!r}"))
            continue
        try:
            parse(g, list(target))
        except NoParseError as e:
            rejected.append((lineno, f"target does not parse: {e}"))
            continue
        examples.append(Example(source, target))
    if rejected and not allow_skip:
        head = "; ".join(f"line {n}: {r}" for n, r in rejected[:5])
        raise CorpusError(
            f"{path}: {len(rejected)} invalid target(s) ({head}); "
            "pass --allow-skip to drop them")
    return LoadedCorpus(examples, build_vocab(examples, g), rejected)


def save_corpus(path, examples: Sequence[Example]):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(" ".join(ex.source) + "\t" + " ".join(ex.target) + "\n")


@dataclass
class TemplateTable:
    patterns: dict[tuple[str, ...], str] = field(default_factory=dict)
    frags: dict[tuple[str, str], str] = field(default_factory=dict)


def _unescape(s: str) -> str:
    return s.replace('\\"', '"').replace("\\\\", "\\")


def load_templates(text: str) -> TemplateTable:
    table = TemplateTable()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _FRAG_RE.match(line)
        if m:
            head, termname, nl = m.group(1), _unescape(m.group(2)), m.group(3).strip()
            key = (head, termname)
            if key in table.frags:
                raise TemplateError(f"line {lineno}: duplicate frag {head} \"{termname}\"")
            if not nl:
                raise TemplateError(f"line {lineno}: empty fragment text")
            table.frags[key] = nl
            continue
        m = _PATTERN_RE.match(line)
        if m:
            sig = tuple(m.group(1).split())
            nl = m.group(2).strip()
            if not sig:
                raise TemplateError(f"line {lineno}: empty pattern signature")
            if sig in table.patterns:
                raise TemplateError(f"line {lineno}: duplicate pattern {' '.join(sig)}")
            if not nl:
                raise TemplateError(f"line {lineno}: empty pattern text")
            table.patterns[sig] = nl
            continue
        raise TemplateError(f"line {lineno}: expected 'pattern ... : ...' or "
                            f"'frag HEAD \"terminal\" : ...', got {line!r}")
    return table


def lexical_choices(tree: ParseTree) -> list[tuple[str, str]]:
    """(head, terminal) of each terminal rule in left-to-right yield order."""
    out: list[tuple[str, str]] = []

    def walk(node: ParseTree):
        if node.rule is None:
            return
        if node.rule.is_terminal_rule:
            out.append((node.rule.head.name, node.rule.tail[0].name))
        else:
            for ch in node.children:
                walk(ch)

    walk(tree)
    return out


def render_nl(table: TemplateTable, tree: ParseTree) -> list[str]:
    """Instantiate the pattern matching the tree's lexical signature."""
    choices = lexical_choices(tree)
    sig = tuple(h for h, _ in choices)
    pattern = table.patterns.get(sig)
    if pattern is None:
        raise TemplateError(f"no pattern for signature {' '.join(sig)}")
    by_head: dict[str, list[str]] = {}
    for head, termname in choices:
        by_head.setdefault(head, []).append(termname)

    def sub(m: re.Match) -> str:
        head = m.group(1)
        k = int(m.group(2) or 1)
        occurrences = by_head.get(head, [])
        if not 1 <= k <= len(occurrences):
            raise TemplateError(f"slot {{{head}:{k}}} has no {k}-th occurrence "
                                f"in signature {' '.join(sig)}")
        termname = occurrences[k - 1]
        frag = table.frags.get((head, termname))
        if frag is None:
            raise TemplateError(f"missing frag {head} \"{termname}\"")
        return frag

    return tokenize_nl(_SLOT_RE.sub(sub, pattern))


def _sample_tree(g: Grammar, x: Symbol, rng: np.random.Generator,
                 depth: int, max_depth: int) -> ParseTree:
    if depth > max_depth:
        raise CorpusError(f"derivation exceeded depth bound {max_depth} "
                          "(recursive grammar); no silent truncation")
    rules = g.rules_for(x)
    r = rules[int(rng.integers(len(rules)))]
    if r.is_terminal_rule:
        return ParseTree(x, (ParseTree(r.tail[0]),), r)
    children = tuple(_sample_tree(g, y, rng, depth + 1, max_depth) for y in r.tail)
    return ParseTree(x, children, r)


def _all_trees(g: Grammar, x: Symbol, depth: int, max_depth: int) -> list[ParseTree]:
    if depth > max_depth:
        raise CorpusError(f"exhaustive enumeration exceeded depth bound {max_depth}; "
                          "grammar is recursive")
    out: list[ParseTree] = []
    for r in g.rules_for(x):
        if r.is_terminal_rule:
            out.append(ParseTree(x, (ParseTree(r.tail[0]),), r))
            continue
        per_child = [_all_trees(g, y, depth + 1, max_depth) for y in r.tail]
        for combo in itertools.product(*per_child):
            out.append(ParseTree(x, combo, r))
            if len(out) > _MAX_EXHAUSTIVE:
                raise CorpusError("exhaustive enumeration exceeds "
                                  f"{_MAX_EXHAUSTIVE} derivations")
    return out


def synthesize(g: Grammar, templates: TemplateTable, n: int | None = None,
               seed: int = 0, *, max_depth: int = 64) -> list[Example]:
    """Build a corpus whose targets parse by construction.

    ``n`` pairs are sampled uniformly over rule choices with the given
    seed; ``n=None`` enumerates every derivation exactly once (feasible
    only for non-recursive grammars).
    """
    if n is None:
        trees = _all_trees(g, g.start, 0, max_depth)
    else:
        if n < 1:
            raise CorpusError("synthesize: n must be positive")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        trees = [_sample_tree(g, g.start, rng, 0, max_depth) for _ in range(n)]
    out = []
    for t in trees:
        out.append(Example(source=tuple(render_nl(templates, t)),
                           target=tuple(yield_of(t))))
    return out
