"""Random small grammars for oracle-equivalence testing.

Generated grammars always satisfy the structural contract (terminal or
all-nonterminal tails, every referenced nonterminal has a rule, no
duplicates) but are otherwise unconstrained: unreachable nonterminals,
unproductive recursion and empty languages are all fair game.
"""

import itertools

import numpy as np

from cfgdec.grammar import Grammar, load_grammar

NT_NAMES = ["S", "A", "B", "C"]


def random_grammar(rng: np.random.Generator, max_nts: int = 3,
                   terminals: tuple[str, ...] = ("a", "b")) -> Grammar:
    nts = NT_NAMES[: int(rng.integers(1, max_nts + 1))]
    lines = []
    seen = set()
    for x in nts:
        n_rules = int(rng.integers(1, 4))
        for _ in range(n_rules):
            if rng.random() < 0.5:
                tail = f'"{terminals[int(rng.integers(len(terminals)))]}"'
            else:
                k = int(rng.integers(1, 4))
                tail = " ".join(nts[int(rng.integers(len(nts)))] for _ in range(k))
            if (x, tail) in seen:
                continue
            seen.add((x, tail))
            lines.append(f"{x} -> {tail}")
        if not any(h == x for h, _ in seen):
            # all draws were duplicates; force one terminal rule
            tail = f'"{terminals[0]}"'
            if (x, tail) not in seen:
                seen.add((x, tail))
                lines.append(f"{x} -> {tail}")
    # keep S's rules first so S stays the start symbol
    lines.sort(key=lambda ln: ln.split()[0] != "S")
    return load_grammar("\n".join(lines))


def all_strings(terminals, max_len):
    """Every token sequence over ``terminals`` of length 1..max_len."""
    out = []
    for n in range(1, max_len + 1):
        out.extend(itertools.product(terminals, repeat=n))
    return out
