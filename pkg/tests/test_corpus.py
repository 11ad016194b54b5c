import pytest

from cfgdec.corpus import (BOS_ID, EOS_ID, PAD_ID, RESERVED, SEP_ID, UNK_ID,
                           CorpusError, Example, TemplateError, Vocabulary,
                           build_vocab, lexical_choices, load_corpus,
                           load_templates, render_nl, save_corpus, synthesize,
                           terminals_in_order, tokenize_nl, tokenize_query)
from cfgdec.earley import parse
from conftest import QUERY, data_text


def test_tokenize_nl():
    assert tokenize_nl("What is the Area of Texas?") == \
        ["what", "is", "the", "area", "of", "texas", "?"]
    assert tokenize_nl("a?b ??") == ["a", "?", "b", "?", "?"]
    assert tokenize_nl("  ") == []


def test_tokenize_query_preserves_case():
    assert tokenize_query("SELECT ?x {") == ["SELECT", "?x", "{"]


def test_reserved_ids():
    v = Vocabulary()
    assert (UNK_ID, EOS_ID, SEP_ID, PAD_ID, BOS_ID) == (0, 1, 2, 3, 4)
    for i, tok in enumerate(RESERVED):
        assert v.id_of(tok) == i
        assert v.token_of(i) == tok
    assert v.size == 5


def test_vocabulary_add_and_lookup():
    v = Vocabulary()
    i = v.add("texas")
    assert i == 5  # first id after the reserved block
    assert v.add("texas") == i  # idempotent
    assert v.id_of("texas") == i
    assert v.id_of("never-seen") == UNK_ID
    assert "texas" in v and "utah" not in v
    assert v.encode(["texas", "mystery"]) == [i, UNK_ID]
    assert v.assigned() == ["texas"]
    w = Vocabulary(["texas"])
    assert w == v
    assert len(w) == w.size == 6


def test_reserved_tokens_cannot_be_readded():
    v = Vocabulary()
    assert v.add("<eos>") == EOS_ID
    assert v.size == 5


def test_terminals_in_rule_file_order(sparql_grammar):
    ts = terminals_in_order(sparql_grammar)
    # order of the terminal rules in the file, not sorted
    assert ts == [".", "{", "}", "SELECT", "?area", "?capital", "?texas",
                  "p:area", "p:has_capital"]
    assert set(ts) == set(sparql_grammar.terminals)


def test_build_vocab_covers_sources_then_terminals(sparql_grammar):
    exs = [Example(("what", "is"), ("SELECT",)),
           Example(("area", "what"), ("SELECT",))]
    v = build_vocab(exs, sparql_grammar)
    assigned = v.assigned()
    assert assigned[:3] == ["what", "is", "area"]  # corpus order, deduped
    for t in sparql_grammar.terminals:
        assert t in v


def test_example_validation():
    with pytest.raises(ValueError):
        Example((), ("SELECT",))
    with pytest.raises(ValueError):
        Example(("what",), ())


def good_line():
    return "what is the capital of texas ?\t" + " ".join(QUERY)


def test_load_corpus_roundtrip(tmp_path, sparql_grammar):
    p = tmp_path / "c.tsv"
    p.write_text("# comment\n\n" + good_line() + "\n")
    loaded = load_corpus(p, sparql_grammar)
    assert len(loaded.examples) == 1
    assert loaded.rejected == []
    ex = loaded.examples[0]
    assert ex.source[0] == "what" and ex.target[0] == "SELECT"
    assert "capital" in loaded.vocab and "SELECT" in loaded.vocab

    out = tmp_path / "copy.tsv"
    save_corpus(out, loaded.examples)
    again = load_corpus(out, sparql_grammar)
    assert again.examples == loaded.examples


def test_load_corpus_structural_errors(tmp_path, sparql_grammar):
    p = tmp_path / "c.tsv"
    p.write_text("no tab here\n")
    with pytest.raises(CorpusError, match="line 1"):
        load_corpus(p, sparql_grammar)
    p.write_text("\tSELECT\n")
    with pytest.raises(CorpusError, match="empty source"):
        load_corpus(p, sparql_grammar)
    p.write_text("what\t\n")
    with pytest.raises(CorpusError, match="empty target"):
        load_corpus(p, sparql_grammar)


def test_load_corpus_rejects_bad_targets(tmp_path, sparql_grammar):
    p = tmp_path / "c.tsv"
    p.write_text(good_line() + "\n"
                 "what is this ?\tSELECT ?frobnicate\n"
                 "what is that ?\tSELECT ?area ?area\n")
    with pytest.raises(CorpusError, match="2 invalid"):
        load_corpus(p, sparql_grammar)

    loaded = load_corpus(p, sparql_grammar, allow_skip=True)
    assert len(loaded.examples) == 1
    assert [n for n, _ in loaded.rejected] == [2, 3]
    assert "not in Σ" in loaded.rejected[0][1]
    assert "does not parse" in loaded.rejected[1][1]


def test_load_templates_shipped(sparql_templates):
    assert len(sparql_templates.patterns) == 1
    sig = next(iter(sparql_templates.patterns))
    assert "J" in sig and "P" in sig
    assert len(sparql_templates.frags) >= 6


@pytest.mark.parametrize("text,fragment", [
    ("pattern A B : x\npattern A B : y", "duplicate"),
    ('frag P "p:area" : area\nfrag P "p:area" : size', "duplicate"),
    ("pattern : x", "expected"),
    ("bogus line", "expected"),
    ("pattern A B :", "empty"),
    ('frag P "p:area" :', "empty"),
])
def test_load_templates_errors(text, fragment):
    with pytest.raises(TemplateError, match=fragment):
        load_templates(text)


def test_lexical_choices_in_yield_order(sparql_grammar):
    tree = parse(sparql_grammar, QUERY)
    pairs = lexical_choices(tree)
    heads = [h for h, _ in pairs]
    assert heads[0] == "SE"
    assert ("P", "p:area") in pairs and ("P", "p:has_capital") in pairs
    assert pairs.index(("P", "p:area")) < pairs.index(("P", "p:has_capital"))


def test_render_nl_slots(sparql_grammar, sparql_templates):
    tree = parse(sparql_grammar, QUERY)
    nl = render_nl(sparql_templates, tree)
    assert nl and all(t == t.lower() for t in nl)
    # the two O slots fill in emission order: ?area first, ?capital second
    assert nl.index("area") < nl.index("capital")


def test_render_nl_splits_question_mark(geo_grammar, geo_templates):
    one_triple = "SELECT ?x { ?texas p:area ?x }".split()
    nl = render_nl(geo_templates, parse(geo_grammar, one_triple))
    assert nl[-1] == "?"  # question mark split into its own token


def test_render_nl_missing_pieces(sparql_grammar):
    tree = parse(sparql_grammar, QUERY)
    with pytest.raises(TemplateError, match="pattern"):
        render_nl(load_templates('frag P "p:area" : area'), tree)
    # right pattern, missing fragment for one terminal choice
    tpl = load_templates(data_text("sparql_fragment.tpl"))
    tpl.frags.pop(("P", "p:area"))
    with pytest.raises(TemplateError, match="frag"):
        render_nl(tpl, tree)


def test_synthesize_exhaustive_64(sparql_grammar, sparql_templates):
    exs = synthesize(sparql_grammar, sparql_templates)
    assert len(exs) == 64
    assert len({ex.target for ex in exs}) == 64
    assert len({ex.source for ex in exs}) == 64
    for ex in exs:
        parse(sparql_grammar, list(ex.target))


def test_synthesize_sampling_deterministic(geo_grammar, geo_templates):
    a = synthesize(geo_grammar, geo_templates, n=20, seed=5)
    b = synthesize(geo_grammar, geo_templates, n=20, seed=5)
    c = synthesize(geo_grammar, geo_templates, n=20, seed=6)
    assert a == b
    assert a != c
    assert all(parse(geo_grammar, list(ex.target)) for ex in a)
    with pytest.raises(CorpusError):
        synthesize(geo_grammar, geo_templates, n=0)


def test_synthesize_depth_bound(chain_grammar, geo_templates):
    # recursion must hit the bound loudly, not truncate silently
    with pytest.raises(CorpusError, match="depth"):
        synthesize(chain_grammar, geo_templates, n=50, seed=0, max_depth=2)


def test_synthesize_exhaustive_refuses_recursion(chain_grammar, geo_templates):
    with pytest.raises(CorpusError):
        synthesize(chain_grammar, geo_templates, max_depth=6)
