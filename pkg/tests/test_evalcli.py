import argparse
import json

import pytest

from cfgdec import evalcli
from cfgdec.controller import UNBOUNDED, BudgetExhaustedError
from cfgdec.corpus import Example, build_vocab
from cfgdec.evalcli import Metrics, cli_main, evaluate, _ctx_size_arg, _table
from cfgdec.neural import build_baseline, build_model
from conftest import QUERY, data_text

SRC = "what is the capital of texas ?"


def test_metrics_properties():
    m = Metrics(total=10, correct=7, syntax_errors=2)
    assert m.accuracy == 0.7
    assert m.syn_error_rate == 0.2
    empty = Metrics(total=0, correct=0, syntax_errors=0)
    assert empty.accuracy == 0.0 and empty.syn_error_rate == 0.0


def test_ctx_size_arg():
    assert _ctx_size_arg("inf") == UNBOUNDED
    assert _ctx_size_arg("Unbounded") == UNBOUNDED
    assert _ctx_size_arg("4") == 4.0
    with pytest.raises(argparse.ArgumentTypeError):
        _ctx_size_arg("0")
    with pytest.raises(argparse.ArgumentTypeError):
        _ctx_size_arg("four")


def test_table_alignment():
    out = _table(["a", "long"], [["xx", "y"], ["1", "22222"]])
    lines = out.split("\n")
    assert lines[0].startswith("a ")
    assert set(lines[1]) <= {"-", " "}
    assert len(lines) == 4


# -- evaluate() against scripted generators ---------------------------------

@pytest.fixture
def tiny(sparql_grammar):
    exs = [Example(tuple(f"q {i} ?".split()), tuple(QUERY)) for i in range(3)]
    v = build_vocab(exs, sparql_grammar)
    model = build_model(sparql_grammar, v, embed_dim=4, hidden_dim=6, seed=0)
    return model, exs


def test_evaluate_counts_each_outcome(monkeypatch, sparql_grammar, tiny):
    model, exs = tiny
    wrong_but_valid = ("SELECT ?area { ?texas p:area ?area . "
                       "?texas p:area ?area }").split()
    outs = iter([list(QUERY), wrong_but_valid, BudgetExhaustedError(500)])

    def scripted(model_, g_, ids, ctx, budget):
        o = next(outs)
        if isinstance(o, Exception):
            raise o
        return o

    monkeypatch.setattr(evalcli, "generate", scripted)
    m = evaluate(model, sparql_grammar, exs)
    assert m == Metrics(total=3, correct=1, syntax_errors=1)
    assert m.accuracy == pytest.approx(1 / 3)


def test_evaluate_baseline_invalid_output_is_syntax_error(
        monkeypatch, sparql_grammar, tiny):
    _, exs = tiny
    v = build_vocab(exs, sparql_grammar)
    base = build_baseline(sparql_grammar, v, embed_dim=4, hidden_dim=6, seed=0)
    outs = iter([["SELECT", "}"], [], list(QUERY)])
    monkeypatch.setattr(evalcli, "generate_unconstrained",
                        lambda m, ids, max_len: next(outs))
    m = evaluate(base, sparql_grammar, exs)
    # unparsable and empty both count as syntax errors
    assert m == Metrics(total=3, correct=1, syntax_errors=2)


def test_evaluate_real_constrained_outputs_always_parse(sparql_grammar, tiny):
    model, exs = tiny
    m = evaluate(model, sparql_grammar, exs)
    assert m.total == 3
    assert m.syntax_errors == 0  # constrained decoding cannot emit junk


# -- exit codes --------------------------------------------------------------

def grammar_file(tmp_path):
    p = tmp_path / "g.cfg"
    p.write_text(data_text("sparql_fragment.cfg"))
    return p


def test_cli_parse_ok(tmp_path, capsys):
    rc = cli_main(["parse", "--grammar", str(grammar_file(tmp_path)),
                   "--query", " ".join(QUERY)])
    assert rc == 0
    assert "S" in capsys.readouterr().out


def test_cli_parse_failure_is_exit_1(tmp_path, capsys):
    rc = cli_main(["parse", "--grammar", str(grammar_file(tmp_path)),
                   "--query", "SELECT SELECT"])
    assert rc == 1
    assert "no parse" in capsys.readouterr().err


def test_cli_unknown_flag_is_exit_2(tmp_path):
    with pytest.raises(SystemExit) as ei:
        cli_main(["parse", "--grammer", "x", "--query", "y"])
    assert ei.value.code == 2


def test_cli_missing_checkpoint_is_exit_1(tmp_path, capsys):
    rc = cli_main(["generate", "--checkpoint", str(tmp_path / "no.ckpt"),
                   "--sentence", SRC])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_bad_grammar_file_is_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("not a grammar\n")
    rc = cli_main(["parse", "--grammar", str(bad), "--query", "x"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "error:" in err and "bad.cfg" in err


def test_cli_synthesize_needs_count(tmp_path, capsys):
    tpl = tmp_path / "t.tpl"
    tpl.write_text(data_text("sparql_fragment.tpl"))
    rc = cli_main(["synthesize", "--grammar", str(grammar_file(tmp_path)),
                   "--templates", str(tpl), "--out", str(tmp_path / "c.tsv")])
    assert rc == 1
    assert "pass --n" in capsys.readouterr().err


def test_cli_bad_ctx_size_is_exit_2(tmp_path):
    with pytest.raises(SystemExit) as ei:
        cli_main(["train", "--grammar", "g", "--corpus", "c",
                  "--checkpoint", "k", "--ctx-size", "0"])
    assert ei.value.code == 2


# -- full pipeline through the CLI -------------------------------------------

def test_cli_full_cycle(tmp_path, capsys):
    g = grammar_file(tmp_path)
    tpl = tmp_path / "t.tpl"
    tpl.write_text(data_text("sparql_fragment.tpl"))
    corpus_path = tmp_path / "corpus.tsv"
    ckpt_path = tmp_path / "model.ckpt"
    records = tmp_path / "train.jsonl"

    rc = cli_main(["synthesize", "--grammar", str(g), "--templates", str(tpl),
                   "--out", str(corpus_path), "--exhaustive"])
    assert rc == 0
    n_lines = len([l for l in corpus_path.read_text().splitlines() if l.strip()])
    assert n_lines == 64

    rc = cli_main(["train", "--grammar", str(g), "--corpus", str(corpus_path),
                   "--checkpoint", str(ckpt_path), "--epochs", "2",
                   "--hidden", "6", "--embed", "4",
                   "--records", str(records)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mean_loss" in out and "checkpoint written" in out
    recs = [json.loads(l) for l in records.read_text().splitlines()]
    assert [r["epoch"] for r in recs] == [0, 1]
    assert all(r["event"] == "epoch" for r in recs)

    rc = cli_main(["generate", "--checkpoint", str(ckpt_path),
                   "--sentence", SRC])
    assert rc == 0
    tokens = capsys.readouterr().out.split()
    assert tokens, "generate printed nothing"
    rc = cli_main(["parse", "--grammar", str(g), "--query", " ".join(tokens)])
    assert rc == 0
    capsys.readouterr()

    eval_records = tmp_path / "eval.jsonl"
    rc = cli_main(["evaluate", "--checkpoint", str(ckpt_path),
                   "--corpus", str(corpus_path),
                   "--records", str(eval_records)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "syn_error_rate" in out
    (rec,) = [json.loads(l) for l in eval_records.read_text().splitlines()]
    assert rec["total"] == 64
    assert rec["syntax_errors"] == 0
    assert rec["ctx_size"] == "inf"


def test_cli_train_allow_skip(tmp_path, capsys):
    g = grammar_file(tmp_path)
    corpus_path = tmp_path / "corpus.tsv"
    lines = ["ok line ?\t" + " ".join(QUERY),
             "broken ?\tSELECT SELECT"]
    corpus_path.write_text("\n".join(lines) + "\n")
    ckpt_path = tmp_path / "m.ckpt"

    rc = cli_main(["train", "--grammar", str(g), "--corpus", str(corpus_path),
                   "--checkpoint", str(ckpt_path), "--epochs", "1",
                   "--hidden", "6", "--embed", "4"])
    assert rc == 1  # refuses the bad line without --allow-skip
    capsys.readouterr()

    rc = cli_main(["train", "--grammar", str(g), "--corpus", str(corpus_path),
                   "--checkpoint", str(ckpt_path), "--epochs", "1",
                   "--hidden", "6", "--embed", "4", "--allow-skip"])
    assert rc == 0
    captured = capsys.readouterr()
    assert "skipped 1 invalid line(s)" in captured.err
    assert ckpt_path.exists()


def test_cli_crossval_small(tmp_path, capsys):
    g = grammar_file(tmp_path)
    tpl = tmp_path / "t.tpl"
    tpl.write_text(data_text("sparql_fragment.tpl"))
    corpus_path = tmp_path / "corpus.tsv"
    cli_main(["synthesize", "--grammar", str(g), "--templates", str(tpl),
              "--out", str(corpus_path), "--n", "10", "--seed", "1"])
    capsys.readouterr()
    records = tmp_path / "cv.jsonl"
    rc = cli_main(["crossval", "--grammar", str(g), "--corpus", str(corpus_path),
                   "--folds", "2", "--epochs", "1", "--hidden", "6",
                   "--embed", "4", "--ctx-sizes", "3,inf",
                   "--records", str(records)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "ctx_size" in out and "accuracy" in out
    recs = [json.loads(l) for l in records.read_text().splitlines()]
    assert len(recs) == 4  # 2 ctx sizes x 2 folds
    assert {r["ctx_size"] for r in recs} == {"3", "inf"}
