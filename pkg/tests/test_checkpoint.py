import json
import struct

import numpy as np
import pytest

from cfgdec.checkpoint import (CheckpointError, ctx_size_of, load_model,
                               save_model, MAGIC, VERSION)
from cfgdec.controller import UNBOUNDED, generate, generate_unconstrained
from cfgdec.corpus import Example, build_vocab
from cfgdec.neural import build_baseline, build_model
from conftest import QUERY


@pytest.fixture
def small_model(sparql_grammar):
    ex = Example(tuple("what is the capital of texas ?".split()), tuple(QUERY))
    v = build_vocab([ex], sparql_grammar)
    m = build_model(sparql_grammar, v, embed_dim=6, hidden_dim=8, seed=7)
    return m, v


def tensors_of(model):
    if hasattr(model, "pairs"):
        pairs = [model.pairs[k] for k in sorted(model.pairs)]
    else:
        pairs = [model.pair]
    out = []
    for p in pairs:
        out += [p.encoder.embed, p.encoder.lstm.wmat,
                p.decoder.embed, p.decoder.lstm.wmat, p.decoder.w_out]
    return out


def test_roundtrip_constrained(tmp_path, sparql_grammar, small_model):
    model, v = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model, ctx_size=3, extra={"note": "x"})
    loaded, header = load_model(path, expected_grammar=sparql_grammar)
    assert header["kind"] == "constrained"
    assert header["embed_dim"] == 6 and header["hidden_dim"] == 8
    assert header["ctx_size"] == 3
    assert header["extra"] == {"note": "x"}
    assert loaded.vocab == v
    assert loaded.grammar.digest() == sparql_grammar.digest()
    for a, b in zip(tensors_of(model), tensors_of(loaded)):
        assert np.array_equal(a, b)


def test_roundtrip_baseline(tmp_path, sparql_grammar, small_model):
    _, v = small_model
    base = build_baseline(sparql_grammar, v, embed_dim=5, hidden_dim=6, seed=2)
    path = tmp_path / "b.ckpt"
    save_model(path, base)
    loaded, header = load_model(path)
    assert header["kind"] == "baseline"
    assert header["ctx_size"] is None
    assert ctx_size_of(header) == UNBOUNDED
    for a, b in zip(tensors_of(base), tensors_of(loaded)):
        assert np.array_equal(a, b)


def test_ctx_size_of_bounded():
    assert ctx_size_of({"ctx_size": 5}) == 5.0
    assert ctx_size_of({}) == UNBOUNDED


def test_save_is_byte_deterministic(tmp_path, small_model):
    model, _ = small_model
    p1, p2, p3 = (tmp_path / n for n in ("a", "b", "c"))
    save_model(p1, model)
    save_model(p2, model)
    assert p1.read_bytes() == p2.read_bytes()
    # save -> load -> save is also stable
    loaded, _ = load_model(p1)
    save_model(p3, loaded)
    assert p3.read_bytes() == p1.read_bytes()


def test_generate_agrees_after_roundtrip(tmp_path, sparql_grammar, small_model):
    model, v = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    loaded, _ = load_model(path)
    sent = v.encode("what is the capital of texas ?".split())
    assert generate(model, sparql_grammar, sent) == \
        generate(loaded, sparql_grammar, sent)


def test_generate_unconstrained_agrees_after_roundtrip(
        tmp_path, sparql_grammar, small_model):
    _, v = small_model
    base = build_baseline(sparql_grammar, v, embed_dim=5, hidden_dim=6, seed=2)
    path = tmp_path / "b.ckpt"
    save_model(path, base)
    loaded, _ = load_model(path)
    sent = v.encode("what is the capital of texas ?".split())
    assert generate_unconstrained(base, sent) == \
        generate_unconstrained(loaded, sent)


# -- tampering -------------------------------------------------------------

def rewrite_header(path, mutate):
    """Apply ``mutate`` to the parsed header and repack the file."""
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    mutate(header)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.write_bytes(raw[:8] + struct.pack("<Q", len(blob)) + blob
                     + raw[16 + hlen:])


def test_rejects_wrong_magic(tmp_path, small_model):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    raw = path.read_bytes()
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="not a model checkpoint"):
        load_model(path)


def test_rejects_unknown_version(tmp_path, small_model):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    raw = path.read_bytes()
    path.write_bytes(MAGIC + struct.pack("<I", VERSION + 1) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_model(path)


def test_rejects_truncation(tmp_path, small_model):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    raw = path.read_bytes()
    for cut in (2, 10, 40, len(raw) - 17):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match="truncated"):
            load_model(path)


def test_rejects_trailing_bytes(tmp_path, small_model):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_model(path)


def test_rejects_grammar_hash_mismatch(tmp_path, small_model):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    rewrite_header(path, lambda h: h.update(grammar_sha256="0" * 64))
    with pytest.raises(CheckpointError, match="hash"):
        load_model(path)


def test_rejects_unexpected_grammar(tmp_path, small_model, geo_grammar):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    with pytest.raises(CheckpointError, match="different grammar"):
        load_model(path, expected_grammar=geo_grammar)


def test_rejects_shape_mismatch(tmp_path, small_model):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)

    def grow_first_tensor(h):
        h["tensors"][0]["shape"][0] += 1

    rewrite_header(path, grow_first_tensor)
    with pytest.raises(CheckpointError, match="shape"):
        load_model(path)


def test_rejects_renamed_tensor(tmp_path, small_model):
    model, _ = small_model
    path = tmp_path / "m.ckpt"
    save_model(path, model)
    rewrite_header(path, lambda h: h["tensors"][0].update(name="nt/BOGUS/x"))
    with pytest.raises(CheckpointError, match="tensor list"):
        load_model(path)


def test_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        load_model(tmp_path / "absent.ckpt")
