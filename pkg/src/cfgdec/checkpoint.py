"""Single-file model checkpoints.

Layout, all integers little-endian::

    bytes 0-3   magic  b"CFGD"
    bytes 4-7   format version (u32)
    bytes 8-15  header length in bytes (u64)
    ...         header: UTF-8 JSON, sorted keys
    ...         tensor payload: float64 little-endian, concatenated in
                header order

The header records the model kind ("constrained" or "baseline"), embedding
and hidden sizes, the context size used at training time (null when
unbounded), the non-reserved vocabulary in id order, the full canonical
grammar text plus its sha256, and the name/shape of every tensor.  Loading
rebuilds the grammar from the embedded text and refuses checkpoints whose
grammar hash differs from an explicitly expected grammar.  Serialization
is deterministic: equal models produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .controller import UNBOUNDED
from .corpus import Vocabulary
from .grammar import Grammar, load_grammar
from .neural import BaselineModel, EncDecPair, build_baseline, build_model

MAGIC = b"CFGD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pair_tensors(prefix: str, pair: EncDecPair) -> list[tuple[str, np.ndarray]]:
    return [(f"{prefix}/enc_embed", pair.encoder.embed),
            (f"{prefix}/enc_lstm", pair.encoder.lstm.wmat),
            (f"{prefix}/dec_embed", pair.decoder.embed),
            (f"{prefix}/dec_lstm", pair.decoder.lstm.wmat),
            (f"{prefix}/w_out", pair.decoder.w_out)]


def _model_tensors(model) -> list[tuple[str, np.ndarray]]:
    if isinstance(model, BaselineModel):
        return _pair_tensors("baseline", model.pair)
    out: list[tuple[str, np.ndarray]] = []
    for name in sorted(model.pairs):
        out.extend(_pair_tensors(f"nt/{name}", model.pairs[name]))
    return out


def save_model(path, model, *, ctx_size: float = UNBOUNDED, extra: dict | None = None):
    """Write ``model`` (ModelFamily or BaselineModel) to ``path``."""
    tensors = _model_tensors(model)
    header = {
        "kind": "baseline" if isinstance(model, BaselineModel) else "constrained",
        "embed_dim": model.embed_dim,
        "hidden_dim": model.hidden_dim,
        "ctx_size": None if ctx_size == UNBOUNDED else int(ctx_size),
        "vocab": model.vocab.assigned(),
        "grammar_sha256": model.grammar.digest(),
        "grammar_text": model.grammar.render(),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_model(path, expected_grammar: Grammar | None = None):
    """Read a checkpoint; returns (model, header dict).

    ``expected_grammar`` guards against driving a model with rules it was
    never trained on: a digest mismatch is an error, not a warning.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        header = json.loads(_read_exact(fh, hlen, "header"))
        g = load_grammar(header["grammar_text"])
        if g.digest() != header["grammar_sha256"]:
            raise CheckpointError("checkpoint grammar text does not match its hash")
        if expected_grammar is not None and expected_grammar.digest() != g.digest():
            raise CheckpointError(
                "checkpoint was trained on a different grammar than the one supplied")
        vocab = Vocabulary(header["vocab"])
        builder = build_baseline if header["kind"] == "baseline" else build_model
        model = builder(g, vocab, embed_dim=header["embed_dim"],
                        hidden_dim=header["hidden_dim"], seed=0)
        expected = _model_tensors(model)
        declared = header["tensors"]
        if [d["name"] for d in declared] != [n for n, _ in expected]:
            raise CheckpointError("checkpoint tensor list does not match the grammar")
        for decl, (name, t) in zip(declared, expected):
            shape = tuple(decl["shape"])
            if shape != t.shape:
                raise CheckpointError(
                    f"tensor {name}: shape {shape} does not match model {t.shape}")
            raw = _read_exact(fh, t.size * 8, name)
            t[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        if fh.read(1):
            raise CheckpointError("trailing bytes after tensor payload")
    return model, header


def ctx_size_of(header: dict) -> float:
    v = header.get("ctx_size")
    return UNBOUNDED if v is None else float(v)
