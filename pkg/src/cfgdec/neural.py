"""Differentiable core for the stack-driven translator.

Token embeddings, fused single-layer LSTMs (compiled or NumPy kernels from
``cfgdec.kernels``), softmax output projections, cross-entropy loss, full
backpropagation through time, and plain SGD with a per-epoch decaying
learning rate.  Everything is float64 and hand-derived; the analytic
gradients are checked against central finite differences in the test suite.

The model proper is a *family* of encoder-decoder pairs, one per grammar
nonterminal.  Each encoder reads ``sentence <sep> context <eos>`` through a
shared-vocabulary embedding table and summarizes it as its final hidden
state ``c``; the paired decoder consumes ``c`` concatenated to its input
embedding at every step and scores the symbols that may continue one of the
owning nonterminal's rule tails, plus the stop element.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import EOS_ID, SEP_ID, Vocabulary
from .grammar import Grammar, Symbol, term

# Decoder-side sentinels.  The distinct kind keeps them out of grammar
# symbol space, so no terminal spelled "<bos>" can ever collide.
STOP = Symbol("stop", "•")
BOS = Symbol("stop", "<bos>")
EOS = Symbol("stop", "<eos>")

INIT_SCALE = 0.08
FORGET_BIAS = 1.0
PROB_FLOOR = 1e-12


class NeuralError(ValueError):
    pass


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def learning_rate(epoch: int, start: float = 1.0, decay: float = 0.95) -> float:
    return start * decay ** epoch


@dataclass
class LstmParams:
    """Fused single-layer LSTM parameters.

    ``wmat`` has shape (1 + input_dim + hidden_dim, 4*hidden_dim): row 0 is
    the bias, rows 1..input_dim the input weights, the rest the recurrent
    weights.  Columns come in four equal gate blocks, input | forget |
    output | candidate.  The per-gate views below expose the layout the
    conventional way; they share storage with ``wmat``.
    """

    wmat: np.ndarray

    def __post_init__(self):
        self.input_dim, self.hidden_dim = kernels.split_dims(self.wmat)

    def _block(self, i: int) -> np.ndarray:
        h = self.hidden_dim
        return self.wmat[:, i * h:(i + 1) * h]

    @property
    def w_input(self):
        return self._block(0)[1:]

    @property
    def w_forget(self):
        return self._block(1)[1:]

    @property
    def w_output(self):
        return self._block(2)[1:]

    @property
    def w_candidate(self):
        return self._block(3)[1:]

    @property
    def b_input(self):
        return self._block(0)[0]

    @property
    def b_forget(self):
        return self._block(1)[0]

    @property
    def b_output(self):
        return self._block(2)[0]

    @property
    def b_candidate(self):
        return self._block(3)[0]

    def check_finite(self):
        if not np.isfinite(self.wmat).all():
            raise NeuralError("non-finite LSTM parameter")


def init_lstm(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LstmParams:
    wmat = rng.uniform(-INIT_SCALE, INIT_SCALE, (1 + input_dim + hidden_dim, 4 * hidden_dim))
    wmat[0, hidden_dim:2 * hidden_dim] += FORGET_BIAS
    return LstmParams(wmat)


def lstm_step(p: LstmParams, x, h_prev, c_prev):
    """One gate update; sigmoid input/forget/output gates, tanh candidate."""
    return kernels.lstm_step(p.wmat, np.asarray(x, float), np.asarray(h_prev, float),
                             np.asarray(c_prev, float))


@dataclass
class EncoderNet:
    """Embedding table over the shared sentence+terminal vocabulary, plus one LSTM."""

    embed: np.ndarray  # (vocab size, embed_dim)
    lstm: LstmParams

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.lstm.hidden_dim


@dataclass
class DecoderNet:
    """Scorer over one nonterminal's continuation symbols.

    ``symbols`` is the distinct tail alphabet of the owning nonterminal's
    rules in first-appearance order, with the stop element last.  The
    embedding table has one extra final row for the begin-of-sequence
    marker fed before the first step.
    """

    symbols: tuple[Symbol, ...]
    embed: np.ndarray  # (len(symbols) + 1, embed_dim)
    lstm: LstmParams   # input_dim = embed_dim + encoder hidden_dim
    w_out: np.ndarray  # (hidden_dim, len(symbols))
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.symbols)}
        self._index[BOS] = len(self.symbols)

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.lstm.hidden_dim

    def index_of(self, sym: Symbol) -> int:
        try:
            return self._index[sym]
        except KeyError:
            raise NeuralError(
                f"symbol {sym!r} not in this decoder's output set "
                "(model built from a different grammar?)") from None

    def output_index(self, sym: Symbol) -> int:
        i = self.index_of(sym)
        if i >= len(self.symbols):
            raise NeuralError(f"{sym!r} is not a scoreable output symbol")
        return i


@dataclass
class EncDecPair:
    owner: Symbol
    encoder: EncoderNet
    decoder: DecoderNet

    def param_tensors(self) -> list[np.ndarray]:
        return [self.encoder.embed, self.encoder.lstm.wmat,
                self.decoder.embed, self.decoder.lstm.wmat, self.decoder.w_out]


def decoder_symbols(g: Grammar, x: Symbol) -> tuple[Symbol, ...]:
    """Tail alphabet of X's rules in first-appearance order, stop element last."""
    seen: list[Symbol] = []
    for r in g.rules_for(x):
        for s in r.tail:
            if s not in seen:
                seen.append(s)
    seen.append(STOP)
    return tuple(seen)


def init_pair(owner: Symbol, symbols: Sequence[Symbol], vocab_size: int,
              embed_dim: int, hidden_dim: int, rng: np.random.Generator) -> EncDecPair:
    enc = EncoderNet(
        embed=rng.uniform(-INIT_SCALE, INIT_SCALE, (vocab_size, embed_dim)),
        lstm=init_lstm(embed_dim, hidden_dim, rng))
    dec = DecoderNet(
        symbols=tuple(symbols),
        embed=rng.uniform(-INIT_SCALE, INIT_SCALE, (len(symbols) + 1, embed_dim)),
        lstm=init_lstm(embed_dim + hidden_dim, hidden_dim, rng),
        w_out=rng.uniform(-INIT_SCALE, INIT_SCALE, (hidden_dim, len(symbols))))
    return EncDecPair(owner, enc, dec)


@dataclass
class ModelFamily:
    """{<E_X, D_X> | X a nonterminal}: one encoder-decoder pair per nonterminal."""

    grammar: Grammar
    vocab: Vocabulary
    embed_dim: int
    hidden_dim: int
    pairs: dict[str, EncDecPair]

    def pair_for(self, x) -> EncDecPair:
        name = x.name if isinstance(x, Symbol) else x
        try:
            return self.pairs[name]
        except KeyError:
            raise NeuralError(f"no encoder-decoder pair for nonterminal {name!r}") from None


@dataclass
class BaselineModel:
    """Ordinary single encoder-decoder over the full terminal vocabulary + <eos>."""

    grammar: Grammar
    vocab: Vocabulary
    embed_dim: int
    hidden_dim: int
    pair: EncDecPair


def build_model(g: Grammar, vocab: Vocabulary, *, embed_dim: int,
                hidden_dim: int, seed: int) -> ModelFamily:
    """Initialize one pair per nonterminal, deterministically from ``seed``.

    Pairs are created in sorted nonterminal order from a single seeded
    stream, so equal seeds give bit-identical families.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pairs = {}
    for name in sorted(g.nonterminals):
        x = Symbol("nt", name)
        pairs[name] = init_pair(x, decoder_symbols(g, x), vocab.size,
                                embed_dim, hidden_dim, rng)
    return ModelFamily(g, vocab, embed_dim, hidden_dim, pairs)


def build_baseline(g: Grammar, vocab: Vocabulary, *, embed_dim: int,
                   hidden_dim: int, seed: int) -> BaselineModel:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    symbols = tuple(term(t) for t in sorted(g.terminals)) + (EOS,)
    pair = init_pair(Symbol("nt", "<baseline>"), symbols, vocab.size,
                     embed_dim, hidden_dim, rng)
    return BaselineModel(g, vocab, embed_dim, hidden_dim, pair)


def _embed_rows(table: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    for i in ids:
        if not 0 <= i < table.shape[0]:
            raise NeuralError(f"token id {i} outside embedding table "
                              f"of {table.shape[0]} rows")
    return table[list(ids)]


def encoder_input_ids(sentence: Sequence[int], context: Sequence[int]) -> list[int]:
    """sentence ++ <sep> ++ context ++ <eos>; empty context contributes only the markers."""
    return [*sentence, SEP_ID, *context, EOS_ID]


def encode(e: EncoderNet, sentence: Sequence[int], context: Sequence[int]) -> np.ndarray:
    """Summary vector c: the final hidden state over the combined input."""
    if not len(sentence):
        raise NeuralError("encode: empty sentence")
    ids = encoder_input_ids(sentence, context)
    hs, _, _ = kernels.lstm_forward(e.lstm.wmat, _embed_rows(e.embed, ids))
    return hs[-1]


def decode_step(d: DecoderNet, c: np.ndarray, prev_symbol: Symbol, h_prev, c_prev):
    """One conditioned decoder step; returns (distribution, h, c_cell)."""
    x = np.concatenate([d.embed[d.index_of(prev_symbol)], np.asarray(c, float)])
    h, c_cell = kernels.lstm_step(d.lstm.wmat, x, np.asarray(h_prev, float),
                                  np.asarray(c_prev, float))
    return softmax(h @ d.w_out), h, c_cell


def nll_loss(predicted: Sequence[np.ndarray], gold: Sequence[int]) -> float:
    """Mean negative log probability of the gold indices.

    Probabilities are clamped at 1e-12; a clamp means the model assigned
    (numerically) zero mass to an observed symbol and is reported through
    the module logger rather than raised.
    """
    if len(predicted) != len(gold):
        raise NeuralError("nll_loss: length mismatch")
    total = 0.0
    clamped = 0
    for dist, g in zip(predicted, gold):
        p = float(dist[g])
        if p < PROB_FLOOR:
            p = PROB_FLOOR
            clamped += 1
        total += -np.log(p)
    if clamped:
        import logging
        logging.getLogger(__name__).warning(
            "nll_loss clamped %d zero-probability gold symbols", clamped)
    return total / max(1, len(gold))


@dataclass
class Tape:
    """Everything the forward pass saw, recorded for exact BPTT."""

    pair: EncDecPair
    enc_ids: list[int]
    enc_xs: np.ndarray
    enc_hs: np.ndarray
    enc_cs: np.ndarray
    enc_gates: np.ndarray
    c: np.ndarray
    dec_in_rows: list[int]
    dec_xs: np.ndarray
    dec_hs: np.ndarray
    dec_cs: np.ndarray
    dec_gates: np.ndarray
    dists: np.ndarray
    gold_rows: list[int]
    loss: float
    clamped: int


def forward(pair: EncDecPair, sentence: Sequence[int], context: Sequence[int],
            targets: Sequence[Symbol]) -> Tape:
    """Teacher-forced pass: encode, then decode the gold symbols.

    ``targets`` must already end with the stop element (or <eos> for the
    baseline); inputs are the targets shifted right with <bos> in front.
    """
    if not targets:
        raise NeuralError("forward: empty target sequence")
    enc, dec = pair.encoder, pair.decoder
    enc_ids = encoder_input_ids(sentence, context)
    enc_xs = _embed_rows(enc.embed, enc_ids)
    enc_hs, enc_cs, enc_gates = kernels.lstm_forward(enc.lstm.wmat, enc_xs)
    c = enc_hs[-1]

    gold_rows = [dec.output_index(s) for s in targets]
    dec_in_rows = [dec.index_of(BOS)] + [dec.index_of(s) for s in targets[:-1]]
    dec_xs = np.hstack([dec.embed[dec_in_rows],
                        np.broadcast_to(c, (len(dec_in_rows), c.shape[0]))])
    dec_xs = np.ascontiguousarray(dec_xs)
    dec_hs, dec_cs, dec_gates = kernels.lstm_forward(dec.lstm.wmat, dec_xs)
    dists = softmax(dec_hs @ dec.w_out)

    probs = dists[np.arange(len(gold_rows)), gold_rows]
    clamped = int((probs < PROB_FLOOR).sum())
    loss = float(-np.log(np.maximum(probs, PROB_FLOOR)).mean())
    return Tape(pair, enc_ids, enc_xs, enc_hs, enc_cs, enc_gates, c,
                dec_in_rows, dec_xs, dec_hs, dec_cs, dec_gates, dists,
                gold_rows, loss, clamped)


@dataclass
class PairGrads:
    enc_embed: np.ndarray
    enc_wmat: np.ndarray
    dec_embed: np.ndarray
    dec_wmat: np.ndarray
    w_out: np.ndarray

    def tensors(self) -> list[np.ndarray]:
        return [self.enc_embed, self.enc_wmat, self.dec_embed,
                self.dec_wmat, self.w_out]

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float((t * t).sum()) for t in self.tensors())))


def backward(pair: EncDecPair, tape: Tape) -> PairGrads:
    """Exact gradients of the tape's mean NLL w.r.t. every pair parameter."""
    if tape.pair is not pair:
        raise NeuralError("backward: tape was recorded for a different pair")
    enc, dec = pair.encoder, pair.decoder
    steps = len(tape.gold_rows)
    embed_dim = dec.embed_dim

    # softmax + mean-NLL gradient in one step
    dlogits = tape.dists.copy()
    dlogits[np.arange(steps), tape.gold_rows] -= 1.0
    dlogits /= steps

    d_w_out = tape.dec_hs.T @ dlogits
    d_dec_hs = dlogits @ dec.w_out.T
    d_dec_wmat, d_dec_xs = kernels.lstm_backward(
        dec.lstm.wmat, tape.dec_xs, tape.dec_hs, tape.dec_cs, tape.dec_gates, d_dec_hs)

    d_dec_embed = np.zeros_like(dec.embed)
    np.add.at(d_dec_embed, tape.dec_in_rows, d_dec_xs[:, :embed_dim])

    # c was fed at every decoder step; its gradient enters the encoder
    # only at the final time step
    dc = d_dec_xs[:, embed_dim:].sum(axis=0)
    d_enc_hs = np.zeros_like(tape.enc_hs)
    d_enc_hs[-1] = dc
    d_enc_wmat, d_enc_xs = kernels.lstm_backward(
        enc.lstm.wmat, tape.enc_xs, tape.enc_hs, tape.enc_cs, tape.enc_gates, d_enc_hs)

    d_enc_embed = np.zeros_like(enc.embed)
    np.add.at(d_enc_embed, tape.enc_ids, d_enc_xs)
    return PairGrads(d_enc_embed, d_enc_wmat, d_dec_embed, d_dec_wmat, d_w_out)


def sgd_update(pair: EncDecPair, grads: PairGrads, epoch: int, *,
               lr_start: float = 1.0, lr_decay: float = 0.95,
               clip_norm: float = 5.0) -> bool:
    """p <- p - lr(epoch) * g with global-norm clipping.

    Returns False (and leaves parameters untouched) when any gradient is
    non-finite; callers count such incidents.
    """
    norm = grads.global_norm()
    if not np.isfinite(norm):
        return False
    lr = learning_rate(epoch, lr_start, lr_decay)
    if clip_norm and norm > clip_norm:
        lr *= clip_norm / norm
    for p, g in zip(pair.param_tensors(), grads.tensors()):
        p -= lr * g
    return True


def gradient_check(pair: EncDecPair, sentence: Sequence[int], context: Sequence[int],
                   targets: Sequence[Symbol], *, n_samples: int = 200,
                   eps: float = 1e-5, rng=None) -> float:
    """Max relative error between BPTT and central finite differences.

    Error metric is |a - n| / max(|a|, |n|, 1e-6); the floor turns the
    comparison absolute for near-zero gradients, where the quotient is
    dominated by differencing noise.
    """
    rng = rng or np.random.default_rng(0)
    tape = forward(pair, sentence, context, targets)
    grads = backward(pair, tape)
    tensors = list(zip(pair.param_tensors(), grads.tensors()))
    worst = 0.0
    for i in range(n_samples):
        # round-robin over tensors so encoder and decoder are both covered
        param, grad = tensors[i % len(tensors)]
        flat = int(rng.integers(param.size))
        idx = np.unravel_index(flat, param.shape)
        orig = param[idx]
        param[idx] = orig + eps
        up = forward(pair, sentence, context, targets).loss
        param[idx] = orig - eps
        down = forward(pair, sentence, context, targets).loss
        param[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = grad[idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst
