"""Length-constrained Seq2Seq tagging model.

A unidirectional LSTM encoder summarizes the embedded address; its final
state initializes an LSTM decoder that is fed a BOS embedding and then its
own previous prediction, for exactly as many steps as the address has
tokens. A linear layer plus softmax scores the tag space at each step.
Optionally, additive attention over the encoder outputs is concatenated to
the decoder state before the output layer.

Inference runs in fixed 32-row blocks with position axes padded to
multiples of 16, which makes every per-address result bit-identical
regardless of how addresses are grouped into batches (for addresses up to
~100 tokens; see bench's correctness gate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .core import EmptyAddress, ParsedAddress, TagVocabulary, TokenizedAddress
from .embed import ROW_BLOCK, embed_address
from .nn import LstmParams, ShapeMismatch, Tensor, init_lstm, lstm_step

POS_BLOCK = 16     # attention/position axis padding granularity
MASK_BIAS = -1e9   # pre-softmax bias; exp underflows to exactly 0


@dataclass(frozen=True)
class Seq2SeqConfig:
    tag_vocab: TagVocabulary
    encoder_hidden_size: int = 1024
    decoder_hidden_size: int = 1024
    input_size: int = 300
    attention: bool = False
    tag_embedding_size: int = 300

    def __post_init__(self):
        for name in ("encoder_hidden_size", "decoder_hidden_size", "input_size", "tag_embedding_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.attention and self.encoder_hidden_size != self.decoder_hidden_size:
            raise ValueError("without attention the decoder is initialized directly from the "
                             "encoder state, so the hidden sizes must match")

    @property
    def num_tags(self) -> int:
        return self.tag_vocab.size


@dataclass
class AttentionParams:
    w_dec: Tensor   # [attn, d_dec]
    w_enc: Tensor   # [attn, d_enc]
    v: Tensor       # [1, attn]

    def params(self) -> list[Tensor]:
        return [self.w_dec, self.w_enc, self.v]


@dataclass
class BridgeParams:
    w_h: Tensor
    b_h: Tensor
    w_c: Tensor
    b_c: Tensor

    def params(self) -> list[Tensor]:
        return [self.w_h, self.b_h, self.w_c, self.b_c]


@dataclass
class TaggerModel:
    config: Seq2SeqConfig
    encoder: LstmParams
    decoder: LstmParams
    tag_embeddings: Tensor          # [(K+1) x E]; row K is BOS
    output_w: Tensor                # [K x (d_dec (+ d_enc if attention))]
    output_b: Tensor
    attention: AttentionParams | None = None
    bridge: BridgeParams | None = None

    @classmethod
    def new(cls, config: Seq2SeqConfig, seed: int = 0, dtype=np.float32) -> "TaggerModel":
        rng = np.random.default_rng(seed)
        k = config.num_tags
        emb = config.tag_embedding_size

        def uniform(rows, cols):
            bound = 1.0 / math.sqrt(cols)
            return Tensor(rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype),
                          requires_grad=True)

        encoder = init_lstm(config.input_size, config.encoder_hidden_size, rng, dtype=dtype)
        decoder = init_lstm(emb, config.decoder_hidden_size, rng, dtype=dtype)
        tag_embeddings = uniform(k + 1, emb)
        out_in = config.decoder_hidden_size + (config.encoder_hidden_size if config.attention else 0)
        output_w = uniform(k, out_in)
        output_b = Tensor(np.zeros(k, dtype=dtype), requires_grad=True)
        attention = None
        bridge = None
        if config.attention:
            attn = config.decoder_hidden_size
            attention = AttentionParams(
                w_dec=uniform(attn, config.decoder_hidden_size),
                w_enc=uniform(attn, config.encoder_hidden_size),
                v=uniform(1, attn),
            )
            if config.encoder_hidden_size != config.decoder_hidden_size:
                bridge = BridgeParams(
                    w_h=uniform(config.decoder_hidden_size, config.encoder_hidden_size),
                    b_h=Tensor(np.zeros(config.decoder_hidden_size, dtype=dtype), requires_grad=True),
                    w_c=uniform(config.decoder_hidden_size, config.encoder_hidden_size),
                    b_c=Tensor(np.zeros(config.decoder_hidden_size, dtype=dtype), requires_grad=True),
                )
        return cls(config=config, encoder=encoder, decoder=decoder,
                   tag_embeddings=tag_embeddings, output_w=output_w, output_b=output_b,
                   attention=attention, bridge=bridge)

    @property
    def bos_index(self) -> int:
        return self.config.num_tags

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, lstm in (("encoder", self.encoder), ("decoder", self.decoder)):
            for gate in "ifgo":
                out[f"{prefix}.w_{gate}"] = getattr(lstm, f"w_{gate}")
                out[f"{prefix}.u_{gate}"] = getattr(lstm, f"u_{gate}")
                out[f"{prefix}.b_{gate}"] = getattr(lstm, f"b_{gate}")
        out["tag_embeddings"] = self.tag_embeddings
        out["output.w"] = self.output_w
        out["output.b"] = self.output_b
        if self.attention is not None:
            out["attention.w_dec"] = self.attention.w_dec
            out["attention.w_enc"] = self.attention.w_enc
            out["attention.v"] = self.attention.v
        if self.bridge is not None:
            out["bridge.w_h"] = self.bridge.w_h
            out["bridge.b_h"] = self.bridge.b_h
            out["bridge.w_c"] = self.bridge.w_c
            out["bridge.b_c"] = self.bridge.b_c
        return out

    def trainable_params(self) -> list[Tensor]:
        return list(self.named_params().values())


@dataclass(frozen=True)
class BatchedInput:
    """Padded embedding batch: [B x n_max x width] with leading-true masks."""

    embeddings: np.ndarray
    lengths: tuple[int, ...]
    mask: np.ndarray

    def __post_init__(self):
        b, n = self.mask.shape
        if self.embeddings.shape[:2] != (b, n) or len(self.lengths) != b:
            raise ShapeMismatch("embeddings/lengths/mask disagree")
        for i, ln in enumerate(self.lengths):
            row = self.mask[i]
            if row[:ln].sum() != ln or row[ln:].any():
                raise ValueError(f"mask row {i} is not {ln} leading trues")


def build_batched_input(provider, addresses: Sequence[TokenizedAddress]) -> BatchedInput:
    mats = provider.embed_addresses([a.tokens for a in addresses])
    lengths = tuple(len(a.tokens) for a in addresses)
    n_max = max(lengths)
    width = mats[0].shape[1]
    emb = np.zeros((len(addresses), n_max, width), dtype=np.float32)
    mask = np.zeros((len(addresses), n_max), dtype=bool)
    for i, m in enumerate(mats):
        emb[i, :lengths[i]] = m
        mask[i, :lengths[i]] = True
    return BatchedInput(embeddings=emb, lengths=lengths, mask=mask)


@dataclass(frozen=True)
class Encoded:
    """Encoder outputs with padded positions zeroed, plus final states."""

    outputs: np.ndarray        # [B x n_max x d_enc]
    h: np.ndarray              # [B x d_enc] (state at step lengths[i]-1)
    c: np.ndarray
    lengths: tuple[int, ...]


@dataclass(frozen=True)
class Decoded:
    tag_ids: tuple[np.ndarray, ...]          # per address, exactly lengths[i] ids
    probabilities: tuple[np.ndarray, ...]


def _round_up(n: int, mult: int) -> int:
    return ((n + mult - 1) // mult) * mult


def _encoder_scan(model: TaggerModel, x_steps: Sequence[Tensor], mask_cols: Sequence[np.ndarray]):
    """Run the encoder over t steps with frozen-state masking.

    Returns (per-step gated outputs, final h, final c). Masked steps leave
    the state bit-identical, so the final state equals the state at each
    row's last real step.
    """
    rows = x_steps[0].data.shape[0]
    dtype = model.output_w.dtype
    h = c = Tensor(np.zeros((rows, model.config.encoder_hidden_size), dtype=dtype))
    outputs = []
    for x, m in zip(x_steps, mask_cols):
        h2, c2 = lstm_step(x, h, c, model.encoder)
        keep = 1.0 - m
        h_step = nn.mul(h2, m)
        h = nn.add(h_step, nn.mul(h, keep))
        c = nn.add(nn.mul(c2, m), nn.mul(c, keep))
        outputs.append(h_step)  # zero rows at padded positions
    return outputs, h, c


def _init_decoder_state(model: TaggerModel, h: Tensor, c: Tensor):
    if model.bridge is not None:
        return (nn.affine(h, model.bridge.w_h, model.bridge.b_h),
                nn.affine(c, model.bridge.w_c, model.bridge.b_c))
    if model.config.encoder_hidden_size != model.config.decoder_hidden_size:
        raise ShapeMismatch("encoder/decoder size mismatch without a bridge")
    return h, c


def _attention_context(model: TaggerModel, h_dec: Tensor, enc_steps: Sequence[Tensor],
                       enc_keys: Sequence[Tensor], score_bias: np.ndarray):
    """Additive attention: softmax_j v.T tanh(W_d h + W_e e_j), then sum w_j e_j.

    ``score_bias`` is [rows x n_pad] with 0 on real positions and MASK_BIAS on
    masked/padded ones; n_pad may exceed len(enc_steps), the extra positions
    scoring MASK_BIAS outright.
    """
    query = nn.affine(h_dec, model.attention.w_dec)
    scores = [nn.affine(nn.tanh(nn.add(query, key)), model.attention.v) for key in enc_keys]
    n_pad = score_bias.shape[1]
    score_row = nn.concat(scores, axis=1)
    if n_pad > len(enc_steps):
        pad = Tensor(np.zeros((score_bias.shape[0], n_pad - len(enc_steps)),
                              dtype=score_row.data.dtype))
        score_row = nn.concat([score_row, pad], axis=1)
    weights = nn.softmax(nn.add(score_row, score_bias), axis=1)
    context = None
    for j, enc in enumerate(enc_steps):
        term = nn.mul(nn.narrow(weights, 1, j, 1), enc)
        context = term if context is None else nn.add(context, term)
    return context, weights


def attention_weights(params: AttentionParams, decoder_hidden: np.ndarray,
                      encoder_outputs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Attention distribution for one decoder state over n encoder positions.

    Masked positions get exactly 0; the rest sums to 1.
    """
    with nn.no_grad():
        h = Tensor(np.asarray(decoder_hidden)[None, :])
        enc = np.asarray(encoder_outputs)
        query = nn.affine(h, params.w_dec)
        scores = [nn.affine(nn.tanh(nn.add(query, nn.affine(Tensor(enc[j:j + 1]), params.w_enc))),
                            params.v) for j in range(enc.shape[0])]
        bias = np.where(np.asarray(mask, dtype=bool), 0.0, MASK_BIAS)[None, :]
        row = nn.softmax(nn.add(nn.concat(scores, axis=1), bias), axis=1)
    return row.data[0]


def encode(model: TaggerModel, batch: BatchedInput) -> Encoded:
    """Per address, run the encoder over its true length only (inference)."""
    if batch.embeddings.shape[2] != model.config.input_size:
        raise ShapeMismatch(f"embedding width {batch.embeddings.shape[2]} != "
                            f"input_size {model.config.input_size}")
    b, n_max, _ = batch.embeddings.shape
    d_enc = model.config.encoder_hidden_size
    outputs = np.zeros((b, n_max, d_enc), dtype=np.float32)
    h_out = np.zeros((b, d_enc), dtype=np.float32)
    c_out = np.zeros((b, d_enc), dtype=np.float32)
    fmask = batch.mask.astype(np.float32)
    with nn.no_grad():
        for start in range(0, b, ROW_BLOCK):
            rows = min(ROW_BLOCK, b - start)
            n_blk = max(batch.lengths[start:start + rows])
            x_rows = np.zeros((ROW_BLOCK, n_blk, batch.embeddings.shape[2]), dtype=np.float32)
            m_rows = np.zeros((ROW_BLOCK, n_blk), dtype=np.float32)
            x_rows[:rows] = batch.embeddings[start:start + rows, :n_blk]
            m_rows[:rows] = fmask[start:start + rows, :n_blk]
            x_steps = [Tensor(np.ascontiguousarray(x_rows[:, t])) for t in range(n_blk)]
            mask_cols = [np.ascontiguousarray(m_rows[:, t:t + 1]) for t in range(n_blk)]
            step_out, h, c = _encoder_scan(model, x_steps, mask_cols)
            for t, s in enumerate(step_out):
                outputs[start:start + rows, t] = s.data[:rows]
            h_out[start:start + rows] = h.data[:rows]
            c_out[start:start + rows] = c.data[:rows]
    return Encoded(outputs=outputs, h=h_out, c=c_out, lengths=batch.lengths)


def decode(model: TaggerModel, encoded: Encoded) -> Decoded:
    """Greedy fixed-length decoding: exactly lengths[i] tags per address."""
    b = len(encoded.lengths)
    eos = model.config.tag_vocab.eos_index
    all_ids: list[np.ndarray] = [None] * b
    all_probs: list[np.ndarray] = [None] * b
    with nn.no_grad():
        for start in range(0, b, ROW_BLOCK):
            rows = min(ROW_BLOCK, b - start)
            lengths = encoded.lengths[start:start + rows]
            n_blk = max(lengths)
            n_pad = _round_up(n_blk, POS_BLOCK)
            h = np.zeros((ROW_BLOCK, encoded.h.shape[1]), dtype=np.float32)
            c = np.zeros_like(h)
            h[:rows] = encoded.h[start:start + rows]
            c[:rows] = encoded.c[start:start + rows]
            h_dec, c_dec = _init_decoder_state(model, Tensor(h), Tensor(c))
            enc_steps = []
            enc_keys = []
            score_bias = None
            if model.attention is not None:
                enc_blk = np.zeros((ROW_BLOCK, n_blk, encoded.outputs.shape[2]), dtype=np.float32)
                enc_blk[:rows] = encoded.outputs[start:start + rows, :n_blk]
                enc_steps = [Tensor(np.ascontiguousarray(enc_blk[:, j])) for j in range(n_blk)]
                enc_keys = [nn.affine(e, model.attention.w_enc) for e in enc_steps]
                score_bias = np.full((ROW_BLOCK, n_pad), MASK_BIAS, dtype=np.float32)
                for i, ln in enumerate(lengths):
                    score_bias[i, :ln] = 0.0
            ids = np.zeros((rows, n_blk), dtype=np.intp)
            probs = np.zeros((rows, n_blk), dtype=np.float32)
            inp = nn.gather_rows(model.tag_embeddings,
                                 np.full(ROW_BLOCK, model.bos_index, dtype=np.intp))
            for t in range(n_blk):
                h_dec, c_dec = lstm_step(inp, h_dec, c_dec, model.decoder)
                if model.attention is not None:
                    context, _ = _attention_context(model, h_dec, enc_steps, enc_keys, score_bias)
                    out_in = nn.concat([h_dec, context], axis=1)
                else:
                    out_in = h_dec
                logits = nn.affine(out_in, model.output_w, model.output_b)
                dist = nn.softmax(logits, axis=1)
                scored = logits.data.copy()
                scored[:, eos] = -np.inf  # EOS is unreachable under fixed-length decoding
                pred = np.argmax(scored, axis=1)
                ids[:, t] = pred[:rows]
                probs[:, t] = dist.data[np.arange(rows), pred[:rows]]
                inp = nn.gather_rows(model.tag_embeddings, pred)
            for i, ln in enumerate(lengths):
                all_ids[start + i] = ids[i, :ln].copy()
                all_probs[start + i] = probs[i, :ln].copy()
    return Decoded(tag_ids=tuple(all_ids), probabilities=tuple(all_probs))


def training_forward(model: TaggerModel, x_steps: Sequence[Tensor], token_mask: np.ndarray,
                     gold_ids: np.ndarray, gold_mask: np.ndarray,
                     teacher_forced: Sequence[bool]) -> Tensor:
    """Teacher-forced forward pass -> mean cross-entropy over real gold steps.

    ``token_mask`` [B x n_tok] masks encoder steps; ``gold_mask``
    [B x n_steps] masks decoder/loss steps (n_steps may exceed n_tok by one
    when a terminal EOS step is trained). ``teacher_forced[t]`` decides
    whether step t+1's input is the gold tag at t or the model's own argmax
    prediction at t.
    """
    rows, n_steps = gold_ids.shape
    dtype = model.output_w.dtype
    tmask = token_mask.astype(dtype)
    gmask = gold_mask.astype(dtype)
    mask_cols = [np.ascontiguousarray(tmask[:, t:t + 1]) for t in range(len(x_steps))]
    enc_steps, h_enc, c_enc = _encoder_scan(model, x_steps, mask_cols)
    h_dec, c_dec = _init_decoder_state(model, h_enc, c_enc)
    score_bias = None
    enc_keys = []
    if model.attention is not None:
        score_bias = np.where(tmask > 0, 0.0, MASK_BIAS).astype(dtype)
        enc_keys = [nn.affine(e, model.attention.w_enc) for e in enc_steps]
    eos = model.config.tag_vocab.eos_index
    inp = nn.gather_rows(model.tag_embeddings, np.full(rows, model.bos_index, dtype=np.intp))
    total = None
    for t in range(n_steps):
        h_dec, c_dec = lstm_step(inp, h_dec, c_dec, model.decoder)
        if model.attention is not None:
            context, _ = _attention_context(model, h_dec, enc_steps, enc_keys, score_bias)
            out_in = nn.concat([h_dec, context], axis=1)
        else:
            out_in = h_dec
        logits = nn.affine(out_in, model.output_w, model.output_b)
        dist = nn.softmax(logits, axis=1)
        picked = nn.pick(dist, gold_ids[:, t])
        step_loss = nn.mul(nn.log(nn.clip_min(picked, nn.CE_EPS)), gmask[:, t])
        total = step_loss if total is None else nn.add(total, step_loss)
        if t + 1 < n_steps:
            if teacher_forced[t]:
                next_ids = gold_ids[:, t]
            else:
                scored = logits.data.copy()
                scored[:, eos] = -np.inf
                next_ids = np.argmax(scored, axis=1)
            inp = nn.gather_rows(model.tag_embeddings, next_ids)
    count = float(gmask.sum())
    return nn.mul(nn.sum_all(total), -1.0 / count)


def parse(model: TaggerModel, addresses: Sequence[str], preprocessor, provider,
          batch_size: int = 32) -> list[ParsedAddress]:
    """Preprocess, embed, encode and decode a list of raw addresses.

    Output order matches input order; results are independent of batch_size.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if provider.width != model.config.input_size:
        raise ShapeMismatch(f"provider width {provider.width} != model input "
                            f"{model.config.input_size}")
    tokenized: list[TokenizedAddress] = []
    for idx, raw in enumerate(addresses):
        try:
            tokenized.append(preprocessor.tokenize(raw))
        except EmptyAddress:
            raise EmptyAddress(idx) from None
    vocab = model.config.tag_vocab
    results: list[ParsedAddress] = []
    for start in range(0, len(tokenized), batch_size):
        chunk = tokenized[start:start + batch_size]
        batch = build_batched_input(provider, chunk)
        decoded = decode(model, encode(model, batch))
        for ta, ids, ps in zip(chunk, decoded.tag_ids, decoded.probabilities):
            tags = tuple(vocab.name_of(int(i)) for i in ids)
            results.append(ParsedAddress(tokens=ta.tokens, tags=tags,
                                         probabilities=tuple(float(p) for p in ps)))
    return results


@dataclass
class AddressTagger:
    """A tagging model bundled with its preprocessor and embedding provider."""

    model: TaggerModel
    preprocessor: object
    provider: object

    @property
    def flavor(self) -> str:
        name = self.provider.kind
        if self.model.config.attention:
            name += "+attention"
        return name

    def parse(self, addresses: Sequence[str], batch_size: int = 32) -> list[ParsedAddress]:
        return parse(self.model, addresses, self.preprocessor, self.provider, batch_size)

    def trainable_params(self) -> list[Tensor]:
        return self.model.trainable_params() + self.provider.trainable_params()
