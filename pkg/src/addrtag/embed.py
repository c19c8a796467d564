"""Token embedding providers.

Two interchangeable ways to turn address tokens into fixed-width vectors:

* ``VectorTableProvider`` -- a frozen word-vector table (file-backed), with
  deterministic hash-seeded unit vectors for out-of-vocabulary tokens.
* ``SubwordProvider`` -- digit-zeroed BPE segmentation composed by a
  trainable bidirectional LSTM; the two final hidden states are projected
  down to the output width.

Inference embedding is computed in fixed-size row blocks so that a token's
vector is bit-identical no matter how addresses are batched.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import nn
from .bpe import MergeTable, digits_to_zero, segment
from .core import TokenizedAddress
from .nn import LstmParams, Tensor, init_lstm, lstm_step

ROW_BLOCK = 32  # fixed GEMM row count for batch-size-independent inference


@dataclass(frozen=True)
class VectorTable:
    """Frozen word -> vector mapping; contents never change after load."""

    dim: int = 300
    vectors: Mapping[str, np.ndarray] = None
    oov_seed: int = 0

    def __post_init__(self):
        vecs = {} if self.vectors is None else dict(self.vectors)
        for word, v in vecs.items():
            arr = np.asarray(v, dtype=np.float32)
            if arr.shape != (self.dim,):
                raise ValueError(f"vector for {word!r} has shape {arr.shape}, want ({self.dim},)")
            vecs[word] = arr
        object.__setattr__(self, "vectors", vecs)

    def __len__(self):
        return len(self.vectors)


def _oov_vector(oov_seed: int, token: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{oov_seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def lookup(table: VectorTable, token: str) -> np.ndarray:
    """Stored vector for known tokens; deterministic unit vector otherwise."""
    if not token:
        raise ValueError("cannot embed an empty token")
    vec = table.vectors.get(token)
    if vec is not None:
        return vec
    return _oov_vector(table.oov_seed, token, table.dim)


def load_vector_table(path, oov_seed: int = 0) -> VectorTable:
    """Read the ``word v1 .. v_dim`` text format (optional count/dim header)."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if line_no == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # count/dim header
                except ValueError:
                    pass
            word, values = parts[0], parts[1:]
            vec = np.array([float(x) for x in values], dtype=np.float32)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(f"{path}:{line_no}: expected {dim} values, got {vec.shape[0]}")
            vectors[word] = vec
    if dim is None:
        raise ValueError(f"{path}: no vectors found")
    return VectorTable(dim=dim, vectors=vectors, oov_seed=oov_seed)


def save_vector_table(table: VectorTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in table.vectors.items():
            fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


class SubwordComposer:
    """Trainable subword-embedding + BiLSTM + projection word encoder."""

    def __init__(self, vocab_size: int, d_sub: int = 100, hidden: int = 300,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.vocab_size = vocab_size
        self.d_sub = d_sub
        self.hidden = hidden
        bound = 1.0 / math.sqrt(d_sub)
        self.subword_embeddings = Tensor(
            rng.uniform(-bound, bound, size=(vocab_size, d_sub)).astype(dtype), requires_grad=True)
        self.forward_lstm = init_lstm(d_sub, hidden, rng, dtype=dtype)
        self.backward_lstm = init_lstm(d_sub, hidden, rng, dtype=dtype)
        pbound = 1.0 / math.sqrt(hidden)
        self.proj_w = Tensor(rng.uniform(-pbound, pbound, size=(hidden, 2 * hidden)).astype(dtype),
                             requires_grad=True)
        self.proj_b = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)

    def params(self) -> list[Tensor]:
        return ([self.subword_embeddings]
                + self.forward_lstm.params()
                + self.backward_lstm.params()
                + [self.proj_w, self.proj_b])


def compose_batch(composer: SubwordComposer, ids_list: Sequence[Sequence[int]]) -> Tensor:
    """Compose many subword-id sequences at once -> Tensor [len(ids_list), hidden].

    Rows are independent: each sequence sees only its own subwords (padded
    steps are masked out of the state updates exactly).
    """
    t_rows = len(ids_list)
    lengths = [len(ids) for ids in ids_list]
    if min(lengths) < 1:
        raise ValueError("cannot compose an empty subword sequence")
    s_max = max(lengths)
    ids = np.zeros((t_rows, s_max), dtype=np.intp)
    mask = np.zeros((t_rows, s_max), dtype=np.float32)
    for r, seq in enumerate(ids_list):
        seq = np.asarray(seq, dtype=np.intp)
        if seq.size and seq.max() >= composer.vocab_size:
            raise ValueError(f"subword id {seq.max()} out of range ({composer.vocab_size})")
        ids[r, :len(seq)] = seq
        mask[r, :len(seq)] = 1.0

    dtype = composer.proj_w.dtype
    mask = mask.astype(dtype)
    zeros = Tensor(np.zeros((t_rows, composer.hidden), dtype=dtype))

    def scan(lstm: LstmParams, order: Iterable[int]) -> Tensor:
        h = c = zeros
        for s in order:
            x = nn.gather_rows(composer.subword_embeddings, ids[:, s])
            h2, c2 = lstm_step(x, h, c, lstm)
            m = mask[:, s:s + 1]
            keep = 1.0 - m
            h = nn.add(nn.mul(h2, m), nn.mul(h, keep))
            c = nn.add(nn.mul(c2, m), nn.mul(c, keep))
        return h

    fwd = scan(composer.forward_lstm, range(s_max))
    bwd = scan(composer.backward_lstm, range(s_max - 1, -1, -1))
    return nn.affine(nn.concat([fwd, bwd], axis=1), composer.proj_w, composer.proj_b)


def compose(composer: SubwordComposer, subword_ids: Sequence[int]) -> np.ndarray:
    """Embed one subword sequence -> vector [hidden] (inference path)."""
    return _compose_rows_blocked(composer, [list(subword_ids)])[0]


def _compose_rows_blocked(composer: SubwordComposer, ids_list: Sequence[Sequence[int]]) -> np.ndarray:
    """Inference compose in fixed ROW_BLOCK-row blocks for batch invariance."""
    out = np.empty((len(ids_list), composer.hidden), dtype=np.float32)
    with nn.no_grad():
        for start in range(0, len(ids_list), ROW_BLOCK):
            chunk = [list(seq) for seq in ids_list[start:start + ROW_BLOCK]]
            real = len(chunk)
            chunk += [[0]] * (ROW_BLOCK - real)  # zero-pad rows to the block size
            composed = compose_batch(composer, chunk)
            out[start:start + real] = composed.data[:real].astype(np.float32, copy=False)
    return out


class VectorTableProvider:
    """Embeds tokens by frozen table lookup."""

    kind = "vector-table"

    def __init__(self, table: VectorTable, source_path: str | None = None):
        self.table = table
        self.source_path = source_path  # vectors file this table was loaded from

    @property
    def width(self) -> int:
        return self.table.dim

    def embed_addresses(self, token_lists: Sequence[Sequence[str]]) -> list[np.ndarray]:
        return [np.stack([lookup(self.table, tok) for tok in tokens]) for tokens in token_lists]

    def trainable_params(self) -> list[Tensor]:
        return []


class SubwordProvider:
    """Embeds tokens via digit zeroing, BPE segmentation and the composer."""

    kind = "subword"

    def __init__(self, merge_table: MergeTable, composer: SubwordComposer):
        if composer.vocab_size != merge_table.size:
            raise ValueError(f"composer vocab {composer.vocab_size} != merge table {merge_table.size}")
        self.merge_table = merge_table
        self.composer = composer

    @property
    def width(self) -> int:
        return self.composer.hidden

    def token_ids(self, token: str) -> list[int]:
        return segment(digits_to_zero(token), self.merge_table)

    def embed_addresses(self, token_lists: Sequence[Sequence[str]]) -> list[np.ndarray]:
        flat_ids = [self.token_ids(tok) for tokens in token_lists for tok in tokens]
        if not flat_ids:
            return []
        rows = _compose_rows_blocked(self.composer, flat_ids)
        out = []
        offset = 0
        for tokens in token_lists:
            out.append(rows[offset:offset + len(tokens)].copy())
            offset += len(tokens)
        return out

    def embed_addresses_graph(self, token_lists: Sequence[Sequence[str]]) -> Tensor:
        """Training path: one graph tensor of all token rows, in flat order."""
        flat_ids = [self.token_ids(tok) for tokens in token_lists for tok in tokens]
        return compose_batch(self.composer, flat_ids)

    def trainable_params(self) -> list[Tensor]:
        return self.composer.params()


def embed_address(provider, address: TokenizedAddress) -> np.ndarray:
    """One row per token, provider-defined width."""
    return provider.embed_addresses([address.tokens])[0]
