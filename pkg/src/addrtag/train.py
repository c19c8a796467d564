"""Training and retraining.

``retrain`` fine-tunes a bundled tagger on a dataset with a seeded shuffle
and split, teacher forcing, and per-epoch metrics. Passing
``prediction_tags`` swaps the tag vocabulary (reinitializing only the tag
embeddings and output layer); passing ``seq2seq_params`` rebuilds the
model at new sizes from scratch.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .core import AddrTagError, DatasetRecord, LengthMismatch, TagVocabulary, validate_record
from .embed import SubwordComposer, SubwordProvider, VectorTableProvider
from .nn import Tensor
from .tagger import AddressTagger, Seq2SeqConfig, TaggerModel, training_forward


class EmptyDataset(AddrTagError):
    pass


class InvalidRatio(AddrTagError):
    pass


class EmptyInput(AddrTagError):
    pass


_SEQ2SEQ_SIZE_FIELDS = ("encoder_hidden_size", "decoder_hidden_size",
                        "input_size", "tag_embedding_size")


@dataclass(frozen=True)
class TrainingConfig:
    train_ratio: float = 0.8
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-3
    teacher_forcing_ratio: float = 0.5
    seed: int = 0
    prediction_tags: TagVocabulary | None = None
    seq2seq_params: Mapping[str, int] | None = None
    optimizer: str = "adam"
    append_eos_step: bool = False
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not (0.0 < self.train_ratio < 1.0):
            raise InvalidRatio(f"train_ratio must be in (0, 1), got {self.train_ratio}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0.0 <= self.teacher_forcing_ratio <= 1.0):
            raise ValueError("teacher_forcing_ratio must be in [0, 1]")
        if self.seq2seq_params is not None:
            unknown = set(self.seq2seq_params) - set(_SEQ2SEQ_SIZE_FIELDS)
            if unknown:
                raise ValueError(f"unknown seq2seq_params {sorted(unknown)}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_seq_accuracy: float
    train_full_parse: float
    eval_seq_accuracy: float
    eval_full_parse: float
    seconds: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrainingReport:
    rows: tuple[EpochStats, ...]

    def __post_init__(self):
        for row in self.rows:
            for name in ("train_seq_accuracy", "train_full_parse",
                         "eval_seq_accuracy", "eval_full_parse"):
                v = getattr(row, name)
                if not (0.0 <= v <= 1.0):
                    raise ValueError(f"{name}={v} outside [0, 1]")

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r.as_dict()) for r in self.rows) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainingReport":
        rows = [EpochStats(**json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(rows=tuple(rows))

    @property
    def final(self) -> EpochStats:
        return self.rows[-1]


def sequence_accuracy(predicted: Sequence[str], gold: Sequence[str]) -> float:
    """Fraction of positions tagged correctly (footnote-7 style)."""
    if len(predicted) != len(gold):
        raise LengthMismatch(len(predicted), len(gold))
    if not gold:
        raise EmptyInput("empty tag sequences")
    hits = sum(1 for p, g in zip(predicted, gold) if p == g)
    return hits / len(gold)


def corpus_metrics(pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> tuple[float, float]:
    """(mean sequence accuracy, fraction of perfectly parsed sequences)."""
    if not pairs:
        raise EmptyInput("no prediction/gold pairs")
    accs = [sequence_accuracy(p, g) for p, g in pairs]
    mean_seq = sum(accs) / len(accs)
    full = sum(1 for a in accs if a == 1.0) / len(accs)
    return mean_seq, full


def _clone_tensor(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=t.requires_grad)


def clone_model(model: TaggerModel) -> TaggerModel:
    """Deep-copy all weights so retraining never mutates the source model."""
    enc = dataclasses.replace(model.encoder,
                              **{f"{kind}_{g}": _clone_tensor(getattr(model.encoder, f"{kind}_{g}"))
                                 for kind in "wub" for g in "ifgo"})
    dec = dataclasses.replace(model.decoder,
                              **{f"{kind}_{g}": _clone_tensor(getattr(model.decoder, f"{kind}_{g}"))
                                 for kind in "wub" for g in "ifgo"})
    attention = None
    if model.attention is not None:
        attention = dataclasses.replace(model.attention,
                                        w_dec=_clone_tensor(model.attention.w_dec),
                                        w_enc=_clone_tensor(model.attention.w_enc),
                                        v=_clone_tensor(model.attention.v))
    bridge = None
    if model.bridge is not None:
        bridge = dataclasses.replace(model.bridge,
                                     w_h=_clone_tensor(model.bridge.w_h),
                                     b_h=_clone_tensor(model.bridge.b_h),
                                     w_c=_clone_tensor(model.bridge.w_c),
                                     b_c=_clone_tensor(model.bridge.b_c))
    return TaggerModel(config=model.config, encoder=enc, decoder=dec,
                       tag_embeddings=_clone_tensor(model.tag_embeddings),
                       output_w=_clone_tensor(model.output_w),
                       output_b=_clone_tensor(model.output_b),
                       attention=attention, bridge=bridge)


def clone_provider(provider):
    """Copy trainable provider state; frozen providers are shared."""
    if isinstance(provider, SubwordProvider):
        src = provider.composer
        composer = SubwordComposer(src.vocab_size, src.d_sub, src.hidden,
                                   rng=np.random.default_rng(0), dtype=src.proj_w.dtype.type)
        for dst_t, src_t in zip(composer.params(), src.params()):
            dst_t.data = src_t.data.copy()
        return SubwordProvider(provider.merge_table, composer)
    return provider


def _reinit_for_tags(model: TaggerModel, vocab: TagVocabulary,
                     rng: np.random.Generator) -> TaggerModel:
    """New-tag retraining: replace vocabulary, reinitialize only the tag
    embeddings and output layer, keep every other weight."""
    cfg = dataclasses.replace(model.config, tag_vocab=vocab)
    k = vocab.size
    emb = cfg.tag_embedding_size
    dtype = model.output_w.dtype

    def uniform(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return Tensor(rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype),
                      requires_grad=True)

    out_in = model.output_w.data.shape[1]
    return dataclasses.replace(model, config=cfg,
                               tag_embeddings=uniform(k + 1, emb),
                               output_w=uniform(k, out_in),
                               output_b=Tensor(np.zeros(k, dtype=dtype), requires_grad=True))


def _batch_arrays(token_lists, gold_lists, eos_index: int, append_eos: bool):
    b = len(token_lists)
    n_tok = max(len(t) for t in token_lists)
    n_steps = n_tok + 1 if append_eos else n_tok
    token_mask = np.zeros((b, n_tok), dtype=np.float32)
    gold_ids = np.zeros((b, n_steps), dtype=np.intp)
    gold_mask = np.zeros((b, n_steps), dtype=np.float32)
    for i, (toks, gold) in enumerate(zip(token_lists, gold_lists)):
        ln = len(toks)
        token_mask[i, :ln] = 1.0
        gold_ids[i, :ln] = gold
        gold_mask[i, :ln] = 1.0
        if append_eos:
            gold_ids[i, ln] = eos_index
            gold_mask[i, ln] = 1.0
    return token_mask, gold_ids, gold_mask


def _embed_steps(provider, token_lists, n_tok: int):
    """Per-time-step input tensors; graph-backed for trainable providers."""
    if isinstance(provider, SubwordProvider):
        flat = provider.embed_addresses_graph(token_lists)
        t_rows = flat.data.shape[0]
        zero = Tensor(np.zeros((1, provider.width), dtype=flat.data.dtype))
        full = nn.concat([flat, zero], axis=0)
        idx = np.full((len(token_lists), n_tok), t_rows, dtype=np.intp)
        offset = 0
        for i, toks in enumerate(token_lists):
            idx[i, :len(toks)] = np.arange(offset, offset + len(toks))
            offset += len(toks)
        return [nn.gather_rows(full, idx[:, t]) for t in range(n_tok)]
    mats = provider.embed_addresses(token_lists)
    emb = np.zeros((len(token_lists), n_tok, provider.width), dtype=np.float32)
    for i, m in enumerate(mats):
        emb[i, :m.shape[0]] = m
    return [Tensor(np.ascontiguousarray(emb[:, t])) for t in range(n_tok)]


def retrain(tagger: AddressTagger, dataset: Sequence[DatasetRecord],
            config: TrainingConfig) -> tuple[AddressTagger, TrainingReport]:
    """Fine-tune a copy of the tagger; returns it with a per-epoch report."""
    if len(dataset) < 2:
        raise EmptyDataset(f"need at least 2 records, got {len(dataset)}")
    rng = np.random.default_rng(config.seed)
    rebuild_seed = int(rng.integers(2 ** 31 - 1))  # always drawn, keeps the stream aligned

    vocab = config.prediction_tags or tagger.model.config.tag_vocab
    if config.seq2seq_params is not None:
        cfg = dataclasses.replace(tagger.model.config, tag_vocab=vocab,
                                  **dict(config.seq2seq_params))
        model = TaggerModel.new(cfg, seed=rebuild_seed, dtype=tagger.model.output_w.dtype.type)
    elif config.prediction_tags is not None:
        model = _reinit_for_tags(clone_model(tagger.model), vocab, rng)
    else:
        model = clone_model(tagger.model)
    provider = clone_provider(tagger.provider)
    preprocessor = tagger.preprocessor
    result = AddressTagger(model=model, preprocessor=preprocessor, provider=provider)

    for record in dataset:
        validate_record(record, vocab, preprocessor)
    tokenized = [preprocessor.tokenize(r.address) for r in dataset]
    gold_idx = [np.array([vocab.index_of(t) for t in r.gold_tags], dtype=np.intp)
                for r in dataset]

    n = len(dataset)
    perm = rng.permutation(n)
    n_train = int(np.clip(round(n * config.train_ratio), 1, n - 1))
    train_idx, eval_idx = perm[:n_train], perm[n_train:]

    params = result.trainable_params()
    optimizer = nn.make_optimizer(config.optimizer, params, config.learning_rate)
    eos = vocab.eos_index

    def split_metrics(indices):
        addresses = [dataset[i].address for i in indices]
        parsed = result.parse(addresses, batch_size=max(64, config.batch_size))
        pairs = [(p.tags, dataset[i].gold_tags) for p, i in zip(parsed, indices)]
        return corpus_metrics(pairs)

    rows = []
    best_eval = -1.0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            token_lists = [tokenized[i].tokens for i in batch]
            gold_lists = [gold_idx[i] for i in batch]
            n_tok = max(len(t) for t in token_lists)
            token_mask, gold_ids, gold_mask = _batch_arrays(
                token_lists, gold_lists, eos, config.append_eos_step)
            forced = rng.random(gold_ids.shape[1]) < config.teacher_forcing_ratio
            x_steps = _embed_steps(provider, token_lists, n_tok)
            nn.zero_grad(params)
            loss = training_forward(model, x_steps, token_mask, gold_ids, gold_mask, forced)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
        train_seq, train_full = split_metrics(train_idx)
        eval_seq, eval_full = split_metrics(eval_idx)
        rows.append(EpochStats(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            train_seq_accuracy=train_seq,
            train_full_parse=train_full,
            eval_seq_accuracy=eval_seq,
            eval_full_parse=eval_full,
            seconds=time.perf_counter() - t0,
        ))
        if config.checkpoint_path is not None and eval_seq > best_eval:
            best_eval = eval_seq
            from .io import save_checkpoint
            save_checkpoint(result, config.checkpoint_path)
    return result, TrainingReport(rows=tuple(rows))


def render_training_figure(report: TrainingReport, path) -> None:
    """Loss and accuracy curves rendered to an image file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in report.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r.train_loss for r in report.rows], marker="o", color="#1f77b4")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [r.train_seq_accuracy for r in report.rows], marker="o", label="train seq")
    ax2.plot(epochs, [r.eval_seq_accuracy for r in report.rows], marker="s", label="eval seq")
    ax2.plot(epochs, [r.eval_full_parse for r in report.rows], marker="^", label="eval full")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
