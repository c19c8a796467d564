"""Persistence: line-delimited JSON datasets and single-file checkpoints.

Checkpoint layout: an ``addrtag-ckpt-v1`` magic line, one line of JSON
metadata (flavor, sizes, tag vocabulary, preprocessing steps, embedding
setup, array directory), then the raw little-endian float32 payloads in
directory order. Everything needed to reconstruct the tagger is inside the
file except an optional external word-vector file, which is referenced by
path (in-memory tables are inlined).
"""

from __future__ import annotations

import json
import os
import zlib
from pathlib import Path

import numpy as np

from .bpe import MergeTable
from .core import AddrTagError, DatasetRecord, TagVocabulary, validate_record
from .embed import (
    SubwordComposer,
    SubwordProvider,
    VectorTable,
    VectorTableProvider,
    load_vector_table,
)
from .nn import Tensor
from .preprocess import Preprocessor
from .tagger import AddressTagger, Seq2SeqConfig, TaggerModel

MAGIC = "addrtag-ckpt-v1"
FORMAT_VERSION = 1


class ParseError(AddrTagError):
    def __init__(self, line_no: int, reason: str = ""):
        suffix = f": {reason}" if reason else ""
        super().__init__(f"line {line_no}{suffix}")
        self.line_no = line_no


class VersionMismatch(AddrTagError):
    pass


class CorruptPayload(AddrTagError):
    def __init__(self, array_name: str, reason: str = ""):
        suffix = f": {reason}" if reason else ""
        super().__init__(f"array {array_name!r}{suffix}")
        self.array_name = array_name


class TruncatedFile(AddrTagError):
    pass


# -- datasets ---------------------------------------------------------------

def load_dataset(path, vocab: TagVocabulary | None = None,
                 preprocessor: Preprocessor | None = None) -> list[DatasetRecord]:
    """Read one JSON record per non-empty line: {"address":..., "tags":[...]}.

    When a vocabulary and preprocessor are given, each record is validated,
    with failures reported by line number.
    """
    records: list[DatasetRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, str(exc)) from None
            if not isinstance(obj, dict) or "address" not in obj or "tags" not in obj:
                raise ParseError(line_no, "expected object with 'address' and 'tags'")
            record = DatasetRecord(address=str(obj["address"]),
                                   gold_tags=tuple(str(t) for t in obj["tags"]))
            if vocab is not None and preprocessor is not None:
                try:
                    validate_record(record, vocab, preprocessor)
                except AddrTagError as exc:
                    raise ParseError(line_no, str(exc)) from exc
            records.append(record)
    return records


def save_dataset(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"address": r.address, "tags": list(r.gold_tags)}) + "\n")


# -- checkpoints -------------------------------------------------------------

def _composer_named(composer: SubwordComposer) -> dict[str, Tensor]:
    out = {"composer.subword_embeddings": composer.subword_embeddings}
    for prefix, lstm in (("composer.forward", composer.forward_lstm),
                         ("composer.backward", composer.backward_lstm)):
        for gate in "ifgo":
            out[f"{prefix}.w_{gate}"] = getattr(lstm, f"w_{gate}")
            out[f"{prefix}.u_{gate}"] = getattr(lstm, f"u_{gate}")
            out[f"{prefix}.b_{gate}"] = getattr(lstm, f"b_{gate}")
    out["composer.proj.w"] = composer.proj_w
    out["composer.proj.b"] = composer.proj_b
    return out


def _all_named_arrays(tagger: AddressTagger) -> dict[str, Tensor]:
    arrays = dict(tagger.model.named_params())
    if isinstance(tagger.provider, SubwordProvider):
        arrays.update(_composer_named(tagger.provider.composer))
    return arrays


def _embedding_metadata(provider) -> dict:
    if isinstance(provider, VectorTableProvider):
        table = provider.table
        meta = {"dim": table.dim, "oov_seed": table.oov_seed,
                "vectors_path": getattr(provider, "source_path", None)}
        if meta["vectors_path"] is None and len(table):
            meta["inline_vectors"] = {w: [float(x) for x in v] for w, v in table.vectors.items()}
        return meta
    if isinstance(provider, SubwordProvider):
        c = provider.composer
        return {"d_sub": c.d_sub, "hidden": c.hidden,
                "merge_table": {"merges": [list(m) for m in provider.merge_table.merges],
                                "vocab": dict(provider.merge_table.subword_vocab)}}
    raise TypeError(f"cannot persist provider {type(provider).__name__}")


def save_checkpoint(tagger: AddressTagger, path) -> None:
    """Write the model, vocabulary and embedding setup as one file (atomic)."""
    arrays = _all_named_arrays(tagger)
    directory = []
    chunks = []
    offset = 0
    for name, tensor in arrays.items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(tensor.data.shape),
                          "offset": offset, "crc32": zlib.crc32(raw)})
        chunks.append(raw)
        offset += len(raw)
    cfg = tagger.model.config
    meta = {
        "format_version": FORMAT_VERSION,
        "flavor": {"embedding": tagger.provider.kind, "attention": cfg.attention},
        "config": {
            "encoder_hidden_size": cfg.encoder_hidden_size,
            "decoder_hidden_size": cfg.decoder_hidden_size,
            "input_size": cfg.input_size,
            "attention": cfg.attention,
            "tag_embedding_size": cfg.tag_embedding_size,
        },
        "tag_vocab": dict(cfg.tag_vocab.entries),
        "preprocessor": list(tagger.preprocessor.step_names),
        "embedding": _embedding_metadata(tagger.provider),
        "arrays": directory,
    }
    payload = (MAGIC + "\n" + json.dumps(meta) + "\n").encode("utf-8") + b"".join(chunks)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _read_arrays(meta: dict, payload: bytes) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for entry in meta["arrays"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        start = entry["offset"]
        if start + nbytes > len(payload):
            raise TruncatedFile(f"payload ends before array {name!r}")
        raw = payload[start:start + nbytes]
        if zlib.crc32(raw) != entry["crc32"]:
            raise CorruptPayload(name, "checksum mismatch")
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    return arrays


def _rebuild_provider(meta: dict, arrays: dict[str, np.ndarray], ckpt_dir: Path):
    emb = meta["embedding"]
    if meta["flavor"]["embedding"] == "vector-table":
        path = emb.get("vectors_path")
        if path is not None:
            candidate = Path(path)
            if not candidate.exists():
                candidate = ckpt_dir / path
            table = load_vector_table(candidate, oov_seed=emb["oov_seed"])
        else:
            vectors = {w: np.array(v, dtype=np.float32)
                       for w, v in emb.get("inline_vectors", {}).items()}
            table = VectorTable(dim=emb["dim"], vectors=vectors, oov_seed=emb["oov_seed"])
        return VectorTableProvider(table, source_path=path)
    merge_meta = emb["merge_table"]
    table = MergeTable(merges=tuple(tuple(m) for m in merge_meta["merges"]),
                       subword_vocab={k: int(v) for k, v in merge_meta["vocab"].items()})
    composer = SubwordComposer(vocab_size=table.size, d_sub=emb["d_sub"], hidden=emb["hidden"],
                               rng=np.random.default_rng(0))
    for name, tensor in _composer_named(composer).items():
        if name not in arrays:
            raise CorruptPayload(name, "missing from checkpoint")
        if arrays[name].shape != tensor.data.shape:
            raise CorruptPayload(name, f"shape {arrays[name].shape} != {tensor.data.shape}")
        tensor.data = arrays[name]
    return SubwordProvider(table, composer)


def load_checkpoint(path) -> AddressTagger:
    """Reconstruct a tagger that parses bit-identically to the saved one."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head, sep, rest = blob.partition(b"\n")
    if not sep:
        raise TruncatedFile("missing magic line")
    if head.decode("utf-8", errors="replace") != MAGIC:
        raise VersionMismatch(f"expected {MAGIC!r}, got {head[:32]!r}")
    meta_line, sep, payload = rest.partition(b"\n")
    if not sep:
        raise TruncatedFile("missing metadata line")
    meta = json.loads(meta_line.decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"format_version {meta.get('format_version')} != {FORMAT_VERSION}")
    arrays = _read_arrays(meta, payload)

    vocab = TagVocabulary({str(k): int(v) for k, v in meta["tag_vocab"].items()})
    cfg = Seq2SeqConfig(tag_vocab=vocab, **meta["config"])
    model = TaggerModel.new(cfg, seed=0)
    for name, tensor in model.named_params().items():
        if name not in arrays:
            raise CorruptPayload(name, "missing from checkpoint")
        if arrays[name].shape != tensor.data.shape:
            raise CorruptPayload(name, f"shape {arrays[name].shape} != {tensor.data.shape}")
        tensor.data = arrays[name]
    preprocessor = Preprocessor(meta["preprocessor"])
    provider = _rebuild_provider(meta, arrays, Path(path).resolve().parent)
    return AddressTagger(model=model, preprocessor=preprocessor, provider=provider)
