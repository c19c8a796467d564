"""Shared domain types: tokenized addresses, tag vocabularies, parse results
and dataset records. All types are immutable after construction and validate
their invariants eagerly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

EOS_TAG = "EOS"

# Default tag set, replaceable at retrain time via prediction_tags.
DEFAULT_TAG_NAMES = (
    "StreetNumber",
    "StreetName",
    "Unit",
    "Municipality",
    "Province",
    "PostalCode",
    "Orientation",
    "GeneralDelivery",
    EOS_TAG,
)


class AddrTagError(Exception):
    """Base class for all errors raised by this package."""


class LengthMismatch(AddrTagError):
    def __init__(self, token_count: int, tag_count: int):
        super().__init__(f"{token_count} tokens but {tag_count} tags")
        self.token_count = token_count
        self.tag_count = tag_count


class UnknownTag(AddrTagError):
    def __init__(self, name: str):
        super().__init__(f"tag {name!r} is not in the vocabulary")
        self.name = name


class EmptyAddress(AddrTagError):
    def __init__(self, index: int | None = None):
        where = "" if index is None else f" at input index {index}"
        super().__init__(f"address has no tokens{where}")
        self.index = index


@dataclass(frozen=True)
class TokenizedAddress:
    """A cleaned address and its ordered word tokens.

    ``cleaned`` is always the single-space join of ``tokens``.
    """

    raw: str
    cleaned: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise EmptyAddress()
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid token {tok!r}")
        if " ".join(self.tokens) != self.cleaned:
            raise ValueError("cleaned text does not match joined tokens")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TagVocabulary:
    """Bijective tag-name <-> index mapping with a reserved EOS entry."""

    entries: Mapping[str, int]

    def __post_init__(self):
        indices = sorted(self.entries.values())
        if len(self.entries) < 2:
            raise ValueError("tag vocabulary needs at least two entries")
        if indices != list(range(len(self.entries))):
            raise ValueError("tag indices must be dense and 0-based")
        if EOS_TAG not in self.entries:
            raise ValueError(f"tag vocabulary must contain {EOS_TAG!r}")
        object.__setattr__(self, "entries", dict(self.entries))
        names = [None] * len(self.entries)
        for name, idx in self.entries.items():
            names[idx] = name
        object.__setattr__(self, "_names", tuple(names))

    @classmethod
    def default(cls) -> "TagVocabulary":
        return cls.from_names(DEFAULT_TAG_NAMES)

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "TagVocabulary":
        return cls({name: i for i, name in enumerate(names)})

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def eos_index(self) -> int:
        return self.entries[EOS_TAG]

    def index_of(self, name: str) -> int:
        try:
            return self.entries[name]
        except KeyError:
            raise UnknownTag(name) from None

    def name_of(self, index: int) -> str:
        return self._names[index]

    def __contains__(self, name: str) -> bool:
        return name in self.entries


@dataclass(frozen=True)
class ParsedAddress:
    """Per-token (token, tag, probability) result for one address."""

    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.tokens) == len(self.tags) == len(self.probabilities)):
            raise LengthMismatch(len(self.tokens), len(self.tags))
        for p in self.probabilities:
            if not (0.0 < p <= 1.0):
                raise ValueError(f"probability {p} outside (0, 1]")
        if EOS_TAG in self.tags:
            raise ValueError(f"{EOS_TAG!r} must never be emitted for a token")

    def __iter__(self):
        return iter(zip(self.tokens, self.tags, self.probabilities))


@dataclass(frozen=True)
class DatasetRecord:
    """One training pair: a raw address and its gold tag sequence."""

    address: str
    gold_tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "gold_tags", tuple(self.gold_tags))


def validate_record(record: DatasetRecord, vocab: TagVocabulary, preprocessor) -> DatasetRecord:
    """Check that a record's tags line up with its preprocessed tokens.

    ``preprocessor`` must expose ``tokenize(raw) -> TokenizedAddress``.
    Returns the record unchanged when valid.
    """
    tokenized = preprocessor.tokenize(record.address)
    if len(tokenized.tokens) != len(record.gold_tags):
        raise LengthMismatch(len(tokenized.tokens), len(record.gold_tags))
    for tag in record.gold_tags:
        if tag not in vocab:
            raise UnknownTag(tag)
    return record
