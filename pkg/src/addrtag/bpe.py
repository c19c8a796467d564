"""Byte-pair-encoding learner and segmenter for the subword embedding path.

Merges are learned greedily from a token corpus (most frequent adjacent
pair first, lexicographically smallest pair on ties) and applied in learned
order at segmentation time. Digits are zeroed before segmentation so number
patterns share subwords.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

from .core import AddrTagError

UNK = "<unk>"

_DIGIT_MAP = str.maketrans({d: "0" for d in "0123456789"})


class EmptyCorpus(AddrTagError):
    def __init__(self):
        super().__init__("BPE corpus contains no tokens")


def digits_to_zero(token: str) -> str:
    """Replace every decimal digit with '0'; all other characters unchanged."""
    return token.translate(_DIGIT_MAP)


@dataclass(frozen=True)
class MergeTable:
    """Ordered merge pairs plus the dense subword vocabulary (incl. UNK)."""

    merges: tuple[tuple[str, str], ...]
    subword_vocab: Mapping[str, int]

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("duplicate merge pairs")
        indices = sorted(self.subword_vocab.values())
        if indices != list(range(len(self.subword_vocab))):
            raise ValueError("subword indices must be dense and 0-based")
        if UNK not in self.subword_vocab:
            raise ValueError(f"vocabulary must contain {UNK!r}")
        for left, right in self.merges:
            if left + right not in self.subword_vocab:
                raise ValueError(f"merged symbol {left + right!r} missing from vocab")
        object.__setattr__(self, "subword_vocab", dict(self.subword_vocab))

    @property
    def size(self) -> int:
        return len(self.subword_vocab)

    @property
    def unk_index(self) -> int:
        return self.subword_vocab[UNK]


def learn_bpe(corpus: Iterable[str] | Mapping[str, int], num_merges: int = 1000) -> MergeTable:
    """Learn merges by repeated most-frequent adjacent-pair merging.

    ``corpus`` is a multiset of tokens (iterable with repeats, or a
    token -> count mapping). Stops after ``num_merges`` merges or when no
    pair occurs at least twice.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    counts = Counter(corpus) if not isinstance(corpus, Mapping) else Counter(dict(corpus))
    counts = Counter({tok: n for tok, n in counts.items() if tok and n > 0})
    if not counts:
        raise EmptyCorpus()

    words: dict[tuple[str, ...], int] = {}
    chars: set[str] = set()
    for tok, n in counts.items():
        word = tuple(tok)
        words[word] = words.get(word, 0) + n
        chars.update(word)

    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_counts: Counter[tuple[str, str]] = Counter()
        for word, n in words.items():
            for a, b in zip(word, word[1:]):
                pair_counts[(a, b)] += n
        if not pair_counts:
            break
        # most frequent pair; ties broken by lexicographically smallest pair
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if best[1] < 2:
            break
        pair = best[0]
        merges.append(pair)
        words = {_merge_word(w, pair): n for w, n in words.items()}

    vocab: dict[str, int] = {}
    for sym in sorted(chars):
        vocab[sym] = len(vocab)
    for left, right in merges:
        sym = left + right
        if sym not in vocab:
            vocab[sym] = len(vocab)
    vocab[UNK] = len(vocab)
    return MergeTable(merges=tuple(merges), subword_vocab=vocab)


def _merge_word(word: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    left, right = pair
    out = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == left and word[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def segment_symbols(token: str, table: MergeTable) -> list[str]:
    """Apply learned merges to a token; returns subword strings."""
    if not token:
        raise ValueError("cannot segment an empty token")
    symbols = tuple(token)
    for pair in table.merges:
        symbols = _merge_word(symbols, pair)
    return list(symbols)


def segment(token: str, table: MergeTable) -> list[int]:
    """Segment a token into subword indices; unknown symbols map to UNK."""
    unk = table.unk_index
    return [table.subword_vocab.get(sym, unk) for sym in segment_symbols(token, table)]


def save_merge_table(table: MergeTable, path) -> None:
    """Write the line-oriented merge-table format (header, merges, ---, vocab)."""
    lines = ["bpe-v1"]
    lines += [f"{left}\t{right}" for left, right in table.merges]
    lines.append("---")
    for sym, idx in sorted(table.subword_vocab.items(), key=lambda kv: kv[1]):
        lines.append(f"{sym}\t{idx}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_merge_table(path) -> MergeTable:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "bpe-v1":
        raise ValueError(f"{path}: not a bpe-v1 merge table")
    merges: list[tuple[str, str]] = []
    vocab: dict[str, int] = {}
    section = merges
    for line in lines[1:]:
        if line == "---":
            section = None
            continue
        left, _, right = line.partition("\t")
        if section is merges:
            merges.append((left, right))
        else:
            vocab[left] = int(right)
    return MergeTable(merges=tuple(merges), subword_vocab=vocab)
