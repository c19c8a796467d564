"""Data-cleaning pipeline applied before embedding.

The default pipeline lowercases, strips commas and collapses whitespace.
Every shipped step is idempotent, so the whole pipeline is too. Users can
register extra named steps; names are what checkpoints persist.
"""

from __future__ import annotations

from typing import Callable, Iterable

from .core import EmptyAddress, TokenizedAddress


def lowercase(text: str) -> str:
    return text.lower()


def remove_commas(text: str) -> str:
    return text.replace(",", "")


def collapse_whitespace(text: str) -> str:
    return " ".join(text.split())


_STEP_REGISTRY: dict[str, Callable[[str], str]] = {
    "lowercase": lowercase,
    "remove_commas": remove_commas,
    "collapse_whitespace": collapse_whitespace,
}

DEFAULT_STEPS = ("lowercase", "remove_commas", "collapse_whitespace")


def register_step(name: str, fn: Callable[[str], str]) -> None:
    """Register a custom cleaning step so checkpoints can refer to it by name."""
    _STEP_REGISTRY[name] = fn


class Preprocessor:
    """Ordered, named text->text cleaning steps. Immutable once built."""

    def __init__(self, steps: Iterable[str] = DEFAULT_STEPS):
        self.step_names = tuple(steps)
        try:
            self._fns = tuple(_STEP_REGISTRY[name] for name in self.step_names)
        except KeyError as exc:
            raise KeyError(f"unregistered preprocessing step {exc.args[0]!r}") from None

    def run(self, raw: str) -> str:
        text = raw
        for fn in self._fns:
            text = fn(text)
        return text

    def tokenize(self, raw: str) -> TokenizedAddress:
        return tokenize(self.run(raw), raw=raw)

    def __repr__(self):
        return f"Preprocessor(steps={list(self.step_names)})"


def default_preprocess(raw: str) -> str:
    """Lowercase, remove commas, collapse whitespace runs, trim."""
    return collapse_whitespace(remove_commas(lowercase(raw)))


def tokenize(cleaned: str, raw: str | None = None) -> TokenizedAddress:
    """Split cleaned text into maximal non-whitespace runs.

    Raises EmptyAddress when nothing remains.
    """
    tokens = tuple(cleaned.split())
    if not tokens:
        raise EmptyAddress()
    return TokenizedAddress(raw=cleaned if raw is None else raw,
                            cleaned=" ".join(tokens),
                            tokens=tokens)
