"""Synthetic address generator.

A fixed template grammar over the eight default component tags, with
surface noise (capitalization, commas) that the default preprocessor
strips without changing token counts. Useful for demos, benchmarks and
self-contained training runs.
"""

from __future__ import annotations

import numpy as np

from .core import DatasetRecord

STREET_CORES = (
    "maple", "oak", "cedar", "pine", "main", "king", "queen", "victoria",
    "park", "hill", "lake", "river", "church", "mill", "station", "york",
    "elm", "birch", "walnut", "spruce", "laurier", "cartier", "peel", "lilas",
)
STREET_TYPES = ("st", "ave", "rd", "blvd", "dr", "lane")
FRENCH_TYPES = ("rue", "chemin", "avenue")
CITIES = (
    ("montreal",), ("quebec",), ("toronto",), ("ottawa",), ("hamilton",),
    ("windsor",), ("halifax",), ("moncton",), ("calgary",), ("regina",),
    ("winnipeg",), ("gatineau",), ("sherbrooke",), ("kingston",), ("guelph",),
    ("trois", "rivieres"), ("niagara", "falls"),
)
PROVINCES = ("qc", "on", "bc", "ab", "mb", "sk", "ns", "nb")
ORIENTATIONS = ("ouest", "est", "nord", "sud", "west", "east", "north", "south")
UNIT_WORDS = ("apt", "suite", "unit", "app")

# closed numeric/postal pools so a few hundred samples cover the vocabulary
_NUMBER_POOL = tuple(str(n) for n in range(1, 241))
_UNIT_POOL = tuple(str(n) for n in range(1, 41))
_BOX_POOL = tuple(str(n) for n in range(100, 200))


def _fixed_postal_pools():
    rng = np.random.default_rng(1234)
    letters = "hjkvgm"
    first = {f"{a}{d}{b}" for a in letters for b in letters for d in "0123"}
    second = {f"{d}{a}{e}" for a in letters for d in "0123" for e in "4567"}
    zips = {str(z) for z in rng.integers(10000, 99999, size=60)}
    return tuple(sorted(rng.permutation(sorted(first))[:40])), \
        tuple(sorted(rng.permutation(sorted(second))[:40])), tuple(sorted(zips))


_PC_FIRST, _PC_SECOND, _ZIPS = _fixed_postal_pools()


def _choice(rng, pool):
    return pool[rng.integers(0, len(pool))]


def _street(rng) -> list[str]:
    form = rng.integers(0, 3)
    core = _choice(rng, STREET_CORES)
    if form == 0:
        return [core, _choice(rng, STREET_TYPES)]
    if form == 1:
        return [_choice(rng, FRENCH_TYPES), core]
    return [_choice(rng, FRENCH_TYPES), "des", _choice(rng, STREET_CORES)]


def _postal(rng) -> list[str]:
    if rng.random() < 0.6:
        return [_choice(rng, _PC_FIRST), _choice(rng, _PC_SECOND)]
    return [_choice(rng, _ZIPS)]


def _segments(rng) -> list[tuple[str, list[str]]]:
    """One address as ordered (tag, tokens) segments."""
    street_number = ("StreetNumber", [_choice(rng, _NUMBER_POOL)])
    street = ("StreetName", _street(rng))
    city = ("Municipality", list(_choice(rng, CITIES)))
    province = ("Province", [_choice(rng, PROVINCES)])
    postal = ("PostalCode", _postal(rng))
    unit = ("Unit", [_choice(rng, UNIT_WORDS), _choice(rng, _UNIT_POOL)])
    orientation = ("Orientation", [_choice(rng, ORIENTATIONS)])
    delivery = ("GeneralDelivery", ["po", "box", _choice(rng, _BOX_POOL)])

    roll = rng.random()
    if roll < 0.35:
        return [street_number, street, city, province, postal]
    if roll < 0.55:
        return [street_number, street, orientation, city, province, postal]
    if roll < 0.72:
        return [street_number, street, unit, city, province, postal]
    if roll < 0.82:
        return [unit, street_number, street, city, province, postal]
    if roll < 0.92:
        return [delivery, city, province, postal]
    return [street_number, street, city, province]


def _render(segments, rng) -> tuple[str, list[str]]:
    """Flatten segments to raw text plus aligned gold tags, with noise."""
    words: list[str] = []
    tags: list[str] = []
    for seg_no, (tag, tokens) in enumerate(segments):
        for tok in tokens:
            if rng.random() < 0.25:
                tok = tok.capitalize()
            words.append(tok)
            tags.append(tag)
        if seg_no + 1 < len(segments) and rng.random() < 0.3:
            words[-1] = words[-1] + ","
    return " ".join(words), tags


def generate_dataset(count: int, seed: int = 0,
                     drop_postal_fraction: float = 0.0) -> list[DatasetRecord]:
    """Seeded synthetic records; optionally strip the postal-code segment
    from a fraction of addresses that have one (incomplete addresses)."""
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(count):
        segments = _segments(rng)
        if drop_postal_fraction > 0.0 and rng.random() < drop_postal_fraction:
            segments = [s for s in segments if s[0] != "PostalCode"]
        address, tags = _render(segments, rng)
        records.append(DatasetRecord(address=address, gold_tags=tuple(tags)))
    return records


def generate_corpus(count: int, seed: int = 0) -> list[str]:
    """Addresses only, e.g. for benchmark corpora."""
    return [r.address for r in generate_dataset(count, seed)]
