import pytest

from addrtag.core import (
    DatasetRecord,
    LengthMismatch,
    ParsedAddress,
    TagVocabulary,
    TokenizedAddress,
    UnknownTag,
    validate_record,
)
from addrtag.preprocess import Preprocessor


@pytest.fixture
def vocab():
    return TagVocabulary.default()


@pytest.fixture
def pre():
    return Preprocessor()


def test_default_vocab_layout(vocab):
    assert vocab.size == 9
    assert vocab.index_of("StreetNumber") == 0
    assert vocab.index_of("EOS") == 8


def test_vocab_round_trip(vocab):
    for i in range(vocab.size):
        assert vocab.index_of(vocab.name_of(i)) == i


def test_vocab_requires_eos():
    with pytest.raises(ValueError):
        TagVocabulary({"A": 0, "B": 1})


def test_vocab_requires_dense_indices():
    with pytest.raises(ValueError):
        TagVocabulary({"A": 0, "EOS": 2})


def test_vocab_minimum_size():
    with pytest.raises(ValueError):
        TagVocabulary({"EOS": 0})


def test_validate_record_ok(vocab, pre):
    rec = DatasetRecord("12 main st", ("StreetNumber", "StreetName", "StreetName"))
    assert validate_record(rec, vocab, pre) is rec


def test_validate_record_length_mismatch(vocab, pre):
    rec = DatasetRecord("12 main st", ("StreetNumber", "StreetName"))
    with pytest.raises(LengthMismatch) as exc:
        validate_record(rec, vocab, pre)
    assert (exc.value.token_count, exc.value.tag_count) == (3, 2)


def test_validate_record_unknown_tag(vocab, pre):
    rec = DatasetRecord("12 main", ("StreetNumber", "Bogus"))
    with pytest.raises(UnknownTag) as exc:
        validate_record(rec, vocab, pre)
    assert exc.value.name == "Bogus"


def test_tokenized_address_invariants():
    ta = TokenizedAddress(raw="12 Main st", cleaned="12 main st", tokens=("12", "main", "st"))
    assert " ".join(ta.tokens) == ta.cleaned
    with pytest.raises(ValueError):
        TokenizedAddress(raw="x", cleaned="a  b", tokens=("a", "b"))
    with pytest.raises(ValueError):
        TokenizedAddress(raw="x", cleaned="a b", tokens=("a", "b c"))


def test_parsed_address_invariants():
    pa = ParsedAddress(("12", "main"), ("StreetNumber", "StreetName"), (0.9, 0.8))
    assert list(pa) == [("12", "StreetNumber", 0.9), ("main", "StreetName", 0.8)]
    with pytest.raises(LengthMismatch):
        ParsedAddress(("12",), ("StreetNumber", "StreetName"), (0.9, 0.8))
    with pytest.raises(ValueError):
        ParsedAddress(("12",), ("StreetNumber",), (0.0,))
    with pytest.raises(ValueError):
        ParsedAddress(("12",), ("EOS",), (0.5,))
