import pytest
from hypothesis import given, strategies as st

from addrtag.core import EmptyAddress
from addrtag.preprocess import Preprocessor, default_preprocess, register_step, tokenize


@pytest.mark.parametrize("raw,expected", [
    ("350 Rue des Lilas, Ouest", "350 rue des lilas ouest"),
    (",", ""),
    ("A  B", "a b"),
    ("  Main\tSt  ", "main st"),
])
def test_default_preprocess(raw, expected):
    assert default_preprocess(raw) == expected


@given(st.text(max_size=80))
def test_default_preprocess_idempotent(text):
    once = default_preprocess(text)
    assert default_preprocess(once) == once


@given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=255), min_size=1, max_size=60))
def test_tokens_never_contain_uppercase_or_commas(text):
    cleaned = default_preprocess(text)
    if not cleaned:
        return
    for token in tokenize(cleaned).tokens:
        assert "," not in token
        assert token == token.lower()


def test_tokenize_examples():
    assert tokenize("12 main st").tokens == ("12", "main", "st")
    assert tokenize("h3t1j4").tokens == ("h3t1j4",)
    with pytest.raises(EmptyAddress):
        tokenize("")
    with pytest.raises(EmptyAddress):
        tokenize("   ")


def test_preprocessor_pipeline_and_custom_step():
    register_step("strip_periods", lambda t: t.replace(".", ""))
    pre = Preprocessor(("lowercase", "remove_commas", "strip_periods", "collapse_whitespace"))
    got = pre.tokenize("St. John's,  Rd.")
    assert got.tokens == ("st", "john's", "rd")
    assert pre.step_names[2] == "strip_periods"


def test_preprocessor_rejects_unknown_step():
    with pytest.raises(KeyError):
        Preprocessor(("lowercase", "not_a_step"))
