import math

import numpy as np
import pytest

from addrtag import nn
from addrtag.bpe import learn_bpe
from addrtag.embed import (
    SubwordComposer,
    SubwordProvider,
    VectorTable,
    VectorTableProvider,
    compose,
    compose_batch,
    embed_address,
    load_vector_table,
    lookup,
    save_vector_table,
)
from addrtag.preprocess import tokenize


def test_lookup_stored_vector():
    v = np.arange(4, dtype=np.float32)
    table = VectorTable(dim=4, vectors={"main": v})
    assert np.array_equal(lookup(table, "main"), v)


def test_lookup_oov_is_deterministic_and_unit_norm():
    table = VectorTable(dim=16, vectors={}, oov_seed=7)
    a = lookup(table, "nowhere")
    b = lookup(table, "nowhere")
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-5)


def test_lookup_oov_pairs_distinct():
    table = VectorTable(dim=32, vectors={}, oov_seed=0)
    seen = {lookup(table, f"token{i}").tobytes() for i in range(2000)}
    assert len(seen) == 2000


def test_oov_depends_on_seed():
    a = lookup(VectorTable(dim=8, vectors={}, oov_seed=1), "x")
    b = lookup(VectorTable(dim=8, vectors={}, oov_seed=2), "x")
    assert not np.array_equal(a, b)


def test_vector_table_file_round_trip(tmp_path):
    table = VectorTable(dim=3, vectors={"a": np.array([1.5, -2.0, 0.25], np.float32),
                                        "b": np.array([0.0, 1.0, 2.0], np.float32)})
    path = tmp_path / "vecs.txt"
    save_vector_table(table, path)
    loaded = load_vector_table(path)
    assert loaded.dim == 3
    assert set(loaded.vectors) == {"a", "b"}
    assert np.array_equal(loaded.vectors["a"], table.vectors["a"])


def test_vector_table_header_skipped(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("2 3\nfoo 1 2 3\nbar 4 5 6\n")
    loaded = load_vector_table(path)
    assert len(loaded) == 2
    assert loaded.dim == 3


def test_vector_table_rejects_ragged_rows(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("foo 1 2 3\nbar 4 5\n")
    with pytest.raises(ValueError):
        load_vector_table(path)


def _scalar_lstm_oracle(xs, w, u, b, hidden):
    """Plain-python LSTM scan: xs [n][d_in], returns final h [hidden]."""
    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h = [0.0] * hidden
    c = [0.0] * hidden
    for x in xs:
        i = [sig(sum(w["i"][r][k] * x[k] for k in range(len(x)))
                 + sum(u["i"][r][k] * h[k] for k in range(hidden)) + b["i"][r]) for r in range(hidden)]
        f = [sig(sum(w["f"][r][k] * x[k] for k in range(len(x)))
                 + sum(u["f"][r][k] * h[k] for k in range(hidden)) + b["f"][r]) for r in range(hidden)]
        g = [math.tanh(sum(w["g"][r][k] * x[k] for k in range(len(x)))
                       + sum(u["g"][r][k] * h[k] for k in range(hidden)) + b["g"][r]) for r in range(hidden)]
        o = [sig(sum(w["o"][r][k] * x[k] for k in range(len(x)))
                 + sum(u["o"][r][k] * h[k] for k in range(hidden)) + b["o"][r]) for r in range(hidden)]
        c = [f[r] * c[r] + i[r] * g[r] for r in range(hidden)]
        h = [o[r] * math.tanh(c[r]) for r in range(hidden)]
    return h


def _gate_dicts(p):
    return ({k: getattr(p, f"w_{k}").data.tolist() for k in "ifgo"},
            {k: getattr(p, f"u_{k}").data.tolist() for k in "ifgo"},
            {k: getattr(p, f"b_{k}").data.tolist() for k in "ifgo"})


def test_compose_matches_hand_evaluated_forward():
    rng = np.random.default_rng(42)
    composer = SubwordComposer(vocab_size=3, d_sub=2, hidden=2, rng=rng, dtype=np.float64)
    ids = [0, 1, 0]
    xs = [composer.subword_embeddings.data[i].tolist() for i in ids]

    w, u, b = _gate_dicts(composer.forward_lstm)
    fwd = _scalar_lstm_oracle(xs, w, u, b, hidden=2)
    w, u, b = _gate_dicts(composer.backward_lstm)
    bwd = _scalar_lstm_oracle(list(reversed(xs)), w, u, b, hidden=2)

    both = fwd + bwd
    pw, pb = composer.proj_w.data, composer.proj_b.data
    expected = [sum(pw[r][k] * both[k] for k in range(4)) + pb[r] for r in range(2)]

    got = compose_batch(composer, [ids]).data[0]
    assert np.allclose(got, expected, rtol=1e-12, atol=1e-12)


def test_compose_zero_params_gives_zero_vector():
    composer = SubwordComposer(vocab_size=4, d_sub=3, hidden=5, rng=np.random.default_rng(0))
    for t in composer.params():
        t.data[...] = 0.0
    out = compose(composer, [1, 2, 3])
    assert np.all(out == 0.0)


def test_compose_default_width_is_300():
    composer = SubwordComposer(vocab_size=5, rng=np.random.default_rng(1))
    assert compose(composer, [0, 2]).shape == (300,)


def test_compose_rejects_out_of_range_ids():
    composer = SubwordComposer(vocab_size=3, d_sub=2, hidden=2, rng=np.random.default_rng(2))
    with pytest.raises(ValueError):
        compose(composer, [0, 5])
    with pytest.raises(ValueError):
        compose_batch(composer, [[0], []])


def test_compose_invariant_to_batch_context():
    rng = np.random.default_rng(3)
    composer = SubwordComposer(vocab_size=6, d_sub=4, hidden=8, rng=rng)
    alone = compose(composer, [2, 4, 1])
    batch = [[0], [2, 4, 1], [1, 1, 1, 1, 1], [5, 3]] * 20
    from addrtag.embed import _compose_rows_blocked
    rows = _compose_rows_blocked(composer, batch)
    assert np.array_equal(rows[1], alone)
    assert np.array_equal(rows[5], alone)


def test_composer_grad_check():
    rng = np.random.default_rng(4)
    composer = SubwordComposer(vocab_size=5, d_sub=3, hidden=4, rng=rng, dtype=np.float64)

    def fn():
        out = compose_batch(composer, [[0, 2, 4], [1], [3, 3]])
        return nn.sum_all(nn.tanh(out))

    assert nn.grad_check(fn, composer.params(), eps=1e-5) < 1e-4


def test_embed_address_row_per_token():
    provider = VectorTableProvider(VectorTable(dim=12, vectors={}, oov_seed=0))
    addr = tokenize("12 main st")
    mat = embed_address(provider, addr)
    assert mat.shape == (3, 12)


def test_embed_address_identical_tokens_identical_rows():
    provider = VectorTableProvider(VectorTable(dim=8, vectors={}, oov_seed=0))
    mat = embed_address(provider, tokenize("st louis st"))
    assert np.array_equal(mat[0], mat[2])
    assert not np.array_equal(mat[0], mat[1])


def test_vector_provider_does_not_zero_digits():
    v = np.ones(4, dtype=np.float32)
    table = VectorTable(dim=4, vectors={"h3t": v}, oov_seed=0)
    provider = VectorTableProvider(table)
    mat = embed_address(provider, tokenize("h3t"))
    assert np.array_equal(mat[0], v)  # looked up as-is, not as "h0t"


def test_subword_provider_zeroes_digits():
    table = learn_bpe(["h0t", "main", "st"], num_merges=4)
    composer = SubwordComposer(vocab_size=table.size, d_sub=4, hidden=6,
                               rng=np.random.default_rng(5))
    provider = SubwordProvider(table, composer)
    a = embed_address(provider, tokenize("h3t"))
    b = embed_address(provider, tokenize("h9t"))
    assert np.array_equal(a, b)  # both segment as h0t


def test_subword_provider_batching_is_flat_and_ordered():
    table = learn_bpe(["abc", "de", "f"], num_merges=2)
    composer = SubwordComposer(vocab_size=table.size, d_sub=3, hidden=4,
                               rng=np.random.default_rng(6))
    provider = SubwordProvider(table, composer)
    outs = provider.embed_addresses([("abc", "de"), ("f",)])
    assert [o.shape for o in outs] == [(2, 4), (1, 4)]
    single = provider.embed_addresses([("f",)])[0]
    assert np.array_equal(outs[1], single)
