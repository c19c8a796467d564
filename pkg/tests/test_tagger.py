import numpy as np
import pytest

from addrtag import nn
from addrtag.bpe import learn_bpe
from addrtag.core import EmptyAddress, TagVocabulary
from addrtag.embed import SubwordComposer, SubwordProvider, VectorTable, VectorTableProvider
from addrtag.nn import ShapeMismatch, Tensor
from addrtag.preprocess import Preprocessor, tokenize
from addrtag.tagger import (
    AddressTagger,
    AttentionParams,
    BatchedInput,
    Seq2SeqConfig,
    TaggerModel,
    attention_weights,
    build_batched_input,
    decode,
    encode,
    parse,
    training_forward,
)

VOCAB = TagVocabulary.default()
PRE = Preprocessor()


def small_model(attention=False, enc=16, dec=16, dim=24, seed=9, dtype=np.float32):
    cfg = Seq2SeqConfig(tag_vocab=VOCAB, encoder_hidden_size=enc, decoder_hidden_size=dec,
                        input_size=dim, attention=attention, tag_embedding_size=12)
    return TaggerModel.new(cfg, seed=seed, dtype=dtype)


def small_provider(dim=24, seed=1):
    return VectorTableProvider(VectorTable(dim=dim, vectors={}, oov_seed=seed))


def test_config_requires_matching_sizes_without_attention():
    with pytest.raises(ValueError):
        Seq2SeqConfig(tag_vocab=VOCAB, encoder_hidden_size=8, decoder_hidden_size=16)
    cfg = Seq2SeqConfig(tag_vocab=VOCAB, encoder_hidden_size=8, decoder_hidden_size=16,
                        attention=True)
    assert cfg.attention


def test_config_rejects_nonpositive_sizes():
    with pytest.raises(ValueError):
        Seq2SeqConfig(tag_vocab=VOCAB, encoder_hidden_size=0, decoder_hidden_size=0)


def test_mismatched_sizes_get_a_bridge():
    model = TaggerModel.new(Seq2SeqConfig(tag_vocab=VOCAB, encoder_hidden_size=8,
                                          decoder_hidden_size=16, input_size=10,
                                          attention=True), seed=0)
    assert model.bridge is not None
    provider = small_provider(dim=10)
    out = parse(model, ["12 main st"], PRE, provider, batch_size=4)
    assert len(out[0].tags) == 3


def test_batched_input_validates_mask():
    with pytest.raises(ValueError):
        BatchedInput(embeddings=np.zeros((1, 3, 4), np.float32), lengths=(2,),
                     mask=np.array([[True, False, True]]))


def test_encode_shape_contract():
    model = small_model()
    provider = small_provider()
    batch = build_batched_input(provider, [tokenize("12 main st")])
    enc = encode(model, batch)
    assert enc.outputs.shape == (1, 3, 16)
    assert enc.h.shape == (1, 16)


def test_encode_rejects_wrong_width():
    model = small_model(dim=24)
    batch = build_batched_input(small_provider(dim=8), [tokenize("12 main st")])
    with pytest.raises(ShapeMismatch):
        encode(model, batch)


def test_encode_zero_weights_zero_state():
    model = small_model()
    for t in model.encoder.params():
        t.data[...] = 0.0
    batch = build_batched_input(small_provider(), [tokenize("12 main st")])
    enc = encode(model, batch)
    assert np.all(enc.h == 0.0)
    assert np.all(enc.c == 0.0)
    assert np.all(enc.outputs == 0.0)


def test_encode_batched_equals_unbatched_bitwise():
    model = small_model()
    provider = small_provider()
    target = tokenize("350 rue des lilas ouest")
    alone = encode(model, build_batched_input(provider, [target]))
    others = [tokenize(t) for t in
              ["1 a", "12 main st h3t 1j4 montreal qc canada extra tokens here",
               "po box 123", "5 elm st"]]
    batch = build_batched_input(provider, [others[0], target] + others[1:])
    together = encode(model, batch)
    assert np.array_equal(together.h[1], alone.h[0])
    assert np.array_equal(together.c[1], alone.c[0])
    assert np.array_equal(together.outputs[1, :5], alone.outputs[0])
    assert np.all(together.outputs[1, 5:] == 0.0)  # padded positions are zero rows


def test_decode_emits_exactly_length_tags():
    model = small_model()
    provider = small_provider()
    batch = build_batched_input(provider, [tokenize("1 2 3 4 5"), tokenize("one")])
    out = decode(model, encode(model, batch))
    assert [len(ids) for ids in out.tag_ids] == [5, 1]
    assert [len(p) for p in out.probabilities] == [5, 1]


def test_decode_tie_breaks_to_lowest_index():
    model = small_model()
    for t in model.trainable_params():
        t.data[...] = 0.0  # all logits equal -> argmax must pick index 0
    provider = small_provider()
    batch = build_batched_input(provider, [tokenize("a b c")])
    out = decode(model, encode(model, batch))
    assert list(out.tag_ids[0]) == [0, 0, 0]
    # probability is the softmax mass of the chosen tag over all K tags
    assert np.allclose(out.probabilities[0], 1.0 / VOCAB.size, atol=1e-6)


def test_decode_never_emits_eos_even_when_biased():
    model = small_model()
    model.output_b.data[VOCAB.eos_index] = 50.0  # EOS dominates every softmax
    provider = small_provider()
    parsed = parse(model, ["12 main st ouest", "po box 1"], PRE, provider, batch_size=2)
    for p in parsed:
        assert "EOS" not in p.tags


def test_attention_weights_single_position():
    model = small_model(attention=True)
    w = attention_weights(model.attention, np.zeros(16, np.float32),
                          np.zeros((1, 16), np.float32), np.array([True]))
    assert np.allclose(w, [1.0])


def test_attention_weights_equal_scores_uniform():
    model = small_model(attention=True)
    enc = np.tile(np.linspace(-1, 1, 16, dtype=np.float32), (4, 1))
    w = attention_weights(model.attention, np.ones(16, np.float32), enc,
                          np.array([True] * 4))
    assert np.allclose(w, [0.25] * 4, atol=1e-6)
    assert w.sum() == pytest.approx(1.0, abs=1e-6)


def test_attention_weights_masked_position_exactly_zero():
    model = small_model(attention=True)
    enc = np.tile(np.linspace(-1, 1, 16, dtype=np.float32), (2, 1))
    w = attention_weights(model.attention, np.ones(16, np.float32), enc,
                          np.array([True, False]))
    assert w[0] == pytest.approx(1.0)
    assert w[1] == 0.0


def test_parse_length_law_and_order():
    model = small_model()
    provider = small_provider()
    addresses = ["12 main st", "po box 123 montreal", "h3t1j4"]
    parsed = parse(model, addresses, PRE, provider, batch_size=2)
    assert [p.tokens for p in parsed] == [("12", "main", "st"),
                                          ("po", "box", "123", "montreal"),
                                          ("h3t1j4",)]
    for p in parsed:
        assert len(p.tags) == len(p.tokens)


def test_parse_empty_address_reports_index():
    model = small_model()
    with pytest.raises(EmptyAddress) as exc:
        parse(model, ["12 main st", " , "], PRE, small_provider(), batch_size=2)
    assert exc.value.index == 1


def test_parse_batch_size_transparency_bitwise():
    model = small_model(attention=True, enc=16, dec=16)
    provider = small_provider()
    rng = np.random.default_rng(0)
    words = ["12", "main", "st", "montreal", "qc", "h3t", "1j4", "po", "box", "9"]
    addresses = [" ".join(rng.choice(words, size=rng.integers(1, 12)))
                 for _ in range(100)]
    a = parse(model, addresses, PRE, provider, batch_size=1)
    b = parse(model, addresses, PRE, provider, batch_size=64)
    for x, y in zip(a, b):
        assert x.tags == y.tags
        assert x.probabilities == y.probabilities  # bit-identical


def test_parse_subword_flavor_end_to_end():
    table = learn_bpe(["000", "main", "st", "h0t", "0j0", "montreal"], num_merges=12)
    composer = SubwordComposer(vocab_size=table.size, d_sub=8, hidden=10,
                               rng=np.random.default_rng(2))
    provider = SubwordProvider(table, composer)
    model = small_model(dim=10)
    parsed = parse(model, ["350 Main st, h3t 1j4"], PRE, provider, batch_size=4)
    assert len(parsed[0].tags) == 5


def test_tagger_bundle_flavor_names():
    model = small_model()
    assert AddressTagger(model, PRE, small_provider()).flavor == "vector-table"
    amodel = small_model(attention=True)
    table = learn_bpe(["ab"], num_merges=0)
    comp = SubwordComposer(vocab_size=table.size, d_sub=4, hidden=24,
                           rng=np.random.default_rng(0))
    assert AddressTagger(amodel, PRE, SubwordProvider(table, comp)).flavor == "subword+attention"


@pytest.mark.parametrize("attention", [False, True])
def test_full_training_step_grad_check(attention):
    model = small_model(attention=attention, enc=6, dec=6, dim=5, dtype=np.float64)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 3, 5))
    token_mask = np.ones((1, 3), np.float64)
    gold = np.array([[0, 1, 2]])
    forced = [True, True, True]

    def fn():
        x_steps = [Tensor(x[:, t]) for t in range(3)]
        return training_forward(model, x_steps, token_mask, gold, token_mask, forced)

    assert nn.grad_check(fn, model.trainable_params(), eps=1e-5) < 1e-4


def test_training_forward_loss_masks_padding():
    model = small_model(enc=8, dec=8, dim=4)
    rng = np.random.default_rng(4)
    # two addresses, lengths 3 and 1; padded steps must not contribute
    x = rng.standard_normal((2, 3, 4)).astype(np.float32)
    x[1, 1:] = 123.0  # garbage at padded positions
    mask = np.array([[1, 1, 1], [1, 0, 0]], np.float32)
    gold = np.array([[0, 1, 2], [3, 0, 0]])
    loss_a = training_forward(model, [Tensor(x[:, t]) for t in range(3)],
                              mask, gold, mask, [True] * 3)
    x2 = x.copy()
    x2[1, 1:] = -55.0  # different garbage, same real content
    loss_b = training_forward(model, [Tensor(x2[:, t]) for t in range(3)],
                              mask, gold, mask, [True] * 3)
    assert float(loss_a.data) == pytest.approx(float(loss_b.data), rel=1e-6)
