import numpy as np
import pytest

from multiling import autograd as ag
from multiling.autograd import Tensor
from multiling.model import (
    ConfigError,
    EncoderModel,
    LanguageDiscriminator,
    ModelConfig,
    TeacherModel,
    discriminate_language,
    encode_sequence,
    init_parameters,
    mean_pool,
    mlm_logits,
)

TINY = ModelConfig(n_layers=1, hidden=8, n_heads=2, ff_multiplier=4, vocab_size=32, max_positions=16, n_languages=2)


def test_parameter_count_closed_form():
    # emb 32*8 + pos 16*8 + layer [ln 2*16, qkvo 4*(64+8), ff 8*32+32 + 32*8+8] + final ln 16 + head 8*32+32
    layer = 2 * 16 + 4 * (64 + 8) + (8 * 32 + 32) + (32 * 8 + 8)
    expected = 32 * 8 + 16 * 8 + layer + 16 + 8 * 32 + 32
    assert expected == 1560
    assert TINY.parameter_count() == expected
    assert init_parameters(TINY, seed=0).params.num_values() == expected


def test_same_seed_same_parameters():
    a, b = init_parameters(TINY, 3), init_parameters(TINY, 3)
    for (na, pa), (nb, pb) in zip(a.params.items(), b.params.items()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)


def test_different_seed_differs():
    a, b = init_parameters(TINY, 3), init_parameters(TINY, 4)
    assert any(not np.array_equal(pa.data, pb.data) for pa, pb in zip(a.params, b.params))


def test_init_distribution():
    m = init_parameters(ModelConfig(), seed=0)
    w = m.params["layers.0.attn.q.weight"].data
    assert np.abs(w).max() <= 0.04
    assert 0.015 < w.std() < 0.02
    assert np.all(m.params["layers.0.ln1.gain"].data == 1.0)
    assert np.all(m.params["layers.0.attn.q.bias"].data == 0.0)


@pytest.mark.parametrize(
    "kwargs",
    [{"hidden": 10, "n_heads": 4}, {"n_layers": 0}, {"vocab_size": -1}],
)
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ConfigError):
        init_parameters(ModelConfig(**kwargs), seed=0)


def test_encode_shape_and_logits_shape():
    m = init_parameters(TINY, 0)
    h = encode_sequence(m, np.array([[2, 7, 3]]))
    assert h.shape == (1, 3, 8)
    assert mlm_logits(m, h).shape == (1, 3, 32)


def test_zero_hidden_gives_bias_logits():
    m = init_parameters(TINY, 0)
    m.params["mlm.bias"].data[:] = np.arange(32.0)
    out = mlm_logits(m, Tensor(np.zeros((1, 2, 8)))).data
    np.testing.assert_array_equal(out[0, 1], np.arange(32.0))


def test_too_long_sequence_rejected():
    m = init_parameters(TINY, 0)
    with pytest.raises(ValueError, match="max_positions"):
        m.encode(np.zeros((1, 17), dtype=int) + 5)


def test_batch_permutation_equivariance():
    m = init_parameters(TINY, 1)
    ids = np.random.default_rng(0).integers(5, 32, size=(3, 6))
    h = m.encode(ids).data
    h_perm = m.encode(ids[[2, 0, 1]]).data
    np.testing.assert_allclose(h_perm, h[[2, 0, 1]], atol=1e-12)


def test_padding_leaves_real_positions_unchanged():
    m = init_parameters(TINY, 2)
    ids = np.array([[2, 9, 11, 3]])
    base = m.encode(ids, np.ones_like(ids, dtype=bool)).data
    padded = np.array([[2, 9, 11, 3, 0]])
    attn = np.array([[True, True, True, True, False]])
    out = m.encode(padded, attn).data
    np.testing.assert_allclose(out[:, :4], base, atol=1e-10)


def test_mean_pool_example_identity_discriminator():
    disc = LanguageDiscriminator(2, 2)
    disc.params["disc.weight"].data[:] = np.eye(2)
    disc.params["disc.bias"].data[:] = 0.0
    hidden = Tensor(np.array([[[1.0, 3.0], [3.0, 1.0]]]))
    logits = discriminate_language(disc, hidden, np.array([[True, True]]))
    np.testing.assert_array_equal(logits.data, [[2.0, 2.0]])


def test_zero_discriminator_is_uniform():
    disc = LanguageDiscriminator(4, 2)
    disc.params["disc.weight"].data[:] = 0.0
    logits = discriminate_language(disc, Tensor(np.ones((1, 3, 4))), np.ones((1, 3), bool))
    np.testing.assert_array_equal(ag.softmax(logits).data, [[0.5, 0.5]])


def test_mean_pool_ignores_padding():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(1, 3, 4))
    padded = np.concatenate([h, rng.normal(size=(1, 2, 4))], axis=1)
    a = mean_pool(Tensor(h), np.ones((1, 3), bool)).data
    b = mean_pool(Tensor(padded), np.array([[1, 1, 1, 0, 0]], bool)).data
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_all_pad_sequence_rejected():
    with pytest.raises(ValueError):
        mean_pool(Tensor(np.ones((1, 2, 4))), np.zeros((1, 2), bool))


def test_student_and_discriminator_parameters_disjoint():
    m = EncoderModel(TINY)
    d = LanguageDiscriminator(8, 2)
    assert not {id(p) for p in m.parameters()} & {id(p) for p in d.parameters()}
    assert not set(m.params.names()) & set(d.params.names())


def test_teacher_is_frozen_and_builds_no_graph():
    teacher = TeacherModel(EncoderModel(TINY, seed=5))
    assert all(not p.requires_grad and p.grad is None for p in teacher.encoder.parameters())
    out = teacher.logits(np.array([[2, 8, 3]]), np.ones((1, 3), bool))
    assert isinstance(out, np.ndarray) and out.shape == (1, 3, 32)


def test_is_larger_than():
    assert ModelConfig(hidden=64, n_layers=4).is_larger_than(ModelConfig(hidden=32, n_layers=2))
    assert not ModelConfig(hidden=64, n_layers=2).is_larger_than(ModelConfig(hidden=32, n_layers=2))
