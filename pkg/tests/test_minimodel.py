import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swdo.acceptance import gradient_errors
from swdo.minimodel import (
    PROB_EPS, WEIGHT_ORDER, Batch, ModelConfig, NonFiniteActivation, attention_forward, backward, bce_loss,
    conv2d_valid, forward, init_weights, load_weights, lr_schedule, regularization_grad, save_weights, train,
    zeros_like_weights,
)

ZERO_REG = ModelConfig(filters_size=2, kernel_size=3, l2_reg=0.0, l1_reg=0.0, att_reg_weight=0.0)


def small_weights(seed=0, filters=2, size=8, kernel=3):
    cfg = ModelConfig(filters_size=filters, kernel_size=kernel)
    return cfg, init_weights(cfg, 1, size, size, seed, att_dim=4)


def separable(n=64, size=8, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.uniform(0.0, 0.3, (n, 1, size, size))
    x[y == 1, :, 2:6, 2:6] += 0.6
    return Batch(x, y)


class TestConfig:
    def test_even_kernel_becomes_odd(self):
        assert ModelConfig(kernel_size=4).kernel_size == 5

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            ModelConfig(lr=0.0)
        with pytest.raises(ValueError):
            ModelConfig(l1_reg=-1.0)

    def test_published_bounds(self):
        ModelConfig().check_bounds()
        with pytest.raises(ValueError):
            ModelConfig(filters_size=4).check_bounds()


class TestConv:
    def test_unit_kernel_identity(self):
        x = np.random.default_rng(0).random((1, 5, 6))
        np.testing.assert_array_equal(conv2d_valid(x, np.ones((1, 1, 1, 1)), [0.0]), x)

    def test_zero_kernel(self):
        out = conv2d_valid(np.random.default_rng(0).random((2, 6, 6)), np.zeros((3, 2, 3, 3)), np.zeros(3))
        assert out.shape == (3, 4, 4) and np.all(out == 0)

    def test_hand_example(self):
        out = conv2d_valid(np.array([[[1.0, 2.0], [3.0, 4.0]]]), np.array([[[[1.0, 0.0], [0.0, 1.0]]]]), [0.0])
        np.testing.assert_array_equal(out, [[[5.0]]])

    def test_kernel_too_large(self):
        with pytest.raises(ValueError):
            conv2d_valid(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), [0.0])


class TestAttention:
    def test_zero_projections_uniform(self):
        tokens = np.random.default_rng(0).random((5, 3))
        w = {"wq": np.zeros((3, 2)), "wk": np.zeros((3, 2)), "wv": np.random.default_rng(1).random((3, 2))}
        out, attn = attention_forward(tokens, w, return_matrix=True)
        np.testing.assert_allclose(attn, 0.2, atol=1e-15)
        np.testing.assert_allclose(out, np.broadcast_to((tokens @ w["wv"]).mean(axis=0), (5, 2)), atol=1e-12)

    def test_single_token(self):
        rng = np.random.default_rng(2)
        w = {k: rng.normal(size=(3, 2)) for k in ("wq", "wk", "wv")}
        _, attn = attention_forward(rng.normal(size=(1, 3)), w, return_matrix=True)
        assert attn[0, 0] == 1.0

    @settings(max_examples=30)
    @given(st.integers(0, 2**32), st.integers(1, 9))
    def test_rows_sum_to_one(self, seed, n_tokens):
        rng = np.random.default_rng(seed)
        w = {k: rng.normal(size=(4, 3)) for k in ("wq", "wk", "wv")}
        _, attn = attention_forward(rng.normal(size=(n_tokens, 4)) * 3, w, return_matrix=True)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)


class TestForwardAndLoss:
    def test_zero_weights_give_half(self):
        _, w = small_weights()
        probs = forward(None, zeros_like_weights(w), np.random.default_rng(0).random((4, 1, 8, 8)))
        np.testing.assert_array_equal(probs, 0.5)
        assert probs.shape == (4,)

    def test_probabilities_clipped(self):
        _, w = small_weights()
        w["dense_b"] = np.array(1e3)
        probs = forward(None, w, np.random.default_rng(0).random((3, 1, 8, 8)))
        assert np.all(probs <= 1 - PROB_EPS) and np.all(probs >= PROB_EPS)

    def test_nonfinite_names_layer(self):
        _, w = small_weights()
        w["conv_w"][0, 0, 0, 0] = np.inf
        with pytest.raises(NonFiniteActivation, match="conv"):
            forward(None, w, np.ones((1, 1, 8, 8)))

    def test_bce_examples(self):
        _, w = small_weights()
        z = zeros_like_weights(w)
        assert bce_loss([0.5], [1], ZERO_REG, z) == pytest.approx(math.log(2), abs=1e-12)
        assert bce_loss([1 - 1e-7], [1], ZERO_REG, z) == pytest.approx(1e-7, rel=1e-3)
        assert bce_loss([0.5, 0.5], [0, 1], ZERO_REG, z) == pytest.approx(math.log(2), abs=1e-12)

    def test_bce_includes_regularizers(self):
        cfg = ModelConfig(filters_size=2, kernel_size=3, l2_reg=0.1, l1_reg=0.2, att_reg_weight=0.3)
        _, w = small_weights()
        w = {k: np.full_like(v, 0.5) for k, v in w.items()}
        penalized = w["conv_w"].size + w["dense_w"].size
        attention = sum(w[k].size for k in ("wq", "wk", "wv"))
        expected = math.log(2) + 0.1 * 0.25 * penalized + 0.2 * 0.5 * penalized + 0.3 * 0.25 * attention
        assert bce_loss([0.5], [0], cfg, w) == pytest.approx(expected, rel=1e-12)


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_difference(self, seed):
        errors = gradient_errors(seed)
        assert set(errors) == set(WEIGHT_ORDER)
        assert max(errors.values()) < 1e-4, errors

    def test_regularizer_gradient(self):
        cfg = ModelConfig(filters_size=2, kernel_size=3, l2_reg=0.01, l1_reg=0.002, att_reg_weight=0.0)
        _, w = small_weights(seed=3)
        g = regularization_grad(cfg, w)
        np.testing.assert_allclose(g["conv_w"], 2 * 0.01 * w["conv_w"] + 0.002 * np.sign(w["conv_w"]))
        np.testing.assert_array_equal(g["wq"], 0.0)

    def test_dense_bias_at_zero(self):
        _, w = small_weights()
        batch = Batch(np.zeros((3, 1, 8, 8)), np.zeros(3))
        g = backward(ZERO_REG, zeros_like_weights(w), batch)
        assert float(g["dense_b"]) == pytest.approx(0.5, abs=1e-15)


class TestSchedule:
    def test_values(self):
        assert lr_schedule(0, 1e-3) == 1e-3
        assert lr_schedule(10, 1e-3) == pytest.approx(5.987e-4, rel=1e-4)

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            lr_schedule(-1, 1e-3)

    @given(st.integers(0, 200))
    def test_monotone(self, epoch):
        assert lr_schedule(epoch + 1, 0.1) < lr_schedule(epoch, 0.1)


class TestTrain:
    cfg = ModelConfig(filters_size=2, kernel_size=3, lr=0.05, batch_size=16, epochs=4,
                      l2_reg=1e-5, l1_reg=1e-5, att_reg_weight=1e-5)

    def test_epoch_count_and_determinism(self):
        data = separable()
        cfg = ModelConfig(filters_size=2, kernel_size=3, lr=0.05, batch_size=16, epochs=10)
        a = train(cfg, data.subset(range(48)), data.subset(range(48, 64)), seed=4)
        b = train(cfg, data.subset(range(48)), data.subset(range(48, 64)), seed=4)
        assert len(a.history) == 10
        for name in WEIGHT_ORDER:
            np.testing.assert_array_equal(a.weights[name], b.weights[name])
        assert [r.train_loss for r in a.history] == [r.train_loss for r in b.history]

    def test_best_epoch_is_kept(self):
        data = separable()
        res = train(self.cfg, data.subset(range(48)), data.subset(range(48, 64)), seed=1)
        assert res.best_val_accuracy == max(r.val_accuracy for r in res.history)

    def test_loss_decreases_in_first_epoch(self):
        data = separable(n=128)
        cfg = ModelConfig(filters_size=4, kernel_size=3, lr=1e-3, batch_size=16, epochs=1,
                          l2_reg=0.0, l1_reg=0.0, att_reg_weight=0.0)
        res = train(cfg, data, data, seed=0)
        # train() seeds its initializer with the first word of the derived state
        start = init_weights(cfg, 1, 8, 8, int(np.random.SeedSequence(0).generate_state(2)[0]), att_dim=8)
        before = bce_loss(forward(cfg, start, data), data.labels, cfg, start)
        after = bce_loss(forward(cfg, res.weights, data), data.labels, cfg, res.weights)
        assert after < before

    @pytest.mark.parametrize("seed", range(3))
    def test_separable_synthetic_set(self, seed):
        from swdo.dataset import generate_synthetic, to_batch
        data = to_batch(generate_synthetic(400, 0, 16))
        cfg = ModelConfig(filters_size=4, kernel_size=3, lr=0.1, batch_size=16, epochs=12,
                          l2_reg=1e-5, l1_reg=1e-5, att_reg_weight=1e-5)
        res = train(cfg, data.subset(range(340)), data.subset(range(340, 400)), seed=seed)
        assert res.history[-1].train_accuracy >= 0.95

    def test_empty_set(self):
        data = separable(n=4)
        with pytest.raises(ValueError):
            train(self.cfg, data.subset([]), data, seed=0)


def test_weights_round_trip(tmp_path):
    cfg, w = small_weights(seed=5)
    save_weights(tmp_path / "w.bin", w, cfg, 17)
    loaded, cfg2, seed = load_weights(tmp_path / "w.bin")
    assert cfg2 == cfg and seed == 17
    for name in WEIGHT_ORDER:
        np.testing.assert_array_equal(loaded[name], w[name])
        assert loaded[name].shape == w[name].shape


def test_weights_bad_magic(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"not a snapshot")
    with pytest.raises(ValueError):
        load_weights(tmp_path / "junk.bin")
