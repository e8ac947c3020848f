"""Forward/backward exactness and the multi-sample predictive summary."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infmix.gradcheck import check_network_gradient
from infmix.network import (MAX_ENTROPY, StochasticMlp, backward, entropy_of,
                            forward, summarize_prob_stream, summarize_probs)
from infmix.posterior import MvnLayerPosterior, softplus_inv
from infmix.tensor import Rng


def zero_weights(topology):
    return [np.zeros((n_in + 1, n_out))
            for n_in, n_out in zip(topology[:-1], topology[1:])]


def random_prob_stack(seed, s=6, b=5, k=10):
    raw = Rng(seed).uniform(0.01, 1.0, (s, b, k))
    return raw / raw.sum(axis=2, keepdims=True)


class TestForward:
    def test_zero_weights_give_uniform_log_probs(self):
        weights = zero_weights((784, 128, 128, 10))
        x = Rng(0).uniform(0, 1, (4, 784))
        log_probs, _ = forward(weights, x)
        np.testing.assert_allclose(log_probs, -np.log(10.0), atol=1e-12)

    def test_two_class_hand_computation(self):
        # One layer, 1 input, 2 classes: logits = x * w + b.
        w = np.array([[1.5, -0.5],    # weight row
                      [0.2, -0.1]])   # bias row
        x = np.array([[0.8]])
        log_probs, _ = forward([w], x)
        logits = np.array([0.8 * 1.5 + 0.2, 0.8 * -0.5 - 0.1])
        expected = logits - np.log(np.exp(logits).sum())
        np.testing.assert_allclose(log_probs[0], expected, atol=1e-12)

    def test_batch_equals_concatenated_singles(self):
        # BLAS may pick different kernels per batch shape, so agreement is
        # to rounding noise rather than bitwise.
        net = StochasticMlp.create(Rng(3), topology=(6, 4, 4, 3))
        weights = [sw.weights for sw in net.sample_weights(Rng(5))]
        x = Rng(1).uniform(0, 1, (3, 6))
        batch_lp, _ = forward(weights, x)
        for i in range(3):
            single_lp, _ = forward(weights, x[i:i + 1])
            np.testing.assert_allclose(batch_lp[i], single_lp[0],
                                       rtol=1e-13, atol=1e-14)

    def test_probabilities_sum_to_one(self):
        net = StochasticMlp.create(Rng(2), topology=(6, 4, 4, 3))
        weights = [sw.weights for sw in net.sample_weights(Rng(0))]
        log_probs, _ = forward(weights, Rng(9).uniform(0, 1, (8, 6)))
        np.testing.assert_allclose(np.exp(log_probs).sum(axis=1), 1.0,
                                   atol=1e-12)

    def test_non_finite_activation_names_layer(self):
        weights = zero_weights((4, 3, 2))
        weights[1][0, 0] = np.inf
        x = np.ones((1, 4))
        with np.errstate(invalid="ignore"):
            with pytest.raises(FloatingPointError, match="layer 1"):
                forward(weights, x)

    def test_wrong_input_width_rejected(self):
        with pytest.raises(ValueError):
            forward(zero_weights((4, 3)), np.ones((2, 5)))


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        net = StochasticMlp.create(Rng(1), topology=(5, 3, 3, 2))
        weights = [sw.weights for sw in net.sample_weights(Rng(2))]
        x = Rng(3).uniform(0, 1, (4, 5))
        log_probs, trace = forward(weights, x)
        grad_w, grad_x = backward(trace, np.zeros_like(log_probs))
        assert all(not g.any() for g in grad_w)
        assert not grad_x.any()

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_difference_oracle(self, seed):
        result = check_network_gradient(seed=seed, tolerance=1e-5)
        assert result.passed, result.line()

    def test_mismatched_upstream_shape_rejected(self):
        weights = zero_weights((4, 3, 2))
        _, trace = forward(weights, np.ones((2, 4)))
        with pytest.raises(ValueError):
            backward(trace, np.zeros((3, 2)))


class TestSummaries:
    def test_two_point_formula(self):
        p1 = np.zeros((1, 10))
        p1[0, 0] = 1.0
        p2 = np.zeros((1, 10))
        p2[0, 1] = 1.0
        summary = summarize_probs(np.stack([p1, p2]))
        np.testing.assert_allclose(summary.mean_probs[0, :2], [0.5, 0.5])
        np.testing.assert_allclose(summary.class_variance[0, :2], [0.25, 0.25])
        assert summary.class_variance[0, 2:].max() == 0.0
        assert summary.max_variance[0] == 0.25

    def test_single_sample_variance_exactly_zero(self):
        stack = random_prob_stack(0, s=1)
        summary = summarize_probs(stack)
        assert np.all(summary.class_variance == 0.0)
        assert np.all(summary.max_variance == 0.0)

    def test_uniform_mean_gives_max_entropy(self):
        stack = np.full((3, 2, 10), 0.1)
        summary = summarize_probs(stack)
        np.testing.assert_allclose(summary.entropy, np.log(10.0), atol=1e-12)

    def test_one_hot_entropy_zero(self):
        p = np.zeros((1, 10))
        p[0, 4] = 1.0
        assert entropy_of(p)[0] == 0.0

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_variance_identity_and_entropy_bounds(self, seed):
        stack = random_prob_stack(seed)
        summary = summarize_probs(stack)
        centered = ((stack - stack.mean(axis=0)) ** 2).mean(axis=0)
        np.testing.assert_allclose(summary.class_variance, centered, atol=1e-12)
        assert np.all(summary.entropy >= 0.0)
        assert np.all(summary.entropy <= MAX_ENTROPY + 1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_prediction_invariant_to_draw_order(self, seed):
        stack = random_prob_stack(seed)
        perm = Rng(seed).permutation(stack.shape[0])
        a = summarize_probs(stack)
        b = summarize_probs(stack[perm])
        assert np.array_equal(a.predicted_class, b.predicted_class)

    def test_stream_matches_stack(self):
        stack = random_prob_stack(42)
        a = summarize_probs(stack)
        b = summarize_prob_stream(iter(stack), stack.shape[0])
        assert np.array_equal(a.mean_probs, b.mean_probs)
        assert np.array_equal(a.class_variance, b.class_variance)

    def test_variance_clamped_nonnegative(self):
        stack = np.full((4, 2, 10), 0.1)  # exact cancellation case
        summary = summarize_probs(stack)
        assert np.all(summary.class_variance >= 0.0)


class TestPredict:
    def test_collapsed_posterior_has_zero_variance(self):
        net = StochasticMlp.create(Rng(0), topology=(6, 4, 4, 3))
        for layer in net.layers:
            layer.row_scale_raw = np.full_like(layer.row_scale_raw, -40.0)
            layer.col_scale_raw = np.full_like(layer.col_scale_raw, -40.0)
        x = Rng(1).uniform(0, 1, (5, 6))
        summary = net.predict(x, n_samples=8, rng=Rng(2))
        np.testing.assert_allclose(summary.max_variance, 0.0, atol=1e-12)
        # Entropy equals the deterministic net's entropy.
        log_probs, _ = forward([layer.mean for layer in net.layers], x)
        np.testing.assert_allclose(summary.entropy, entropy_of(np.exp(log_probs)),
                                   atol=1e-9)

    def test_predict_deterministic_in_rng(self):
        net = StochasticMlp.create(Rng(0), topology=(6, 4, 4, 3))
        x = Rng(1).uniform(0, 1, (5, 6))
        a = net.predict(x, n_samples=10, rng=Rng(7))
        b = net.predict(x, n_samples=10, rng=Rng(7))
        assert np.array_equal(a.mean_probs, b.mean_probs)

    def test_invalid_sample_count(self):
        net = StochasticMlp.create(Rng(0), topology=(6, 4, 4, 3))
        with pytest.raises(ValueError):
            net.predict(np.ones((1, 6)), 0, Rng(0))


class TestTopology:
    def test_default_dims_chain(self):
        net = StochasticMlp.create(Rng(0))
        assert net.topology == (784, 128, 128, 10)
        assert [layer.mean.shape for layer in net.layers] == [
            (785, 128), (129, 128), (129, 10)]
