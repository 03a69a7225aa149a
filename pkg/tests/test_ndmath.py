import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tools.errors import ArgumentError, NonFiniteGradientError, ShapeError
from tools.ndmath import (
    DenseParams,
    GruParams,
    dense_backward,
    dense_forward,
    finite_diff_grad,
    gather,
    gru_sequence,
    gru_sequence_backward,
    gru_step,
    init_optimizer,
    learning_rate,
    mae_grad,
    mae_loss,
    nadam_step,
    relative_error,
    sample_coordinates,
)


def assert_gradients_match(analytic, numeric):
    ok = (relative_error(analytic, numeric) <= 1e-5) | (np.abs(analytic - numeric) <= 1e-9)
    assert ok.all(), f"max relative error {relative_error(analytic, numeric).max():.3g}"


class TestDense:
    def test_forward_applies_activation(self, rng):
        p = DenseParams.init(rng, 3, 2, "tanh")
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(dense_forward(p, x), np.tanh(x @ p.weight.T + p.bias))

    def test_input_mismatch_raises(self, rng):
        p = DenseParams.init(rng, 3, 2)
        with pytest.raises(ShapeError):
            dense_forward(p, np.zeros((4, 5)))

    def test_unknown_activation_rejected(self):
        with pytest.raises(ArgumentError):
            DenseParams(np.zeros((2, 2)), np.zeros(2), "relu")

    @pytest.mark.parametrize("activation", ["linear", "tanh"])
    def test_backward_matches_finite_differences(self, rng, activation):
        p = DenseParams.init(rng, 4, 3, activation)
        p.bias = rng.normal(size=3)
        x = rng.normal(size=(6, 4))
        w = rng.normal(size=(6, 3))

        y = dense_forward(p, x)
        dx, grads = dense_backward(p, x, y, w)

        f = lambda b: float((dense_forward(DenseParams.from_blocks(b, "d", activation), x) * w).sum())
        numeric = finite_diff_grad(f, p.blocks("d"))
        assert_gradients_match(grads["weight"], numeric["d.weight"])
        assert_gradients_match(grads["bias"], numeric["d.bias"])

        fx = lambda b: float((dense_forward(p, b["x"]) * w).sum())
        assert_gradients_match(dx, finite_diff_grad(fx, {"x": x})["x"])


class TestGru:
    def test_zero_parameters_halve_the_state(self, rng):
        p = GruParams.zeros(3, 4)
        h = rng.normal(size=(2, 4))
        # z = 0.5 and the candidate is tanh(0) = 0
        np.testing.assert_allclose(gru_step(p, rng.normal(size=(2, 3)), h), 0.5 * h)

    def test_sequence_matches_repeated_steps(self, rng):
        p = GruParams.init(rng, 3, 5)
        xs = rng.normal(size=(2, 6, 3))
        h0 = rng.normal(size=(2, 5))
        hs, _ = gru_sequence(p, xs, h0)
        h = h0
        for t in range(6):
            h = gru_step(p, xs[:, t], h)
            np.testing.assert_allclose(hs[:, t], h, atol=1e-14)

    def test_matches_scalar_loop(self, rng):
        p = GruParams(*(rng.uniform(-0.5, 0.5, size=s) for s in [(4, 3)] * 3 + [(4, 4)] * 3 + [(4,)] * 3))
        x, h = rng.uniform(-1, 1, size=3), rng.uniform(-1, 1, size=4)

        def affine(W, U, b, i, state):
            return (sum(W[i, k] * x[k] for k in range(3)) + sum(U[i, k] * state[k] for k in range(4)) + b[i])

        sig = lambda a: 1.0 / (1.0 + math.exp(-a))
        r = [sig(affine(p.W_r, p.U_r, p.b_r, i, h)) for i in range(4)]
        expected = []
        for i in range(4):
            z = sig(affine(p.W_z, p.U_z, p.b_z, i, h))
            c = math.tanh(affine(p.W_h, p.U_h, p.b_h, i, [r[k] * h[k] for k in range(4)]))
            expected.append((1.0 - z) * h[i] + z * c)
        np.testing.assert_allclose(gru_step(p, x, h), expected, rtol=0, atol=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_state_stays_within_unit_or_previous_magnitude(self, seed, scale):
        gen = np.random.default_rng(seed)
        p = GruParams.init(gen, 3, 5)
        p.b_z, p.b_r, p.b_h = (gen.normal(size=5) for _ in range(3))
        h = gen.normal(scale=scale, size=(4, 5))
        out = gru_step(p, gen.normal(scale=scale, size=(4, 3)), h)
        assert np.all(np.abs(out) <= np.maximum(np.abs(h), 1.0) + 1e-12)

    def test_state_dimension_mismatch_raises(self, rng):
        p = GruParams.init(rng, 3, 5)
        with pytest.raises(ShapeError):
            gru_step(p, np.zeros(3), np.zeros(4))

    def test_wrong_block_shape_rejected(self, rng):
        p = GruParams.init(rng, 3, 5)
        blocks = p.blocks("g")
        blocks["g.U_h"] = np.zeros((5, 4))
        with pytest.raises(ShapeError):
            GruParams.from_blocks(blocks, "g")

    def test_backpropagation_through_time(self, rng):
        p = GruParams.init(rng, 3, 4)
        p.b_z, p.b_r, p.b_h = rng.normal(size=4), rng.normal(size=4), rng.normal(size=4)
        xs = rng.normal(size=(2, 5, 3))
        h0 = rng.normal(size=(2, 4))
        w = rng.normal(size=(2, 5, 4))

        hs, cache = gru_sequence(p, xs, h0)
        dxs, dh0, grads = gru_sequence_backward(p, cache, w)

        f = lambda b: float((gru_sequence(GruParams.from_blocks(b, "g"), xs, h0)[0] * w).sum())
        numeric = finite_diff_grad(f, p.blocks("g"))
        for name, value in grads.items():
            assert_gradients_match(value, numeric[f"g.{name}"])

        inputs = finite_diff_grad(lambda b: float((gru_sequence(p, b["xs"], b["h0"])[0] * w).sum()),
                                  {"xs": xs, "h0": h0})
        assert_gradients_match(dxs, inputs["xs"])
        assert_gradients_match(dh0, inputs["h0"])


class TestLoss:
    def test_mae_value(self):
        assert mae_loss(np.array([[1.0, -1.0]]), np.array([[0.0, 1.0]])) == pytest.approx(1.5)

    def test_mae_with_mask_averages_selected_entries(self):
        pred = np.array([[1.0, 5.0, 3.0]])
        target = np.zeros((1, 3))
        mask = np.array([[1.0, 0.0, 1.0]])
        assert mae_loss(pred, target, mask) == pytest.approx(2.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            mae_loss(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_gradient_is_sign_over_count(self):
        pred = np.array([2.0, -1.0, 0.5, 0.0])
        target = np.array([1.0, 1.0, 0.5, -3.0])
        np.testing.assert_array_equal(mae_grad(pred, target), np.array([1.0, -1.0, 0.0, 1.0]) / 4)

    def test_masked_gradient_is_zero_outside_mask(self):
        mask = np.array([1.0, 0.0, 1.0])
        grad = mae_grad(np.ones(3), np.zeros(3), mask)
        np.testing.assert_array_equal(grad, np.array([0.5, 0.0, 0.5]))


class TestNadam:
    def test_inverse_time_schedule(self):
        state = init_optimizer({"w": np.zeros(2)}, lr0=1e-3, decay=4e-3)
        assert learning_rate(state, 0) == pytest.approx(1e-3)
        assert learning_rate(state, 250) == pytest.approx(1e-3 / 2.0)

    def test_step_schedule(self):
        state = init_optimizer({"w": np.zeros(2)}, lr0=1e-2, decay=0.0, schedule="step",
                               drop_rate=0.5, drop_every=10)
        assert learning_rate(state, 9) == pytest.approx(1e-2)
        assert learning_rate(state, 10) == pytest.approx(5e-3)
        assert learning_rate(state, 35) == pytest.approx(1.25e-3)

    def test_unknown_schedule_rejected(self):
        with pytest.raises(ArgumentError):
            init_optimizer({"w": np.zeros(1)}, schedule="cosine")

    def test_first_update_moves_against_gradient(self):
        params = {"w": np.array([1.0, -2.0])}
        state = init_optimizer(params, lr0=0.01, decay=0.0)
        new, new_state = nadam_step(state, params, {"w": np.array([3.0, -0.5])})
        step = params["w"] - new["w"]
        assert new_state.step == 1
        assert np.all(np.sign(step) == np.array([1.0, -1.0]))
        assert np.all(np.abs(step) > 0.01) and np.all(np.abs(step) < 0.011)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_scalar_update_value(self):
        # m = 0.1, v / (1 - beta2) = 1, mu_1 = 0.45007347, mu_2 = 0.45014694
        state = init_optimizer({"w": np.zeros(1)}, lr0=0.1)
        new, _ = nadam_step(state, {"w": np.zeros(1)}, {"w": np.ones(1)})
        assert new["w"][0] == pytest.approx(-0.1056451768, abs=1e-8)

    def test_matches_scalar_recurrence(self):
        lr0, decay, b1, b2, eps = 0.1, 4e-3, 0.9, 0.999, 1e-8
        mu = lambda t: b1 * (1.0 - 0.5 * 0.96 ** (0.004 * t))
        w, m, v, prod = 0.3, 0.0, 0.0, 1.0
        params = {"w": np.array([w])}
        state = init_optimizer(params, lr0=lr0, decay=decay)
        for t, g in enumerate([1.0, -0.5, 2.0, 0.25], start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            prod *= mu(t)
            step = (1 - mu(t)) * g / (1 - prod) + mu(t + 1) * m / (1 - prod * mu(t + 1))
            w -= lr0 / (1 + decay * (t - 1)) * step / (math.sqrt(v / (1 - b2 ** t)) + eps)
            params, state = nadam_step(state, params, {"w": np.array([g])})
            assert params["w"][0] == pytest.approx(w, rel=1e-12, abs=1e-15)

    def test_zero_gradient_is_a_fixed_point(self, rng):
        params = {"w": rng.normal(size=(3, 2))}
        state = init_optimizer(params, lr0=0.1)
        for _ in range(3):
            new, state = nadam_step(state, params, {"w": np.zeros((3, 2))})
            np.testing.assert_array_equal(new["w"], params["w"])

    def test_minimizes_a_quadratic(self):
        target = np.array([0.5, -1.5, 3.0])
        params = {"w": np.zeros(3)}
        state = init_optimizer(params, lr0=0.05, decay=1e-2)
        for _ in range(2000):
            params, state = nadam_step(state, params, {"w": 2.0 * (params["w"] - target)})
        np.testing.assert_allclose(params["w"], target, atol=0.1)

    def test_non_finite_gradient_rejected_with_diagnostics(self):
        params = {"a": np.zeros(3), "b": np.zeros(2)}
        state = init_optimizer(params)
        grads = {"a": np.array([0.0, np.nan, 1.0]), "b": np.array([np.inf, -np.inf])}
        with pytest.raises(NonFiniteGradientError) as exc:
            nadam_step(state, params, grads)
        assert exc.value.diagnostics == {"a": 1, "b": 2}
        assert state.step == 0

    def test_block_mismatch_raises(self):
        state = init_optimizer({"w": np.zeros(2)})
        with pytest.raises(ShapeError):
            nadam_step(state, {"w": np.zeros(2)}, {"v": np.zeros(2)})


class TestFiniteDifferences:
    def test_quadratic_gradient(self, rng):
        a = rng.uniform(0.5, 2.0, size=(3, 2))
        params = {"x": rng.normal(size=(3, 2))}
        numeric = finite_diff_grad(lambda b: float((a * b["x"] ** 2).sum()), params)
        np.testing.assert_allclose(numeric["x"], 2 * a * params["x"], rtol=1e-7)

    def test_coordinate_subset_leaves_other_entries_zero(self):
        params = {"x": np.ones(4)}
        numeric = finite_diff_grad(lambda b: float(b["x"].sum()), params, coords=[("x", 2)])
        np.testing.assert_allclose(numeric["x"], [0.0, 0.0, 1.0, 0.0])

    def test_non_positive_step_rejected(self):
        with pytest.raises(ArgumentError):
            finite_diff_grad(lambda b: 0.0, {"x": np.zeros(1)}, h=0.0)

    def test_sample_coordinates_are_distinct(self, rng):
        params = {"a": np.zeros((3, 3)), "b": np.zeros(4)}
        coords = sample_coordinates(params, 10, rng)
        assert len(set(coords)) == 10
        assert all(0 <= i < params[name].size for name, i in coords)
        assert len(sample_coordinates(params, 100, rng)) == 13

    def test_relative_error_floor(self):
        assert relative_error(0.0, 1e-12)[()] == pytest.approx(1e-4)
        assert relative_error(2.0, 1.0)[()] == pytest.approx(0.5)

    def test_gather(self):
        blocks = {"a": np.arange(6.0).reshape(2, 3)}
        np.testing.assert_array_equal(gather(blocks, [("a", 4), ("a", 0)]), [4.0, 0.0])
