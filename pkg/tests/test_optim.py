import numpy as np
import pytest

from errors import ConfigError, NumericalError, ShapeError
from models.optim import AdamState, EarlyStopping, adam_step, early_stop_point


def _reference_adam(p, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = g + wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


class TestAdam:
    def test_matches_textbook_update(self):
        rng = np.random.default_rng(0)
        start = rng.normal(size=(3, 4))
        grads = [rng.normal(size=(3, 4)) for _ in range(100)]
        params, state = {"w": start}, AdamState()
        for t, g in enumerate(grads, start=1):
            params, state = adam_step(params, {"w": g}, state, 0.01, 1e-3, t)
        np.testing.assert_allclose(params["w"], _reference_adam(start, grads, 0.01, 1e-3), rtol=0, atol=1e-10)

    def test_gradient_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step({"w": np.ones((2, 3))}, {"w": np.ones((3, 2))}, AdamState(), 0.1, 0.0, 1)

    def test_first_step_moves_by_lr(self):
        params, _ = adam_step({"w": np.array([1.0, -1.0])}, {"w": np.array([5.0, -0.1])}, AdamState(), 0.1, 0.0, 1)
        np.testing.assert_allclose(params["w"], [0.9, -0.9], rtol=1e-6)

    def test_inputs_are_not_modified(self):
        w = np.ones(3)
        state = AdamState()
        adam_step({"w": w}, {"w": np.ones(3)}, state, 0.1, 0.0, 1)
        np.testing.assert_array_equal(w, 1.0)
        assert state.m == {}

    def test_frozen_and_missing_grads_are_skipped(self):
        params = {"a": np.ones(2), "b": np.ones(2), "c": np.ones(2)}
        new, _ = adam_step(params, {"a": np.ones(2), "b": np.ones(2)}, AdamState(), 0.1, 0.0, 1, frozen=["b"])
        assert not np.allclose(new["a"], 1.0)
        np.testing.assert_array_equal(new["b"], 1.0)
        np.testing.assert_array_equal(new["c"], 1.0)

    def test_nan_gradient(self):
        with pytest.raises(NumericalError):
            adam_step({"w": np.ones(2)}, {"w": np.array([np.nan, 0.0])}, AdamState(), 0.1, 0.0, 1)

    def test_step_counter_starts_at_one(self):
        with pytest.raises(ConfigError):
            adam_step({"w": np.ones(1)}, {"w": np.ones(1)}, AdamState(), 0.1, 0.0, 0)

    def test_minimizes_quadratic(self):
        params, state = {"w": np.array([5.0, -3.0])}, AdamState()
        for t in range(1, 2001):
            params, state = adam_step(params, {"w": 2.0 * params["w"]}, state, 0.05, 0.0, t)
        np.testing.assert_allclose(params["w"], 0.0, atol=5e-2)


class TestEarlyStopping:
    def test_stops_after_patience_stale_evaluations(self):
        stop, best = early_stop_point([0.1, 0.2, 0.2, 0.15, 0.19], patience=3)
        assert (stop, best) == (4, 1)

    def test_equal_value_is_not_an_improvement(self):
        stopper = EarlyStopping(patience=1)
        assert stopper.update(0.3)
        assert not stopper.update(0.3)
        assert stopper.should_stop

    def test_never_stops_while_improving(self):
        assert early_stop_point([0.1, 0.2, 0.3], patience=1) == (None, 2)

    def test_patience_must_be_positive(self):
        with pytest.raises(ConfigError):
            EarlyStopping(0)
