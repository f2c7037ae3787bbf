import numpy as np
import pytest
from scipy.special import expit

from conftest import numeric_grad, rel_error
from errors import DegenerateLossError, ShapeError
from models.losses import bpr_loss, info_nce_from_logits, infonce_loss, norm, normalize_backward, normalize_rows


class TestNorm:
    def test_unit_length(self):
        np.testing.assert_allclose(np.linalg.norm(norm(np.array([3.0, 4.0]))), 1.0)

    def test_zero_vector(self):
        np.testing.assert_array_equal(norm(np.zeros(3)), np.zeros(3))
        rows, lengths = normalize_rows(np.zeros((2, 3)))
        np.testing.assert_array_equal(rows, 0.0)
        np.testing.assert_array_equal(lengths, 0.0)

    def test_backward(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 5))
        upstream = rng.normal(size=(4, 5))

        def value():
            return float(np.sum(normalize_rows(x)[0] * upstream))

        y, lengths = normalize_rows(x)
        assert rel_error(normalize_backward(upstream, y, lengths), numeric_grad(value, x)) < 1e-7


class TestBpr:
    def test_values(self):
        loss, _, _ = bpr_loss(np.array([0.0, 2.0]), np.array([0.0, 0.0]))
        np.testing.assert_allclose(loss, [np.log(2.0), -np.log(expit(2.0))])

    def test_stable_for_large_margins(self):
        loss, g_pos, g_neg = bpr_loss(np.array([800.0, -800.0]), np.array([0.0, 0.0]))
        assert np.all(np.isfinite(loss)) and np.all(np.isfinite(g_pos))
        np.testing.assert_allclose(loss, [0.0, 800.0])
        np.testing.assert_allclose(g_pos, -g_neg)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        pos, neg = rng.normal(size=6), rng.normal(size=6)
        _, g_pos, g_neg = bpr_loss(pos, neg)
        assert rel_error(g_pos, numeric_grad(lambda: float(np.sum(bpr_loss(pos, neg)[0])), pos)) < 1e-4
        assert rel_error(g_neg, numeric_grad(lambda: float(np.sum(bpr_loss(pos, neg)[0])), neg)) < 1e-4


class TestInfoNce:
    def test_uniform_logits(self):
        loss, _ = info_nce_from_logits(np.zeros((3, 4)), np.zeros(3, dtype=np.int64))
        assert loss == pytest.approx(np.log(4.0))

    def test_masked_columns_are_ignored(self):
        logits = np.array([[1.0, 0.5, -np.inf]])
        loss, grad = info_nce_from_logits(logits, np.array([0]))
        expected, _ = info_nce_from_logits(logits[:, :2], np.array([0]))
        assert loss == pytest.approx(expected)
        assert grad[0, 2] == 0.0

    def test_rejects_bad_temperature(self):
        with pytest.raises(DegenerateLossError):
            infonce_loss(np.ones(2), np.ones(2), np.ones((1, 2)), 0.0)

    def test_needs_negatives(self):
        with pytest.raises(DegenerateLossError):
            infonce_loss(np.ones(2), np.ones(2), np.zeros((0, 2)), 0.15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            infonce_loss(np.ones(2), np.ones(3), np.ones((1, 2)), 0.15)

    def test_perfect_positive_has_small_loss(self):
        anchor = np.array([1.0, 0.0])
        loss, _ = infonce_loss(anchor, anchor * 3.0, np.array([[-1.0, 0.0], [0.0, 1.0]]), 0.15)
        assert loss < 1e-2

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        anchor, positive = rng.normal(size=8), rng.normal(size=8)
        negatives = rng.normal(size=(5, 8))

        def value():
            return infonce_loss(anchor, positive, negatives, 0.15)[0]

        _, grads = infonce_loss(anchor, positive, negatives, 0.15)
        assert rel_error(grads["anchor"], numeric_grad(value, anchor)) < 1e-4
        assert rel_error(grads["positive"], numeric_grad(value, positive)) < 1e-4
        assert rel_error(grads["negatives"], numeric_grad(value, negatives)) < 1e-4
