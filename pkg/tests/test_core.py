"""Softmax algebra: frozen values, stability, and exact shift handling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from imbaseg import (
    DomainError,
    InvalidInputError,
    label_residual,
    log_sum_exp,
    shifted_softmax,
    softmax,
    softmax_vjp,
    validate_one_hot,
    validate_rarity,
)

# independently computed to 40 digits
SOFTMAX_2_0 = np.array([0.8807970779778824, 0.1192029220221176])
SOFTMAX_1_0 = np.array([0.7310585786300049, 0.2689414213699951])
LSE_0_0 = 0.6931471805599453


def test_softmax_frozen_value():
    np.testing.assert_allclose(softmax([2.0, 0.0]), SOFTMAX_2_0, rtol=0, atol=1e-15)


def test_log_sum_exp_frozen_value():
    assert abs(log_sum_exp(np.array([0.0, 0.0])) - LSE_0_0) < 1e-15


def test_log_sum_exp_single_entry():
    assert log_sum_exp(np.array([3.25])) == pytest.approx(3.25, abs=1e-15)


def test_softmax_shift_invariance_is_exact():
    # max subtraction maps both inputs to the same shifted vector
    a = softmax(np.array([1.0, 2.0]))
    b = softmax(np.array([101.0, 102.0]))
    assert np.array_equal(a, b)


def test_softmax_huge_logits_no_overflow():
    p = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(p))
    assert abs(p.sum() - 1.0) < 1e-12


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax(np.array([np.nan, 0.0]))
    with pytest.raises(InvalidInputError):
        softmax(np.array([np.inf, 0.0]))


def test_shifted_softmax_frozen_value():
    y = np.array([1.0, 0.0])
    q = shifted_softmax(np.array([2.0, 0.0]), y, 1.0)
    np.testing.assert_allclose(q, SOFTMAX_1_0, rtol=0, atol=1e-15)


def test_shifted_softmax_zero_margin_bitwise():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(50, 3))
    y = np.eye(3)[rng.integers(0, 3, size=50)]
    assert np.array_equal(shifted_softmax(z, y, 0.0), softmax(z))


def test_shifted_softmax_zero_rarity_bitwise():
    # r = 0 on the true class kills the shift entirely for that pixel
    rng = np.random.default_rng(1)
    z = rng.normal(size=(50, 2))
    y = np.eye(2)[np.zeros(50, dtype=int)]
    r = np.array([0.0, 1.0])
    assert np.array_equal(shifted_softmax(z, y, 2.0, r=r), softmax(z))


def test_shifted_softmax_rejects_negative_margin():
    with pytest.raises(DomainError):
        shifted_softmax(np.array([1.0, 0.0]), np.array([1.0, 0.0]), -0.5)


@settings(max_examples=200, deadline=None)
@given(
    arrays(
        np.float64,
        array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=6),
        elements=st.floats(-50, 50),
    )
)
def test_softmax_rows_sum_to_one(z):
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    assert np.all(p >= 0.0)


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, (4,), elements=st.floats(-30, 30)),
    st.floats(-100, 100),
)
def test_log_sum_exp_shift_identity(z, c):
    assert log_sum_exp(z + c) == pytest.approx(log_sum_exp(z) + c, abs=1e-10)


def test_label_residual_matches_plain_subtraction():
    rng = np.random.default_rng(2)
    z = rng.uniform(-3, 3, size=(40, 3))
    y = np.eye(3)[rng.integers(0, 3, size=40)]
    p = softmax(z)
    np.testing.assert_allclose(label_residual(p, y), p - y, rtol=0, atol=1e-14)


def test_label_residual_avoids_cancellation():
    # p_t within 2e-9 of 1: entries must keep full relative precision
    z = np.array([[20.0, 0.0, 0.0]])
    y = np.array([[1.0, 0.0, 0.0]])
    p = softmax(z)
    res = label_residual(p, y)
    expected_t = -(p[0, 1] + p[0, 2])
    assert res[0, 0] == expected_t
    assert abs(res[0, 0] + res[0, 1] + res[0, 2]) < 1e-24


def test_label_residual_zero_rows_give_zero():
    p = softmax(np.array([[1.0, -1.0], [0.5, 0.5]]))
    labels = np.array([[0.0, 0.0], [1.0, 0.0]])
    res = label_residual(p, labels)
    assert np.array_equal(res[0], np.zeros(2))
    assert np.any(res[1] != 0.0)


def test_label_residual_soft_rows():
    z = np.array([[1.0, -0.5, 0.25]])
    c = np.array([[0.3, 0.7, 0.0]])
    p = softmax(z)
    np.testing.assert_allclose(label_residual(p, c), p - c, atol=1e-14)


def test_softmax_vjp_matches_dense_jacobian():
    rng = np.random.default_rng(3)
    z = rng.normal(size=5)
    g = rng.normal(size=5)
    p = softmax(z)
    jac = np.diag(p) - np.outer(p, p)
    np.testing.assert_allclose(softmax_vjp(p, g), jac.T @ g, atol=1e-14)


def test_validate_one_hot():
    ok = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert validate_one_hot(ok).dtype == np.float64
    with pytest.raises(InvalidInputError):
        validate_one_hot(np.array([[0.5, 0.5]]))
    with pytest.raises(InvalidInputError):
        validate_one_hot(np.array([[1.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        validate_one_hot(np.array([[0.0, 1.0]]), n_classes=3)


def test_validate_rarity():
    r = validate_rarity([0.0, 1.0], 2)
    assert r.shape == (2,)
    with pytest.raises(DomainError):
        validate_rarity([0.0, 1.5], 2)
    with pytest.raises(InvalidInputError):
        validate_rarity([0.0, 1.0, 0.0], 2)
