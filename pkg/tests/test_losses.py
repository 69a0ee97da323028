"""Loss values against frozen references, reductions, identities, conventions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imbaseg import (
    DomainError,
    InvalidInputError,
    LossConfig,
    ce_loss,
    combined_ce_loss,
    combined_dsc_loss,
    dsc_loss,
    evaluate_loss,
    fbeta_loss,
    focal_ce_loss,
    focal_dsc_loss,
    focal_weight,
    label_residual,
    margin_ce_loss,
    margin_dsc_loss,
    margin_weight,
    softmax,
)
from helpers import max_rel_err, random_logits, random_one_hot

# independently computed to 40 digits
CE_2_0 = 0.1269280110429725
MARGIN_CE_2_0_M1 = 0.3132616875182228
MARGIN_W_2_0_M1 = 2.2561646711990355
FOCAL_G2_2_0 = 0.0018035628352403754
FOCAL_W_G2 = 0.04086259055368614
P_TRUE_2_0 = 0.8807970779778824

Z1 = np.array([[2.0, 0.0]])
Y1 = np.array([[1.0, 0.0]])


# ---------------------------------------------------------------------------
# frozen single-pixel values


def test_ce_frozen():
    value, grad = ce_loss(Z1, Y1)
    assert value.total == pytest.approx(CE_2_0, abs=1e-15)
    np.testing.assert_allclose(
        grad, [[-0.1192029220221176, 0.1192029220221176]], atol=1e-15
    )


def test_margin_ce_frozen():
    value, grad = margin_ce_loss(Z1, Y1, 1.0)
    assert value.total == pytest.approx(MARGIN_CE_2_0_M1, abs=1e-15)
    np.testing.assert_allclose(
        grad, [[-0.2689414213699951, 0.2689414213699951]], atol=1e-15
    )


def test_margin_weight_frozen():
    w = margin_weight(Z1, Y1, 1.0)
    assert w[0] == pytest.approx(MARGIN_W_2_0_M1, abs=1e-14)


def test_focal_ce_frozen():
    value, _ = focal_ce_loss(Z1, Y1, 2.0)
    assert value.total == pytest.approx(FOCAL_G2_2_0, abs=1e-16)


def test_focal_weight_frozen():
    assert focal_weight(P_TRUE_2_0, 2.0) == pytest.approx(FOCAL_W_G2, abs=1e-15)


def test_dsc_frozen_all_foreground():
    # four pixels, all labeled class 1, predicted 0.8: fg term 0.2/1.8, bg term ~1
    p = np.tile([0.2, 0.8], (4, 1))
    y = np.tile([0.0, 1.0], (4, 1))
    value, _ = dsc_loss(p, y, eps=1e-12)
    assert value.per_class[1] == pytest.approx(0.2 / 1.8, abs=1e-12)
    assert value.per_class[0] == pytest.approx(1.0, abs=1e-11)


def test_focal_dsc_frozen_all_foreground():
    p = np.tile([0.2, 0.8], (4, 1))
    y = np.tile([0.0, 1.0], (4, 1))
    value, _ = focal_dsc_loss(p, y, 2.0, eps=1e-12)
    assert value.per_class[1] == pytest.approx(0.008 / 1.8, abs=1e-12)


def test_fbeta_frozen_counts():
    # soft counts TP=2, FP=1, FN=1 for the foreground class, beta=2 -> 1/3
    p = np.array([[1 / 3, 2 / 3], [1 / 3, 2 / 3], [1 / 3, 2 / 3], [0.0, 1.0]])
    y = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    value, _ = fbeta_loss(p, y, beta=2.0, eps=1e-12)
    assert value.per_class[1] == pytest.approx(1.0 / 3.0, abs=1e-12)


# ---------------------------------------------------------------------------
# reduction lattice


@pytest.fixture
def field():
    rng = np.random.default_rng(7)
    z = random_logits(rng, (30,), 3)
    y = random_one_hot(rng, (30,), 3)
    return z, y


def test_margin_zero_reduces_to_ce(field):
    z, y = field
    v0, g0 = ce_loss(z, y)
    v1, g1 = margin_ce_loss(z, y, 0.0)
    assert v1.total == v0.total
    assert np.array_equal(g1, g0)


def test_focal_zero_gamma_reduces_to_ce(field):
    z, y = field
    v0, g0 = ce_loss(z, y)
    v1, g1 = focal_ce_loss(z, y, 0.0)
    assert v1.total == pytest.approx(v0.total, abs=1e-14)
    np.testing.assert_allclose(g1, g0, atol=1e-15)


def test_combined_degenerate_reduces_to_ce(field):
    z, y = field
    v0, g0 = ce_loss(z, y)
    v1, g1 = combined_ce_loss(z, y, 0.0, 0.0)
    assert v1.total == pytest.approx(v0.total, abs=1e-14)
    np.testing.assert_allclose(g1, g0, atol=1e-15)


def test_rarity_ones_margin_is_symmetric(field):
    z, y = field
    v0, g0 = margin_ce_loss(z, y, 1.5)
    v1, g1 = margin_ce_loss(z, y, 1.5, r=np.ones(3))
    assert v1.total == v0.total
    assert np.array_equal(g1, g0)


def test_rarity_zeros_margin_is_ce(field):
    z, y = field
    v0, g0 = ce_loss(z, y)
    v1, g1 = margin_ce_loss(z, y, 1.5, r=np.zeros(3))
    assert v1.total == v0.total
    assert np.array_equal(g1, g0)


def test_rarity_ones_focal_is_ce(field):
    z, y = field
    v0, g0 = ce_loss(z, y)
    v1, g1 = focal_ce_loss(z, y, 3.0, r=np.ones(3))
    assert v1.total == pytest.approx(v0.total, abs=1e-13)
    np.testing.assert_allclose(g1, g0, atol=1e-14)


def test_rarity_zeros_focal_is_symmetric(field):
    z, y = field
    v0, g0 = focal_ce_loss(z, y, 3.0)
    v1, g1 = focal_ce_loss(z, y, 3.0, r=np.zeros(3))
    assert v1.total == v0.total
    assert np.array_equal(g1, g0)


def test_combined_margin_only_matches_margin(field):
    z, y = field
    r = np.array([1.0, 0.0, 1.0])
    v0, g0 = margin_ce_loss(z, y, 2.0, r=r)
    v1, g1 = combined_ce_loss(z, y, 2.0, 0.0, r=r)
    assert v1.total == pytest.approx(v0.total, abs=1e-13)
    np.testing.assert_allclose(g1, g0, atol=1e-14)


def test_combined_focal_only_matches_focal(field):
    z, y = field
    r = np.array([0.0, 1.0, 0.5])
    v0, g0 = focal_ce_loss(z, y, 2.0, r=r)
    v1, g1 = combined_ce_loss(z, y, 0.0, 2.0, r=r)
    assert v1.total == pytest.approx(v0.total, abs=1e-13)
    np.testing.assert_allclose(g1, g0, atol=1e-14)


def test_focal_dsc_zero_gamma_reduces_to_dsc(field):
    z, y = field
    p = softmax(z)
    v0, g0 = dsc_loss(p, y)
    v1, g1 = focal_dsc_loss(p, y, 0.0)
    assert v1.total == v0.total
    assert np.array_equal(g1, g0)


def test_fbeta_one_is_dsc(field):
    z, y = field
    p = softmax(z)
    v0, g0 = dsc_loss(p, y)
    v1, g1 = fbeta_loss(p, y, beta=1.0)
    assert v1.total == pytest.approx(v0.total, rel=1e-12)
    np.testing.assert_allclose(g1, g0, rtol=1e-12, atol=1e-15)


def test_margin_dsc_zero_margin_is_dsc(field):
    z, y = field
    v0, g0 = dsc_loss(softmax(z), y)
    v1, g1 = margin_dsc_loss(z, y, 0.0)
    assert v1.total == v0.total


def test_combined_dsc_degenerate_is_dsc(field):
    z, y = field
    v0, _ = dsc_loss(softmax(z), y)
    v1, _ = combined_dsc_loss(z, y, 0.0, 0.0)
    assert v1.total == pytest.approx(v0.total, abs=1e-14)


# ---------------------------------------------------------------------------
# re-weighting identities


def test_margin_gradient_identity():
    rng = np.random.default_rng(11)
    for c in (2, 3, 5):
        z = rng.uniform(-10, 10, size=(200, c))
        y = random_one_hot(rng, (200,), c)
        m = float(rng.uniform(0, 5))
        _, grad = margin_ce_loss(z, y, m)
        w = margin_weight(z, y, m)
        p = softmax(z)
        ref = w[:, None] * label_residual(p, y) / z.shape[0]
        assert max_rel_err(grad, ref) < 1e-10


def test_focal_gradient_identity():
    rng = np.random.default_rng(12)
    z = rng.uniform(-10, 10, size=(200, 3))
    y = random_one_hot(rng, (200,), 3)
    gamma = 2.5
    _, grad = focal_ce_loss(z, y, gamma)
    p = softmax(z)
    p_t = np.sum(p * y, axis=-1)
    ref = focal_weight(p_t, gamma)[:, None] * label_residual(p, y) / z.shape[0]
    assert max_rel_err(grad, ref) < 1e-10


# ---------------------------------------------------------------------------
# finite differences, including soft and masked rows


def _fd_check(loss_fn, x, tol=2e-6, h=1e-6):
    from helpers import fd_grad

    _, grad = loss_fn(x)
    num = fd_grad(lambda v: loss_fn(v)[0].total, x, h=h)
    assert max_rel_err(grad, num) < tol


def _mixed_labels(rng, n, c):
    """One-hot rows, soft mixture rows, and a couple of masked rows."""
    y = random_one_hot(rng, (n,), c)
    lam = 0.35
    y[1] = lam * np.eye(c)[0] + (1 - lam) * np.eye(c)[1]
    y[3] = lam * np.eye(c)[2] + (1 - lam) * np.eye(c)[0]
    y[5] = 0.0
    return y


@pytest.mark.parametrize(
    "make",
    [
        lambda z, y: ce_loss(z, y),
        lambda z, y: margin_ce_loss(z, y, 1.3),
        lambda z, y: margin_ce_loss(z, y, 0.8, r=np.array([0.0, 1.0, 0.4])),
        lambda z, y: focal_ce_loss(z, y, 2.0),
        lambda z, y: focal_ce_loss(z, y, 3.5, r=np.array([0.0, 1.0, 0.4])),
        lambda z, y: combined_ce_loss(z, y, 1.0, 2.0, r=np.array([0.0, 1.0, 0.4])),
        lambda z, y: combined_ce_loss(z, y, 1.0, 2.0),
        lambda z, y: margin_dsc_loss(z, y, 1.1),
        lambda z, y: margin_dsc_loss(z, y, 1.1, r=np.array([0.0, 1.0, 0.4])),
        lambda z, y: combined_dsc_loss(z, y, 0.9, 2.0, r=np.array([0.0, 1.0, 0.4])),
    ],
)
def test_logit_losses_match_finite_differences(make):
    rng = np.random.default_rng(13)
    z = random_logits(rng, (8,), 3, scale=2.5)
    y = _mixed_labels(rng, 8, 3)
    _fd_check(lambda v: make(v, y), z)


@pytest.mark.parametrize(
    "make",
    [
        lambda p, y: dsc_loss(p, y),
        lambda p, y: focal_dsc_loss(p, y, 2.0),
        lambda p, y: focal_dsc_loss(p, y, 2.0, r=np.array([0.0, 1.0, 0.4])),
        lambda p, y: fbeta_loss(p, y, beta=2.0),
    ],
)
def test_prob_losses_match_finite_differences(make):
    rng = np.random.default_rng(14)
    p = rng.uniform(0.05, 0.95, size=(8, 3))
    y = _mixed_labels(rng, 8, 3)
    _fd_check(lambda v: make(v, y), p)


# ---------------------------------------------------------------------------
# conventions


def test_dsc_absent_class_zero_mass_is_zero():
    p = np.array([[1.0, 0.0], [1.0, 0.0]])
    y = np.array([[1.0, 0.0], [1.0, 0.0]])
    value, _ = dsc_loss(p, y)
    assert value.per_class[1] == 0.0


def test_dsc_epsilon_only_in_denominator():
    # perfect hard prediction: numerator exactly zero regardless of epsilon
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    value, _ = dsc_loss(p, y, eps=1e-2)
    assert value.total == 0.0


def test_masked_rows_do_not_change_counts():
    rng = np.random.default_rng(15)
    p = rng.uniform(0.1, 0.9, size=(6, 2))
    y = random_one_hot(rng, (6,), 2)
    p2 = np.concatenate([p, rng.uniform(0.1, 0.9, size=(3, 2))])
    y2 = np.concatenate([y, np.zeros((3, 2))])
    v1, _ = dsc_loss(p, y)
    v2, g2 = dsc_loss(p2, y2)
    assert v1.total == v2.total
    assert np.array_equal(g2[6:], np.zeros((3, 2)))


def test_masked_rows_ce_mean_over_active_only():
    rng = np.random.default_rng(16)
    z = random_logits(rng, (5,), 2)
    y = random_one_hot(rng, (5,), 2)
    z2 = np.concatenate([z, random_logits(rng, (4,), 2)])
    y2 = np.concatenate([y, np.zeros((4, 2))])
    v1, g1 = ce_loss(z, y)
    v2, g2 = ce_loss(z2, y2)
    assert v2.total == pytest.approx(v1.total, abs=1e-14)
    np.testing.assert_allclose(g2[:5], g1, atol=1e-15)
    assert np.array_equal(g2[5:], np.zeros((4, 2)))


def test_ce_mean_invariant_to_duplication():
    rng = np.random.default_rng(17)
    z = random_logits(rng, (10,), 2)
    y = random_one_hot(rng, (10,), 2)
    v1, _ = ce_loss(z, y)
    v2, _ = ce_loss(np.concatenate([z, z]), np.concatenate([y, y]))
    assert v2.total == pytest.approx(v1.total, abs=1e-13)


def test_per_class_sums_to_total(field):
    z, y = field
    for value, _ in (
        ce_loss(z, y),
        focal_ce_loss(z, y, 2.0),
        dsc_loss(softmax(z), y),
        fbeta_loss(softmax(z), y, 2.0),
    ):
        assert value.total == pytest.approx(float(value.per_class.sum()), rel=1e-12)


def test_multidimensional_fields_match_flat(field):
    z, y = field
    v1, g1 = ce_loss(z, y)
    v2, g2 = ce_loss(z.reshape(5, 6, 3), y.reshape(5, 6, 3))
    assert v1.total == v2.total
    assert np.array_equal(g1, g2.reshape(30, 3))


# ---------------------------------------------------------------------------
# domain and input errors


def test_domain_errors():
    with pytest.raises(DomainError):
        margin_ce_loss(Z1, Y1, -1.0)
    with pytest.raises(DomainError):
        focal_ce_loss(Z1, Y1, -0.5)
    with pytest.raises(DomainError):
        fbeta_loss(np.array([[0.5, 0.5]]), Y1, beta=0.0)
    with pytest.raises(DomainError):
        dsc_loss(np.array([[0.5, 0.5]]), Y1, eps=0.0)
    with pytest.raises(DomainError):
        focal_weight(1.0, 2.0)
    with pytest.raises(DomainError):
        focal_weight(0.0, 2.0)
    with pytest.raises(DomainError):
        margin_weight(Z1, Y1, -0.1)


def test_input_errors():
    with pytest.raises(InvalidInputError):
        ce_loss(np.array([[1.0, 2.0]]), np.array([[1.0, 0.0, 0.0]]))
    with pytest.raises(InvalidInputError):
        dsc_loss(np.array([[1.5, -0.5]]), Y1)
    with pytest.raises(InvalidInputError):
        ce_loss(np.array([[np.nan, 0.0]]), Y1)


def test_loss_config_validation():
    with pytest.raises(DomainError):
        LossConfig(kind="nope")
    with pytest.raises(DomainError):
        LossConfig(kind="marginCE", m=-1.0)
    with pytest.raises(DomainError):
        LossConfig(kind="focalCE", asymmetric=True)
    cfg = LossConfig(kind="focalCE", gamma=2.0, asymmetric=True, r=[0.0, 1.0])
    assert cfg.r.dtype == np.float64


def test_evaluate_loss_dispatch_matches_direct(field):
    z, y = field
    r = np.array([0.0, 1.0, 0.3])
    cases = [
        (LossConfig(kind="CE"), ce_loss(z, y)),
        (LossConfig(kind="marginCE", m=1.0), margin_ce_loss(z, y, 1.0)),
        (
            LossConfig(kind="focalCE", gamma=2.0, asymmetric=True, r=r),
            focal_ce_loss(z, y, 2.0, r=r),
        ),
        (
            LossConfig(kind="combinedCE", m=1.0, gamma=2.0, asymmetric=True, r=r),
            combined_ce_loss(z, y, 1.0, 2.0, r=r),
        ),
        (LossConfig(kind="fbeta", beta=2.0), None),
    ]
    for cfg, direct in cases:
        value, grad = evaluate_loss(cfg, z, y)
        if direct is not None:
            assert value.total == direct[0].total
            assert np.array_equal(grad, direct[1])
        assert grad.shape == z.shape


def test_evaluate_loss_prob_family_chains_to_logits(field):
    z, y = field
    z, y = z[:6], y[:6]
    cfg = LossConfig(kind="DSC")
    _, grad = evaluate_loss(cfg, z, y)
    from helpers import fd_grad

    num = fd_grad(lambda v: evaluate_loss(cfg, v, y)[0].total, z, h=1e-6)
    assert max_rel_err(grad, num) < 2e-6


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 6.0), st.floats(0.0, 4.0))
def test_losses_are_non_negative(seed, gamma, m):
    rng = np.random.default_rng(seed)
    z = random_logits(rng, (12,), 3, scale=6.0)
    y = random_one_hot(rng, (12,), 3)
    r = rng.uniform(0, 1, size=3)
    assert ce_loss(z, y)[0].total >= 0.0
    assert margin_ce_loss(z, y, m, r=r)[0].total >= 0.0
    assert focal_ce_loss(z, y, gamma, r=r)[0].total >= 0.0
    assert combined_ce_loss(z, y, m, gamma, r=r)[0].total >= 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 6.0))
def test_overlap_terms_in_unit_interval(seed, gamma):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, size=(12, 3))
    y = random_one_hot(rng, (12,), 3)
    for value in (
        dsc_loss(p, y)[0],
        focal_dsc_loss(p, y, gamma)[0],
        fbeta_loss(p, y, 2.0)[0],
    ):
        assert np.all(value.per_class >= 0.0)
        assert np.all(value.per_class < 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_margin_increases_loss(seed):
    # enlarging the margin can only make the shifted CE larger
    rng = np.random.default_rng(seed)
    z = random_logits(rng, (10,), 2)
    y = random_one_hot(rng, (10,), 2)
    v0 = margin_ce_loss(z, y, 0.5)[0].total
    v1 = margin_ce_loss(z, y, 1.5)[0].total
    assert v1 >= v0 - 1e-12
