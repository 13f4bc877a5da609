import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cov3d_prep.categories import POSITIVE_UNKNOWN
from cov3d_prep.loss import (
    DistanceSpec,
    LossConfig,
    batch_loss,
    batch_loss_grad,
    combined_loss,
    combined_loss_grad,
    distance_matrix,
    emd_loss,
    focal_loss,
    gradient_check,
    numeric_grad,
    relative_error,
    softmax,
)

# e / (e + 4) and 1 / (e + 4), evaluated with mpmath at 30 digits
SOFTMAX_P0 = 0.404609675191689664821079432448
SOFTMAX_REST = 0.148847581202077583794730141888

logits = st.lists(st.floats(-8, 8), min_size=5, max_size=5).map(np.array)
labels = st.integers(-1, 4)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax(np.zeros(5)), 0.2, atol=1e-15)


def test_softmax_one_hot_logit():
    p = softmax([1, 0, 0, 0, 0])
    assert p[0] == pytest.approx(SOFTMAX_P0, abs=1e-12)
    np.testing.assert_allclose(p[1:], SOFTMAX_REST, atol=1e-12)


@given(logits, st.floats(-50, 50))
def test_softmax_shift_invariant(z, k):
    np.testing.assert_allclose(softmax(z + k), softmax(z), atol=1e-12)


@given(logits)
def test_softmax_is_distribution(z):
    p = softmax(z)
    assert (p > 0).all()
    assert abs(p.sum() - 1) < 1e-12


def test_softmax_large_logits_stable():
    p = softmax([1000.0, 0, 0, 0, 0])
    assert np.isfinite(p).all() and p[0] == 1.0


# -- focal -------------------------------------------------------------------

def test_focal_perfect():
    assert focal_loss([0, 0, 1, 0, 0], 2, 2.0) == 0.0


def test_focal_gamma_zero_is_cross_entropy():
    p = [0.5, 0.5, 0, 0, 0]
    assert focal_loss(p, 1, 0.0) == pytest.approx(math.log(2), abs=1e-12)


def test_focal_gamma_two():
    p = [0.5, 0.5, 0, 0, 0]
    assert focal_loss(p, 0, 2.0) == pytest.approx(0.25 * math.log(2), abs=1e-12)


def test_focal_positive_unknown():
    p = [0.5, 0.2, 0.1, 0.1, 0.1]
    assert focal_loss(p, POSITIVE_UNKNOWN, 2.0) == pytest.approx(0.25 * math.log(2), abs=1e-12)


def test_focal_clamps_log():
    assert focal_loss([1, 0, 0, 0, 0], 3, 0.0) == pytest.approx(-math.log(1e-12))


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 3))
def test_focal_monotone(a, b, gamma):
    lo, hi = sorted((a, b))
    as_vec = lambda x: [1 - x, x, 0, 0, 0]
    assert focal_loss(as_vec(hi), 1, gamma) <= focal_loss(as_vec(lo), 1, gamma) + 1e-12
    # positive-unknown grows with p0
    assert focal_loss(as_vec(1 - lo), POSITIVE_UNKNOWN, gamma) <= \
        focal_loss(as_vec(1 - hi), POSITIVE_UNKNOWN, gamma) + 1e-12


@given(logits, labels, st.floats(0, 3))
def test_focal_nonnegative(z, y, gamma):
    assert focal_loss(softmax(z), y, gamma) >= 0


# -- distance matrix and EMD -------------------------------------------------

def test_unit_distance_row():
    np.testing.assert_array_equal(distance_matrix(DistanceSpec())[0], [0, 1, 2, 3, 4])


def test_cumulative_distance():
    d = distance_matrix(DistanceSpec((1, 2, 3, 4)))
    assert d[0, 4] == 10
    assert d[1, 3] == 5
    np.testing.assert_array_equal(d, d.T)
    np.testing.assert_array_equal(np.diag(d), 0)


def test_negpos_not_in_matrix():
    d = distance_matrix(DistanceSpec((1, 1, 1, 1), d_negpos=7.0))
    assert d.max() == 4


def test_emd_one_hot_zero():
    for c in range(5):
        assert emd_loss(np.eye(5)[c], c) == 0.0


def test_emd_uniform():
    assert emd_loss(np.full(5, 0.2), 0) == pytest.approx(2.0, abs=1e-12)


def test_emd_positive_unknown():
    assert emd_loss([0.3, 0.7, 0, 0, 0], POSITIVE_UNKNOWN, DistanceSpec(d_negpos=1.0)) == \
        pytest.approx(0.3, abs=1e-15)


@given(st.floats(0, 0.2))
def test_emd_ordinal_dominance(eps):
    p = np.array([0.2, 0.3, 0.2, 0.1, 0.2])
    q = p.copy()
    q[1] -= eps
    q[4] += eps
    assert emd_loss(q, 0) - emd_loss(p, 0) == pytest.approx(3 * eps, abs=1e-12)


@given(logits, labels)
def test_emd_nonnegative(z, y):
    assert emd_loss(softmax(z), y) >= 0


# -- combined ----------------------------------------------------------------

def test_combined_endpoints():
    z = np.array([0.3, -1.0, 2.0, 0.1, 0.0])
    p = softmax(z)
    assert combined_loss(z, 2, LossConfig(1.5, 0.0)) == pytest.approx(focal_loss(p, 2, 1.5), abs=1e-12)
    assert combined_loss(z, 2, LossConfig(1.5, 1.0)) == pytest.approx(emd_loss(p, 2), abs=1e-12)


def test_combined_reference_value():
    value = combined_loss(np.zeros(5), 0, LossConfig(gamma=2.0, lam=0.2))
    expected = 0.8 * (0.8**2 * -math.log(0.2)) + 0.2 * 2.0
    assert value == pytest.approx(expected, abs=1e-12)
    assert value == pytest.approx(1.22403221116625961984, abs=1e-12)


@given(logits, labels, st.floats(0, 1))
def test_combined_linear_in_lambda(z, y, lam):
    f = combined_loss(z, y, LossConfig(2.0, 0.0))
    e = combined_loss(z, y, LossConfig(2.0, 1.0))
    assert combined_loss(z, y, LossConfig(2.0, lam)) == pytest.approx((1 - lam) * f + lam * e,
                                                                     rel=1e-12, abs=1e-12)


def test_invalid_config():
    with pytest.raises(ValueError):
        LossConfig(gamma=-1)
    with pytest.raises(ValueError):
        LossConfig(lam=1.5)
    with pytest.raises(ValueError):
        DistanceSpec((1, -1, 1, 1))


# -- gradient ----------------------------------------------------------------

def test_grad_cross_entropy_identity():
    z = np.array([0.5, -0.2, 1.1, 0.0, -2.0])
    for c in range(5):
        np.testing.assert_allclose(combined_loss_grad(z, c, LossConfig(0.0, 0.0)),
                                   softmax(z) - np.eye(5)[c], atol=1e-14)


@given(logits, labels, st.floats(0, 3), st.floats(0, 1))
def test_grad_matches_finite_differences(z, y, gamma, lam):
    cfg = LossConfig(gamma, lam, DistanceSpec((0.5, 1.0, 1.5, 2.0), 0.7))
    analytic = combined_loss_grad(z, y, cfg)
    numeric = numeric_grad(z, y, cfg)
    # near-saturated softmax makes the loss flat; compare absolutely there
    assert relative_error(analytic, numeric, floor=1e-4) < 1e-5


@given(logits, st.integers(0, 4), st.floats(0, 3), st.floats(0, 1))
def test_grad_descends_on_true_logit(z, c, gamma, lam):
    assert combined_loss_grad(z, c, LossConfig(gamma, lam))[c] <= 1e-12


def test_grad_sums_to_zero():
    rng = np.random.default_rng(2)
    for _ in range(50):
        z = rng.normal(size=5)
        y = int(rng.integers(-1, 5))
        assert abs(combined_loss_grad(z, y, LossConfig(1.3, 0.4)).sum()) < 1e-12


def test_gradient_check_report():
    report = gradient_check(200, seed=7)
    assert report.passed and report.max_error < 1e-5


def test_generic_class_count():
    cfg = LossConfig(2.0, 0.3, DistanceSpec((1.0, 2.0)))
    z = np.array([0.1, -0.4, 0.9])
    for y in (-1, 0, 1, 2):
        assert relative_error(combined_loss_grad(z, y, cfg), numeric_grad(z, y, cfg)) < 1e-5


def test_batch_mean():
    z = np.array([[0.1, 0.2, 0.3, 0.4, 0.5], [1.0, 0.0, -1.0, 0.0, 0.0]])
    ys = [3, POSITIVE_UNKNOWN]
    cfg = LossConfig()
    assert batch_loss(z, ys, cfg) == pytest.approx(
        (combined_loss(z[0], 3, cfg) + combined_loss(z[1], -1, cfg)) / 2)
    np.testing.assert_allclose(batch_loss_grad(z, ys, cfg)[1], combined_loss_grad(z[1], -1, cfg) / 2)


def test_label_out_of_range():
    with pytest.raises(ValueError):
        combined_loss(np.zeros(5), 5)
