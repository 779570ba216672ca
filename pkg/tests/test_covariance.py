import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from jlcm.covariance import (batch_factors, batch_log_density, build_factors,
                             random_effects_log_density, sigma_from_factors)
from jlcm.data import CovarianceDesign, ValidationError

from conftest import dense_sigma

coef = st.floats(-3, 3, allow_nan=False)


def test_identity_factors():
    f = build_factors([0.0], [0.0], CovarianceDesign(np.ones(1), np.ones(1)), 2)
    assert np.array_equal(sigma_from_factors(f), np.eye(3))


def test_two_by_two_by_hand():
    # phi = 0.7 on the (2, 1) entry; d^2 = (1, e^0.4) needs per-g variances,
    # so the factors are built directly
    from jlcm.covariance import CholeskyFactors
    T = np.array([[1.0, 0.0], [-0.7, 1.0]])
    f = CholeskyFactors(T=T, log_d2=np.array([0.0, 0.4]))
    expected = np.array([[1.0, 0.7], [0.7, 0.49 + np.exp(0.4)]])
    assert np.allclose(sigma_from_factors(f), expected, atol=1e-14)


def test_log_density_at_zero():
    f = build_factors([0.0], [0.0], CovarianceDesign(np.ones(1), np.ones(1)), 2)
    assert random_effects_log_density(np.zeros(3), f) == pytest.approx(-1.5 * np.log(2 * np.pi))
    assert random_effects_log_density(np.zeros(3), f) == pytest.approx(-2.756815, abs=1e-6)


def test_reference_design_hand_expansion():
    # intercept-only subject of the reference scenario: phi = -0.2, log d^2 = 0.1
    f = build_factors([-0.2, -0.5], [0.1, 0.3], CovarianceDesign(np.array([1.0, 0.0]),
                                                                 np.array([1.0, 0.0])), 2)
    # e = T W = (1, 0.2, 0.2), so sum e^2 = 1.08; the sum of log d^2 is 0.3
    expected = -1.5 * np.log(2 * np.pi) - 0.5 * 0.3 - 0.5 * np.exp(-0.1) * 1.08
    assert random_effects_log_density(np.array([1.0, 0.0, 0.0]), f) == pytest.approx(expected, abs=1e-12)


def test_reference_design_treated_subject():
    # X3 = 1: phi = -0.2 - 0.5 = -0.7 and log d^2 = 0.1 + 0.3 = 0.4
    f = build_factors([-0.2, -0.5], [0.1, 0.3], CovarianceDesign(np.array([1.0, 1.0]),
                                                                 np.array([1.0, 1.0])), 2)
    expected = -1.5 * np.log(2 * np.pi) - 0.5 * (0.4 * 3) - 0.5 * np.exp(-0.4) * (1 + 2 * 0.49)
    assert random_effects_log_density(np.array([1.0, 0.0, 0.0]), f) == pytest.approx(expected, abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValidationError, match="dimension mismatch"):
        build_factors([0.0, 1.0], [0.0], CovarianceDesign(np.ones(1), np.ones(1)), 1)


@given(st.integers(0, 4), st.lists(coef, min_size=2, max_size=2),
       st.lists(coef, min_size=2, max_size=2), st.floats(-2, 2))
def test_spd_and_factorization(q, a1, a2, x):
    design = CovarianceDesign(np.array([1.0, x]), np.array([1.0, x]))
    f = build_factors(a1, a2, design, q)
    S = sigma_from_factors(f)
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() > 0
    scale = np.exp(f.log_d2).max()
    assert np.abs(f.T @ S @ f.T.T - f.D).max() < 1e-10 * max(1.0, scale)
    assert np.allclose(S, dense_sigma(a1, a2, design.A, design.B, q), rtol=1e-10, atol=1e-12)


@given(st.integers(0, 3), st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2),
       st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2), st.integers(0, 2 ** 32 - 1))
def test_density_matches_dense_mvn(q, a1, a2, seed):
    rng = np.random.default_rng(seed)
    design = CovarianceDesign(np.array([1.0, rng.normal()]), np.array([1.0, rng.normal()]))
    f = build_factors(a1, a2, design, q)
    W = rng.normal(size=q + 1)
    ref = stats.multivariate_normal(np.zeros(q + 1), sigma_from_factors(f)).logpdf(W)
    assert abs(random_effects_log_density(W, f) - ref) < 1e-8


def test_homogeneous_design_shares_factors():
    N = 6
    T, log_d2 = batch_factors([0.3], [-0.2], np.ones((N, 1)), np.ones((N, 1)), 2)
    assert all(np.array_equal(T[0], T[i]) and np.array_equal(log_d2[0], log_d2[i]) for i in range(N))


def test_zero_alpha1_gives_diagonal_sigma():
    f = build_factors([0.0, 0.0], [0.2, -0.4], CovarianceDesign(np.array([1.0, 1.0]),
                                                               np.array([1.0, 1.0])), 2)
    S = sigma_from_factors(f)
    assert np.array_equal(S, np.diag(np.diag(S)))


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    N, q = 7, 2
    A = np.column_stack([np.ones(N), rng.normal(size=N)])
    B = np.column_stack([np.ones(N), rng.normal(size=N)])
    W = rng.normal(size=(N, q + 1))
    a1, a2 = rng.normal(size=2), rng.normal(size=2)
    batch = batch_log_density(W, a1, a2, A, B)
    single = [random_effects_log_density(W[i], build_factors(a1, a2, CovarianceDesign(A[i], B[i]), q))
              for i in range(N)]
    assert np.allclose(batch, single, atol=1e-12)
