import numpy as np
import pytest

from transridge.ridge import (CoefficientSet, EigenStudy, StudyData, aggregate, ridge_estimate,
                              sample_covariance)


def test_sample_covariance_identity():
    np.testing.assert_array_equal(sample_covariance(np.eye(2)), 0.5 * np.eye(2))


def test_sample_covariance_duplicate_column(rng):
    X = rng.standard_normal((30, 4))
    X[:, 3] = X[:, 1]
    S = sample_covariance(X)
    np.testing.assert_array_equal(S[1], S[3])
    assert np.linalg.matrix_rank(S) == 3


def test_sample_covariance_concentration(rng):
    X = rng.standard_normal((200, 50))
    err = np.linalg.norm(sample_covariance(X) - np.eye(50), 2)
    assert err < 3 * (np.sqrt(50 / 200) + 50 / 200)


def test_sample_covariance_symmetric_psd(rng):
    S = sample_covariance(rng.standard_normal((20, 60)))
    assert np.array_equal(S, S.T)
    assert np.linalg.eigvalsh(S)[0] >= -1e-10 * np.linalg.norm(S, 2)


def test_sample_covariance_rejects_empty():
    with pytest.raises(ValueError):
        sample_covariance(np.zeros((0, 3)))


def test_ridge_scalar():
    assert ridge_estimate(StudyData(X=[[1.0]], Y=[2.0]), 1.0)[0] == pytest.approx(1.0)


def test_ridge_heavy_shrinkage(rng):
    d = StudyData(X=rng.standard_normal((20, 5)), Y=rng.standard_normal(20))
    b = ridge_estimate(d, 1e8)
    assert np.linalg.norm(b) <= np.linalg.norm(d.X.T @ d.Y / d.n) / 1e8


def test_ridge_matches_dense_solve(rng):
    d = StudyData(X=rng.standard_normal((100, 20)), Y=rng.standard_normal(100))
    lam = 0.3
    ref = np.linalg.solve(d.X.T @ d.X / 100 + lam * np.eye(20), d.X.T @ d.Y / 100)
    np.testing.assert_allclose(ridge_estimate(d, lam), ref, rtol=1e-10)


def test_ridge_is_the_minimiser(rng):
    d = StudyData(X=rng.standard_normal((40, 10)), Y=rng.standard_normal(40))
    lam = 0.5
    b = ridge_estimate(d, lam)

    def obj(c):
        r = d.Y - d.X @ c
        return r @ r / d.n + lam * c @ c

    base = obj(b)
    for _ in range(100):
        assert obj(b + 1e-3 * rng.standard_normal(10)) >= base - 1e-12


@pytest.mark.parametrize("lam", [0.0, -1.0, np.inf, np.nan])
def test_ridge_rejects_bad_penalty(lam):
    with pytest.raises(ValueError):
        ridge_estimate(StudyData(X=[[1.0]], Y=[1.0]), lam)


def test_study_data_validation():
    with pytest.raises(ValueError):
        StudyData(X=np.ones((3, 2)), Y=np.ones(2))
    with pytest.raises(ValueError):
        StudyData(X=[[np.nan]], Y=[1.0])
    with pytest.raises(ValueError):
        StudyData(X=np.ones(3), Y=np.ones(3))
    d = StudyData(X=np.ones((4, 8)), Y=np.ones(4))
    assert (d.n, d.p, d.gamma) == (4, 8, 2.0)


def test_aggregate_examples(rng):
    B = rng.standard_normal((6, 3))
    cs = CoefficientSet(B, [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(aggregate(cs, [0, 0, 1]), B[:, 2])
    np.testing.assert_array_equal(aggregate(cs, [0, 0, 0]), np.zeros(6))
    b = rng.standard_normal(6)
    np.testing.assert_allclose(aggregate(CoefficientSet(np.column_stack([b, b]), [1, 2]), [0.5, 0.5]), b)
    with pytest.raises(ValueError):
        aggregate(cs, [1.0, 2.0])


def test_coefficient_set_validation():
    with pytest.raises(ValueError):
        CoefficientSet(np.ones((3, 2)), [1.0])
    with pytest.raises(ValueError):
        CoefficientSet(np.full((3, 1), np.inf), [1.0])


def test_eigen_study_agrees_with_direct(rng):
    d = StudyData(X=rng.standard_normal((30, 12)), Y=rng.standard_normal(30))
    e = EigenStudy.from_study(d)
    for lam in (0.1, 2.0):
        np.testing.assert_allclose(e.ridge(lam), ridge_estimate(d, lam), rtol=1e-10)
        S = sample_covariance(d.X)
        v = rng.standard_normal(12)
        Rinv = np.linalg.inv(S + lam * np.eye(12))
        np.testing.assert_allclose(e.shrink(v, lam), Rinv @ S @ v, rtol=1e-9, atol=1e-12)
        assert e.noise_trace(lam) == pytest.approx(np.trace(Rinv @ S @ Rinv) / 30, rel=1e-10)
    with pytest.raises(ValueError):
        EigenStudy.from_design(d.X).ridge(1.0)
