import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transridge.errors import SingularSystemError
from transridge.estimation import (HyperParams, QuadraticRiskSystem, asymptotic_estimation_system,
                                   closed_form_identity_risk, closed_form_identity_weights,
                                   common_rho, default_lambda, equal_weights,
                                   estimation_risk_upper_bound, finite_sample_estimation_system,
                                   heritability_from_snr, snr_from_heritability,
                                   solve_optimal_weights)
from transridge.ridge import StudyData
from transridge.spectral import CrossTermMode, mp_identity_summary

SCALAR = StudyData(X=[[1.0]], Y=[2.0])


def test_scalar_system():
    s = finite_sample_estimation_system([SCALAR], [[2.0]], 1.0, 1.0)
    assert s.linvec[0] == pytest.approx(2.0)
    assert s.matrix[0, 0] == pytest.approx(1.0 + 0.25)
    assert s.base == 4.0
    sol = solve_optimal_weights(s)
    assert sol.W[0] == pytest.approx(1.6, abs=1e-12)
    assert sol.risk == pytest.approx(0.8, abs=1e-12)


def test_scalar_grid_minimum():
    s = finite_sample_estimation_system([SCALAR], [[2.0]], 1.0, 1.0)
    grid = np.linspace(0, 3, 30001)
    assert grid[np.argmin(s.risk(grid[:, None]))] == pytest.approx(1.6, abs=1e-4)


def test_total_shrinkage(rng):
    d = StudyData(X=rng.standard_normal((10, 4)), Y=rng.standard_normal(10))
    beta = rng.standard_normal((4, 1))
    systems = [finite_sample_estimation_system([d], beta, 1.0, lam) for lam in (1e6, 1e8)]
    assert abs(systems[1].linvec[0]) < 1e-6 and systems[1].matrix[0, 0] < 1e-12
    # the optimal weight grows like lam, undoing the shrinkage; the risk stays put
    sols = [solve_optimal_weights(s) for s in systems]
    assert sols[1].W[0] / 1e8 == pytest.approx(sols[0].W[0] / 1e6, rel=1e-3)
    assert sols[1].risk == pytest.approx(sols[0].risk, rel=1e-3)


def test_exchangeable_structure(rng):
    d = StudyData(X=rng.standard_normal((15, 5)), Y=rng.standard_normal(15))
    b = rng.standard_normal(5)
    s = finite_sample_estimation_system([d, d], np.column_stack([b, b]), 1.0, 0.5)
    A = s.matrix - np.diag(np.diag(s.matrix)) + np.diag(np.diag(s.matrix) - s.matrix[0, 0] + s.matrix[0, 1])
    assert s.matrix[0, 0] == pytest.approx(s.matrix[1, 1])
    assert s.linvec[0] == pytest.approx(s.linvec[1])
    assert np.ptp(A) < 1e-12


def test_finite_system_validation(rng):
    d = StudyData(X=rng.standard_normal((10, 4)), Y=rng.standard_normal(10))
    with pytest.raises(ValueError):
        finite_sample_estimation_system([d], rng.standard_normal((3, 1)), 1.0, 1.0)
    with pytest.raises(ValueError):
        finite_sample_estimation_system([d], rng.standard_normal((4, 1)), 1.0, -1.0)
    with pytest.raises(ValueError):
        finite_sample_estimation_system([d, d], rng.standard_normal((4, 1)), 1.0, 1.0)


def test_solve_identity_system():
    sol = solve_optimal_weights(QuadraticRiskSystem(np.eye(3), [1, 0, 0], 1.0))
    np.testing.assert_allclose(sol.W, [1, 0, 0])
    assert sol.risk == pytest.approx(0.0)


def test_solve_zero_signal():
    sol = solve_optimal_weights(QuadraticRiskSystem(np.eye(2), [0, 0], 3.0))
    np.testing.assert_array_equal(sol.W, 0)
    assert sol.risk == 3.0


def test_solve_regularises_near_singular():
    sol = solve_optimal_weights(QuadraticRiskSystem(np.ones((2, 2)), [1.0, 1.0], 2.0))
    assert sol.regularized
    assert sol.W[0] == pytest.approx(sol.W[1])


def test_solve_rejects_indefinite():
    with pytest.raises(SingularSystemError):
        solve_optimal_weights(QuadraticRiskSystem(np.diag([1.0, -5.0]), [1.0, 1.0], 1.0))
    with pytest.raises(SingularSystemError):
        solve_optimal_weights(QuadraticRiskSystem(-np.eye(2), [1.0, 1.0], 1.0))


def test_system_must_be_symmetric():
    with pytest.raises(ValueError):
        QuadraticRiskSystem(np.array([[1.0, 2.0], [0.0, 1.0]]), [1.0, 1.0], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_solution_is_argmin(K, seed):
    r = np.random.default_rng(seed)
    B = r.standard_normal((K, K + 2))
    s = QuadraticRiskSystem(B @ B.T + 0.05 * np.eye(K), r.standard_normal(K), 50.0)
    sol = solve_optimal_weights(s)
    W = sol.W + r.standard_normal((1000, K))
    assert np.all(s.risk(W) >= sol.risk - 1e-9)
    assert sol.risk == pytest.approx(s.base - s.linvec @ sol.W)


def test_hyper_validation():
    with pytest.raises(ValueError):
        HyperParams.from_snr(1.0, 1.0, [[1.0, 2.0], [2.0, 1.0]], 1.0)
    with pytest.raises(ValueError):
        HyperParams.from_snr(1.0, 1.0, [[1.0, 0.3], [0.2, 1.0]], 1.0)
    with pytest.raises(ValueError):
        HyperParams.from_snr(1.0, 1.0, [[0.9, 0.3], [0.3, 1.0]], 1.0)
    R = np.array([[1, 0.9, -0.9], [0.9, 1, 0.9], [-0.9, 0.9, 1]])
    with pytest.raises(ValueError):
        HyperParams.from_snr(1.0, 1.0, R, 1.0)
    h = HyperParams.from_snr([1.0, 2.0], 0.5, common_rho(0.4, 2), [0.5, 1.0])
    np.testing.assert_allclose(h.lam, default_lambda([0.5, 1.0], [1.0, 2.0]))
    assert h.K == 2


def _identity_hyper(rho, K=6, gamma=1.0, alpha2=1.0):
    return HyperParams.from_snr(alpha2, 1.0, common_rho(rho, K), gamma)


def test_uncorrelated_sources_get_zero_weight():
    s = mp_identity_summary(1.0, 1.0)
    R = common_rho(0.0, 4)
    R[0, 1] = R[1, 0] = 0.7  # sources correlated with each other only
    h = HyperParams.from_snr(1.0, 1.0, R, 1.0)
    sol = solve_optimal_weights(asymptotic_estimation_system(h, [s] * 4, identity_cov=True))
    np.testing.assert_allclose(sol.W, [0, 0, 0, 1], atol=1e-12)


def test_fully_correlated_equal_weights():
    s = mp_identity_summary(1.0, 1.0)
    sol = solve_optimal_weights(asymptotic_estimation_system(_identity_hyper(1.0), [s] * 6))
    assert np.ptp(sol.W) < 1e-6
    assert sol.W.sum() > 1


def test_asymptotic_vs_finite_sample():
    # beta-averaged finite system is close to the limit at moderate p
    from transridge.simulation import SimConfig, generate_multistudy
    cfg = SimConfig.build(400, [400, 300, 200], rho=0.5, replicates=1)
    ds = generate_multistudy(cfg, 0)
    fin = solve_optimal_weights(finite_sample_estimation_system(ds.studies, ds.betas, 1.0, cfg.hyper.lam))
    summ = [mp_identity_summary(g, l) for g, l in zip(cfg.hyper.gamma, cfg.hyper.lam)]
    lim = solve_optimal_weights(asymptotic_estimation_system(cfg.hyper, summ, identity_cov=True))
    np.testing.assert_allclose(fin.W, lim.W, atol=0.15)


def test_summary_mismatch_rejected():
    h = _identity_hyper(0.5, K=2)
    with pytest.raises(ValueError):
        asymptotic_estimation_system(h, [mp_identity_summary(1.0, 2.0)] * 2)
    with pytest.raises(ValueError):
        asymptotic_estimation_system(h, [mp_identity_summary(1.0, 1.0)])


def test_identity_pipeline_vs_equal_design_mode():
    # with shared (gamma, lam) under Sigma = I the equal-design cross term gives the same limit
    s = mp_identity_summary(1.0, 1.0)
    h = _identity_hyper(0.5)
    a = solve_optimal_weights(asymptotic_estimation_system(h, [s] * 6, mode=CrossTermMode.EQUAL_DESIGN))
    b = solve_optimal_weights(asymptotic_estimation_system(h, [s] * 6, mode=CrossTermMode.IDENTITY_COV))
    assert a.risk == pytest.approx(b.risk, rel=1e-10)


def test_closed_form_weights_match_pipeline():
    for rho in (0.2, 0.5, 0.9):
        for g, a2 in ((1.0, 1.0), (0.5, 2.0), (1.5, 0.5)):
            wt, ws, _ = closed_form_identity_weights(rho, 6, g, a2)
            s = mp_identity_summary(g, g / a2)
            sol = solve_optimal_weights(asymptotic_estimation_system(
                HyperParams.from_snr(a2, 1.0, common_rho(rho, 6), g), [s] * 6, identity_cov=True))
            np.testing.assert_allclose(sol.W, [ws] * 5 + [wt], rtol=1e-10)


def test_closed_form_ratio_and_derivative():
    wt, ws, d = closed_form_identity_weights(0.5, 6, 1.0, 1.0)
    assert wt / ws >= 1
    assert d < 0
    wt, ws, _ = closed_form_identity_weights(1.0, 6, 1.0, 1.0)
    assert wt == pytest.approx(ws)
    assert 6 * ws > 1
    h = 1e-6
    r = lambda x: np.divide(*closed_form_identity_weights(x, 6, 1.0, 1.0)[:2])
    assert (r(0.5 + h) - r(0.5 - h)) / (2 * h) == pytest.approx(d, rel=1e-6)


def test_uncorrected_weight_ratio_agrees():
    for rho in (0.3, 0.7):
        a = closed_form_identity_weights(rho, 6, 1.0, 1.0)
        b = closed_form_identity_weights(rho, 6, 1.0, 1.0, printed=True)
        assert a[0] / a[1] == pytest.approx(b[0] / b[1], rel=1e-12)
        assert b[2] < 0


def test_closed_form_rejects_rho_zero():
    with pytest.raises(ValueError):
        closed_form_identity_weights(0.0, 6, 1.0, 1.0)
    with pytest.raises(ValueError):
        closed_form_identity_risk(1.5, 6, 1.0, 1.0)


def test_closed_form_risk_limits():
    g, a2 = 1.0, 1.0
    m = mp_identity_summary(g, g / a2).m
    assert closed_form_identity_risk(1e-8, 6, g, a2) == pytest.approx(g * m, rel=1e-6)
    for rho in (0.2, 0.8):
        assert closed_form_identity_risk(rho, 1, g, a2) == pytest.approx(g * m, rel=1e-12)


def test_upper_bound_basic():
    s = mp_identity_summary(1.0, 1.0)
    R = common_rho(0.0, 6)
    b = estimation_risk_upper_bound(HyperParams.from_snr(1.0, 1.0, R, 1.0), s)
    assert np.isfinite(b) and b <= 1.0
    assert b >= closed_form_identity_risk(1e-8, 6, 1.0, 1.0) - 1e-9


def test_upper_bound_regime_check():
    h = HyperParams.from_snr([1.0, 2.0], 1.0, common_rho(0.5, 2), 1.0)
    with pytest.raises(ValueError):
        estimation_risk_upper_bound(h, mp_identity_summary(1.0, 1.0))


def test_equal_weight_baseline_dominated():
    for rho in (0.1, 0.5, 0.9):
        s = mp_identity_summary(1.0, 1.0)
        sys_ = asymptotic_estimation_system(_identity_hyper(rho), [s] * 6, identity_cov=True)
        assert solve_optimal_weights(sys_).risk <= sys_.risk(equal_weights(6)) + 1e-12


def test_snr_conversions():
    assert snr_from_heritability(0.5) == pytest.approx(1.0)
    assert snr_from_heritability(0.0) == 0.0
    assert heritability_from_snr(3.0) == pytest.approx(0.75)
    assert snr_from_heritability(heritability_from_snr(3.0)) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        snr_from_heritability(1.0)
    with pytest.raises(ValueError):
        heritability_from_snr(-1.0)
