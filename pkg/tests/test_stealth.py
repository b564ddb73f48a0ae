import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from stealthbound import stealth
from stealthbound.errors import DimensionError, DomainError, InfeasibleStealthinessError
from stealthbound.rng import RngStream

# frozen: chi2.ppf(0.99, 20) and the p_d = 0.99 bias budget at T = 10, m = 2
ETA_20_99 = 37.56623478662507
LAMBDA_BAR_20 = 49.0272970740


def test_detector_stat_examples():
    Sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert stealth.detector_stat(np.zeros((10, 2)), Sigma, T=10) == 0.0
    root = np.linalg.cholesky(Sigma)
    assert stealth.detector_stat([root[:, 0]], Sigma, T=1) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(DimensionError):
        stealth.detector_stat(np.zeros((3, 2)), Sigma, T=4)


def test_detector_stat_chi2_mean():
    Sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
    T, n_win = 10, 100_000
    z = RngStream(3).multivariate_normal(Sigma, n_win * T).reshape(n_win, T, 2)
    Sinv = np.linalg.inv(Sigma)
    g = np.einsum("wti,ij,wtj->w", z, Sinv, z)
    assert stealth.detector_stat(z[0], Sigma, T) == pytest.approx(g[0], rel=1e-12)
    assert abs(g.mean() - 20) < 3 * math.sqrt(40 / n_win)


def test_chi2_quantile_closed_forms():
    assert stealth.chi2_quantile(2, 0.95) == pytest.approx(-2 * math.log(0.05), rel=1e-12)
    assert stealth.chi2_quantile(2, 0.99) == pytest.approx(-2 * math.log(0.01), rel=1e-12)
    assert stealth.chi2_quantile(2, 0.95) == pytest.approx(5.9915, abs=1e-4)
    assert stealth.chi2_quantile(2, 0.99) == pytest.approx(9.2103, abs=1e-4)
    assert stealth.chi2_quantile(7, 0.99) > stealth.chi2_quantile(7, 0.95)
    with pytest.raises(DomainError):
        stealth.chi2_quantile(2, 1.0)


@pytest.mark.parametrize("dof", [1, 2, 5, 20, 60])
@pytest.mark.parametrize("prob", [0.01, 0.5, 0.95, 0.99, 0.9999])
def test_chi2_quantile_against_scipy(dof, prob):
    eta = stealth.chi2_quantile(dof, prob)
    assert eta == pytest.approx(sps.chi2.ppf(prob, dof), rel=1e-10)
    assert stealth.chi2_cdf(eta, dof) == pytest.approx(prob, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 200), st.floats(0.0, 400))
def test_gammainc_against_scipy(a, x):
    from scipy.special import gammainc, gammaincc

    P, Q = stealth.gammainc_pair(a, x)
    assert P == pytest.approx(gammainc(a, x), rel=1e-11, abs=1e-14)
    assert Q == pytest.approx(gammaincc(a, x), rel=1e-11, abs=1e-14)


def test_marcum_q_central_and_closed_form():
    assert stealth.marcum_q(1.0, 0.0, 5.991464547107979) == pytest.approx(0.05, abs=1e-12)
    for eta in (0.5, 3.0, 9.0, 25.0):
        assert stealth.marcum_q(1.0, 0.0, eta) == pytest.approx(math.exp(-eta / 2), abs=1e-10)
        assert stealth.marcum_q(5.0, 0.0, eta) == pytest.approx(1 - stealth.chi2_cdf(eta, 10), abs=1e-14)
    with pytest.raises(DomainError):
        stealth.marcum_q(1.0, -1.0, 1.0)


@pytest.mark.parametrize("dof", [2, 7, 20, 41])
@pytest.mark.parametrize("lam", [0.0, 0.3, 5.0, 30.0, 100.0, 900.0])
@pytest.mark.parametrize("eta", [0.7, 10.0, 37.5, 150.0])
def test_marcum_q_against_scipy_ncx2(dof, lam, eta):
    expected = sps.chi2.sf(eta, dof) if lam == 0 else sps.ncx2.sf(eta, dof, lam)
    assert stealth.marcum_q(dof / 2, lam, eta) == pytest.approx(expected, abs=1e-11)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.floats(0, 200), st.floats(0, 200), st.floats(0, 20), st.floats(0, 20))
def test_marcum_q_monotone(dof, lam, eta, dl, de):
    q = stealth.marcum_q(dof / 2, lam, eta)
    assert 0.0 <= q <= 1.0
    assert stealth.marcum_q(dof / 2, lam + dl, eta) >= q - 1e-13
    assert stealth.marcum_q(dof / 2, lam, eta + de) <= q + 1e-13


def test_detector_config_threshold():
    cfg = stealth.DetectorConfig(T=10, m=2, false_alarm=0.01)
    assert cfg.dof == 20
    assert cfg.eta == pytest.approx(ETA_20_99, rel=1e-12)
    assert stealth.chi2_sf(cfg.eta, 20) == pytest.approx(0.01, abs=1e-8)


def test_lambda_bar_frozen_and_invariant():
    cfg = stealth.DetectorConfig(T=10, m=2, false_alarm=0.01)
    b = stealth.solve_lambda_bar(cfg, 0.99)
    assert b.lambda_bar == pytest.approx(LAMBDA_BAR_20, abs=1e-8)
    assert stealth.marcum_q(10, b.lambda_bar, cfg.eta) == pytest.approx(0.99, abs=1e-8)
    # independent check of the root with scipy's noncentral chi-squared
    assert sps.ncx2.sf(cfg.eta, 20, b.lambda_bar) == pytest.approx(0.99, abs=1e-8)
    assert b.horizon is None


def test_lambda_bar_edges_and_monotone():
    cfg = stealth.DetectorConfig(T=10, m=2, false_alarm=0.01)
    assert stealth.solve_lambda_bar(cfg, 0.01).lambda_bar == 0.0
    with pytest.raises(InfeasibleStealthinessError):
        stealth.solve_lambda_bar(cfg, 0.005)
    with pytest.raises(DomainError):
        stealth.solve_lambda_bar(cfg, 1.0)
    grid = [0.02, 0.1, 0.5, 0.9, 0.99, 0.999]
    lams = [stealth.solve_lambda_bar(cfg, p).lambda_bar for p in grid]
    assert all(b > a for a, b in zip(lams, lams[1:]))


def test_stealthy_set_membership():
    Sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
    budget = stealth.StealthBudget(p_d=0.99, lambda_bar=LAMBDA_BAR_20)
    root = np.linalg.cholesky(Sigma)
    edge = math.sqrt(budget.lambda_bar) * root[:, 0]
    assert stealth.in_stealthy_set(np.zeros(2), Sigma, budget)
    assert stealth.in_stealthy_set(edge, Sigma, budget)
    assert not stealth.in_stealthy_set(1.01 * edge, Sigma, budget)
    win = np.zeros((10, 2))
    assert stealth.window_budget_ok(win, Sigma, budget)
    win[3] = edge
    assert stealth.window_budget_ok(win, Sigma, budget)
    win[7] = edge
    assert not stealth.window_budget_ok(win, Sigma, budget)


def test_alternate_budget():
    cfg = stealth.DetectorConfig(T=10, m=2, false_alarm=0.01)
    assert stealth.alternate_budget(cfg, 0.99) == pytest.approx(ETA_20_99 * 0.99 - 20, rel=1e-12)
    assert stealth.alternate_budget(cfg, 0.5) < 0  # eta * 0.5 < 20: empty set
    for p in np.linspace(0.02, 0.999, 25):
        assert stealth.alternate_budget(cfg, p) <= stealth.solve_lambda_bar(cfg, p).lambda_bar


def _biased_windows(seed, n_win, energy, T=10):
    """Whitened residue windows (Sigma = I) with a bias of total energy ``energy``."""
    z = RngStream(seed).normal((n_win, T * 2))
    bias = np.zeros(T * 2)
    bias[0::2] = math.sqrt(energy / T)
    return np.sum((z + bias) ** 2, axis=1)


def test_markov_bound_and_expected_value():
    cfg = stealth.DetectorConfig(T=10, m=2, false_alarm=0.01)
    for energy in (0.0, 10.0, 40.0):
        g = _biased_windows(21, 200_000, energy)
        rate = np.mean(g > cfg.eta)
        se = math.sqrt(max(rate * (1 - rate), 1e-6) / g.size)
        assert rate <= stealth.markov_detection_bound(cfg, energy) + 3 * se
        assert g.mean() == pytest.approx(20 + energy, rel=0.01)
