import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

from accrue.data import RecruitmentSeries, TrialSnapshot
from accrue.exceptions import DomainError, ValidationError
from accrue.likelihood import ModelParams
from accrue.prediction import (centre_posterior, forecast_quantiles,
                               model_averaged_count_pmf, predictive_count_pmf,
                               sample_accrual_paths, time_to_completion)
from accrue.shapes import INF, CurveShape

from oracles import point_ensemble


SNAP = TrialSnapshot(50, (RecruitmentSeries("a", 0, (1,) * 10 + (0,) * 40),
                          RecruitmentSeries("b", 20, (0, 1, 0) * 10),
                          RecruitmentSeries("c", 45, (0, 0, 0, 0, 0))),
                     planned_initiations=(60, 70))


def test_centre_posterior_is_conjugate():
    p = ModelParams(2.0, 0.5, 0.05, 2.0)
    cp = centre_posterior(p, (7, 30), tau_bar=40.0)
    G = float(CurveShape(2.0, 0.05, 40.0).G(30.0))
    assert_allclose(cp.alpha_star, 9.0)
    assert_allclose(cp.rate, 2.0 / 0.5 + G)
    assert_allclose(cp.mean, 9.0 / (4.0 + G))
    unopened = centre_posterior(p, (0, 0))
    assert_allclose((unopened.alpha_star, unopened.phi_star), (2.0, 0.5))
    with pytest.raises(ValidationError):
        centre_posterior(p, (1, 5))


def test_predictive_pmf_is_gamma_mixture_of_poissons():
    cp = centre_posterior(ModelParams(1.7, 0.3), (4, 12))
    g_plus = 9.0
    for n in range(6):
        f = lambda lam: (stats.poisson.pmf(n, lam * g_plus)
                         * stats.gamma.pdf(lam, cp.alpha_star, scale=1 / cp.rate))
        ref = integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-11, limit=300)[0]
        assert_allclose(predictive_count_pmf(cp, g_plus, n), ref, rtol=1e-8)
    total = predictive_count_pmf(cp, g_plus, np.arange(400)).sum()
    assert_allclose(total, 1.0, rtol=1e-12)
    assert predictive_count_pmf(cp, 0.0, 0) == 1.0
    with pytest.raises(DomainError):
        predictive_count_pmf(cp, -1.0, 0)


def test_predictive_pmf_matches_compound_draws():
    cp = centre_posterior(ModelParams(1.4, 0.02, 0.02, 2.7), (6, 200), tau_bar=300.0)
    g_plus = 150.0
    rng = np.random.default_rng(4)
    draws = rng.poisson(rng.gamma(cp.alpha_star, 1 / cp.rate, size=200_000) * g_plus)
    k = np.arange(draws.max() + 1)
    pmf = predictive_count_pmf(cp, g_plus, k)
    obs = np.bincount(draws, minlength=k.size)
    exp_ = pmf * draws.size
    keep = exp_ >= 5
    o = np.append(obs[keep], obs[~keep].sum())
    e = np.append(exp_[keep], draws.size - exp_[keep].sum())
    chi2 = ((o - e) ** 2 / e).sum()
    assert stats.chi2.sf(chi2, o.size - 1) > 0.001


@pytest.mark.parametrize("kappa,theta", [(0, None), (2.0, 0.03), (INF, 0.02)])
def test_path_mean_matches_integrated_intensity(kappa, theta):
    p = ModelParams(3.0, 0.2, theta, kappa)
    tau_bar = SNAP.mean_open_duration()
    ens = point_ensemble(p, tau_bar)
    horizon = 120
    fe = sample_accrual_paths(ens, SNAP, horizon, draws=20_000, seed=1)
    shape = CurveShape(kappa, theta, tau_bar)
    expected = SNAP.total_recruits
    for c in SNAP.centres:
        cp = centre_posterior(p, c, tau_bar)
        expected += cp.mean * (shape.G(horizon - c.initiation_day) - shape.G(c.tau))
    for d in SNAP.planned_initiations:
        expected += p.phi * shape.G(horizon - d)
    se = fe.at(horizon).std() / math.sqrt(fe.draws)
    assert abs(fe.at(horizon).mean() - expected) < 4 * se


def test_path_structure_and_reproducibility(small_ensemble, small_snapshot):
    fe = sample_accrual_paths(small_ensemble, small_snapshot, 300, draws=600, seed=3)
    assert fe.paths.shape == (600, 51)
    assert np.all(fe.paths[:, 0] == small_snapshot.total_recruits)
    assert np.all(np.diff(fe.paths, axis=1) >= 0)
    again = sample_accrual_paths(small_ensemble, small_snapshot, 300, draws=600, seed=3,
                                 threads=3)
    assert_array_equal(fe.paths, again.paths)
    other = sample_accrual_paths(small_ensemble, small_snapshot, 300, draws=600, seed=4)
    assert not np.array_equal(fe.paths, other.paths)
    bands = fe.quantile_bands
    assert np.all(bands[:, 0] <= bands[:, 1]) and np.all(bands[:, 1] <= bands[:, 2])
    q = forecast_quantiles(fe, [0.1, 0.9])
    assert q.shape == (51, 2)
    monthly = fe.aggregate(30)
    assert_array_equal(monthly.horizon_days, [250, 280, 300])


def test_forecast_covers_simulated_truth(small_trial, small_snapshot, small_ensemble):
    fe = sample_accrual_paths(small_ensemble, small_snapshot, 400, draws=2000, seed=8)
    lo, hi = np.quantile(fe.at(400), [0.025, 0.975])
    assert lo <= small_trial.accrual(400) <= hi


def test_path_argument_checks(small_ensemble, small_snapshot):
    with pytest.raises(ValidationError):
        sample_accrual_paths(small_ensemble, small_snapshot, 200, seed=1)
    with pytest.raises(ValidationError):
        sample_accrual_paths(small_ensemble, small_snapshot, 300)
    fe = sample_accrual_paths(small_ensemble, small_snapshot, 250, draws=10, seed=1)
    assert fe.paths.shape == (10, 1)
    with pytest.raises(ValidationError):
        fe.at(251)
    with pytest.raises(ValidationError):
        forecast_quantiles(fe, [0.0, 0.5])


def test_deterministic_first_recruits_are_added():
    snap = TrialSnapshot(10, (RecruitmentSeries("a", 0, (1,) + (0,) * 9),),
                         planned_initiations=(15, 18), deterministic_first_recruitment=True)
    tiny_rate = ModelParams(50.0, 1e-9)
    fe = sample_accrual_paths(point_ensemble(tiny_rate, 10.0), snap, 25, draws=50, seed=0)
    assert np.all(fe.at(15) == 1) and np.all(fe.at(16) == 2)
    assert np.all(fe.at(19) == 3) and np.all(fe.at(25) == 3)
    ttc = time_to_completion(point_ensemble(tiny_rate, 10.0), snap, 2, draws=50, seed=0)
    assert_allclose(ttc.completion_times, 18.0)


def test_homogeneous_completion_is_gamma():
    # one centre with an essentially known rate: T - census ~ Gamma(m) / rate
    snap = TrialSnapshot(30, (RecruitmentSeries("a", 0, (1,) * 30),))
    rate = 0.5
    ens = point_ensemble(ModelParams(1e9, rate), 30.0)
    m = 20
    t = time_to_completion(ens, snap, m, draws=20_000, seed=2).completion_times - 30
    assert abs(t.mean() - m / rate) < 3 * math.sqrt(m) / rate / math.sqrt(t.size)
    assert stats.kstest(t, stats.gamma(m, scale=1 / rate).cdf).pvalue > 0.001


def test_completion_agrees_with_paths(small_ensemble, small_snapshot):
    m = 60
    ttc = time_to_completion(small_ensemble, small_snapshot, m, draws=4000, seed=5)
    fe = sample_accrual_paths(small_ensemble, small_snapshot, 400, draws=4000, seed=6)
    base = small_snapshot.total_recruits
    for d in (280, 300, 330):
        p1 = np.mean(ttc.completion_times <= d)
        p2 = np.mean(fe.at(d) >= base + m)
        se = math.sqrt(max(p1 * (1 - p1), 1e-4) * 2 / 4000)
        assert abs(p1 - p2) < 4 * se


def test_unreachable_target_is_never():
    # exponential decay bounds the integrated intensity
    p = ModelParams(1e6, 0.1, 0.2, INF)
    snap = TrialSnapshot(10, (RecruitmentSeries("a", 0, (1,) * 10),))
    ttc = time_to_completion(point_ensemble(p, 10.0), snap, 50, draws=100, seed=1)
    assert ttc.meta["n_never"] == 100
    assert np.all(np.isinf(ttc.completion_times))


def test_completion_is_thread_independent(small_ensemble, small_snapshot):
    a = time_to_completion(small_ensemble, small_snapshot, 30, draws=700, seed=9).completion_times
    b = time_to_completion(small_ensemble, small_snapshot, 30, draws=700, seed=9,
                           threads=4).completion_times
    assert_array_equal(a, b)
    with pytest.raises(ValidationError):
        time_to_completion(small_ensemble, small_snapshot, 0, seed=1)


def test_model_averaged_pmf_reduces_to_single_model():
    p = ModelParams(2.0, 0.1, 0.02, 2.0)
    ens = point_ensemble(p, 40.0)
    series = (5, 30)
    n = np.arange(60)
    mixed = model_averaged_count_pmf(ens, series, 30.0, 90.0, n)
    shape = CurveShape(2.0, 0.02, 40.0)
    cp = centre_posterior(p, series, 40.0)
    direct = predictive_count_pmf(cp, float(shape.G(90.0) - shape.G(30.0)), n)
    assert_allclose(mixed, direct, rtol=1e-12)
    assert_allclose(mixed.sum(), 1.0, atol=1e-9)
