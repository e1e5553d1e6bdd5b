import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from accrue.exceptions import DomainError, ValidationError
from accrue.likelihood import ModelParams
from accrue.priors import (PriorConfig, log_prior, log_prior_grad_hess, log_prior_theta,
                           log_prior_vec, sample_log_theta)
from accrue.shapes import INF

CURVED = (0.5, 1.0, 2.0, INF)


def ratio(theta, kappa, t0=120.0):
    if math.isinf(kappa):
        return np.exp(-theta * t0)
    return (1 + theta * t0 / kappa) ** -kappa


def test_defaults():
    cfg = PriorConfig()
    assert (cfg.alpha_mean, cfg.alpha_sd, cfg.phi_lo, cfg.phi_hi) == (0.2, 2.0, -8.0, 8.0)
    assert (cfg.t0, cfg.a, cfg.b) == (120.0, 1.1, 1.1)
    assert_allclose(sum(math.exp(cfg.log_model_prior(k)) for k in cfg.kappas), 1.0)
    assert len(cfg.kappas) == 5


@pytest.mark.parametrize("kappa", CURVED)
def test_theta_density_integrates_to_one(kappa):
    cfg = PriorConfig()
    f = lambda x: math.exp(float(log_prior_theta(x, kappa, cfg)))
    total = integrate.quad(f, -40, 60, limit=400, points=[-8, -5, -3, 5])[0]
    assert_allclose(total, 1.0, rtol=1e-6)


@pytest.mark.parametrize("kappa", CURVED)
def test_theta_density_is_pushforward_of_beta(kappa):
    # P(log theta <= x) = P(R >= ratio(exp x)) under Beta(1.1, 1.1)
    cfg = PriorConfig()
    f = lambda x: math.exp(float(log_prior_theta(x, kappa, cfg)))
    for x in (-7.0, -5.0, -4.0):
        cdf = integrate.quad(f, -40, x, limit=400)[0]
        assert_allclose(cdf, stats.beta.sf(ratio(math.exp(x), kappa), 1.1, 1.1), rtol=1e-6)


@pytest.mark.parametrize("kappa", CURVED)
def test_sampler_matches_density(kappa):
    cfg = PriorConfig()
    rng = np.random.default_rng(1)
    draws = sample_log_theta(kappa, cfg, 20000, rng)
    R = ratio(np.exp(draws), kappa)
    assert stats.kstest(R, stats.beta(1.1, 1.1).cdf).pvalue > 1e-3


@pytest.mark.parametrize("kappa", CURVED)
def test_derivatives_match_finite_differences(kappa):
    cfg = PriorConfig()
    for x2 in np.linspace(-9, -1, 9):
        x = np.array([0.3, -3.0, x2])
        g, H = log_prior_grad_hess(x, kappa, cfg)
        h = 1e-5
        f = lambda v: float(log_prior_vec(v, kappa, cfg)[0])
        fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(3)])
        assert_allclose(g, fd, rtol=1e-6, atol=1e-7)
        e = np.eye(3)[2]
        d2 = (f(x + h * e) - 2 * f(x) + f(x - h * e)) / h ** 2
        assert_allclose(H[2, 2], d2, rtol=1e-3, atol=1e-4)


def test_phi_support_and_joint():
    cfg = PriorConfig()
    assert log_prior(ModelParams(1.0, math.exp(9.0)), cfg) == -math.inf
    lp = log_prior(ModelParams(1.0, 0.01), cfg)
    expected = stats.norm.logpdf(0.0, 0.2, 2.0) - math.log(16.0)
    assert_allclose(lp, expected, rtol=1e-12)
    lp3 = log_prior(ModelParams(1.0, 0.01, 0.02, 2.0), cfg)
    assert_allclose(lp3 - lp, float(log_prior_theta(math.log(0.02), 2.0, cfg)))


def test_theta_undefined_for_flat_model():
    with pytest.raises(DomainError):
        log_prior_theta(0.0, 0, PriorConfig())


def test_invalid_configs():
    with pytest.raises(ValidationError):
        PriorConfig(alpha_sd=0)
    with pytest.raises(ValidationError):
        PriorConfig(phi_lo=1, phi_hi=0)
    with pytest.raises(ValidationError):
        PriorConfig(model_prior={"0": 0.5, "2": 0.4})


def test_json_round_trip(tmp_path):
    cfg = PriorConfig(alpha_sd=1.5, t0=90, model_prior={"0": 0.25, "2": 0.25, "inf": 0.5})
    p = tmp_path / "priors.json"
    p.write_text(json.dumps(cfg.to_dict()))
    back = PriorConfig.from_json(p)
    assert back == cfg
    assert back.kappas == (0.0, 2.0, INF)


@settings(max_examples=60, deadline=None)
@given(st.floats(-12, 3), st.sampled_from(CURVED))
def test_theta_density_finite_over_wide_range(x, kappa):
    assert np.isfinite(log_prior_theta(x, kappa, PriorConfig()))
