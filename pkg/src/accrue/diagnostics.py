"""Model checks: random-effect and initial-period QQ data, forecast p-values."""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng as rngmod
from .exceptions import InsufficientDataError, ValidationError
from .homogeneity import TestResult
from .shapes import CurveShape

KINDS = ("random_effect", "initial_period")


@dataclass(frozen=True)
class QQTable:
    theoretical: np.ndarray
    empirical: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}")

    def __len__(self):
        return self.theoretical.size

    def rows(self):
        return list(zip(self.theoretical.tolist(), self.empirical.tolist()))

    def slope(self):
        """Least-squares slope of empirical on theoretical quantiles."""
        x, y = self.theoretical, self.empirical
        xc = x - x.mean()
        return float((xc * (y - y.mean())).sum() / (xc * xc).sum())

    def correlation(self):
        """Probability-plot correlation; nan for a flat empirical column."""
        if np.ptp(self.empirical) == 0:
            return float("nan")
        return float(np.corrcoef(self.theoretical, self.empirical)[0, 1])


def slope_test(table, lo=0.8, hi=1.2):
    """True when the QQ least-squares slope lies in ``[lo, hi]``."""
    return lo <= table.slope() <= hi


def plotting_positions(n):
    return (np.arange(1, n + 1) - 0.5) / n


def _point_estimate(fit):
    """Importance-weighted posterior means of (alpha, phi, theta)."""
    return fit.posterior_mean()


def _G(p, tau_bar, t):
    t = np.asarray(t, dtype=float)
    return t if p.kappa == 0 else CurveShape(p.kappa, p.theta, tau_bar).G(t)


def _re_inputs(fit, snapshot):
    p = _point_estimate(fit)
    centres = [c for c in snapshot.model_centres() if c.tau > 0]
    if len(centres) < 3:
        raise InsufficientDataError("random-effect QQ needs at least 3 open centres")
    n = np.array([c.total for c in centres], dtype=float)
    G = _G(p, fit.tau_bar, [c.tau for c in centres])
    q = stats.gamma.ppf(plotting_positions(len(centres)), p.alpha, scale=p.phi / p.alpha)
    return p, n, G, q


def random_effect_qq(fit, snapshot):
    """Sorted posterior-mean random effects against Gamma(alpha, alpha/phi).

    Centres that have not yet been open for a day carry no information
    beyond the prior and are left out.
    """
    p, n, G, q = _re_inputs(fit, snapshot)
    post_mean = (p.alpha + n) / (p.alpha / p.phi + G)
    return QQTable(q, np.sort(post_mean), "random_effect")


def nbinom_continuous_quantile(probs, r, p):
    """Quantiles of a negative binomial spread uniformly over unit bins.

    Integer ``k`` owns ``(k - 1/2, k + 1/2]`` in proportion to its mass, so
    the quantile function is continuous and strictly increasing.
    """
    probs = np.asarray(probs, dtype=float)
    k = stats.nbinom.ppf(probs, r, p)
    below = stats.nbinom.cdf(k - 1, r, p)
    mass = stats.nbinom.pmf(k, r, p)
    return k - 0.5 + (probs - below) / mass


def _ip_inputs(fit, snapshot, t_prime):
    p = _point_estimate(fit)
    eligible = [c for c in snapshot.model_centres() if c.tau >= t_prime]
    if len(eligible) < 3:
        raise InsufficientDataError(
            f"initial-period QQ needs at least 3 centres open for {t_prime} days")
    totals = np.array([sum(c.counts[:t_prime]) for c in eligible], dtype=float)
    prob = p.alpha / (p.alpha + p.phi * float(_G(p, fit.tau_bar, t_prime)))
    q = nbinom_continuous_quantile(plotting_positions(len(eligible)), p.alpha, prob)
    return p, totals, prob, q


def initial_period_qq(fit, snapshot, t_prime=60):
    """Sorted first-``t_prime``-day totals against their negative binomial law."""
    _, totals, _, q = _ip_inputs(fit, snapshot, t_prime)
    return QQTable(q, np.sort(totals), "initial_period")


def _slopes(q, y):
    """Least-squares slopes of each row of ``y`` (already sorted) on ``q``."""
    qc = q - q.mean()
    return ((y - y.mean(axis=1, keepdims=True)) @ qc) / (qc @ qc)


def simulated_qq_slopes(fit, snapshot, kind="random_effect", n_sim=199, seed=None,
                        t_prime=60):
    """QQ slopes of data simulated from the fitted point estimate.

    Replicates keep the snapshot's exposures.  For the random-effect plot
    each centre's total is redrawn from its gamma-Poisson law and
    shrunk exactly as the observed totals are, so the replicate slopes carry
    the same shrinkage towards the prior mean.
    """
    if seed is None:
        raise ValidationError("simulated_qq_slopes needs a seed")
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}")
    rng = rngmod.stream(seed, rngmod.NS_QQ, KINDS.index(kind))
    if kind == "random_effect":
        p, _, G, q = _re_inputs(fit, snapshot)
        lam = rng.gamma(p.alpha, p.phi / p.alpha, size=(n_sim, G.size))
        n = rng.poisson(lam * G)
        y = (p.alpha + n) / (p.alpha / p.phi + G)
    else:
        p, totals, prob, q = _ip_inputs(fit, snapshot, t_prime)
        y = rng.negative_binomial(p.alpha, prob, size=(n_sim, totals.size)).astype(float)
    return _slopes(q, np.sort(y, axis=1))


def calibrated_slope_test(fit, snapshot, kind="random_effect", n_sim=199, seed=None,
                          t_prime=60):
    """Two-sided Monte Carlo test of the QQ slope against its simulated law.

    Unlike :func:`slope_test`, whose fixed window ignores the shrinkage of
    posterior means, the reference distribution here comes from data
    simulated under the fitted model.
    """
    table = (random_effect_qq(fit, snapshot) if kind == "random_effect"
             else initial_period_qq(fit, snapshot, t_prime))
    s = table.slope()
    sims = simulated_qq_slopes(fit, snapshot, kind, n_sim, seed, t_prime)
    lo = (1 + np.sum(sims <= s)) / (n_sim + 1)
    hi = (1 + np.sum(sims >= s)) / (n_sim + 1)
    return TestResult(s, float(min(1.0, 2.0 * min(lo, hi))), f"QQ-slope:{kind}", n_sim)


def forecast_pvalue(prior_forecast, realized_accrual, at_day):
    """Two-sided empirical tail probability of the realised accrual."""
    vals = prior_forecast.at(at_day)
    lo = np.mean(vals <= realized_accrual)
    hi = np.mean(vals >= realized_accrual)
    return float(min(1.0, 2.0 * min(lo, hi)))
