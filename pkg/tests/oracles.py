"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np
from scipy import integrate, stats

from accrue.data import RecruitmentSeries, TrialSnapshot
from accrue.inference import LogPosterior, ModelEnsemble, ModelFit
from accrue.likelihood import SufficientStats
from accrue.priors import PriorConfig
from accrue.shapes import CurveShape


def snap_of(*count_lists, census=None):
    """Snapshot whose centres all end at the census, one per count list."""
    census = census or max(len(c) for c in count_lists)
    return TrialSnapshot(census, tuple(
        RecruitmentSeries(f"c{i}", census - len(c), tuple(c))
        for i, c in enumerate(count_lists)))


def quadrature_loglik(params, snapshot, tau_bar):
    """Integrate the Poisson likelihood of each centre over its gamma random effect."""
    a, phi = params.alpha, params.phi
    shape = CurveShape(params.kappa, params.theta, tau_bar)
    total = 0.0
    for c in snapshot.centres:
        if c.tau == 0:
            continue
        H = shape.increments(np.arange(1.0, c.tau + 1.0))
        n = c.as_array()

        def integrand(lam):
            return (stats.gamma.pdf(lam, a, scale=phi / a)
                    * np.prod(stats.poisson.pmf(n, lam * H)))
        mode = max((a - 1 + n.sum()) / (a / phi + H.sum()), 1e-8)
        cut = 10 * mode + 10 * phi
        val = sum(integrate.quad(integrand, lo, hi, epsabs=0, epsrel=1e-12, limit=500)[0]
                  for lo, hi in [(0, mode), (mode, cut), (cut, np.inf)])
        total += math.log(val)
    return total


def grid_log_marginal(snapshot, kappa, n=201, prior=None):
    """Tensor-grid Simpson integral of prior x likelihood over log-parameters."""
    target = LogPosterior(SufficientStats(snapshot), kappa, prior or PriorConfig())
    axes = [np.linspace(-10, 10.4, n), np.linspace(-8, 8, n)]
    if kappa != 0:
        axes.append(np.linspace(-16, 2, n))
    mesh = np.meshgrid(*axes, indexing="ij")
    v = target(np.column_stack([m.ravel() for m in mesh])).reshape(mesh[0].shape)
    f = np.exp(v - v.max())
    for ax in reversed(axes):
        f = integrate.simpson(f, x=ax)
    return v.max() + math.log(f)


def point_fit(params, tau_bar):
    x = params.to_log()[None, :]
    return ModelFit(params.kappa, x, np.zeros(1), 0.0, 1.0, params,
                    np.eye(x.shape[1]), tau_bar, 1)


def point_ensemble(params, tau_bar, probs=None):
    """Ensemble whose models each put all their mass on one parameter vector."""
    plist = params if isinstance(params, (list, tuple)) else [params]
    probs = np.ones(len(plist)) / len(plist) if probs is None else np.asarray(probs, float)
    return ModelEnsemble([point_fit(p, tau_bar) for p in plist], probs, tau_bar,
                         np.log(np.ones(len(plist)) / len(plist)))
