"""Posterior inference for the curve-shape model family.

Each model (one ``kappa``) is fitted by locating the posterior mode in
log-parameters, then importance sampling from a multivariate t proposal with
4 degrees of freedom centred on the mode with shape equal to the inverse
negative Hessian there.  The mean importance weight estimates the marginal
likelihood, which yields posterior model probabilities for averaging.
"""

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special
from scipy import stats as sps

from . import rng as rngmod
from .exceptions import (FitFailureError, InsufficientDataError,
                         SamplerFailureError, ValidationError)
from .likelihood import (ModelParams, SufficientStats, hessian, loglik_arrays,
                         score, to_log_gradient, to_log_hessian)
from .priors import PriorConfig, log_prior_grad_hess, log_prior_vec
from .shapes import kappa_label, parse_kappa

log = logging.getLogger(__name__)

PROPOSAL_DF = 4.0
EIG_FLOOR = 1e-8


@dataclass(frozen=True)
class OptimizerConfig:
    n_starts: int = 5
    maxiter: int = 5000
    xatol: float = 1e-9
    fatol: float = 1e-11
    newton_steps: int = 50
    grad_tol: float = 1e-8


def kappa_key(kappa):
    """Integer key identifying a model in RNG stream paths."""
    kappa = parse_kappa(kappa)
    return 10 ** 9 if math.isinf(kappa) else int(round(kappa * 1000))


def n_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("ACCRUE_THREADS", "1") or 1)
    return max(1, int(threads))


# --------------------------------------------------------------------------
# Log posterior in log-coordinates
# --------------------------------------------------------------------------

class LogPosterior:
    """Unnormalised log posterior of ``(log alpha, log phi[, log theta])``.

    With ``prior=None`` the object represents the plain log-likelihood in
    log-coordinates, which is what maximum likelihood fitting uses.
    """

    def __init__(self, stats, kappa, prior=None):
        self.stats = stats
        self.kappa = parse_kappa(kappa)
        self.prior = prior
        self.dim = 2 if self.kappa == 0 else 3

    def params(self, x):
        return ModelParams.from_log(x, self.kappa)

    def __call__(self, x):
        """Vectorised over rows of ``x``; returns ``-inf`` outside the support."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(x)
            theta = e[:, 2] if self.dim == 3 else None
            ll = loglik_arrays(self.stats, self.kappa, e[:, 0], e[:, 1], theta)
        if self.prior is not None:
            ll = ll + log_prior_vec(x, self.kappa, self.prior)
        return np.where(np.isfinite(ll), ll, -np.inf)

    def value(self, x):
        return float(self(x)[0])

    def grad_hess(self, x):
        p = self.params(x)
        g = score(p, self.stats)
        h = hessian(p, self.stats)
        gl, hl = to_log_gradient(p, g), to_log_hessian(p, g, h)
        if self.prior is not None:
            pg, ph = log_prior_grad_hess(x, self.kappa, self.prior)
            gl, hl = gl + pg, hl + ph
        return gl, hl

    def fd_hessian(self, x, h=1e-4):
        """Central-difference Hessian of the analytic gradient."""
        x = np.asarray(x, dtype=float)
        H = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            H[i] = (self.grad_hess(x + e)[0] - self.grad_hess(x - e)[0]) / (2 * h)
        return 0.5 * (H + H.T)


def _floor_pd(neg_hess):
    """Symmetrise and floor eigenvalues; returns (matrix, was_pd)."""
    m = 0.5 * (neg_hess + neg_hess.T)
    w, v = np.linalg.eigh(m)
    was_pd = bool(np.all(w > EIG_FLOOR))
    w = np.maximum(w, EIG_FLOOR)
    return (v * w) @ v.T, was_pd


def _starting_points(stats, kappa, prior, dim):
    exposure = stats.taus.sum()
    crude = max(stats.totals.sum() / exposure, 1e-6) if exposure > 0 else 1e-3
    a0 = prior.alpha_mean if prior is not None else 0.2
    phi_prior_mid = (0.5 * (prior.phi_lo + prior.phi_hi)
                     if prior is not None else math.log(crude))
    # R = 1/2 at t0, a central value of the ratio prior.
    t0 = prior.t0 if prior is not None else 120.0
    kappa = parse_kappa(kappa)
    if math.isinf(kappa):
        th0 = math.log(2.0) / t0
    elif kappa > 0:
        th0 = kappa * (2.0 ** (1.0 / kappa) - 1.0) / t0
    else:
        th0 = 1.0
    base = np.array([a0, math.log(crude), math.log(th0)])[:dim]
    prior_means = np.array([a0, phi_prior_mid, math.log(th0)])[:dim]
    jitters = np.array([[0.5, 0.3, 1.0], [-0.5, -0.3, -1.0], [1.0, 0.0, 2.0],
                        [-1.0, 0.2, -2.0]])[:, :dim]
    return [prior_means, base] + [base + j for j in jitters]


def _newton_polish(target, x, steps, grad_tol):
    fx = target.value(x)
    for _ in range(steps):
        g, H = target.grad_hess(x)
        if not np.all(np.isfinite(g)):
            break
        if np.linalg.norm(g) < grad_tol:
            break
        A, _ = _floor_pd(-H)
        step = np.linalg.solve(A, g)
        t = 1.0
        while t > 1e-10:
            xn = x + t * step
            fn = target.value(xn)
            if np.isfinite(fn) and fn >= fx - 1e-12:
                break
            t *= 0.5
        else:
            break
        x, fx = xn, fn
    return x, fx


def _maximise(target, starts, config):
    best = None
    failures = 0
    for x0 in starts:
        fx0 = target.value(x0)
        if not np.isfinite(fx0):
            failures += 1
            continue
        res = optimize.minimize(
            lambda x: -target.value(x) if np.all(np.isfinite(x)) else np.inf,
            x0, method="Nelder-Mead",
            options={"maxiter": config.maxiter, "xatol": config.xatol,
                     "fatol": config.fatol, "adaptive": True})
        x, fx = _newton_polish(target, res.x, config.newton_steps, config.grad_tol)
        if not np.isfinite(fx):
            failures += 1
            continue
        if best is None or fx > best[1]:
            best = (x, fx)
    if best is None:
        raise FitFailureError(
            f"optimiser failed from all {len(starts)} starting points")
    return best


def _check_identified(stats):
    if stats.n_centres == 0 or stats.totals.sum() < 1:
        raise InsufficientDataError(
            "need at least one opened centre with at least one recruit")


@dataclass
class ModeResult:
    params: ModelParams
    x: np.ndarray
    shape_matrix: np.ndarray
    log_posterior: float
    gradient_norm: float
    hessian_pd: bool


def find_mode(snapshot, kappa, prior_config=None, optimizer_config=None,
              stats=None):
    """Posterior mode and proposal shape matrix (both in log-coordinates).

    Returns ``(ModelParams, shape_matrix)``; use :func:`locate_mode` for the
    full diagnostics.
    """
    res = locate_mode(snapshot, kappa, prior_config, optimizer_config, stats)
    return res.params, res.shape_matrix


def locate_mode(snapshot, kappa, prior_config=None, optimizer_config=None,
                stats=None):
    prior = prior_config or PriorConfig()
    config = optimizer_config or OptimizerConfig()
    stats = stats or SufficientStats(snapshot)
    _check_identified(stats)
    target = LogPosterior(stats, kappa, prior)
    starts = _starting_points(stats, kappa, prior, target.dim)[:max(config.n_starts, 1)]
    x, fx = _maximise(target, starts, config)
    g, H = target.grad_hess(x)
    neg = -H
    if not np.all(np.linalg.eigvalsh(0.5 * (neg + neg.T)) > EIG_FLOOR):
        neg = -target.fd_hessian(x)
    A, pd = _floor_pd(neg)
    if not pd:
        log.warning("kappa=%s: negative Hessian not positive definite at the "
                    "mode; eigenvalues floored", kappa_label(kappa))
    return ModeResult(target.params(x), x, np.linalg.inv(A), fx,
                      float(np.linalg.norm(g)), pd)


# --------------------------------------------------------------------------
# Importance sampling
# --------------------------------------------------------------------------

def mvt_logpdf(x, loc, shape, df=PROPOSAL_DF):
    return np.atleast_1d(sps.multivariate_t.logpdf(np.atleast_2d(x), loc, shape, df))


def mvt_sample(loc, shape, size, rng, df=PROPOSAL_DF):
    return np.atleast_2d(sps.multivariate_t.rvs(loc, shape, df, size=size, random_state=rng))


def proposal_draws(loc, shape, B, seed, *path, df=PROPOSAL_DF):
    """``B`` proposal draws assembled from fixed-size reproducible blocks."""
    out = np.empty((B, loc.size))
    for b, lo, hi in rngmod.blocks(B):
        out[lo:hi] = mvt_sample(loc, shape, hi - lo,
                                rngmod.stream(seed, *path, b), df)
    return out


@dataclass
class ISResult:
    draws: np.ndarray
    log_weights: np.ndarray
    log_mean_weight: float
    ess: float


def importance_weights(log_target, loc, shape, B, seed, *path,
                       df=PROPOSAL_DF, chunk=4096):
    """Generic importance sampler with a multivariate t proposal.

    ``log_target`` maps an ``(n, d)`` array to unnormalised log densities.
    """
    x = proposal_draws(loc, shape, B, seed, *path, df=df)
    lw = np.empty(B)
    for lo in range(0, B, chunk):
        xs = x[lo:lo + chunk]
        lw[lo:lo + chunk] = log_target(xs) - mvt_logpdf(xs, loc, shape, df)
    lw = np.where(np.isfinite(lw), lw, -np.inf)
    if not np.any(np.isfinite(lw)):
        raise SamplerFailureError("all importance weights are zero or non-finite")
    lse = special.logsumexp(lw)
    ess = float(np.exp(2.0 * lse - special.logsumexp(2.0 * lw)))
    return ISResult(x, lw, float(lse - math.log(B)), ess)


@dataclass
class ModelFit:
    kappa: float
    samples: np.ndarray            # log-parameters, one row per draw
    log_weights: np.ndarray
    log_marginal_likelihood: float
    ess: float
    mode: ModelParams
    shape_matrix: np.ndarray
    tau_bar: float
    n_samples: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def weights(self):
        w = np.exp(self.log_weights - special.logsumexp(self.log_weights))
        return w / w.sum()

    def natural_samples(self):
        return np.exp(self.samples)

    def posterior_mean(self):
        """Importance-weighted posterior mean of (alpha, phi[, theta])."""
        m = self.weights @ self.natural_samples()
        theta = float(m[2]) if self.dim == 3 else None
        return ModelParams(float(m[0]), float(m[1]), theta, self.kappa)

    def credible_intervals(self, level=0.95):
        lo, hi = 0.5 * (1 - level), 0.5 * (1 + level)
        nat = self.natural_samples()
        w = self.weights
        out = []
        for j in range(self.dim):
            order = np.argsort(nat[:, j])
            cw = np.cumsum(w[order])
            out.append((float(nat[order, j][np.searchsorted(cw, lo)]),
                        float(nat[order, j][min(np.searchsorted(cw, hi), len(cw) - 1)])))
        return out


def importance_sample(snapshot, kappa, prior_config=None, B=10_000, seed=0,
                      mode=None, stats=None, optimizer_config=None,
                      retry=True):
    """Fit one model by importance sampling around its posterior mode.

    If the ESS falls below ``B / 10`` the sampler is rerun once with ``10 B``
    draws (and a warning is issued if that is still short).
    """
    prior = prior_config or PriorConfig()
    stats = stats or SufficientStats(snapshot)
    kappa = parse_kappa(kappa)
    if mode is None:
        mode = locate_mode(snapshot, kappa, prior, optimizer_config, stats)
    target = LogPosterior(stats, kappa, prior)
    path = (rngmod.NS_IMPORTANCE, kappa_key(kappa))
    res = importance_weights(target, mode.x, mode.shape_matrix, B, seed, *path)
    retries = 0
    if retry and res.ess < B / 10:
        retries = 1
        B = 10 * B
        res = importance_weights(target, mode.x, mode.shape_matrix, B, seed,
                                 *path, 1)
        if res.ess < B / 10:
            warnings.warn(f"kappa={kappa_label(kappa)}: low ESS {res.ess:.0f} "
                          f"of {B} after retry", RuntimeWarning)
    return ModelFit(
        kappa=kappa, samples=res.draws, log_weights=res.log_weights,
        log_marginal_likelihood=res.log_mean_weight, ess=res.ess,
        mode=mode.params, shape_matrix=mode.shape_matrix,
        tau_bar=stats.tau_bar, n_samples=B,
        diagnostics={"retries": retries, "gradient_norm": mode.gradient_norm,
                     "hessian_pd": mode.hessian_pd,
                     "log_posterior_at_mode": mode.log_posterior})


def resample_indices(fit, M, seed, *path):
    rng = rngmod.stream(seed, rngmod.NS_RESAMPLE, kappa_key(fit.kappa), *path)
    return rng.choice(len(fit.log_weights), size=M, replace=True, p=fit.weights)


def resample(fit, M, seed):
    """``M`` posterior draws by multinomial resampling of the weighted sample."""
    idx = resample_indices(fit, M, seed)
    return [ModelParams.from_log(fit.samples[i], fit.kappa) for i in idx]


# --------------------------------------------------------------------------
# Model ensembles
# --------------------------------------------------------------------------

def model_probabilities(log_marginals, log_priors):
    z = np.asarray(log_marginals, float) + np.asarray(log_priors, float)
    return np.exp(z - special.logsumexp(z))


@dataclass
class ModelEnsemble:
    fits: list
    posterior_model_probs: np.ndarray
    tau_bar: float
    log_model_priors: np.ndarray = None
    dropped: dict = field(default_factory=dict)

    @property
    def kappas(self):
        return [f.kappa for f in self.fits]

    def prob(self, kappa):
        for f, p in zip(self.fits, self.posterior_model_probs):
            if f.kappa == parse_kappa(kappa):
                return float(p)
        return 0.0

    def fit_for(self, kappa):
        for f in self.fits:
            if f.kappa == parse_kappa(kappa):
                return f
        raise KeyError(kappa_label(kappa))

    def modal_fit(self):
        return self.fits[int(np.argmax(self.posterior_model_probs))]


def fit_all_models(snapshot, prior_config=None, B=10_000, seed=0, kappas=None,
                   threads=None, optimizer_config=None):
    """Fit every model in the grid and compute posterior model probabilities.

    A model whose fit fails is dropped with a warning and the probabilities
    are renormalised over the remaining models.
    """
    prior = prior_config or PriorConfig()
    kappas = prior.kappas if kappas is None else tuple(parse_kappa(k) for k in kappas)
    stats = SufficientStats(snapshot)
    _check_identified(stats)

    def one(kappa):
        try:
            return importance_sample(snapshot, kappa, prior, B, seed, stats=stats,
                                     optimizer_config=optimizer_config)
        except (FitFailureError, SamplerFailureError, np.linalg.LinAlgError) as exc:
            return exc

    workers = min(n_threads(threads), len(kappas))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, kappas))
    else:
        results = [one(k) for k in kappas]
    fits, dropped = [], {}
    for k, r in zip(kappas, results):
        if isinstance(r, Exception):
            warnings.warn(f"kappa={kappa_label(k)} dropped: {r}", RuntimeWarning)
            dropped[kappa_label(k)] = str(r)
        else:
            fits.append(r)
    if not fits:
        raise FitFailureError("every model in the grid failed to fit")
    lp = np.array([prior.log_model_prior(f.kappa) for f in fits])
    probs = model_probabilities([f.log_marginal_likelihood for f in fits], lp)
    return ModelEnsemble(fits, probs, stats.tau_bar, lp, dropped)


# --------------------------------------------------------------------------
# Frequentist baselines
# --------------------------------------------------------------------------

@dataclass
class MLEResult:
    params: ModelParams
    covariance: np.ndarray
    aic: float
    log_likelihood: float
    gradient_norm: float

    def __iter__(self):
        return iter((self.params, self.covariance, self.aic))


def fit_mle(snapshot, kappa, optimizer_config=None, stats=None):
    """Maximum likelihood fit; returns ``(params, covariance, aic)``.

    The covariance is the inverse observed information in natural
    coordinates.
    """
    config = optimizer_config or OptimizerConfig()
    stats = stats or SufficientStats(snapshot)
    _check_identified(stats)
    target = LogPosterior(stats, kappa, None)
    starts = _starting_points(stats, kappa, None, target.dim)[:max(config.n_starts, 1)]
    x, fx = _maximise(target, starts, config)
    p = target.params(x)
    info = -hessian(p, stats)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.full_like(info, np.nan)
    g = score(p, stats)
    aic = 2.0 * target.dim - 2.0 * fx
    return MLEResult(p, cov, aic, fx, float(np.linalg.norm(g)))


def fit_hpp(snapshot):
    """Constant aggregate rate: total recruits divided by elapsed days."""
    if snapshot.census_day <= 0:
        raise ValidationError("census_day must be positive for an HPP fit")
    return snapshot.total_recruits / snapshot.census_day


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------

def ensemble_to_dict(ensemble, store_draws=2000, seed=0):
    """JSON-ready summary of an ensemble.

    Per model it keeps the mode, proposal shape, log marginal likelihood,
    ESS and ``store_draws`` resampled log-parameter vectors, which are what
    forecasting from a file uses.
    """
    models = []
    for fit, p, lp in zip(ensemble.fits, ensemble.posterior_model_probs,
                          ensemble.log_model_priors):
        idx = resample_indices(fit, store_draws, seed, 0) if store_draws else []
        models.append({
            "kappa": kappa_label(fit.kappa),
            "posterior_prob": float(p),
            "log_model_prior": float(lp),
            "log_marginal_likelihood": fit.log_marginal_likelihood,
            "ess": fit.ess,
            "n_samples": fit.n_samples,
            "mode": fit.mode.as_dict(),
            "shape_matrix": fit.shape_matrix.tolist(),
            "posterior_mean": fit.posterior_mean().as_dict(),
            "diagnostics": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                            for k, v in fit.diagnostics.items()},
            "draws": fit.samples[idx].tolist() if store_draws else [],
        })
    return {"tau_bar": ensemble.tau_bar, "models": models,
            "dropped": dict(ensemble.dropped)}


def ensemble_from_dict(d):
    """Rebuild an ensemble whose samples are the stored equal-weight draws."""
    fits, probs, lps = [], [], []
    for m in d["models"]:
        kappa = parse_kappa(m["kappa"])
        draws = np.asarray(m["draws"], dtype=float)
        mode = m["mode"]
        mp = ModelParams(mode["alpha"], mode["phi"], mode.get("theta"), kappa)
        if draws.size == 0:
            draws = mp.to_log()[None, :]
        fits.append(ModelFit(
            kappa=kappa, samples=draws, log_weights=np.zeros(draws.shape[0]),
            log_marginal_likelihood=m["log_marginal_likelihood"], ess=m["ess"],
            mode=mp, shape_matrix=np.asarray(m["shape_matrix"]),
            tau_bar=d["tau_bar"], n_samples=m.get("n_samples", 0),
            diagnostics=dict(m.get("diagnostics", {}))))
        probs.append(m["posterior_prob"])
        lps.append(m.get("log_model_prior", 0.0))
    return ModelEnsemble(fits, np.asarray(probs), float(d["tau_bar"]),
                         np.asarray(lps), dict(d.get("dropped", {})))
