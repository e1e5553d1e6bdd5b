"""Posterior-predictive recruitment: centre posteriors, accrual paths and
time to completion.

Each forecast draw picks a model by its posterior probability, a parameter
vector from that model's weighted sample, and a random effect per centre
from its conjugate gamma posterior (the prior for centres that have yet to
open).  Accrual paths then follow by simulating daily Poisson counts.
Because a sum of independent Poisson counts is Poisson, each day's total can
be drawn at once from the summed intensity of all open centres.  Completion
times come from inverting the integrated intensity at a Gamma(m, 1) draw.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng as rngmod
from .exceptions import DomainError, ValidationError
from .inference import n_threads
from .shapes import CurveShape, kappa_label

BISECTION_TOL = 1e-6
# Completion times beyond this many days after the census count as never.
MAX_HORIZON = 1e9


@dataclass(frozen=True)
class CentrePosterior:
    alpha_star: float
    phi_star: float

    @property
    def rate(self):
        return self.alpha_star / self.phi_star

    @property
    def mean(self):
        return self.phi_star


def centre_posterior(params, series, tau_bar=None, G_tau=None):
    """Conjugate gamma posterior of one centre's random effect.

    ``series`` may be a :class:`RecruitmentSeries` or an ``(n, tau)`` pair.
    ``G_tau`` overrides the integrated intensity over the centre's exposure.
    """
    if hasattr(series, "counts"):
        n, tau = series.total, series.tau
    else:
        n, tau = series
    if G_tau is None:
        if tau == 0:
            G_tau = 0.0
        elif params.kappa == 0:
            G_tau = float(tau)
        else:
            if tau_bar is None:
                raise ValidationError("tau_bar is required for kappa > 0")
            G_tau = float(CurveShape(params.kappa, params.theta, tau_bar).G(tau))
    a, phi = params.alpha, params.phi
    a_star = a + n
    return CentrePosterior(a_star, phi * a_star / (a + phi * G_tau))


def predictive_count_pmf(cp, g_plus, n):
    """Negative binomial predictive probability of ``n`` recruits.

    ``g_plus`` is the integral of the curve-shape over the future interval.
    """
    if g_plus < 0:
        raise DomainError("g_plus must be non-negative")
    p = cp.alpha_star / (cp.alpha_star + cp.phi_star * g_plus)
    return stats.nbinom.pmf(n, cp.alpha_star, p)


# --------------------------------------------------------------------------
# Parameter and random-effect draws
# --------------------------------------------------------------------------

@dataclass
class _Group:
    """Draws within a block that share a model."""
    kappa: float
    rows: np.ndarray      # positions within the block
    theta: np.ndarray     # (n,) or None
    lam: np.ndarray       # (n, n_centres) random effects


@dataclass
class _Layout:
    """Open and future centres in the order used for random effects."""
    init: np.ndarray
    tau: np.ndarray
    n: np.ndarray
    future: np.ndarray    # bool
    census: int
    deterministic: bool


def _layout(snapshot):
    cs = snapshot.model_centres()
    init = [c.initiation_day for c in cs] + list(snapshot.planned_initiations)
    tau = [c.tau for c in cs] + [0] * len(snapshot.planned_initiations)
    n = [c.total for c in cs] + [0] * len(snapshot.planned_initiations)
    future = [False] * len(cs) + [True] * len(snapshot.planned_initiations)
    return _Layout(np.array(init, np.int64), np.array(tau, np.int64),
                   np.array(n, float), np.array(future, bool),
                   snapshot.census_day, snapshot.deterministic_first_recruitment)


def _model_weights(fit):
    w = np.exp(fit.log_weights - fit.log_weights.max())
    return w / w.sum()


def _draw_block(ensemble, layout, size, rng, stratified_models=None):
    """Sample model, parameters and random effects for ``size`` draws."""
    probs = np.asarray(ensemble.posterior_model_probs, float)
    if stratified_models is None:
        models = rng.choice(len(ensemble.fits), size=size, p=probs / probs.sum())
    else:
        models = stratified_models
    groups = []
    for k in np.unique(models):
        fit = ensemble.fits[k]
        rows = np.nonzero(models == k)[0]
        idx = rng.choice(len(fit.log_weights), size=rows.size, p=_model_weights(fit))
        x = np.exp(fit.samples[idx])
        alpha, phi = x[:, 0:1], x[:, 1:2]
        theta = x[:, 2] if fit.kappa != 0 else None
        if fit.kappa == 0:
            G = layout.tau[None, :].astype(float)
        else:
            G = CurveShape(fit.kappa, theta[:, None], ensemble.tau_bar).G(layout.tau[None, :])
        a_star = alpha + layout.n[None, :]
        rate = alpha / phi + G
        lam = rng.standard_gamma(a_star) / rate
        groups.append(_Group(fit.kappa, rows, theta, lam))
    return models, groups


def _stratified(ensemble, draws):
    """Deterministic model allocation proportional to posterior probabilities."""
    probs = np.asarray(ensemble.posterior_model_probs, float)
    counts = np.floor(probs * draws).astype(int)
    rem = draws - counts.sum()
    order = np.argsort(-(probs * draws - counts), kind="stable")
    counts[order[:rem]] += 1
    return np.repeat(np.arange(len(probs)), counts)


# --------------------------------------------------------------------------
# Accrual paths
# --------------------------------------------------------------------------

@dataclass
class ForecastEnsemble:
    """Sampled cumulative accrual paths.

    ``paths[i, j]`` is the accrual of draw ``i`` before global day
    ``horizon_days[j]``; the first column is the observed census accrual.
    """

    horizon_days: np.ndarray
    paths: np.ndarray
    completion_times: np.ndarray = None
    model_index: np.ndarray = None
    kappas: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def draws(self):
        return self.paths.shape[0]

    @property
    def quantile_bands(self):
        q = np.quantile(self.paths, [0.025, 0.975], axis=0)
        return np.column_stack([q[0], self.paths.mean(axis=0), q[1]])

    def at(self, day):
        j = int(day) - int(self.horizon_days[0])
        if not 0 <= j < self.horizon_days.size:
            raise ValidationError(f"day {day} outside the forecast horizon")
        return self.paths[:, j]

    def aggregate(self, period):
        """Keep every ``period``-th day (plus the last), e.g. months of 30 days."""
        if period < 1:
            raise ValidationError("aggregation period must be >= 1")
        idx = np.arange(0, self.horizon_days.size, int(period))
        if idx[-1] != self.horizon_days.size - 1:
            idx = np.append(idx, self.horizon_days.size - 1)
        return ForecastEnsemble(self.horizon_days[idx], self.paths[:, idx],
                                self.completion_times, self.model_index,
                                self.kappas, dict(self.meta, aggregate=int(period)))


def _path_block(ensemble, layout, start, size, horizon, seed, stratified):
    rng = rngmod.stream(seed, rngmod.NS_FORECAST, start // rngmod.BLOCK_SIZE)
    models, groups = _draw_block(ensemble, layout, size, rng,
                                 None if stratified is None else stratified[start:start + size])
    census = layout.census
    D = horizon - census
    mu = np.zeros((size, D))
    lo = int(layout.init.min()) if layout.init.size else census
    L = horizon - lo
    for g in groups:
        shape = CurveShape(g.kappa, None if g.theta is None else g.theta[:, None],
                           ensemble.tau_bar)
        Ht = np.broadcast_to(shape.increments(np.arange(1.0, L + 1.0)[None, :]),
                             (g.rows.size, L)) if L > 0 else np.zeros((g.rows.size, 0))
        m = np.zeros((g.rows.size, D))
        for c in range(layout.init.size):
            first = max(census, int(layout.init[c]))
            if first >= horizon:
                continue
            a = first - int(layout.init[c])
            m[:, first - census:] += g.lam[:, c:c + 1] * Ht[:, a:a + horizon - first]
        mu[g.rows] = m
    daily = rng.poisson(mu).astype(np.int64)
    if layout.deterministic:
        for d in layout.init[layout.future]:
            if census <= d < horizon:
                daily[:, d - census] += 1
    return daily, models


def sample_accrual_paths(ensemble, snapshot, horizon, draws=2000, seed=None,
                         stratify_models=False, threads=None):
    """Model-averaged posterior-predictive accrual paths up to ``horizon``.

    Returns a :class:`ForecastEnsemble` with one column per global day from
    the census to ``horizon`` inclusive.
    """
    if seed is None:
        raise ValidationError("sample_accrual_paths needs a seed")
    if not ensemble.fits:
        raise ValidationError("empty model ensemble")
    horizon = int(horizon)
    if horizon < snapshot.census_day:
        raise ValidationError("horizon must not precede the census day")
    layout = _layout(snapshot)
    strat = _stratified(ensemble, draws) if stratify_models else None
    work = list(rngmod.blocks(draws))

    def run(item):
        _, lo, hi = item
        return _path_block(ensemble, layout, lo, hi - lo, horizon, seed, strat)

    workers = min(n_threads(threads), len(work)) or 1
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, work))
    else:
        parts = [run(w) for w in work]
    D = horizon - snapshot.census_day
    daily = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, D), np.int64)
    models = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, int)
    base = snapshot.total_recruits
    paths = np.concatenate([np.full((draws, 1), base, np.int64),
                            base + np.cumsum(daily, axis=1)], axis=1)
    days = np.arange(snapshot.census_day, horizon + 1)
    return ForecastEnsemble(days, paths, None, models,
                            tuple(kappa_label(k) for k in ensemble.kappas),
                            {"seed": seed, "draws": draws})


def forecast_quantiles(fe, probs):
    """Per-day empirical quantiles; returns an array ``(n_days, len(probs))``."""
    probs = np.asarray(probs, dtype=float)
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValidationError("quantile probabilities must lie in (0, 1)")
    return np.quantile(fe.paths, probs, axis=0).T


# --------------------------------------------------------------------------
# Time to completion
# --------------------------------------------------------------------------

def _Lambda(groups, layout, shapes, t):
    """Integrated intensity from the census to global time ``t`` (per draw)."""
    out = np.empty(t.shape)
    for g, shape in zip(groups, shapes):
        tg = t[g.rows][:, None]
        local = np.maximum(tg - layout.init[None, :], 0.0)
        G_now = shape.G(local)
        G_obs = shape.G(layout.tau[None, :].astype(float))
        out[g.rows] = (g.lam * (G_now - G_obs)).sum(axis=1)
    return out


def _invert(groups, layout, shapes, target, t_lo):
    """Smallest ``t >= t_lo`` with Lambda(t) >= target; ``inf`` if none."""
    census = float(layout.census)
    lo = np.full(target.shape, float(t_lo))
    step = np.full(target.shape, 1.0)
    hi = lo + step
    active = _Lambda(groups, layout, shapes, hi) < target
    cap = census + MAX_HORIZON
    while np.any(active):
        step = np.where(active, step * 2.0, step)
        lo = np.where(active, hi, lo)
        hi = np.where(active, np.minimum(lo + step, cap), hi)
        active = active & (_Lambda(groups, layout, shapes, hi) < target) & (hi < cap)
    never = _Lambda(groups, layout, shapes, hi) < target
    while True:
        width = hi - lo
        if np.all((width <= BISECTION_TOL) | never):
            break
        mid = 0.5 * (lo + hi)
        below = _Lambda(groups, layout, shapes, mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.where(never, np.inf, hi)


def _ttc_block(ensemble, layout, start, size, m, seed):
    rng = rngmod.stream(seed, rngmod.NS_COMPLETION, start // rngmod.BLOCK_SIZE)
    models, groups = _draw_block(ensemble, layout, size, rng)
    shapes = [CurveShape(g.kappa, None if g.theta is None else g.theta[:, None],
                         ensemble.tau_bar) for g in groups]
    census = float(layout.census)
    det = np.sort(layout.init[layout.future]).astype(float) if layout.deterministic \
        else np.zeros(0)
    K = min(det.size, m)
    # Gamma(j, 1) for j = m - K .. m as nested partial sums of exponentials.
    j0 = m - K
    gam = np.zeros((size, K + 1))
    gam[:, 0] = rng.standard_gamma(j0, size=size) if j0 > 0 else 0.0
    if K:
        gam[:, 1:] = gam[:, :1] + np.cumsum(rng.standard_exponential((size, K)), axis=1)
    best = np.full(size, np.inf)
    for k in range(K + 1):
        need = m - k            # stochastic recruits still required
        t_det = det[k - 1] if k > 0 else census
        if need == 0:
            t = np.full(size, t_det)
        else:
            s = _invert(groups, layout, shapes, gam[:, K - k], census)
            t = np.maximum(s, t_det)
        best = np.minimum(best, t)
    return best, models


def time_to_completion(ensemble, snapshot, m, draws=10_000, seed=None, threads=None):
    """Sampled global completion days for ``m`` further recruits.

    Draws that can never reach ``m`` (a bounded integrated intensity) are
    ``inf``.  Returns a :class:`ForecastEnsemble` whose ``completion_times``
    holds the sample and whose ``meta['n_never']`` counts the sentinels.
    """
    if seed is None:
        raise ValidationError("time_to_completion needs a seed")
    m = int(m)
    if m < 1:
        raise ValidationError("m must be >= 1")
    if not ensemble.fits:
        raise ValidationError("empty model ensemble")
    layout = _layout(snapshot)
    work = list(rngmod.blocks(draws))

    def run(item):
        _, lo, hi = item
        return _ttc_block(ensemble, layout, lo, hi - lo, m, seed)

    workers = min(n_threads(threads), len(work)) or 1
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, work))
    else:
        parts = [run(w) for w in work]
    times = np.concatenate([p[0] for p in parts])
    models = np.concatenate([p[1] for p in parts])
    return ForecastEnsemble(np.array([snapshot.census_day]),
                            np.full((draws, 1), snapshot.total_recruits),
                            times, models,
                            tuple(kappa_label(k) for k in ensemble.kappas),
                            {"seed": seed, "draws": draws, "m": m,
                             "n_never": int(np.isinf(times).sum())})


def model_averaged_count_pmf(ensemble, series, t_start, t_end, n):
    """Predictive pmf of one centre's count over local times ``(t_start, t_end]``.

    Mixes the negative binomial pmf over each model's weighted sample and
    over models.
    """
    n = np.atleast_1d(np.asarray(n))
    if hasattr(series, "counts"):
        nc, tau = series.total, series.tau
    else:
        nc, tau = series
    out = np.zeros(n.shape, dtype=float)
    for fit, p in zip(ensemble.fits, ensemble.posterior_model_probs):
        x = np.exp(fit.samples)
        w = _model_weights(fit)
        a, phi = x[:, 0], x[:, 1]
        if fit.kappa == 0:
            G_tau = np.full(a.shape, float(tau))
            gp = np.full(a.shape, float(t_end - t_start))
        else:
            sh = CurveShape(fit.kappa, x[:, 2], ensemble.tau_bar)
            G_tau = sh.G(float(tau)) if tau else np.zeros(a.shape)
            gp = sh.G(float(t_end)) - sh.G(float(t_start))
        a_star = a + nc
        phi_star = phi * a_star / (a + phi * G_tau)
        prob = a_star / (a_star + phi_star * gp)
        pmf = stats.nbinom.pmf(n[None, :], a_star[:, None], prob[:, None])
        out += p * (w @ pmf)
    return out
