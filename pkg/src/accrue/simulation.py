"""Ground-truth trial generator and the stochastic initiation-delay model.

``simulate_trial`` draws a full-horizon trial: initiation days from a
schedule, a random effect per centre, and daily Poisson counts driven by the
centre's local-clock integrated intensity.  Truncating the result with
:meth:`TrialSnapshot.at_census` gives interim data with a known future.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import rng as rngmod
from .data import RecruitmentSeries, TrialSnapshot
from .exceptions import InsufficientDataError, ValidationError
from .shapes import CurveShape, WeibullShape

SCHEDULES = ("uniform", "clumped", "explicit", "typical")
RANDOM_EFFECTS = ("gamma", "mixture")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``shape`` may be a :class:`CurveShape` or :class:`WeibullShape`; its
    ``tau_bar`` is ignored and replaced by the mean open duration at
    ``trial_days`` unless ``tau_bar`` is given, so that ``phi`` keeps its
    meaning of an average daily rate over a typical centre's lifetime.
    For the mixture random effect ``phi`` is unused and ``mixture_phis``
    gives the two component means.
    """

    n_centres: int = 200
    trial_days: int = 600
    alpha: float = 1.4
    phi: float = 0.01
    shape: object = None
    schedule: str = "uniform"
    initiation_days: tuple = ()
    clump_period: int = 60
    clump_jitter: int = 7
    random_effect: str = "gamma"
    mixture_phis: tuple = ()
    mixture_weight: float = 0.5
    deterministic_first_recruitment: bool = False
    tau_bar: float = None
    target: int = None
    seed: int = None

    def __post_init__(self):
        if self.n_centres < 1 or self.trial_days < 1:
            raise ValidationError("n_centres and trial_days must be >= 1")
        if not (self.alpha > 0 and self.phi > 0):
            raise ValidationError("alpha and phi must be positive")
        if self.schedule not in SCHEDULES:
            raise ValidationError(f"schedule must be one of {SCHEDULES}")
        if self.schedule == "explicit":
            if len(self.initiation_days) != self.n_centres:
                raise ValidationError("explicit schedule needs n_centres days")
            if any(not 0 <= d < self.trial_days for d in self.initiation_days):
                raise ValidationError("explicit initiation days must lie in [0, trial_days)")
        if self.random_effect not in RANDOM_EFFECTS:
            raise ValidationError(f"random_effect must be one of {RANDOM_EFFECTS}")
        if self.random_effect == "mixture":
            if len(self.mixture_phis) != 2 or min(self.mixture_phis) <= 0:
                raise ValidationError("mixture needs two positive component means")
            if not 0 < self.mixture_weight < 1:
                raise ValidationError("mixture weight must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        shape = d.pop("shape", None)
        if isinstance(shape, dict):
            kind = shape.get("kind", "curve")
            if kind == "weibull":
                shape = WeibullShape(shape["theta"], shape["k"])
            else:
                shape = CurveShape(shape["kappa"], shape.get("theta"))
        for key in ("initiation_days", "mixture_phis"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(shape=shape, **d)


def _schedule(config, rng):
    n, T = config.n_centres, config.trial_days
    if config.schedule == "explicit":
        days = np.asarray(config.initiation_days, dtype=np.int64)
    elif config.schedule == "uniform":
        days = rng.integers(0, T, size=n)
    elif config.schedule == "typical":
        days = np.floor(rng.beta(1.0, 2.0, size=n) * 0.8 * T).astype(np.int64)
    else:
        grid = np.arange(0, T, config.clump_period)
        centre = rng.choice(grid, size=n)
        jitter = rng.integers(-config.clump_jitter, config.clump_jitter + 1, size=n)
        days = np.clip(centre + jitter, 0, T - 1)
    return np.sort(days)


def _random_effects(config, rng):
    n, a = config.n_centres, config.alpha
    if config.random_effect == "gamma":
        return rng.gamma(a, config.phi / a, size=n)
    phi1, phi2 = config.mixture_phis
    comp = rng.random(n) < config.mixture_weight
    return np.where(comp, rng.gamma(a, phi1 / a, size=n),
                    rng.gamma(a, phi2 / a, size=n))


def _with_tau_bar(shape, tau_bar):
    if shape is None:
        return CurveShape(0.0, None, tau_bar)
    if isinstance(shape, WeibullShape):
        return WeibullShape(shape.theta, shape.k, tau_bar)
    return CurveShape(shape.kappa, shape.theta, tau_bar)


def simulate_trial(config, seed=None):
    """Simulate a trial through ``trial_days``; returns a full-horizon snapshot."""
    seed = config.seed if seed is None else seed
    if seed is None:
        raise ValidationError("simulate_trial needs a seed")
    sched_rng = rngmod.stream(seed, rngmod.NS_SIMULATION, 0)
    days = _schedule(config, sched_rng)
    lam = _random_effects(config, rngmod.stream(seed, rngmod.NS_SIMULATION, 1))
    T = config.trial_days
    taus = T - days
    tau_bar = config.tau_bar or float(taus.mean())
    shape = _with_tau_bar(config.shape, tau_bar)
    H = shape.increments(np.arange(1.0, T + 1.0))
    centres = []
    for c, (d, tau) in enumerate(zip(days, taus)):
        r = rngmod.stream(seed, rngmod.NS_SIMULATION, 2, c)
        counts = r.poisson(lam[c] * H[:tau])
        if config.deterministic_first_recruitment and tau > 0:
            counts[0] += 1
        centres.append(RecruitmentSeries(f"c{c:04d}", int(d), tuple(counts.tolist())))
    return TrialSnapshot(
        census_day=T, centres=tuple(centres), target=config.target,
        deterministic_first_recruitment=config.deterministic_first_recruitment,
        extra={"random_effects": lam, "tau_bar": tau_bar})


# --------------------------------------------------------------------------
# Initiation delays
# --------------------------------------------------------------------------

DELAY_P5, DELAY_P95 = 10.0, 322.0


def default_delay_params(p5=DELAY_P5, p95=DELAY_P95):
    """Weibull (scale, shape) whose 5th and 95th percentiles are ``p5``, ``p95``."""
    l5, l95 = math.log(-math.log(0.95)), math.log(-math.log(0.05))
    k = (l95 - l5) / math.log(p95 / p5)
    scale = p5 / math.exp(l5 / k)
    return scale, k


def weibull_quantile(q, scale, shape):
    return scale * (-np.log1p(-np.asarray(q, dtype=float))) ** (1.0 / shape)


_DEFAULT_SCALE, _DEFAULT_SHAPE = default_delay_params()


@dataclass(frozen=True)
class DelayModel:
    weibull_scale: float = _DEFAULT_SCALE
    weibull_shape: float = _DEFAULT_SHAPE
    planned_days: tuple = field(default=())

    def __post_init__(self):
        if not (self.weibull_scale >= 0 and self.weibull_shape > 0):
            raise ValidationError("Weibull scale must be >= 0 and shape > 0")

    def quantile(self, q):
        return weibull_quantile(q, self.weibull_scale, self.weibull_shape)

    @property
    def median(self):
        return float(self.quantile(0.5))


def draw_delays(dm, n, seed):
    rng = rngmod.stream(seed, rngmod.NS_DELAYS)
    return dm.weibull_scale * rng.weibull(dm.weibull_shape, size=n)


def simulate_delays(dm, seed):
    """Actual initiation days (planned day plus a Weibull delay, floored)."""
    planned = np.asarray(dm.planned_days, dtype=np.int64)
    delays = draw_delays(dm, planned.size, seed)
    return planned + np.floor(delays).astype(np.int64)


def _weibull_negloglik(x, d_obs, d_cens):
    scale, k = np.exp(x)
    z = d_obs / scale
    ll = (np.log(k / scale) + (k - 1.0) * np.log(z) - z ** k).sum()
    ll -= ((d_cens / scale) ** k).sum()
    return -ll


def fit_delays_censored(observed_delays, discrete=False):
    """Censored Weibull MLE of ``(scale, shape)``.

    ``observed_delays`` is a sequence of ``(delay_days, censored)`` pairs;
    censored entries are centres still waiting to open, contributing the
    survivor function at their elapsed wait.  With ``discrete=True`` the
    uncensored delays are whole days and are evaluated at the midpoint of
    ``[d, d + 1)``.
    """
    obs = [(float(d), bool(c)) for d, c in observed_delays]
    d_obs = np.array([d for d, c in obs if not c])
    d_cens = np.array([d for d, c in obs if c])
    if d_obs.size == 0:
        raise InsufficientDataError("all delays are censored; Weibull is unidentifiable")
    if d_obs.size < 2:
        raise InsufficientDataError("need at least two uncensored delays")
    if discrete:
        d_obs = d_obs + 0.5
    if np.any(d_obs <= 0):
        raise ValidationError("uncensored delays must be positive")
    if np.unique(d_obs).size == 1:
        warnings.warn("all uncensored delays are equal; the shape estimate "
                      "runs to the boundary", RuntimeWarning)
    logd = np.log(d_obs)
    k0 = 1.2 / max(logd.std(), 1e-3)
    x0 = np.array([logd.mean() + 0.5772 / k0, math.log(k0)])
    res = optimize.minimize(_weibull_negloglik, x0, args=(d_obs, d_cens),
                            method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    scale, k = np.exp(res.x)
    if k > 1e3 or not res.success:
        warnings.warn(f"delay fit at boundary or not converged (shape={k:.3g})",
                      RuntimeWarning)
    return float(scale), float(k)
