"""Priors on the log-parameters and over the curve-shape models.

All densities are on ``(log alpha, log phi, log theta)``.  The curve-shape
prior places ``Beta(a, b)`` on the intensity ratio
``R = g(t0) / g(0) = (1 + theta t0 / kappa) ** -kappa`` (``exp(-theta t0)``
for ``kappa = inf``) and is pushed through to ``log theta``.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import DomainError, ValidationError
from .shapes import KAPPA_GRID, kappa_label, parse_kappa

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorConfig:
    alpha_mean: float = 0.2
    alpha_sd: float = 2.0
    phi_lo: float = -8.0
    phi_hi: float = 8.0
    t0: float = 120.0
    a: float = 1.1
    b: float = 1.1
    model_prior: dict = field(default=None)

    def __post_init__(self):
        if not self.alpha_sd > 0:
            raise ValidationError("alpha sd must be positive")
        if not self.phi_hi > self.phi_lo:
            raise ValidationError("phi prior needs hi > lo")
        if not (self.a > 0 and self.b > 0 and self.t0 > 0):
            raise ValidationError("theta prior needs t0, a, b > 0")
        mp = self.model_prior
        if mp is None:
            mp = {kappa_label(k): 1.0 / len(KAPPA_GRID) for k in KAPPA_GRID}
        else:
            mp = {kappa_label(parse_kappa(k)): float(v) for k, v in mp.items()}
        if any(v < 0 for v in mp.values()) or not math.isclose(
                sum(mp.values()), 1.0, rel_tol=1e-9):
            raise ValidationError("model prior must be non-negative and sum to 1")
        object.__setattr__(self, "model_prior", mp)

    @property
    def kappas(self):
        return tuple(parse_kappa(k) for k in self.model_prior)

    def log_model_prior(self, kappa):
        w = self.model_prior.get(kappa_label(kappa), 0.0)
        return math.log(w) if w > 0 else -math.inf

    def to_dict(self):
        return {
            "alpha": {"mean": self.alpha_mean, "sd": self.alpha_sd},
            "phi": {"lo": self.phi_lo, "hi": self.phi_hi},
            "theta": {"t0_days": self.t0, "a": self.a, "b": self.b},
            "model_prior": dict(self.model_prior),
        }

    @classmethod
    def from_dict(cls, d):
        kw = {}
        if "alpha" in d:
            kw.update(alpha_mean=d["alpha"].get("mean", 0.2),
                      alpha_sd=d["alpha"].get("sd", 2.0))
        if "phi" in d:
            kw.update(phi_lo=d["phi"].get("lo", -8.0), phi_hi=d["phi"].get("hi", 8.0))
        if "theta" in d:
            kw.update(t0=d["theta"].get("t0_days", 120.0), a=d["theta"].get("a", 1.1),
                      b=d["theta"].get("b", 1.1))
        if "model_prior" in d:
            kw["model_prior"] = d["model_prior"]
        return cls(**kw)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def log_prior_alpha(alpha_tilde, config):
    z = (np.asarray(alpha_tilde, dtype=float) - config.alpha_mean) / config.alpha_sd
    return -0.5 * z * z - LOG_SQRT_2PI - math.log(config.alpha_sd)


def log_prior_phi(phi_tilde, config):
    x = np.asarray(phi_tilde, dtype=float)
    inside = (x > config.phi_lo) & (x < config.phi_hi)
    return np.where(inside, -math.log(config.phi_hi - config.phi_lo), -np.inf)


def _log1mexp(u):
    """log(1 - exp(-u)) for u > 0."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(u < math.log(2.0), np.log(-np.expm1(-u)), np.log1p(-np.exp(-u)))


def log_prior_theta(theta_tilde, kappa, config):
    """Log density of ``log theta`` implied by ``R ~ Beta(a, b)``."""
    kappa = parse_kappa(kappa)
    if kappa == 0:
        raise DomainError("the kappa = 0 model has no theta")
    x = np.asarray(theta_tilde, dtype=float)
    a, b = config.a, config.b
    u = config.t0 * np.exp(x)
    lbeta = special.betaln(a, b)
    if math.isinf(kappa):
        # R = exp(-u); |dR/dx| = u exp(-u)
        return np.log(u) - a * u + (b - 1.0) * _log1mexp(u) - lbeta
    L = np.log1p(u / kappa)
    # R = exp(-kappa L); |dR/dx| = u (1 + u/kappa)^(-kappa-1)
    return (np.log(u) - (kappa + 1.0) * L - (a - 1.0) * kappa * L
            + (b - 1.0) * _log1mexp(kappa * L) - lbeta)


def _theta_derivs(x, kappa, config):
    """First and second derivatives of log_prior_theta in ``log theta``."""
    a, b = config.a, config.b
    u = config.t0 * math.exp(x)
    if math.isinf(kappa):
        em1 = math.expm1(u)
        d1 = 1.0 - a * u + (b - 1.0) * u / em1
        d2 = -a * u + (b - 1.0) * u * (em1 - u * (em1 + 1.0)) / em1 ** 2
        return d1, d2
    s = u / (kappa + u)
    L = math.log1p(u / kappa)
    q = math.exp(-kappa * L)
    f = q / -math.expm1(-kappa * L)
    d1 = 1.0 - (kappa + 1.0) * s - (a - 1.0) * kappa * s + (b - 1.0) * kappa * s * f
    ds = s * (1.0 - s)
    df = -kappa * s * f * (1.0 + f)
    d2 = (-(kappa + 1.0) * ds - (a - 1.0) * kappa * ds
          + (b - 1.0) * kappa * (ds * f + s * df))
    return d1, d2


def log_prior(params, config):
    """Joint log prior density of the log-parameters of ``params``."""
    lp = float(log_prior_alpha(math.log(params.alpha), config)
               + log_prior_phi(math.log(params.phi), config))
    if params.kappa != 0:
        lp += float(log_prior_theta(math.log(params.theta), params.kappa, config))
    return lp


def log_prior_vec(x, kappa, config):
    """Vectorised log prior over rows of log-parameters ``x``."""
    x = np.atleast_2d(x)
    lp = log_prior_alpha(x[:, 0], config) + log_prior_phi(x[:, 1], config)
    if parse_kappa(kappa) != 0:
        lp = lp + log_prior_theta(x[:, 2], kappa, config)
    return lp


def log_prior_grad_hess(x, kappa, config):
    """Gradient and Hessian of the log prior at log-parameters ``x``.

    The uniform ``log phi`` component contributes nothing inside its support.
    """
    x = np.asarray(x, dtype=float)
    k = len(x)
    grad = np.zeros(k)
    hess = np.zeros((k, k))
    grad[0] = -(x[0] - config.alpha_mean) / config.alpha_sd ** 2
    hess[0, 0] = -1.0 / config.alpha_sd ** 2
    if k == 3:
        grad[2], hess[2, 2] = _theta_derivs(float(x[2]), parse_kappa(kappa), config)
    return grad, hess


def sample_log_theta(kappa, config, size, rng):
    """Draw ``log theta`` from its prior by inverting the ratio transform."""
    kappa = parse_kappa(kappa)
    R = rng.beta(config.a, config.b, size=size)
    if math.isinf(kappa):
        theta = -np.log(R) / config.t0
    else:
        theta = kappa * np.expm1(-np.log(R) / kappa) / config.t0
    return np.log(theta)
