"""Marginal likelihood of the inhomogeneous Poisson-gamma recruitment model.

Centre ``c`` has random effect ``lambda_c ~ Gamma(alpha, rate=alpha/phi)`` and
daily counts ``N_c(t) ~ Pois(lambda_c * H(t))`` where ``H(t) = G(t) - G(t-1)``.
Integrating out ``lambda_c`` gives, with ``r = alpha / phi``,

    l = sum_c [ alpha log r - lgamma(alpha) + lgamma(alpha + n_c)
                - (alpha + n_c) log(G(tau_c) + r) ]
        + sum_t S_t log H(t) - sum log n!

where ``S_t`` totals the counts on local day ``t`` over all centres.  The data
enter only through ``(tau_c, n_c)`` pairs and ``S_t``, which
:class:`SufficientStats` precomputes once per snapshot.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import DomainError, NumericOverflowError
from .shapes import CurveShape, kappa_label, parse_kappa


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    phi: float
    theta: float = None
    kappa: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kappa", parse_kappa(self.kappa))
        if not (self.alpha > 0 and self.phi > 0):
            raise DomainError("alpha and phi must be positive")
        if self.kappa != 0 and not (self.theta is not None and self.theta > 0):
            raise DomainError("theta must be positive when kappa > 0")

    @property
    def dim(self):
        return 2 if self.kappa == 0 else 3

    def to_log(self):
        v = [np.log(self.alpha), np.log(self.phi)]
        if self.kappa != 0:
            v.append(np.log(self.theta))
        return np.array(v)

    @classmethod
    def from_log(cls, x, kappa):
        x = np.asarray(x, dtype=float)
        theta = float(np.exp(x[2])) if parse_kappa(kappa) != 0 else None
        return cls(float(np.exp(x[0])), float(np.exp(x[1])), theta, kappa)

    def as_dict(self):
        d = {"alpha": self.alpha, "phi": self.phi, "kappa": kappa_label(self.kappa)}
        if self.kappa != 0:
            d["theta"] = self.theta
        return d


class SufficientStats:
    """Data summaries needed by the likelihood, built from a snapshot."""

    def __init__(self, snapshot, tau_bar=None):
        centres = [c for c in snapshot.model_centres() if c.tau > 0]
        self.centre_ids = [c.centre_id for c in centres]
        self.taus = np.array([c.tau for c in centres], dtype=float)
        self.totals = np.array([c.total for c in centres], dtype=float)
        self.n_centres = len(centres)
        tmax = int(self.taus.max()) if centres else 0
        day_totals = np.zeros(tmax)
        lfact = 0.0
        for c in centres:
            arr = c.as_array()
            day_totals[:c.tau] += arr
            lfact += special.gammaln(arr + 1.0).sum()
        self.day_totals = day_totals
        self.log_factorials = float(lfact)
        nz = np.nonzero(day_totals)[0]
        self.count_days = nz + 1.0          # local day index t (1-based)
        self.count_weights = day_totals[nz]
        pairs, mult = np.unique(np.column_stack([self.taus, self.totals]),
                                axis=0, return_counts=True) if centres else (
            np.zeros((0, 2)), np.zeros(0, dtype=int))
        self.pair_tau = pairs[:, 0]
        self.pair_n = pairs[:, 1]
        self.pair_mult = mult.astype(float)
        if tau_bar is None:
            tau_bar = snapshot.mean_open_duration() if centres else 1.0
        self.tau_bar = float(tau_bar)

    def shape(self, kappa, theta=None):
        return CurveShape(kappa, theta, self.tau_bar)


def _as_stats(data, tau_bar=None):
    if isinstance(data, SufficientStats):
        return data
    return SufficientStats(data, tau_bar)


def loglik_arrays(stats, kappa, alpha, phi, theta=None):
    """Vectorised log-likelihood over arrays of parameters (no error checks).

    Returns an array broadcast from the parameter inputs; invalid or
    overflowing evaluations come back as ``-inf``/``nan``.
    """
    alpha = np.asarray(alpha, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    if stats.n_centres == 0:
        return np.zeros(np.broadcast(alpha, phi).shape[:-1])
    kappa = parse_kappa(kappa)
    if kappa == 0:
        G = stats.pair_tau + 0.0 * alpha
        day_term = 0.0
    else:
        th = np.asarray(theta, dtype=float)[..., None]
        shape = stats.shape(kappa, th)
        G = shape.G(stats.pair_tau)
        day_term = (shape.log_increments(stats.count_days) *
                    stats.count_weights).sum(axis=-1)
    r = alpha / phi
    C = stats.n_centres
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        per_pair = (special.gammaln(alpha + stats.pair_n)
                    - (alpha + stats.pair_n) * np.log(G + r))
        out = (C * (alpha[..., 0] * np.log(r[..., 0]) - special.gammaln(alpha[..., 0]))
               + (per_pair * stats.pair_mult).sum(axis=-1)
               + day_term - stats.log_factorials)
    return out


def log_likelihood(params, snapshot, tau_bar=None):
    """Log marginal likelihood, including the ``-sum log n!`` constant."""
    stats = _as_stats(snapshot, tau_bar)
    value = float(loglik_arrays(stats, params.kappa, params.alpha, params.phi,
                                params.theta))
    if not np.isfinite(value):
        cid = _offending_centre(stats, params)
        where = f"centre {cid!r}" if cid is not None else "the population terms"
        raise NumericOverflowError(
            f"non-finite log-likelihood at {params.as_dict()} (from {where})")
    return value


def _offending_centre(stats, params):
    shape = stats.shape(params.kappa, params.theta) if params.kappa else None
    r = params.alpha / params.phi
    for cid, tau, n in zip(stats.centre_ids, stats.taus, stats.totals):
        G = shape.G(tau) if shape else tau
        v = special.gammaln(params.alpha + n) - (params.alpha + n) * np.log(G + r)
        if not np.isfinite(v):
            return cid
    return None


def _terms(stats, params):
    """Per-pair quantities shared by the score and information."""
    a, p = params.alpha, params.phi
    tau, n, w = stats.pair_tau, stats.pair_n, stats.pair_mult
    if params.kappa == 0:
        G, G1, G2 = tau, np.zeros_like(tau), np.zeros_like(tau)
    else:
        G, G1, G2 = stats.shape(params.kappa, params.theta).G_derivs(tau)
    r = a / p
    D = G + r
    return a, p, n, w, G, G1, G2, D


def score(params, snapshot, tau_bar=None):
    """Gradient of the log-likelihood in natural coordinates (alpha, phi, theta).

    For ``kappa = 0`` only the (alpha, phi) pair is returned.
    """
    stats = _as_stats(snapshot, tau_bar)
    a, p, n, w, G, G1, G2, D = _terms(stats, params)
    C = stats.n_centres
    g_a = (w * (np.log(a / p) + 1.0 - special.digamma(a) + special.digamma(a + n)
                - np.log(D) - (a + n) / (p * D))).sum()
    g_p = (w * (-a / p + a * (a + n) / (p * p * D))).sum()
    if params.kappa == 0:
        return np.array([g_a, g_p]) if C else np.zeros(2)
    shape = stats.shape(params.kappa, params.theta)
    H, H1, _ = shape.increment_derivs(stats.count_days)
    g_t = (w * -(a + n) * G1 / D).sum() + (stats.count_weights * H1 / H).sum()
    return np.array([g_a, g_p, g_t])


def hessian(params, snapshot, tau_bar=None):
    """Analytic Hessian of the log-likelihood in natural coordinates."""
    stats = _as_stats(snapshot, tau_bar)
    a, p, n, w, G, G1, G2, D = _terms(stats, params)
    pD = p * D
    h_aa = (w * (1.0 / a - special.polygamma(1, a) + special.polygamma(1, a + n)
                 - 2.0 / pD + (a + n) / pD ** 2)).sum()
    h_ap = (w * (-1.0 / p + a / (p * pD) + (a + n) * G / pD ** 2)).sum()
    h_pp = (w * (a / p ** 2 - a * (a + n) * (2.0 * p * G + a) / (p * pD) ** 2)).sum()
    if params.kappa == 0:
        return np.array([[h_aa, h_ap], [h_ap, h_pp]])
    shape = stats.shape(params.kappa, params.theta)
    H, H1, H2 = shape.increment_derivs(stats.count_days)
    h_at = (w * G1 * (-1.0 / D + (a + n) / (p * D * D))).sum()
    h_pt = (w * -a * (a + n) * G1 / pD ** 2).sum()
    h_tt = ((w * -(a + n) * (G2 / D - (G1 / D) ** 2)).sum()
            + (stats.count_weights * (H2 / H - (H1 / H) ** 2)).sum())
    return np.array([[h_aa, h_ap, h_at], [h_ap, h_pp, h_pt], [h_at, h_pt, h_tt]])


def observed_information(params, snapshot, tau_bar=None):
    return -hessian(params, snapshot, tau_bar)


def _expected_trigamma(alpha, phi, G, tol=1e-14):
    """E[psi'(alpha + N)] for N ~ NegBin(shape alpha, mean phi * G), by summation."""
    mean = phi * G
    prob = alpha / (alpha + mean)
    upper = int(special.nbdtrik(1.0 - tol, alpha, prob)) + 10 if mean > 0 else 0
    k = np.arange(upper + 1)
    pmf = np.exp(special.gammaln(alpha + k) - special.gammaln(alpha)
                 - special.gammaln(k + 1.0) + alpha * np.log(prob)
                 + special.xlog1py(k, -prob))
    return float((pmf * special.polygamma(1, alpha + k)).sum() / pmf.sum())


def expected_information(params, snapshot, tau_bar=None):
    """Fisher information; the (alpha, phi) and (alpha, theta) entries are 0.

    ``E[psi'(alpha + N_c)]`` is evaluated by truncated summation over the
    negative binomial marginal of each centre's total.
    """
    stats = _as_stats(snapshot, tau_bar)
    a, p, n, w, G, G1, G2, D = _terms(stats, params)
    et = np.array([_expected_trigamma(a, p, g) for g in G])
    i_aa = (w * (special.polygamma(1, a) - 1.0 / a - et + 1.0 / (a + p * G))).sum()
    i_pp = (w * a * G / (p * (a + p * G))).sum()
    if params.kappa == 0:
        return np.array([[i_aa, 0.0], [0.0, i_pp]])
    shape = stats.shape(params.kappa, params.theta)
    i_pt = (w * a * G1 / (a + p * G)).sum()
    # sum_{t <= tau_c} H'(t)^2 / H(t), via a cumulative sum over local days.
    tmax = int(stats.pair_tau.max())
    H, H1, _ = shape.increment_derivs(np.arange(1.0, tmax + 1.0))
    cum = np.concatenate([[0.0], np.cumsum(H1 * H1 / H)])
    i_tt = (w * p * (cum[stats.pair_tau.astype(int)] - G1 * G1 / D)).sum()
    return np.array([[i_aa, 0.0, 0.0], [0.0, i_pp, i_pt], [0.0, i_pt, i_tt]])


def to_log_gradient(params, grad):
    """Chain rule: gradient w.r.t. log-parameters."""
    return grad * _natural(params)


def to_log_hessian(params, grad, hess):
    x = _natural(params)
    return hess * np.outer(x, x) + np.diag(grad * x)


def _natural(params):
    v = [params.alpha, params.phi]
    if params.kappa != 0:
        v.append(params.theta)
    return np.array(v)
