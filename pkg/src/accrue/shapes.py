"""Normalised intensity curve-shapes g_kappa(t; theta) and their integrals.

Every shape is normalised so that ``G(tau_bar) == tau_bar``; the magnitude of
recruitment then lives entirely in the random effects.  For ``kappa`` in
``(0, inf)`` the unnormalised integral is

    f(x) = (1 + theta x / kappa) ** (1 - kappa) - 1        (kappa != 1)
    f(x) = log(1 + theta x)                                (kappa == 1)
    f(x) = 1 - exp(-theta x)                               (kappa == inf)

and ``G(t) = tau_bar * f(t) / f(tau_bar)``.  All functions broadcast over
``theta`` and ``t``, which is how the likelihood evaluates thousands of
importance samples at once.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError

INF = math.inf
KAPPA_GRID = (0.0, 0.5, 1.0, 2.0, INF)

# |kappa - 1| below this uses the logarithmic kappa == 1 form.
_KAPPA_ONE_TOL = 1e-6


def kappa_label(kappa):
    """Canonical string key for a kappa value ("0", "0.5", "inf", ...)."""
    kappa = float(kappa)
    if math.isinf(kappa):
        return "inf"
    return f"{kappa:g}"


def parse_kappa(label):
    if isinstance(label, (int, float)):
        return float(label)
    label = str(label).strip().lower()
    if label in ("inf", "infinity", "∞"):
        return INF
    return float(label)


def _kind(kappa):
    if kappa == 0:
        return "flat"
    if math.isinf(kappa):
        return "exp"
    if abs(kappa - 1.0) < _KAPPA_ONE_TOL:
        return "log"
    return "power"


def _f(kind, kappa, theta, x):
    """Unnormalised integral f(x; theta) and its first two theta-derivatives."""
    if kind == "exp":
        e = np.exp(-theta * x)
        return -np.expm1(-theta * x), x * e, -x * x * e
    if kind == "log":
        u = 1.0 + theta * x
        return np.log1p(theta * x), x / u, -(x / u) ** 2
    u = 1.0 + theta * x / kappa
    lu = np.log1p(theta * x / kappa)
    f = np.expm1((1.0 - kappa) * lu)
    d1 = (1.0 - kappa) * (x / kappa) * np.exp(-kappa * lu)
    d2 = -(1.0 - kappa) * (x * x / kappa) * np.exp(-(kappa + 1.0) * lu)
    return f, d1, d2


def _df(kind, kappa, theta, t):
    """f(t) - f(t - 1) in a cancellation-free form (t >= 1)."""
    if kind == "exp":
        return np.exp(-theta * (t - 1.0)) * -np.expm1(-theta)
    b = 1.0 + theta * (t - 1.0) / (kappa if kind == "power" else 1.0)
    if kind == "log":
        return np.log1p(theta / b)
    return np.exp((1.0 - kappa) * np.log(b)) * np.expm1(
        (1.0 - kappa) * np.log1p(theta / (kappa * b)))


@dataclass(frozen=True)
class CurveShape:
    """Decaying intensity shape with tail index ``kappa``.

    ``kappa = 0`` is the homogeneous shape and takes no ``theta``;
    ``kappa = inf`` is the exponential tail.
    """

    kappa: float
    theta: float = None
    tau_bar: float = 1.0

    def __post_init__(self):
        kappa = parse_kappa(self.kappa)
        object.__setattr__(self, "kappa", kappa)
        if kappa < 0 or math.isnan(kappa):
            raise DomainError("kappa must be >= 0")
        if not self.tau_bar > 0:
            raise DomainError("tau_bar must be positive")
        if kappa != 0:
            if self.theta is None or not np.all(np.asarray(self.theta) > 0):
                raise DomainError("theta must be positive for kappa > 0")

    @property
    def has_theta(self):
        return self.kappa != 0

    def with_theta(self, theta):
        return CurveShape(self.kappa, theta, self.tau_bar)

    # The methods below accept array theta (stored on the shape) and array t.

    def g(self, t):
        """Normalised intensity at local time ``t``."""
        t = np.asarray(t, dtype=float)
        if self.kappa == 0:
            return np.ones_like(t)
        kind, k, th, T = _kind(self.kappa), self.kappa, np.asarray(self.theta, float), self.tau_bar
        fT = _f(kind, k, th, T)[0]
        if kind == "exp":
            dg = th * np.exp(-th * t)
        elif kind == "log":
            dg = th / (1.0 + th * t)
        else:
            dg = th * (1.0 - k) / k * np.exp(-k * np.log1p(th * t / k))
        return T * dg / fT

    def G(self, t):
        """Normalised integrated intensity ``int_0^t g``."""
        t = np.asarray(t, dtype=float)
        if self.kappa == 0:
            return t + 0.0 * np.asarray(self.theta if self.theta is not None else 0.0)
        kind, k, th, T = _kind(self.kappa), self.kappa, np.asarray(self.theta, float), self.tau_bar
        return T * _f(kind, k, th, t)[0] / _f(kind, k, th, T)[0]

    def G_derivs(self, t):
        """``(G, dG/dtheta, d2G/dtheta2)`` at ``t``."""
        t = np.asarray(t, dtype=float)
        if self.kappa == 0:
            raise DomainError("the kappa = 0 shape has no theta")
        kind, k, th, T = _kind(self.kappa), self.kappa, np.asarray(self.theta, float), self.tau_bar
        n, n1, n2 = _f(kind, k, th, t)
        m, m1, m2 = _f(kind, k, th, T)
        return _ratio_derivs(T, n, n1, n2, m, m1, m2)

    def dG_dtheta(self, t):
        return self.G_derivs(t)[1]

    def increments(self, t):
        """Daily increments ``G(t) - G(t - 1)`` for integer ``t >= 1``."""
        t = np.asarray(t, dtype=float)
        if self.kappa == 0:
            return np.ones_like(t) + 0.0 * np.asarray(self.theta if self.theta is not None else 0.0)
        kind, k, th, T = _kind(self.kappa), self.kappa, np.asarray(self.theta, float), self.tau_bar
        return T * _df(kind, k, th, t) / _f(kind, k, th, T)[0]

    def log_increments(self, t):
        """``log(G(t) - G(t - 1))``, finite even where the increment underflows."""
        t = np.asarray(t, dtype=float)
        if self.kappa == 0:
            return np.zeros_like(t) + 0.0 * np.asarray(self.theta if self.theta is not None else 0.0)
        kind, k, th, T = _kind(self.kappa), self.kappa, np.asarray(self.theta, float), self.tau_bar
        log_fT = np.log(np.abs(_f(kind, k, th, T)[0]))
        if kind == "exp":
            log_df = -th * (t - 1.0) + np.log(-np.expm1(-th))
        elif kind == "log":
            log_df = np.log(np.log1p(th / (1.0 + th * (t - 1.0))))
        else:
            b = 1.0 + th * (t - 1.0) / k
            log_df = (1.0 - k) * np.log(b) + np.log(np.abs(
                np.expm1((1.0 - k) * np.log1p(th / (k * b)))))
        return math.log(T) + log_df - log_fT

    def increment_derivs(self, t):
        """``(H, dH/dtheta, d2H/dtheta2)`` for ``H = G(t) - G(t - 1)``."""
        t = np.asarray(t, dtype=float)
        if self.kappa == 0:
            raise DomainError("the kappa = 0 shape has no theta")
        kind, k, th, T = _kind(self.kappa), self.kappa, np.asarray(self.theta, float), self.tau_bar
        _, a1, a2 = _f(kind, k, th, t)
        _, b1, b2 = _f(kind, k, th, t - 1.0)
        n = _df(kind, k, th, t)
        m, m1, m2 = _f(kind, k, th, T)
        return _ratio_derivs(T, n, a1 - b1, a2 - b2, m, m1, m2)


def _ratio_derivs(T, n, n1, n2, m, m1, m2):
    """Derivatives of ``T * n / m`` given those of numerator and denominator."""
    r = n / m
    d1 = (n1 - r * m1) / m
    d2 = (n2 - 2.0 * d1 * m1 - r * m2) / m
    return T * r, T * d1, T * d2


@dataclass(frozen=True)
class WeibullShape:
    """Intensity proportional to a Weibull density (scale ``theta``, shape ``k``).

    Used only to generate misspecified data; it is not part of the fitted
    model family.
    """

    theta: float
    k: float
    tau_bar: float = 1.0

    def __post_init__(self):
        if not (self.theta > 0 and self.k > 0):
            raise DomainError("Weibull theta and k must be positive")
        if not self.tau_bar > 0:
            raise DomainError("tau_bar must be positive")

    def _norm(self):
        return -np.expm1(-(self.tau_bar / self.theta) ** self.k)

    def g(self, t):
        t = np.asarray(t, dtype=float)
        z = t / self.theta
        with np.errstate(divide="ignore"):
            dens = self.k / self.theta * z ** (self.k - 1.0) * np.exp(-z ** self.k)
        return self.tau_bar * dens / self._norm()

    def G(self, t):
        t = np.asarray(t, dtype=float)
        return self.tau_bar * -np.expm1(-(t / self.theta) ** self.k) / self._norm()

    def increments(self, t):
        t = np.asarray(t, dtype=float)
        a = (np.maximum(t - 1.0, 0.0) / self.theta) ** self.k
        b = (t / self.theta) ** self.k
        # exp(-a) - exp(-b) = exp(-a) * (1 - exp(a - b))
        return self.tau_bar * np.exp(-a) * -np.expm1(a - b) / self._norm()


def weibull_G(shape, t):
    return shape.G(t)


def g_eval(shape, t):
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be non-negative")
    return shape.g(t)


def G_eval(shape, t):
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be non-negative")
    return shape.G(t)


def G_theta_derivative(shape, t):
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be non-negative")
    return shape.dG_dtheta(t)
