"""One-sided tests for a decaying aggregate recruitment rate.

Each centre's series is split into a first and second half (odd lengths lose
their middle day).  The likelihood-ratio test compares the two aggregate
totals as Poisson counts; the bootstrap test resamples days within centres
under the null of a constant rate.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import rng as rngmod
from .data import split_counts
from .exceptions import DegenerateDataError, InsufficientDataError, ValidationError
from .inference import n_threads

METHODS = ("LRT", "BST")

# Study design used for bootstrap power: the expected first-half total is
# spread evenly over this many centres and days per half.
BST_CENTRES = 4
BST_HALF_DAYS = 25


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest test class

    statistic: float
    p_value: float
    method: str
    n_bootstrap: int = None

    def as_dict(self):
        d = {"method": self.method, "statistic": self.statistic, "p_value": self.p_value}
        if self.n_bootstrap is not None:
            d["n_bootstrap"] = self.n_bootstrap
        return d


def lrt_statistic(x1, x2):
    """One-sided LRT statistic, vectorised; zero unless ``x1 > x2``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    mu = 0.5 * (x1 + x2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = 2.0 * (special.xlogy(x1, x1 / mu) + special.xlogy(x2, x2 / mu))
    return np.where(x1 > x2, np.maximum(np.nan_to_num(t), 0.0), 0.0)


def lrt_pvalue(t):
    """Half the chi-square(1) upper tail for ``t > 0``; 1 when ``t == 0``.

    Uses ``P(chi2_1 >= t) = erfc(sqrt(t / 2))``.
    """
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, 0.5 * special.erfc(np.sqrt(np.maximum(t, 0.0) / 2.0)), 1.0)


def lrt(split):
    if split.x1 + split.x2 < 1:
        raise DegenerateDataError("LRT needs at least one recruit")
    t = float(lrt_statistic(split.x1, split.x2))
    return TestResult(t, float(lrt_pvalue(t)), "LRT")


def _halves(series):
    """Per-centre (first half, second half) arrays for centres with tau >= 2."""
    out = []
    for s in series:
        if s.tau < 2:
            continue
        a = s.as_array()
        h = s.tau // 2
        out.append((a[:h], a[s.tau - h:]))
    if not out:
        raise InsufficientDataError("need at least one centre open for two or more days")
    return out


def _bootstrap_deltas(halves, B, rng):
    """B resampled values of sum_c (first - second) under the null.

    Both halves of a centre are redrawn with replacement from its pooled
    days.  Only the multiplicity of each distinct count matters, so each
    half's resample is a multinomial over the distinct values.
    """
    delta = np.zeros(B)
    for first, second in halves:
        pooled = np.concatenate([first, second])
        vals, cnt = np.unique(pooled, return_counts=True)
        if vals.size == 1:
            continue
        p = cnt / cnt.sum()
        h = first.size
        delta += (rng.multinomial(h, p, size=B) - rng.multinomial(h, p, size=B)) @ vals
    return delta


def bootstrap_test(series, B=1000, seed=None):
    """Within-centre bootstrap test; ``p = mean(delta_b >= delta)``."""
    if B < 1:
        raise ValidationError("B must be >= 1")
    if seed is None:
        raise ValidationError("bootstrap_test needs a seed")
    halves = _halves(series)
    observed = float(sum(f.sum() - s.sum() for f, s in halves))
    deltas = _bootstrap_deltas(halves, B, rngmod.stream(seed, rngmod.NS_BOOTSTRAP))
    p = float(np.mean(deltas >= observed))
    return TestResult(observed, p, "BST", B)


def run_test(snapshot, method="LRT", B=1000, seed=None):
    centres = snapshot.model_centres()
    if method.upper() == "LRT":
        return lrt(split_counts(centres))
    if method.upper() == "BST":
        return bootstrap_test(centres, B, seed)
    raise ValidationError(f"method must be one of {METHODS}")


# --------------------------------------------------------------------------
# Power
# --------------------------------------------------------------------------

def lrt_power_exact(expectation_x1, ratio_R, level=0.05, tail=1e-13):
    """LRT power by summing Poisson probabilities over the rejection region."""
    mu1, mu2 = float(expectation_x1), float(ratio_R) * float(expectation_x1)
    n1 = int(stats.poisson.isf(tail, mu1)) + 2
    n2 = int(stats.poisson.isf(tail, mu2)) + 2
    x1, x2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    reject = lrt_pvalue(lrt_statistic(x1, x2)) <= level
    w = stats.poisson.pmf(x1, mu1) * stats.poisson.pmf(x2, mu2)
    return float((w * reject).sum())


def _check_power_args(expectation_x1, ratio_R, replications):
    if not expectation_x1 > 0:
        raise ValidationError("expectation_x1 must be positive")
    if not 0 < ratio_R <= 1:
        raise ValidationError("ratio_R must lie in (0, 1]")
    if replications < 1:
        raise ValidationError("replications must be >= 1")


def _lrt_block(mu1, R, level, seed, b, n):
    rng = rngmod.stream(seed, rngmod.NS_POWER, 0, b)
    x1 = rng.poisson(mu1, size=n)
    x2 = rng.poisson(R * mu1, size=n)
    return int((lrt_pvalue(lrt_statistic(x1, x2)) <= level).sum())


def _bst_rep(mu1, R, level, B, seed, rep, n_centres, half_days):
    rng = rngmod.stream(seed, rngmod.NS_POWER, 1, rep)
    rate = mu1 / (n_centres * half_days)
    first = rng.poisson(rate, size=(n_centres, half_days))
    second = rng.poisson(R * rate, size=(n_centres, half_days))
    halves = list(zip(first, second))
    observed = float(first.sum() - second.sum())
    deltas = _bootstrap_deltas(halves, B, rng)
    return bool(np.mean(deltas >= observed) <= level)


def power_study(expectation_x1, ratio_R, method="LRT", replications=100_000,
                B=1000, seed=None, level=0.05, n_centres=BST_CENTRES,
                half_days=BST_HALF_DAYS, threads=None):
    """Monte Carlo rejection rate of a test at ``level``.

    For the LRT, ``X1 ~ Pois(E)`` and ``X2 ~ Pois(R E)``.  For the bootstrap,
    daily counts are simulated for ``n_centres`` centres over two halves of
    ``half_days`` days with the same expected half totals.  Replication
    ``i`` always uses the stream ``(seed, i)``, so results are independent
    of ``threads``.
    """
    _check_power_args(expectation_x1, ratio_R, replications)
    if seed is None:
        raise ValidationError("power_study needs a seed")
    method = method.upper()
    workers = n_threads(threads)
    if method == "LRT":
        work = list(rngmod.blocks(replications, 4096))
        fn = lambda w: _lrt_block(expectation_x1, ratio_R, level, seed, w[0], w[2] - w[1])
    elif method == "BST":
        work = [(r, r, r + 1) for r in range(replications)]
        fn = lambda w: _bst_rep(expectation_x1, ratio_R, level, B, seed, w[0],
                                n_centres, half_days)
    else:
        raise ValidationError(f"method must be one of {METHODS}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            hits = sum(pool.map(fn, work))
    else:
        hits = sum(map(fn, work))
    return hits / replications


TABLE_EXPECTATIONS = (5, 10, 20, 50, 100, 200)
TABLE_RATIOS = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)


def power_grid(method="LRT", expectations=TABLE_EXPECTATIONS, ratios=TABLE_RATIOS,
               replications=100_000, B=1000, seed=None, level=0.05, **kw):
    """Power for every (expectation, ratio) cell; rows follow ``expectations``."""
    return np.array([[power_study(e, r, method, replications, B, seed, level, **kw)
                      for r in ratios] for e in expectations])
