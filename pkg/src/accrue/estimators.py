"""Estimator-style wrappers (fit/predict/get_params) over the functional core.

``X`` is always a :class:`TrialSnapshot`, or something :func:`check_snapshot`
can turn into one: a dict from :func:`snapshot_to_dict` or a
``(csv_path, meta_path)`` pair.  There is no ``y``: recruitment is modelled
from the snapshot alone.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import TrialSnapshot, load_snapshot, snapshot_from_dict
from .diagnostics import initial_period_qq, random_effect_qq
from .exceptions import ValidationError
from .homogeneity import run_test
from .inference import fit_all_models, fit_mle
from .prediction import forecast_quantiles, sample_accrual_paths, time_to_completion
from .priors import PriorConfig


def check_snapshot(X):
    if isinstance(X, TrialSnapshot):
        return X
    if isinstance(X, dict):
        return snapshot_from_dict(X)
    if isinstance(X, (tuple, list)) and len(X) == 2:
        return load_snapshot(*X)
    raise ValidationError(f"cannot interpret {type(X).__name__} as a trial snapshot")


def check_seed(seed, what):
    if seed is None:
        raise ValidationError(f"{what} requires an explicit seed")
    return int(seed)


class RecruitmentForecaster(BaseEstimator):
    """Model-averaged recruitment forecaster over the curve-shape grid.

    Parameters
    ----------
    kappas : sequence or None
        Models to fit; None uses the prior's grid.
    n_samples : int
        Importance samples per model.
    draws : int
        Forecast draws used by ``predict``.
    priors : PriorConfig or None
    seed : int
    """

    def __init__(self, kappas=None, n_samples=10_000, draws=2000, priors=None,
                 seed=None, threads=None):
        self.kappas = kappas
        self.n_samples = n_samples
        self.draws = draws
        self.priors = priors
        self.seed = seed
        self.threads = threads

    def fit(self, X, y=None):
        snapshot = check_snapshot(X)
        seed = check_seed(self.seed, "fitting")
        self.ensemble_ = fit_all_models(snapshot, self.priors or PriorConfig(),
                                        self.n_samples, seed, self.kappas,
                                        self.threads)
        self.snapshot_ = snapshot
        self.model_probs_ = dict(zip(
            [str(k) for k in self.ensemble_.kappas],
            self.ensemble_.posterior_model_probs.tolist()))
        return self

    def sample_paths(self, horizon):
        check_is_fitted(self, "ensemble_")
        return sample_accrual_paths(self.ensemble_, self.snapshot_, horizon,
                                    self.draws, check_seed(self.seed, "forecasting"),
                                    threads=self.threads)

    def predict(self, horizon, probs=(0.025, 0.5, 0.975)):
        """Per-day accrual quantiles from the census to ``horizon``."""
        return forecast_quantiles(self.sample_paths(horizon), probs)

    def predict_completion(self, m):
        """Sampled completion days for ``m`` further recruits."""
        check_is_fitted(self, "ensemble_")
        fe = time_to_completion(self.ensemble_, self.snapshot_, m, self.draws,
                                check_seed(self.seed, "forecasting"),
                                threads=self.threads)
        return fe.completion_times

    def diagnose(self, t_prime=60):
        check_is_fitted(self, "ensemble_")
        fit = self.ensemble_.modal_fit()
        return (random_effect_qq(fit, self.snapshot_),
                initial_period_qq(fit, self.snapshot_, t_prime))


class MLERecruitmentModel(BaseEstimator):
    """Maximum likelihood fit of a single curve-shape model."""

    def __init__(self, kappa=0.0):
        self.kappa = kappa

    def fit(self, X, y=None):
        res = fit_mle(check_snapshot(X), self.kappa)
        self.params_ = res.params
        self.covariance_ = res.covariance
        self.aic_ = res.aic
        self.log_likelihood_ = res.log_likelihood
        return self

    def standard_errors(self):
        check_is_fitted(self, "params_")
        return np.sqrt(np.diag(self.covariance_))


class DecayTest(BaseEstimator):
    """One-sided test for a decaying aggregate rate (LRT or bootstrap)."""

    def __init__(self, method="LRT", n_bootstrap=1000, level=0.05, seed=None):
        self.method = method
        self.n_bootstrap = n_bootstrap
        self.level = level
        self.seed = seed

    def fit(self, X, y=None):
        seed = None
        if str(self.method).upper() == "BST":
            seed = check_seed(self.seed, "the bootstrap test")
        self.result_ = run_test(check_snapshot(X), self.method, self.n_bootstrap, seed)
        self.reject_ = self.result_.p_value <= self.level
        return self
