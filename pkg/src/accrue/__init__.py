"""Interim recruitment modelling and prediction for multi-centre trials."""

__version__ = "0.1.0"

from .data import (CountSplit, RecruitmentSeries, TrialSnapshot, ingest_csv,
                   load_snapshot, split_counts, write_snapshot)
from .exceptions import (AccrueError, DegenerateDataError, DomainError,
                         FitFailureError, InsufficientDataError,
                         NumericOverflowError, ParseError, SamplerFailureError,
                         ValidationError)
from .shapes import KAPPA_GRID, CurveShape, WeibullShape
from .likelihood import ModelParams, log_likelihood
from .priors import PriorConfig
from .inference import (ModelEnsemble, ModelFit, find_mode, fit_all_models,
                        fit_hpp, fit_mle, importance_sample, resample)
from .prediction import (ForecastEnsemble, centre_posterior, forecast_quantiles,
                         predictive_count_pmf, sample_accrual_paths,
                         time_to_completion)
from .homogeneity import TestResult, bootstrap_test, lrt, power_study
from .diagnostics import (QQTable, forecast_pvalue, initial_period_qq,
                          random_effect_qq)
from .simulation import (DelayModel, SimConfig, fit_delays_censored,
                         simulate_delays, simulate_trial)
from .estimators import DecayTest, MLERecruitmentModel, RecruitmentForecaster
