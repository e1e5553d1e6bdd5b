import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from accrue.data import snapshot_to_dict, write_snapshot
from accrue.estimators import (DecayTest, MLERecruitmentModel, RecruitmentForecaster,
                               check_snapshot)
from accrue.exceptions import ValidationError


@pytest.fixture(scope="module")
def forecaster(small_snapshot):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return RecruitmentForecaster(n_samples=1000, draws=300, seed=2).fit(small_snapshot)


def test_params_round_trip():
    f = RecruitmentForecaster(kappas=(0, 2), n_samples=500, seed=1)
    assert f.get_params()["kappas"] == (0, 2)
    g = clone(f).set_params(seed=5)
    assert g.seed == 5 and f.seed == 1
    assert MLERecruitmentModel(kappa=2).get_params() == {"kappa": 2}


def test_check_snapshot_inputs(small_snapshot, tmp_path):
    assert check_snapshot(small_snapshot) is small_snapshot
    assert check_snapshot(snapshot_to_dict(small_snapshot)) == small_snapshot
    write_snapshot(small_snapshot, tmp_path / "s.csv", tmp_path / "s.json")
    back = check_snapshot((tmp_path / "s.csv", tmp_path / "s.json"))
    assert back.centres == small_snapshot.centres
    with pytest.raises(ValidationError):
        check_snapshot(42)


def test_forecaster(forecaster, small_snapshot):
    assert_allclose(sum(forecaster.model_probs_.values()), 1.0)
    q = forecaster.predict(300)
    assert q.shape == (51, 3)
    assert np.all(q[:, 0] <= q[:, 1]) and np.all(q[:, 1] <= q[:, 2])
    assert_array_equal(q, forecaster.predict(300))
    t = forecaster.predict_completion(40)
    assert t.shape == (300,) and np.all(t > small_snapshot.census_day)
    re_qq, ip_qq = forecaster.diagnose()
    assert re_qq.kind == "random_effect" and ip_qq.kind == "initial_period"


def test_forecaster_requires_seed_and_fit(small_snapshot):
    with pytest.raises(ValidationError):
        RecruitmentForecaster().fit(small_snapshot)
    with pytest.raises(NotFittedError):
        RecruitmentForecaster(seed=1).predict(10)


def test_mle_model(small_snapshot):
    m = MLERecruitmentModel(kappa=2.0).fit(small_snapshot)
    se = m.standard_errors()
    assert se.shape == (3,) and np.all(se > 0)
    assert np.isfinite(m.aic_)


def test_decay_test(small_snapshot):
    t = DecayTest().fit(small_snapshot)
    assert t.result_.method == "LRT" and t.reject_ == (t.result_.p_value <= 0.05)
    b = DecayTest(method="BST", n_bootstrap=200, seed=3).fit(small_snapshot)
    assert b.result_.n_bootstrap == 200
    with pytest.raises(ValidationError):
        DecayTest(method="BST").fit(small_snapshot)
