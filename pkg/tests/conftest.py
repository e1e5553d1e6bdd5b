import warnings

import pytest

from accrue.inference import fit_all_models
from accrue.shapes import CurveShape
from accrue.simulation import SimConfig, simulate_trial


@pytest.fixture(scope="session")
def small_trial():
    """A 60-centre trial simulated over 400 days."""
    cfg = SimConfig(n_centres=60, trial_days=400, alpha=1.4, phi=0.02,
                    shape=CurveShape(2.0, 0.01), target=400)
    return simulate_trial(cfg, seed=11)


@pytest.fixture(scope="session")
def small_snapshot(small_trial):
    return small_trial.at_census(250)


@pytest.fixture(scope="session")
def small_ensemble(small_snapshot):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_all_models(small_snapshot, B=3000, seed=5)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record and print one pass/fail line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
