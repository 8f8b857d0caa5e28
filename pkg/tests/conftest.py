import numpy as np
import pytest

from ucl import probmodel as pm


def small_model(mode="cls", n_classes=3, prob=(True, True), seed=0, feature_dim=4, latent=3, hidden=5):
    model = pm.QaModel(feature_dim, mode, n_classes, latent, hidden, prob[0], prob[1])
    return model.init_params(np.random.default_rng(seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def report_criterion(number: int, passed: bool, detail: str):
    """Record a one-line verdict; all lines are repeated in the terminal summary."""
    line = f"CRITERION {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
