import numpy as np
import pytest
from scipy.special import expit

from svyadjust.model import PriorSpec, SurveyDataset


def make_logit_data(n=200, G=4, seed=0, weights="equal", n_psu=None, beta=(-0.5, 1.0),
                    sigma=0.5):
    """Random-intercept logistic data with optional informative-looking weights."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    group = rng.integers(0, G, n)
    group[:G] = np.arange(G)
    alpha = sigma * rng.standard_normal(G)
    y = rng.binomial(1, expit(beta[0] + beta[1] * x + alpha[group])).astype(float)
    if weights == "equal":
        w = np.ones(n)
    else:
        w = rng.uniform(0.5, 3.0, n)
    psu = np.arange(n) // (n // n_psu) if n_psu else None
    X = np.column_stack([np.ones(n), x])
    return SurveyDataset.from_arrays(y, X, group, w, psu=psu, feature_names=("intercept", "x"))


@pytest.fixture
def small_data():
    return make_logit_data(n=10, G=2, seed=1, weights="random")


@pytest.fixture
def medium_data():
    return make_logit_data(n=300, G=5, seed=3, weights="random", n_psu=30).normalized()


@pytest.fixture
def prior():
    return PriorSpec(beta_prior_sd=2.0, sigma_prior_scale=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
