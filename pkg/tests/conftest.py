import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hbart.data import Dataset
from hbart.gibbs import fit
from hbart.priors import Hyperparams
from hbart.simulate import DGPSpec, generate

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def toy_dataset():
    r = np.random.default_rng(3)
    X = r.uniform(size=(40, 2))
    y = 2 * X[:, 0] - X[:, 1] + 0.1 * r.standard_normal(40)
    return Dataset.from_arrays(y, X)


@pytest.fixture(scope="session")
def hetero_fit():
    """One default-settings fit on the univariate heteroskedastic design, n = 250."""
    data, f, var = generate(DGPSpec("univariate_hetero", 250, seed=11))
    hbart = fit(data, Hyperparams(), seed=5)
    bart = fit(data, Hyperparams(pin_gamma=True), seed=6)
    return {"data": data, "f": f, "var": var, "hbart": hbart, "bart": bart}


def pytest_terminal_summary(terminalreporter):
    from report import LINES

    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(LINES):
        terminalreporter.write_line(LINES[number])
