import numpy as np
import pytest

import utils as utl
from otsieve import dgp_simulation, estimators


def pytest_addoption(parser):
    # called before running tests to register command line options for pytest;
    # the test settings may carry keys the package settings do not
    utl.settings.load_from_settings_file(utl.get_test_settings_path())
    utl.settings.register_pytest_command_line_options(parser)


def pytest_configure(config):
    # called before running (configuring) tests to load the test settings and
    # then any values provided over command line
    utl.settings.load_from_settings_file(utl.get_test_settings_path())
    utl.settings.load_from_pytest_command_line(config)
    utl.configure_logging()


@pytest.fixture
def settings():
    # global settings
    return utl.settings


@pytest.fixture
def utils():
    return utl


@pytest.fixture
def rng():
    return np.random.default_rng(utl.settings.seed)


@pytest.fixture
def options():
    """
    Estimator options taken from the test settings
    """
    return estimators.EstimatorOptions.from_settings(utl.settings)


@pytest.fixture
def gaussian_cfg():
    return dgp_simulation.DgpConfig(
        family="gaussian", n=400, seed=utl.settings.seed
    )


@pytest.fixture
def gaussian_sample(gaussian_cfg):
    sample, _ = dgp_simulation.simulate(gaussian_cfg)
    return sample


@pytest.fixture
def quiet_cfg():
    """
    Gaussian design with a tenth of the default measurement noise, where
    the curvature of the wage dominates the noise and kappa is interior.
    """
    return dgp_simulation.DgpConfig(
        family="gaussian",
        n=400,
        seed=utl.settings.seed,
        sigma=(0.2, 0.1, 0.1),
    )


@pytest.fixture
def quiet_sample(quiet_cfg):
    sample, _ = dgp_simulation.simulate(quiet_cfg)
    return sample


@pytest.fixture
def exact_sample(rng):
    """
    Noiseless sample whose wage function lies in the span of the default
    sieve, with known (kappa, beta).
    """
    return utl.exact_span_sample(200, rng)


@pytest.fixture
def tmp_outdir(tmp_path):
    return str(tmp_path / "out")
