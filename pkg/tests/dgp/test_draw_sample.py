import numpy as np
import pytest

from otsieve import dgp_simulation, ot_solver
from otsieve.dgp_simulation import DgpConfig
from otsieve.errors import ConfigError, DomainError, PresetError
from otsieve.settings import list_presets


@pytest.mark.sanity
def test_simulation_is_deterministic(gaussian_cfg):
    a, eq_a = dgp_simulation.simulate(gaussian_cfg)
    b, eq_b = dgp_simulation.simulate(gaussian_cfg)
    assert np.array_equal(a.w, b.w)
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.Y, b.Y)
    assert np.array_equal(eq_a.W_star, eq_b.W_star)


def test_errors_are_added_to_the_equilibrium(gaussian_cfg):
    sample, eq = dgp_simulation.simulate(gaussian_cfg)
    assert np.array_equal(sample.X, eq.X)
    resid = np.column_stack([sample.w - eq.W_star, sample.Y - eq.Y_star])
    assert np.allclose(resid.std(axis=0), gaussian_cfg.sigma, rtol=0.15)


@pytest.mark.parametrize("theta", [1.3, 2.0, 3.0])
def test_gumbel_copula_kendall_tau(theta):
    """
    Configure 5000 draws of the Gumbel copula.
    Validate,
    - the margins are uniform on (0, 1)
    - Kendall's tau is close to 1 - 1/theta
    """
    rng = np.random.default_rng(7)
    U = dgp_simulation.sample_gumbel_copula(5000, theta, rng)
    assert U.min() > 0.0 and U.max() < 1.0
    assert np.allclose(U.mean(axis=0), 0.5, atol=0.02)
    tau = dgp_simulation.kendall_tau(U)
    assert tau == pytest.approx(1.0 - 1.0 / theta, abs=0.03)


def test_gumbel_copula_independence():
    rng = np.random.default_rng(7)
    U = dgp_simulation.sample_gumbel_copula(3000, 1.0, rng)
    assert abs(dgp_simulation.kendall_tau(U)) < 0.05
    with pytest.raises(DomainError):
        dgp_simulation.sample_gumbel_copula(10, 0.9, rng)


def test_gumbel_design_solves_assignment():
    """
    Configure a transformed Gumbel design of 80 pairs.
    Validate,
    - the equilibrium carries a coupling that passes its check
    - the second skill coordinate is negatively dependent on the first
    - every job is assigned exactly once
    """
    cfg = DgpConfig(family="gumbel_transformed", n=80, seed=3)
    eq = dgp_simulation.draw_sample(cfg)
    assert eq.check.ok
    assert eq.coupling.n == 80
    assert sorted(eq.coupling.permutation) == list(range(80))
    assert eq.W_star.mean() == pytest.approx(cfg.c)
    assert dgp_simulation.kendall_tau(eq.X) < 0.0


def test_equilibrium_partners_are_in_matched_order():
    cfg = DgpConfig(family="gaussian_mixture", n=60, seed=5)
    eq = dgp_simulation.draw_sample(cfg)
    S = ot_solver.build_surplus_matrix(eq.X, eq.Y_star, cfg.tech)
    # Y_star is already in matched order, so the identity is optimal
    coupling = ot_solver.solve_assignment(S)
    assert np.array_equal(coupling.permutation, np.arange(60))
    assert coupling.total_surplus == pytest.approx(np.trace(S.S), rel=1e-10)


@pytest.mark.parametrize(
    "family", dgp_simulation.ERROR_FAMILIES
)
def test_error_families_have_mean_zero(family):
    cfg = DgpConfig(n=20000, error_family=family)
    eps = dgp_simulation.draw_errors(cfg, np.random.default_rng(11))
    assert eps.shape == (20000, 3)
    assert np.allclose(eps.mean(axis=0), 0.0, atol=0.06)


def test_gamma_errors_are_scaled():
    cfg = DgpConfig(n=20000, error_family="gamma_iid", sigma=(2.0, 1.0, 1.0))
    eps = dgp_simulation.draw_errors(cfg, np.random.default_rng(11))
    assert np.allclose(eps.std(axis=0), [2.0, 1.0, 1.0], rtol=0.05)
    # skewed to the right like the underlying exponential
    assert np.all(np.mean(eps ** 3, axis=0) > 0.0)


def test_joint_errors_use_the_fixed_covariance():
    cfg = DgpConfig(n=20000, error_family="joint_gaussian")
    eps = dgp_simulation.draw_errors(cfg, np.random.default_rng(11))
    assert np.allclose(
        np.cov(eps.T), dgp_simulation.JOINT_ERROR_COV, atol=0.08
    )


@pytest.mark.parametrize(
    "kwargs, error",
    [
        ({"family": "uniform"}, ConfigError),
        ({"error_family": "cauchy"}, ConfigError),
        ({"n": 1}, ConfigError),
        ({"gumbel_x": 0.5}, DomainError),
        ({"sigma": (1.0, 1.0)}, ConfigError),
        ({"sigma": (1.0, -1.0, 1.0)}, ConfigError),
    ],
)
def test_config_validation(kwargs, error):
    with pytest.raises(error):
        DgpConfig(**kwargs)


def test_presets_load():
    """
    Validate,
    - the Gaussian preset fills the technology and the sample size
    - keyword overrides win over the preset
    - an unknown preset raises PresetError
    """
    cfg = DgpConfig.from_preset("gaussian")
    assert cfg.family == "gaussian"
    assert cfg.n == 1000
    assert np.allclose(cfg.truth, [0.5, 0.2, 1.7, -0.4])
    assert cfg.name == "gaussian"
    small = DgpConfig.from_preset("gumbel-gamma", n=50, seed=9)
    assert small.n == 50
    assert small.seed == 9
    assert small.error_family == "gamma_iid"
    assert {"gaussian", "mixture", "sweep-gumbel"} <= set(list_presets())
    with pytest.raises(PresetError):
        dgp_simulation.load_preset("no-such-design")


def test_config_dict_round_trip(gaussian_cfg):
    again = DgpConfig.from_dict(gaussian_cfg.to_dict())
    assert again.to_dict() == gaussian_cfg.to_dict()
