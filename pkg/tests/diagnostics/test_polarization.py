import dataclasses

import numpy as np
import pytest

from otsieve import diagnostics, estimators
from otsieve.dgp_simulation import DgpConfig, simulate
from otsieve.errors import DomainError
from otsieve.estimators import Theta


def test_curve_is_zero_at_the_median(rng):
    """
    Configure t1 wages that stretch the t0 distribution.
    Validate,
    - the curve is zero at the 50th percentile and increasing in the
      percentile for a pure stretch in levels
    """
    w0 = rng.normal(30.0, 2.0, 1000)
    w1 = 30.0 + 2.0 * (w0 - 30.0)
    curve = diagnostics.polarization_curve(w0, w1, mode="level")
    actual = curve.curves["actual"]
    assert actual.shape == (99,)
    assert actual[49] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(actual) > 0.0)


def test_uniform_growth_is_flat(rng):
    w0 = rng.lognormal(3.0, 0.3, 500)
    curve = diagnostics.polarization_curve(
        w0, 1.1 * w0, predictions={"model": (w0, 1.2 * w0)}
    )
    assert np.allclose(curve.curves["actual"], 0.0, atol=1e-12)
    assert np.allclose(curve.curves["model"], 0.0, atol=1e-12)
    frame = curve.to_frame()
    assert list(frame.columns) == ["percentile", "actual", "model"]
    assert frame["percentile"].iloc[0] == 1


def test_log_mode_needs_positive_wages():
    with pytest.raises(DomainError):
        diagnostics.polarization_curve([1.0, -1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        diagnostics.polarization_curve([1.0, 2.0], [1.0, 2.0], mode="ratio")


@pytest.fixture
def period_reports(options):
    """
    Two small simulated periods with SLS fits
    """
    out = []
    for seed, beta_C in ((1, 1.7), (2, 2.2)):
        cfg = DgpConfig(
            family="gaussian", n=300, seed=seed, sigma=(0.2, 0.1, 0.1)
        )
        cfg.tech = cfg.tech.replace(beta_C=beta_C)
        sample, _ = simulate(cfg)
        out.append((sample, estimators.sls_fit(sample, options=options)))
    return out


@pytest.mark.parametrize("mode", diagnostics.DECOMPOSITION_MODES)
def test_decomposition_modes(period_reports, mode):
    """
    Configure fitted t0 and t1 technologies on two simulated periods.
    Validate,
    - each mode yields a finite curve named after the mode, zero at the
      median
    """
    (s0, r0), (s1, r1) = period_reports
    curve = diagnostics.decompose_counterfactual(
        r0, r1, s0, s1, mode, scale="level"
    )
    values = curve.curves[mode]
    assert values.shape == (99,)
    assert np.all(np.isfinite(values))
    assert values[49] == pytest.approx(0.0, abs=1e-12)


def test_unchanged_periods_decompose_to_zero(period_reports):
    """
    Configure t1 identical to t0, sample and technology.
    Validate,
    - distribution_only and full both give an identically zero curve
    """
    s0, r0 = period_reports[0]
    for mode in ("distribution_only", "full"):
        curve = diagnostics.decompose_counterfactual(
            r0, r0, s0, s0, mode, scale="level"
        )
        assert np.allclose(curve.curves[mode], 0.0, atol=1e-9)


def test_stronger_cognitive_complementarity_lifts_upper_tail(period_reports):
    """
    Configure t1 as t0 with alpha_CC doubled, on the same skill clouds.
    Validate,
    - under task_biased_only the 90th percentile grows more than the median
    """
    s0, r0 = period_reports[0]
    th = r0.theta
    r1 = dataclasses.replace(
        r0,
        theta=Theta.from_alpha(
            2.0 * r0.alpha_CC, r0.alpha_MM, th.beta_C, th.beta_M
        ),
    )
    curve = diagnostics.decompose_counterfactual(
        r0, r1, s0, s0, "task_biased_only", scale="level"
    )
    values = curve.curves["task_biased_only"]
    assert values[89] > 0.0


def test_polarization_u_shape(rng):
    """
    Configure t1 wages that move both tails out relative to the median.
    Validate,
    - the curve is U-shaped: positive at both tails, zero at the median
    """
    w0 = rng.lognormal(3.0, 0.2, 2000)
    median = np.median(w0)
    w1 = w0 * np.exp(0.5 * (np.log(w0) - np.log(median)) ** 2)
    actual = diagnostics.polarization_curve(w0, w1).curves["actual"]
    assert actual[49] == pytest.approx(0.0, abs=1e-12)
    assert actual[4] > 0.0 and actual[94] > 0.0
    assert actual[4] > actual[29] and actual[94] > actual[69]


def test_decomposition_unknown_mode(period_reports):
    (s0, r0), (s1, r1) = period_reports
    with pytest.raises(DomainError):
        diagnostics.decompose_counterfactual(r0, r1, s0, s1, "tasks")


def test_summary_stats(gaussian_cfg, gaussian_sample):
    """
    Validate,
    - one row per sample column with ddof = 1 standard deviations
    - the skill correlations sit near the design values
    """
    summary = diagnostics.summary_stats(gaussian_sample)
    assert list(summary.table.index) == list(diagnostics.SAMPLE_COLUMNS)
    assert summary.table.loc["x_C", "sd"] == pytest.approx(
        np.std(gaussian_sample.X[:, 0], ddof=1)
    )
    assert summary.rho_x == pytest.approx(gaussian_cfg.rho_x, abs=0.12)
    frame = summary.to_frame()
    assert list(frame["column"][-2:]) == ["rho_x", "rho_y"]
