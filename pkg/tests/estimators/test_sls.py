import dataclasses

import numpy as np
import pytest

from otsieve import estimators, sieve_basis
from otsieve.errors import DataError, UsageError
from otsieve.estimators import Theta


@pytest.mark.sanity
def test_sls_recovers_exact_span_data(utils, exact_sample, options):
    """
    Configure noiseless data whose wage lies in the span of a degree (3, 3)
    sieve.
    Validate,
    - SLS recovers (kappa, beta) to 1e-6
    - the objective is numerically zero
    """
    report = estimators.sls_fit(exact_sample, options=options)
    assert report.method == "sls"
    assert report.objective_kind == "ssr"
    assert report.converged
    assert np.allclose(report.theta.as_array(), utils.EXACT_THETA, atol=1e-6)
    assert report.objective <= 1e-12
    R = estimators.residuals(exact_sample, report.theta, report.gamma)
    assert np.abs(R).max() <= 1e-5


def test_profile_matches_least_squares_oracle(exact_sample):
    """
    Configure a fixed kappa away from the truth.
    Validate,
    - the inner (gamma, b) solve equals ordinary least squares on the
      stacked design
    """
    dom = sieve_basis.Domain.from_data(exact_sample.X)
    problem = estimators._SieveProblem(exact_sample, (3, 3), dom, False)
    kappa = np.array([1.5, 3.0])
    f, p, _ = problem.profile(kappa, estimators._Weights())

    B, GC, GM = sieve_basis.design_matrices(exact_sample.X, 3, 3, dom)
    n, P = B.shape
    zeros = np.zeros((n, 2))
    D = np.vstack(
        [
            np.hstack([B, exact_sample.X]),
            np.hstack([kappa[0] * GC, zeros]),
            np.hstack([kappa[1] * GM, zeros]),
        ]
    )
    t = np.concatenate(
        [exact_sample.w, exact_sample.Y[:, 0], exact_sample.Y[:, 1]]
    )
    oracle = np.linalg.lstsq(D, t, rcond=None)[0]
    assert np.allclose(p, oracle, atol=1e-8)
    assert f == pytest.approx(np.sum((t - D @ oracle) ** 2), rel=1e-8)


def test_sls_on_gaussian_design(quiet_cfg, quiet_sample, options):
    """
    Configure n = 400 draws of the Gaussian design with small measurement
    errors.
    Validate,
    - an interior solution in a neighbourhood of the truth
    """
    report = estimators.sls_fit(quiet_sample, options=options)
    assert report.gamma.degrees == (3, 3)
    assert not report.meta["boundary"]
    assert np.all(np.isfinite(report.estimates))
    assert np.allclose(report.estimates[:2], quiet_cfg.truth[:2], atol=0.2)
    assert np.allclose(report.estimates[2:], quiet_cfg.truth[2:], atol=0.3)


def test_sls_settles_on_default_noise(gaussian_sample, options):
    """
    Configure the Gaussian design with its default measurement errors, whose
    least-squares objective may keep falling as kappa_M grows.
    Validate,
    - SLS returns within the iteration budget
    - the result is either a finite interior kappa or a flagged boundary
      solution in the alpha form
    """
    report = estimators.sls_fit(gaussian_sample, options=options)
    assert report.converged
    assert np.all(np.isfinite(report.estimates))
    if report.meta["boundary"]:
        assert report.se_reason == "boundary"
        assert report.meta["boundary_starts"] >= 1
    else:
        assert np.all(np.abs(report.theta.kappa) < options.kappa_cap)


def test_valley_toward_the_cap_switches_to_alpha_form(options):
    """
    Configure wages and a demand y_M that carry no curvature in x_M, so
    the least-squares objective falls monotonically as kappa_M grows.
    Validate,
    - the descent detects the valley well before the iteration budget and
      falls back to the alpha form
    - the reported alpha_MM sits near zero
    """
    rng = np.random.default_rng(7)
    X = rng.uniform(-1.0, 1.0, size=(300, 2))
    w = 0.25 * X[:, 0] ** 2 + 2.0 * X[:, 1] + rng.normal(0, 0.01, 300)
    Y = np.column_stack(
        [X[:, 0], rng.normal(0.0, 1.0, 300) + 0.3 * X[:, 0]]
    )
    sample = estimators.MatchedSample(w, X, Y)
    opts = dataclasses.replace(options, max_iter=60)
    report = estimators.sls_fit(sample, options=opts)
    assert report.meta["boundary"]
    assert report.se_reason == "boundary"
    assert abs(report.alpha_MM) < 0.05


def test_sls_permutation_invariance(quiet_sample, options, rng):
    """
    Validate,
    - shuffling the rows of the sample leaves the estimates unchanged
    """
    order = rng.permutation(quiet_sample.n)
    a = estimators.sls_fit(quiet_sample, options=options)
    b = estimators.sls_fit(quiet_sample.take(order), options=options)
    assert np.allclose(a.estimates, b.estimates, atol=1e-5)


def test_wage_location_shift_moves_only_the_sieve_level(quiet_sample, options):
    """
    Configure the same sample with every wage raised by 25.
    Validate,
    - (kappa, beta) are unchanged
    - every sieve coefficient rises by 25, the Bernstein basis summing to one
    """
    a = estimators.sls_fit(quiet_sample, options=options)
    shifted = estimators.MatchedSample(
        quiet_sample.w + 25.0, quiet_sample.X, quiet_sample.Y
    )
    b = estimators.sls_fit(shifted, options=options)
    assert np.allclose(a.theta.as_array(), b.theta.as_array(), atol=1e-6)
    assert np.allclose(b.gamma.gamma - a.gamma.gamma, 25.0, atol=1e-5)


def test_sls_with_convexity(quiet_sample, options):
    report = estimators.sls_fit(
        quiet_sample, convexity=True, options=options
    )
    assert report.gamma.convex_feasible
    assert report.meta["convexity"]


def test_sample_too_small(exact_sample, options):
    with pytest.raises(DataError):
        estimators.sls_fit(exact_sample.take(np.arange(19)), options=options)


def test_unknown_method(exact_sample):
    with pytest.raises(UsageError):
        estimators.fit(exact_sample, "gmm")


def test_report_to_dict(exact_sample, options):
    report = estimators.fit(exact_sample, "sls", options)
    out = report.to_dict()
    assert set(out["parameters"]) == {
        "alpha_CC",
        "alpha_MM",
        "beta_C",
        "beta_M",
        "kappa_C",
        "kappa_M",
    }
    assert out["parameters"]["alpha_CC"] == pytest.approx(0.5, abs=1e-6)
    assert out["degrees"] == [3, 3]


def test_boundary_theta():
    """
    Configure a technology with alpha_CC = 0.
    Validate,
    - kappa_C is infinite and the theta sits at the boundary
    """
    th = Theta.from_alpha(0.0, 0.2, 1.0, -1.0)
    assert th.at_boundary
    assert th.alpha_CC == 0.0
    assert th.kappa_M == pytest.approx(5.0)


def test_boundary_residuals_use_alpha_form(exact_sample, options):
    report = estimators.sls_fit(exact_sample, options=options)
    th = Theta.from_alpha(0.0, report.alpha_MM, 1.7, -0.4)
    R = estimators.residuals(exact_sample, th, report.gamma)
    grad = report.gamma.gradient(exact_sample.X)
    assert np.allclose(R[:, 1], -grad[:, 0])


def test_alpha_mode_recovers_exact_data(utils, exact_sample):
    """
    Validate,
    - the joint alpha-form solve reproduces the true alpha on exact data
    """
    dom = sieve_basis.Domain.from_data(exact_sample.X)
    problem = estimators._SieveProblem(exact_sample, (3, 3), dom, False)
    sol = estimators._alpha_mode(problem, estimators._Weights())
    kappa_C, kappa_M, beta_C, beta_M = utils.EXACT_THETA
    assert sol.boundary
    assert np.allclose(sol.alpha, [1 / kappa_C, 1 / kappa_M], atol=1e-8)
    assert np.allclose(sol.p[-2:], [beta_C, beta_M], atol=1e-8)


def test_select_degrees(quiet_sample, options):
    """
    Configure candidates (1, 1) and (2, 2) on data with a quadratic wage.
    Validate,
    - the score picks (2, 2) and reports both candidates
    """
    best, scores = estimators.select_degrees(
        quiet_sample, [(1, 1), (2, 2)], options=options
    )
    assert best == (2, 2)
    assert [s["degrees"] for s in scores] == [(1, 1), (2, 2)]
