import numpy as np
import pytest
from joblib import Parallel, delayed

from otsieve import diagnostics, estimators, ot_solver
from otsieve.dgp_simulation import DgpConfig, simulate

pytestmark = pytest.mark.slow


def test_assignment_against_enumeration(utils, rng):
    """
    Configure 500 random surplus matrices with n from 2 to 8.
    Validate,
    - the solver's total equals the enumerated optimum
    - zero-mean duals pass the stability and strong duality check
    """
    for _ in range(500):
        n = int(rng.integers(2, 9))
        S = rng.normal(size=(n, n))
        c = ot_solver.solve_assignment(S)
        _, best = utils.brute_force_assignment(S)
        assert c.total_surplus == pytest.approx(best, abs=1e-10)
        c = ot_solver.normalize_duals(c, ot_solver.ZeroMean())
        assert ot_solver.verify_coupling(S, c).ok


def test_mardia_size(rng):
    """
    Configure 1000 null samples of 500 standard bivariate normals.
    Validate,
    - both tests reject at the 5% level in 3.5% to 6.5% of samples
    - the statistics are affine invariant
    """
    skew, kurt = 0, 0
    for _ in range(1000):
        res = diagnostics.mardia_test(rng.normal(size=(500, 2)))
        skew += res.skew_pvalue < 0.05
        kurt += res.kurt_pvalue < 0.05
    assert 35 <= skew <= 65
    assert 35 <= kurt <= 65

    data = rng.normal(size=(500, 2))
    moved = data @ np.array([[2.0, 0.3], [-0.5, 1.0]]) + [4.0, -1.0]
    a = diagnostics.mardia_test(data)
    b = diagnostics.mardia_test(moved)
    assert b.b1 == pytest.approx(a.b1, abs=1e-8)
    assert b.b2 == pytest.approx(a.b2, abs=1e-8)


def _covers(seed, options):
    cfg = DgpConfig(family="gaussian", n=1000, seed=seed)
    sample, _ = simulate(cfg)
    report = estimators.sls_fit(sample, options=options)
    if report.meta["boundary"]:
        # no interval without standard errors
        return None
    var = estimators.variance_theta(report, sample)
    half = 1.959964 * var.se_alpha[0]
    return abs(report.alpha_CC - cfg.tech.alpha_CC) <= half


def test_sandwich_coverage(settings, options):
    """
    Configure 300 replications of the Gaussian design at n = 1000.
    Validate,
    - the 95% interval for alpha_CC covers the truth in 90% to 98% of the
      replications with an interior estimate
    """
    reps = max(int(round(300 * settings.acceptance_reps_factor)), 2)
    hits = Parallel(n_jobs=settings.parallelism)(
        delayed(_covers)(settings.seed + r, options) for r in range(reps)
    )
    hits = [h for h in hits if h is not None]
    assert len(hits) >= 0.8 * reps
    assert 0.90 <= np.mean(hits) <= 0.98
