import numpy as np
import pytest

from otsieve import ot_solver
from otsieve.errors import DomainError, SolverError


def solved(rng, n=30):
    tech = ot_solver.ProductionTech.diagonal(0.8, 0.3, 1.0, -1.0)
    X = rng.normal(size=(n, 2))
    Y = rng.normal(size=(n, 2))
    S = ot_solver.build_surplus_matrix(X, Y, tech)
    return S, ot_solver.solve_assignment(S)


def test_normalizations_preserve_equilibrium(rng):
    """
    Configure zero-mean and anchored normalizations of the same coupling.
    Validate,
    - each normalization holds exactly
    - stability and strong duality survive the shift
    - the two wage vectors differ by a constant
    """
    S, c = solved(rng)
    zero = ot_solver.normalize_duals(c, ot_solver.ZeroMean())
    anchor = ot_solver.normalize_duals(c, ot_solver.AnchorAtIndex(3))
    assert abs(zero.worker_dual.mean()) <= 1e-12
    assert anchor.worker_dual[3] == 0.0
    for cc in (zero, anchor):
        check = ot_solver.verify_coupling(S, cc)
        assert check.ok
        assert check.duality_gap <= 1e-8
    diff = zero.worker_dual - anchor.worker_dual
    assert np.ptp(diff) <= 1e-9


def test_anchor_out_of_range(rng):
    _, c = solved(rng, n=5)
    with pytest.raises(DomainError):
        ot_solver.normalize_duals(c, ot_solver.AnchorAtIndex(5))


def test_envelope_condition(rng):
    """
    Configure an equilibrium on smooth clouds.
    Validate,
    - between two workers matched to jobs y and y', the wage difference is
      bracketed by the surplus differences at either job
    """
    S, c = solved(rng, n=50)
    w = c.worker_dual
    Sm = S.S
    for i in range(10):
        for k in range(10):
            jk = c.permutation[k]
            assert w[k] - w[i] <= Sm[k, jk] - Sm[i, jk] + 1e-8


def test_verify_coupling_detects_bad_duals(rng):
    """
    Configure a coupling whose duals are perturbed.
    Validate,
    - the check fails and enforce raises SolverError
    """
    S, c = solved(rng, n=10)
    bad = ot_solver.Coupling(
        permutation=c.permutation,
        worker_dual=c.worker_dual - 1.0,
        firm_dual=c.firm_dual,
        total_surplus=c.total_surplus,
    )
    check = ot_solver.verify_coupling(S, bad)
    assert not check.ok
    with pytest.raises(SolverError):
        ot_solver.verify_coupling(S, bad, enforce=True)


def test_coupling_frame(rng):
    _, c = solved(rng, n=8)
    frame = ot_solver.coupling_to_frame(c)
    assert list(frame.columns) == [
        "worker_index",
        "job_index",
        "wage_dual",
        "profit_dual",
    ]
    assert sorted(frame["job_index"]) == list(range(8))
    assert np.allclose(c.plan.sum(axis=0), 1.0)
