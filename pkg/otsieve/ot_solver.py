"""
Discrete bilinear surplus and the exact equal-mass assignment problem.

The primal permutation comes from scipy's shortest augmenting path solver.
Worker and firm potentials are then read off the optimal permutation by
relaxing the difference constraints w_k - w_i <= S[k, T(k)] - S[i, T(k)],
which hold exactly when the permutation is optimal.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from otsieve.common import as_matrix
from otsieve.errors import (
    DataError,
    DimensionError,
    DomainError,
    SolverError,
)

log = logging.getLogger(__name__)

DET_TOL = 1e-12
DUAL_TOL = 1e-8
# rows relaxed together; bounds the temporary to RELAX_BLOCK x n
RELAX_BLOCK = 256


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProductionTech:
    """
    Bilinear surplus s(x, y) = x'Ay + x'b.
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise DimensionError(
                "A must be a square d x d matrix, got shape %s" % (A.shape,),
                shape=A.shape,
            )
        if b.shape != (A.shape[0],):
            raise DimensionError(
                "b must have length %d, got shape %s" % (A.shape[0], b.shape),
                shape=b.shape,
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise DataError("technology entries must be finite")
        if abs(np.linalg.det(A)) <= DET_TOL:
            raise DomainError("A is not invertible (|det A| <= 1e-12)")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "b", _frozen(b))

    @classmethod
    def diagonal(cls, alpha_CC, alpha_MM, beta_C=0.0, beta_M=0.0):
        return cls(np.diag([alpha_CC, alpha_MM]), np.array([beta_C, beta_M]))

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def is_diagonal(self):
        return bool(np.all(self.A == np.diag(np.diag(self.A))))

    @property
    def alpha_CC(self):
        return float(self.A[0, 0])

    @property
    def alpha_MM(self):
        return float(self.A[1, 1])

    @property
    def alpha_CM(self):
        return float(self.A[0, 1])

    @property
    def alpha_MC(self):
        return float(self.A[1, 0])

    @property
    def beta_C(self):
        return float(self.b[0])

    @property
    def beta_M(self):
        return float(self.b[1])

    @property
    def delta(self):
        return self.alpha_MM / self.alpha_CC

    def replace(self, alpha_CC=None, alpha_MM=None, beta_C=None, beta_M=None):
        """
        Returns a diagonal technology with the given entries swapped in.
        """
        return ProductionTech.diagonal(
            self.alpha_CC if alpha_CC is None else alpha_CC,
            self.alpha_MM if alpha_MM is None else alpha_MM,
            self.beta_C if beta_C is None else beta_C,
            self.beta_M if beta_M is None else beta_M,
        )


@dataclass(frozen=True)
class SurplusMatrix:
    S: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.ndim != 2:
            raise DimensionError(
                "surplus must be a 2D matrix, got shape %s" % (S.shape,),
                shape=S.shape,
            )
        object.__setattr__(self, "S", _frozen(S))

    @property
    def n(self):
        return self.S.shape[0]

    @property
    def m(self):
        return self.S.shape[1]


@dataclass(frozen=True)
class Coupling:
    """
    Equal-mass optimal coupling stored as a permutation: worker i is matched
    with job `permutation[i]`. `firm_dual` is indexed by job.
    """

    permutation: np.ndarray
    worker_dual: np.ndarray
    firm_dual: np.ndarray
    total_surplus: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "permutation", _frozen(self.permutation, dtype=np.intp)
        )
        object.__setattr__(self, "worker_dual", _frozen(self.worker_dual))
        object.__setattr__(self, "firm_dual", _frozen(self.firm_dual))

    @property
    def n(self):
        return self.permutation.shape[0]

    @property
    def plan(self):
        """
        Dense doubly-stochastic form of the permutation.
        """
        plan = np.zeros((self.n, self.n))
        plan[np.arange(self.n), self.permutation] = 1.0
        return plan

    @property
    def matched_profit(self):
        return self.firm_dual[self.permutation]


@dataclass(frozen=True)
class AnchorAtIndex:
    index: int


@dataclass(frozen=True)
class ZeroMean:
    pass


@dataclass(frozen=True)
class CouplingCheck:
    row_sums_ok: bool
    column_sums_ok: bool
    duality_gap: float
    max_violation: float
    max_matched_slack: float
    tol: float

    @property
    def ok(self):
        return (
            self.row_sums_ok
            and self.column_sums_ok
            and self.max_violation <= self.tol
            and self.max_matched_slack <= self.tol
        )


def build_surplus_matrix(X, Y, tech):
    X = as_matrix("X", X, cols=tech.d)
    Y = as_matrix("Y", Y, cols=tech.d)
    S = X @ tech.A @ Y.T + (X @ tech.b)[:, None]
    return SurplusMatrix(S)


def _surplus_array(S):
    if isinstance(S, SurplusMatrix):
        S = S.S
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(
            "assignment needs a square surplus matrix, got shape %s"
            % (S.shape,),
            shape=S.shape,
        )
    if np.any(np.isnan(S)):
        raise DataError("surplus matrix contains NaN")
    if not np.all(np.isfinite(S)):
        raise DataError("surplus matrix contains infinite entries")
    return S


def _worker_potentials(Z, perm):
    """
    Largest worker potentials w <= 0 satisfying every stability constraint
    for the given optimal permutation, by Bellman-Ford style relaxation.
    Only rows whose potential dropped in the previous sweep are relaxed
    again, so a sweep costs O(n * changed) rather than O(n^2).
    """
    n = Z.shape[0]
    Zp = Z[:, perm]
    matched = np.diag(Zp).copy()
    # c[i, k]: bound on w_k - w_i from pair (worker i, job of worker k)
    c = matched[None, :] - Zp
    scale = 1.0 + float(np.abs(Z).max())
    step_tol = 1e-13 * scale
    w = np.zeros(n)
    active = np.arange(n)
    for sweep in range(n + 1):
        cand = w.copy()
        for lo in range(0, active.size, RELAX_BLOCK):
            rows = active[lo : lo + RELAX_BLOCK]
            np.minimum(cand, (w[rows, None] + c[rows]).min(axis=0), out=cand)
        improved = cand < w - step_tol
        if not improved.any():
            return w, sweep
        w = np.where(improved, cand, w)
        active = np.flatnonzero(improved)
    raise SolverError(
        "dual relaxation did not settle; the permutation is not optimal",
        n=n,
    )


def _lexicographic_refine(tight, perm):
    """
    Smallest worker->job map, in lexicographic order, among the perfect
    matchings of the tight edge set.
    """
    n = tight.shape[0]
    free_rows = np.ones(n, dtype=bool)
    free_cols = np.ones(n, dtype=bool)
    out = np.empty(n, dtype=np.intp)
    for i in range(n):
        free_rows[i] = False
        for j in np.flatnonzero(tight[i] & free_cols):
            free_cols[j] = False
            sub = tight[np.ix_(free_rows, free_cols)]
            if sub.shape[0] == 0:
                out[i] = j
                break
            match = maximum_bipartite_matching(
                csr_matrix(sub.astype(np.int8)), perm_type="column"
            )
            if np.all(match >= 0):
                out[i] = j
                break
            free_cols[j] = True
        else:
            # cannot happen with a tight set that contains `perm`
            raise SolverError("tie refinement lost feasibility", row=i)
    return out


def solve_assignment(S):
    S = _surplus_array(S)
    n = S.shape[0]
    log.debug("Solving assignment for n=%d ...", n)
    shift = float(S.min())
    Z = S - shift
    rows, perm = linear_sum_assignment(Z, maximize=True)
    perm = np.asarray(perm, dtype=np.intp)

    w, sweeps = _worker_potentials(Z, perm)
    v = np.empty(n)
    v[perm] = Z[np.arange(n), perm] - w

    scale = 1.0 + float(np.abs(Z).max())
    tight = (w[:, None] + v[None, :] - Z) <= 1e-12 * scale
    ties = int(tight.sum()) > n
    if ties:
        perm = _lexicographic_refine(tight, perm)

    total = float(S[np.arange(n), perm].sum())
    return Coupling(
        permutation=perm,
        worker_dual=w,
        firm_dual=v + shift,
        total_surplus=total,
        meta={"shift": shift, "relaxation_sweeps": sweeps, "ties": ties},
    )


def normalize_duals(c, norm):
    """
    Shifts worker potentials so `norm` holds and moves the opposite shift to
    the firm side, keeping stability and strong duality intact.
    """
    if isinstance(norm, AnchorAtIndex):
        if not 0 <= norm.index < c.n:
            raise DomainError(
                "anchor index %d out of range [0, %d)" % (norm.index, c.n),
                index=norm.index,
            )
        shift = float(c.worker_dual[norm.index])
    elif isinstance(norm, ZeroMean):
        shift = float(c.worker_dual.mean())
    else:
        raise DomainError("unknown normalization %r" % (norm,))
    w = c.worker_dual - shift
    if isinstance(norm, AnchorAtIndex):
        w[norm.index] = 0.0
    return Coupling(
        permutation=c.permutation,
        worker_dual=w,
        firm_dual=c.firm_dual + shift,
        total_surplus=c.total_surplus,
        meta=dict(c.meta, normalization=repr(norm)),
    )


def wages_from_dual(c, norm):
    return np.array(normalize_duals(c, norm).worker_dual)


def assignment_map(c, partners):
    partners = np.asarray(partners, dtype=float)
    if partners.ndim != 2 or partners.shape[0] != c.n:
        raise DimensionError(
            "partner characteristics must have %d rows, got shape %s"
            % (c.n, partners.shape),
            shape=partners.shape,
        )
    return partners[c.permutation]


def verify_coupling(S, c, tol=DUAL_TOL, enforce=False):
    """
    Measures feasibility, stability and the strong-duality gap of `c` on S.
    """
    S = _surplus_array(S)
    plan = c.plan
    row_ok = bool(np.allclose(plan.sum(axis=1), 1.0))
    col_ok = bool(np.allclose(plan.sum(axis=0), 1.0))
    slack = c.worker_dual[:, None] + c.firm_dual[None, :] - S
    idx = np.arange(c.n)
    total = float(S[idx, c.permutation].sum())
    gap = abs(c.worker_dual.sum() + c.firm_dual.sum() - total)
    check = CouplingCheck(
        row_sums_ok=row_ok,
        column_sums_ok=col_ok,
        duality_gap=gap / (1.0 + abs(total)),
        max_violation=float(max(0.0, -slack.min())),
        max_matched_slack=float(np.abs(slack[idx, c.permutation]).max()),
        tol=tol,
    )
    if enforce and not (check.ok and check.duality_gap <= tol):
        raise SolverError(
            "coupling violates equilibrium conditions",
            duality_gap=check.duality_gap,
            max_violation=check.max_violation,
            max_matched_slack=check.max_matched_slack,
        )
    return check


def coupling_to_frame(c):
    return pd.DataFrame(
        {
            "worker_index": np.arange(c.n),
            "job_index": c.permutation,
            "wage_dual": c.worker_dual,
            "profit_dual": c.matched_profit,
        }
    )
