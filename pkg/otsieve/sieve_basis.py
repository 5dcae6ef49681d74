"""
Tensor-product Bernstein sieve on a rectangle.

Coefficients are stored as a (k_C + 1) x (k_M + 1) grid; flattened rows of
the design use row-major order (j_C outer, j_M inner).
"""
import io
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import comb

from otsieve import qp
from otsieve.common import as_matrix
from otsieve.errors import CsvFormatError, DimensionError, DomainError

CLAMP_TOL = 1e-12
CONVEX_TOL = 1e-10


@dataclass(frozen=True)
class Domain:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 2 or len(hi) != 2:
            raise DimensionError("domain must be a 2D box", shape=(len(lo),))
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise DomainError("domain upper bounds must exceed lower bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_data(cls, X, margin=0.01):
        X = as_matrix("X", X, cols=2)
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        pad = margin * np.where(hi > lo, hi - lo, 1.0)
        return cls(tuple(lo - pad), tuple(hi + pad))

    @property
    def width(self):
        return np.array(self.hi) - np.array(self.lo)

    def rescale(self, X):
        """
        Affine map of X onto the unit square; points outside the box by
        more than CLAMP_TOL are rejected, the rest clamped.
        """
        X = np.asarray(X, dtype=float)
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        outside = (X < lo - CLAMP_TOL) | (X > hi + CLAMP_TOL)
        if np.any(outside):
            row = int(np.argwhere(outside)[0][0])
            raise DomainError(
                "point outside sieve domain %s x %s"
                % ((self.lo[0], self.hi[0]), (self.lo[1], self.hi[1])),
                row=row,
                point=X[row],
            )
        return np.clip((X - lo) / (hi - lo), 0.0, 1.0)


def domain_from_data(X, margin=0.01):
    return Domain.from_data(X, margin=margin)


def bernstein_1d(u, k):
    """
    (n, k + 1) matrix of degree-k Bernstein polynomials at u in [0, 1].
    """
    u = np.asarray(u, dtype=float)[:, None]
    j = np.arange(k + 1)[None, :]
    return comb(k, j) * u ** j * (1.0 - u) ** (k - j)


def bernstein_1d_deriv(u, k):
    """
    d/du of bernstein_1d: k (b_{j-1,k-1} - b_{j,k-1}).
    """
    u = np.asarray(u, dtype=float)
    if k == 0:
        return np.zeros((u.shape[0], 1))
    low = bernstein_1d(u, k - 1)
    out = np.zeros((u.shape[0], k + 1))
    out[:, 1:] += low
    out[:, :-1] -= low
    return k * out


def _tensor(a, b):
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def design_matrices(X, k_C, k_M, domain):
    """
    Basis rows and both gradient rows for every observation in X.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != 2:
        raise DimensionError(
            "sieve is typed for d=2, got shape %s" % (X.shape,),
            shape=X.shape,
        )
    U = domain.rescale(X)
    bC = bernstein_1d(U[:, 0], k_C)
    bM = bernstein_1d(U[:, 1], k_M)
    dC = bernstein_1d_deriv(U[:, 0], k_C) / domain.width[0]
    dM = bernstein_1d_deriv(U[:, 1], k_M) / domain.width[1]
    return _tensor(bC, bM), _tensor(dC, bM), _tensor(bC, dM)


def basis_row(x, k_C, k_M, domain):
    x = np.asarray(x, dtype=float)[None, :]
    B, _, _ = design_matrices(x, k_C, k_M, domain)
    return B[0]


def basis_grad_rows(x, k_C, k_M, domain):
    _, GC, GM = design_matrices(
        np.asarray(x, dtype=float)[None, :], k_C, k_M, domain
    )
    return GC[0], GM[0]


def n_coefficients(k_C, k_M):
    return (k_C + 1) * (k_M + 1)


def convexity_constraints(k_C, k_M):
    """
    Rows G with G @ gamma.ravel() >= 0 encoding nonnegative second
    differences of the coefficient grid along each axis.
    """
    idx = np.arange(n_coefficients(k_C, k_M)).reshape(k_C + 1, k_M + 1)
    rows = []
    for jC in range(k_C - 1):
        for jM in range(k_M + 1):
            r = np.zeros(idx.size)
            r[idx[jC, jM]] += 1.0
            r[idx[jC + 1, jM]] -= 2.0
            r[idx[jC + 2, jM]] += 1.0
            rows.append(r)
    for jC in range(k_C + 1):
        for jM in range(k_M - 1):
            r = np.zeros(idx.size)
            r[idx[jC, jM]] += 1.0
            r[idx[jC, jM + 1]] -= 2.0
            r[idx[jC, jM + 2]] += 1.0
            rows.append(r)
    if not rows:
        return np.zeros((0, idx.size)), np.zeros(0)
    G = np.vstack(rows)
    return G, np.zeros(G.shape[0])


def second_differences(gamma):
    gamma = np.asarray(gamma, dtype=float)
    return np.diff(gamma, n=2, axis=0), np.diff(gamma, n=2, axis=1)


def is_convex_feasible(gamma, tol=CONVEX_TOL):
    dC, dM = second_differences(gamma)
    return bool(
        (dC.size == 0 or dC.min() >= -tol)
        and (dM.size == 0 or dM.min() >= -tol)
    )


def elevate_degree(gamma, axis):
    """
    Coefficients of the same polynomial with the degree along `axis` raised
    by one.
    """
    g = np.moveaxis(np.asarray(gamma, dtype=float), axis, 0)
    k = g.shape[0] - 1
    out = np.zeros((k + 2,) + g.shape[1:])
    for j in range(k + 2):
        t = j / (k + 1.0)
        if j >= 1:
            out[j] += t * g[j - 1]
        if j <= k:
            out[j] += (1.0 - t) * g[j]
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class BernsteinTensor:
    k_C: int
    k_M: int
    domain: Domain
    gamma: np.ndarray

    def __post_init__(self):
        if self.k_C < 0 or self.k_M < 0:
            raise DomainError("sieve degrees must be nonnegative")
        gamma = np.array(self.gamma, dtype=float).reshape(
            self.k_C + 1, self.k_M + 1
        )
        if not np.all(np.isfinite(gamma)):
            raise DomainError("sieve coefficients must be finite")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)

    @property
    def degrees(self):
        return (self.k_C, self.k_M)

    @property
    def convex_feasible(self):
        return is_convex_feasible(self.gamma)

    def __call__(self, X):
        B, _, _ = design_matrices(X, self.k_C, self.k_M, self.domain)
        return B @ self.gamma.ravel()

    def gradient(self, X):
        _, GC, GM = design_matrices(X, self.k_C, self.k_M, self.domain)
        g = self.gamma.ravel()
        return np.column_stack([GC @ g, GM @ g])

    def elevate(self, axis):
        gamma = elevate_degree(self.gamma, axis)
        return BernsteinTensor(
            gamma.shape[0] - 1, gamma.shape[1] - 1, self.domain, gamma
        )

    def to_csv(self, fp, float_format="%.17g"):
        lo, hi = self.domain.lo, self.domain.hi
        fp.write("# k_C,k_M,%d,%d\n" % (self.k_C, self.k_M))
        fp.write(
            "# domain,%r,%r,%r,%r\n" % (lo[0], hi[0], lo[1], hi[1])
        )
        frame = pd.DataFrame(
            self.gamma,
            columns=["j_M=%d" % j for j in range(self.k_M + 1)],
        )
        frame.index.name = "j_C"
        frame.to_csv(fp, float_format=float_format)

    @classmethod
    def from_csv(cls, fp):
        text = fp.read()
        lines = text.splitlines()
        try:
            deg = lines[0].split(",")
            dom = lines[1].split(",")
            k_C, k_M = int(deg[2]), int(deg[3])
            lo_C, hi_C, lo_M, hi_M = [float(v) for v in dom[1:5]]
        except (IndexError, ValueError):
            raise CsvFormatError("malformed sieve header", row=1)
        frame = pd.read_csv(io.StringIO(text), comment="#", index_col=0)
        return cls(
            k_C, k_M, Domain((lo_C, lo_M), (hi_C, hi_M)), frame.to_numpy()
        )


def fit_constrained(X, f, k_C, k_M, domain=None, convexity=True):
    """
    Least-squares sieve fit to function samples, optionally under the
    second-difference constraints.
    """
    X = as_matrix("X", X, cols=2)
    domain = domain or Domain.from_data(X)
    B, _, _ = design_matrices(X, k_C, k_M, domain)
    G = convexity_constraints(k_C, k_M)[0] if convexity else None
    res = qp.solve_lsi(B, np.asarray(f, dtype=float), G)
    return BernsteinTensor(k_C, k_M, domain, res.x)


def bic_score(n, n_params, sigma_hat):
    """
    n log det(Sigma_hat) + p log n; smaller is better.
    """
    sign, logdet = np.linalg.slogdet(np.atleast_2d(sigma_hat))
    if sign <= 0:
        return np.inf
    return n * logdet + n_params * np.log(n)
