import itertools
import os

import numpy as np
from scipy.special import comb

from otsieve.common import configure_logging  # noqa: F401
from otsieve.estimators import MatchedSample
from otsieve.settings import settings  # noqa: F401

# path to test settings.json relative to tests dir
SETTINGS_FILE = "settings.json"

# (kappa_C, kappa_M, beta_C, beta_M) used by exact_span_sample
EXACT_THETA = (2.0, 5.0, 1.7, -0.4)
# quadratic part of the exact wage, 1/2 x'Hx
EXACT_HESSIAN = np.array([[0.5, -0.1], [-0.1, 0.2]])


def get_root_dir():
    return os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def get_test_settings_path():
    return os.path.join(get_root_dir(), SETTINGS_FILE)


def brute_force_assignment(S):
    """
    Best permutation and its surplus by full enumeration; n <= 7 only.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        total = S[np.arange(n), perm].sum()
        if total > best:
            best, best_perm = total, np.array(perm)
    return best_perm, best


def full_sweep_potentials(Z, perm):
    """
    Worker potentials by relaxing every row on every sweep, until no
    potential drops.
    """
    Zp = np.asarray(Z, dtype=float)[:, perm]
    c = np.diag(Zp)[None, :] - Zp
    tol = 1e-13 * (1.0 + np.abs(Z).max())
    w = np.zeros(Zp.shape[0])
    while True:
        cand = (w[:, None] + c).min(axis=0)
        if not np.any(cand < w - tol):
            return w
        w = np.minimum(w, cand)


def de_casteljau(coef, u):
    """
    Evaluates a 1D Bernstein polynomial by repeated interpolation.
    """
    b = np.array(coef, dtype=float)
    for r in range(1, b.shape[0]):
        b = (1.0 - u) * b[:-1] + u * b[1:]
    return float(b[0])


def de_casteljau_2d(gamma, u_C, u_M):
    rows = [de_casteljau(row, u_M) for row in np.asarray(gamma)]
    return de_casteljau(rows, u_C)


def bernstein_by_definition(u, k):
    return np.array(
        [comb(k, j) * u ** j * (1.0 - u) ** (k - j) for j in range(k + 1)]
    )


def finite_difference_gradient(f, X, h=1e-6):
    X = np.asarray(X, dtype=float)
    out = np.zeros_like(X)
    for k in range(X.shape[1]):
        step = np.zeros(X.shape[1])
        step[k] = h
        out[:, k] = (f(X + step) - f(X - step)) / (2.0 * h)
    return out


def transcribe_J(rho_x, rho_y, delta):
    """
    Term-by-term evaluation of the closed-form assignment matrix.
    """
    root_x = (1.0 - rho_x * rho_x) ** 0.5
    root_y = (1.0 - rho_y * rho_y) ** 0.5
    common = 1.0 / (
        1.0 + 2.0 * delta * (rho_x * rho_y + root_y * root_x) + delta * delta
    ) ** 0.5
    J11 = common * (1.0 + delta * root_y / root_x)
    J12 = common * delta * (rho_y - rho_x * root_y / root_x)
    J21 = common * (rho_y - rho_x * root_y / root_x)
    J22 = common * (delta + root_y / root_x)
    return np.array([[J11, J12], [J21, J22]])


def exact_span_sample(n, rng):
    """
    w = 1/2 x'Hx + 3 + x'beta and y = kappa * H x with no noise, so a sieve of
    degree >= 2 on each axis fits the data exactly at the true parameters.
    """
    kappa_C, kappa_M, beta_C, beta_M = EXACT_THETA
    X = rng.uniform(-1.0, 1.0, size=(n, 2))
    quad = 0.5 * np.einsum("ij,jk,ik->i", X, EXACT_HESSIAN, X)
    w = quad + 3.0 + X @ np.array([beta_C, beta_M])
    grad = X @ EXACT_HESSIAN
    Y = grad * np.array([kappa_C, kappa_M])
    return MatchedSample(w, X, Y)


def write_matched_csv(path, rows, header="wage,x_C,x_M,y_C,y_M"):
    with open(path, "w") as fp:
        fp.write(header + "\n")
        for row in rows:
            fp.write(",".join(str(v) for v in row) + "\n")
    return path
