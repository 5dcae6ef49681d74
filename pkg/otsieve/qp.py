"""
Primal active-set solver for least squares under homogeneous linear
inequalities:

    min ||Z p - t||^2   s.t.   G p >= 0
"""
import logging
from dataclasses import dataclass

import numpy as np

from otsieve.errors import ConvergenceError, SolverError

log = logging.getLogger(__name__)


@dataclass
class LsiResult:
    x: np.ndarray
    active: list
    iterations: int


def _eqp_step(Q, g, G_work):
    """
    Step p minimizing 1/2 p'Qp + g'p on the null space of the working set,
    and the working-set multipliers.
    """
    n = Q.shape[0]
    m = G_work.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = Q
    kkt[:n, n:] = -G_work.T
    kkt[n:, :n] = G_work
    rhs = np.concatenate([-g, np.zeros(m)])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_lsi(Z, t, G, x0=None, max_iter=None, tol=1e-12):
    Z = np.asarray(Z, dtype=float)
    t = np.asarray(t, dtype=float)
    n = Z.shape[1]
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    if G.shape[0] == 0:
        x = np.linalg.lstsq(Z, t, rcond=None)[0]
        return LsiResult(x=x, active=[], iterations=1)

    Q = Z.T @ Z
    c = -(Z.T @ t)
    scale = 1.0 + np.abs(Q).max()

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if np.any(G @ x < -1e-10 * (1.0 + np.abs(x).max())):
        # the origin is always feasible for homogeneous constraints
        x = np.zeros(n)
    if max_iter is None:
        max_iter = 10 * (G.shape[0] + n) + 50

    work = []
    for it in range(max_iter):
        g = Q @ x + c
        p, lam = _eqp_step(Q, g, G[work])
        if np.abs(p).max() <= 1e-12 * (1.0 + np.abs(x).max()):
            if len(work) == 0 or lam.min() >= -tol * scale:
                return LsiResult(x=x, active=sorted(work), iterations=it + 1)
            work.pop(int(np.argmin(lam)))
            continue

        Gp = G @ p
        Gx = G @ x
        alpha = 1.0
        blocking = None
        for i in np.flatnonzero(Gp < -1e-14 * (1.0 + np.abs(p).max())):
            if i in work:
                continue
            ratio = max(Gx[i], 0.0) / -Gp[i]
            if ratio < alpha:
                alpha = ratio
                blocking = int(i)
        x = x + alpha * p
        if blocking is not None:
            work.append(blocking)
        if not np.all(np.isfinite(x)):
            raise SolverError("active-set iterate became non-finite")

    raise ConvergenceError(
        "active-set QP exceeded %d iterations" % max_iter,
        last_iterate=x,
        active=sorted(work),
    )
