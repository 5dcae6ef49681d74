"""
Closed-form equilibrium of the bilinear model with jointly normal skills and
demands, and the parametric ML / ML* baselines built on it.

With standard normal margins, diagonal A and delta = alpha_MM / alpha_CC the
equilibrium assignment is linear, y* = J x, and the wage is the quadratic
w*(x) = 1/2 x' A J x + b'x + c.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import minimize
from scipy.special import expit

from otsieve.common import as_matrix, as_vector
from otsieve.errors import (
    ConvergenceError,
    DomainError,
    InadmissibleSigmaError,
    NonConvexWageError,
)

log = logging.getLogger(__name__)

PSD_TOL = 1e-12


@dataclass(frozen=True)
class GaussianEquilibrium:
    J: np.ndarray
    rho_x: float
    rho_y: float
    delta: float

    @classmethod
    def solve(cls, rho_x, rho_y, delta):
        return cls(closed_form_J(rho_x, rho_y, delta), rho_x, rho_y, delta)

    def assign(self, X):
        return closed_form_assignment(X, self.J)


@dataclass
class MLFit:
    alpha_CC: float
    alpha_MM: float
    beta_C: float
    beta_M: float
    c: float
    sigma_w: float
    sigma_C: float
    sigma_M: float
    loglik: float
    corrected: bool = False
    rho_x: float = 0.0
    rho_y: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def theta(self):
        return np.array(
            [self.alpha_CC, self.alpha_MM, self.beta_C, self.beta_M]
        )


def _check_rho(name, rho):
    if not np.isfinite(rho) or abs(rho) >= 1.0:
        raise DomainError(
            "%s must lie strictly inside (-1, 1), got %r" % (name, rho)
        )


def closed_form_J(rho_x, rho_y, delta):
    _check_rho("rho_x", rho_x)
    _check_rho("rho_y", rho_y)
    if not np.isfinite(delta) or delta <= 0:
        raise DomainError("delta must be positive, got %r" % (delta,))
    sx = np.sqrt(1.0 - rho_x ** 2)
    sy = np.sqrt(1.0 - rho_y ** 2)
    r = sy / sx
    off = rho_y - rho_x * r
    denom = np.sqrt(1.0 + 2.0 * delta * (rho_x * rho_y + sy * sx) + delta ** 2)
    return np.array([[1.0 + delta * r, delta * off], [off, delta + r]]) / denom


def closed_form_assignment(X, J, scale=None):
    """
    y* = diag(scale) J x for each row x of X.
    """
    X = np.asarray(X, dtype=float)
    Y = X @ np.asarray(J).T
    if scale is not None:
        Y = Y * np.asarray(scale, dtype=float)
    return Y


def _require_diagonal(tech):
    if not tech.is_diagonal:
        raise DomainError("closed-form wage needs a diagonal A")
    if tech.alpha_CC <= 0 or tech.alpha_MM <= 0:
        raise DomainError("closed-form wage needs positive diagonal A")


def wage_hessian(tech, J, scale=None):
    D = np.ones(2) if scale is None else np.asarray(scale, dtype=float)
    H = tech.A @ np.diag(D) @ np.asarray(J)
    return 0.5 * (H + H.T)


def _quadratic_wage(X, H, b, c):
    return 0.5 * np.einsum("ij,jk,ik->i", X, H, X) + X @ b + c


def closed_form_wage(x, tech, J, c=0.0, scale=None):
    """
    w*(x) = (alpha_CC / 2)(J11 xC^2 + 2 J12 xC xM + delta J22 xM^2)
            + beta_C xC + beta_M xM + c

    Accepts a single 2-vector or an (n, 2) array. Raises NonConvexWageError
    when the implied Hessian is not positive semi-definite.
    """
    _require_diagonal(tech)
    H = wage_hessian(tech, J, scale)
    eig = np.linalg.eigvalsh(H)
    if eig.min() < -PSD_TOL * max(1.0, abs(eig).max()):
        raise NonConvexWageError(
            "closed-form wage Hessian is not PSD", eigenvalues=eig
        )
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(_quadratic_wage(x[None, :], H, tech.b, c)[0])
    return _quadratic_wage(as_matrix("x", x, cols=2), H, tech.b, c)


def wage_gradient(x, tech, J, scale=None):
    _require_diagonal(tech)
    H = wage_hessian(tech, J, scale)
    x = np.asarray(x, dtype=float)
    return x @ H.T + tech.b


def corrected_rho_y(rho_tilde, var_y, sigma_C, sigma_M):
    """
    Productivity correlation of the error-free demands, recovered from the
    correlation of contaminated demands.
    """
    var_y = np.asarray(var_y, dtype=float)
    clean = var_y - np.array([sigma_C ** 2, sigma_M ** 2])
    if np.any(clean <= 0):
        raise InadmissibleSigmaError(
            "measurement error variance exceeds demand variance",
            var_y=var_y,
            sigma_C=sigma_C,
            sigma_M=sigma_M,
        )
    return float(rho_tilde * np.sqrt(var_y.prod()) / np.sqrt(clean.prod()))


class _Likelihood(object):
    """
    Gaussian likelihood of the measurement-error model given x, with the
    wage constant profiled out.
    """

    PENALTY = 1e12

    def __init__(self, w, X, Y, corrected):
        self.w = w
        self.X = X
        self.Y = Y
        self.corrected = corrected
        self.rho_x = float(np.corrcoef(X, rowvar=False)[0, 1])
        self.rho_tilde = float(np.corrcoef(Y, rowvar=False)[0, 1])
        self.var_y = Y.var(axis=0)

    def unpack(self, p):
        alpha_CC, alpha_MM = np.exp(p[0]), np.exp(p[1])
        b = np.array([p[2], p[3]])
        sigma_w = np.exp(p[4])
        if self.corrected:
            # keeps sigma_k^2 < var(y_k)
            sigma_y = np.sqrt(self.var_y) * expit(np.array([p[5], p[6]]))
        else:
            sigma_y = np.exp(np.array([p[5], p[6]]))
        return alpha_CC, alpha_MM, b, sigma_w, sigma_y

    def structure(self, alpha_CC, alpha_MM, sigma_y):
        if self.corrected:
            rho_y = corrected_rho_y(
                self.rho_tilde, self.var_y, sigma_y[0], sigma_y[1]
            )
            scale = np.sqrt(self.var_y - sigma_y ** 2)
        else:
            rho_y = self.rho_tilde
            scale = np.ones(2)
        delta = alpha_MM * scale[1] / (alpha_CC * scale[0])
        J = closed_form_J(self.rho_x, rho_y, delta)
        return rho_y, scale, J

    def evaluate(self, p):
        alpha_CC, alpha_MM, b, sigma_w, sigma_y = self.unpack(p)
        rho_y, scale, J = self.structure(alpha_CC, alpha_MM, sigma_y)
        A = np.diag([alpha_CC, alpha_MM])
        H = A @ np.diag(scale) @ J
        H = 0.5 * (H + H.T)
        wage0 = _quadratic_wage(self.X, H, b, 0.0)
        c = float(np.mean(self.w - wage0))
        y_star = closed_form_assignment(self.X, J, scale)
        ll = (
            stats.norm.logpdf(self.w - wage0 - c, scale=sigma_w).sum()
            + stats.norm.logpdf(
                self.Y[:, 0] - y_star[:, 0], scale=sigma_y[0]
            ).sum()
            + stats.norm.logpdf(
                self.Y[:, 1] - y_star[:, 1], scale=sigma_y[1]
            ).sum()
        )
        return ll, c, rho_y

    def __call__(self, p):
        try:
            ll, _, _ = self.evaluate(p)
        except (DomainError, InadmissibleSigmaError, FloatingPointError):
            return self.PENALTY
        if not np.isfinite(ll):
            return self.PENALTY
        return -ll


def _initial_point(lik):
    X, w = lik.X, lik.w
    design = np.column_stack(
        [
            0.5 * X[:, 0] ** 2,
            X[:, 0] * X[:, 1],
            0.5 * X[:, 1] ** 2,
            X[:, 0],
            X[:, 1],
            np.ones(X.shape[0]),
        ]
    )
    coef, *_ = np.linalg.lstsq(design, w, rcond=None)
    resid = w - design @ coef
    alpha_CC = max(coef[0], 0.05)
    alpha_MM = max(coef[2], 0.05)
    sigma_w = max(resid.std(), 1e-3)
    if lik.corrected:
        sigma_part = [0.0, 0.0]
    else:
        sigma_part = list(np.log(0.5 * np.sqrt(lik.var_y)))
    return np.array(
        [
            np.log(alpha_CC),
            np.log(alpha_MM),
            coef[3],
            coef[4],
            np.log(sigma_w),
        ]
        + sigma_part
    )


def ml_fit(sample, use_corrected_rho, n_starts=5, seed=0, max_iter=500):
    """
    Maximum likelihood under joint normality with the closed-form J. With
    `use_corrected_rho` the demand correlation inside J is the corrected one
    and the error SDs are estimated jointly.
    """
    w = as_vector("wage", sample.w)
    X = as_matrix("X", sample.X, cols=2, rows=w.shape[0])
    Y = as_matrix("Y", sample.Y, cols=2, rows=w.shape[0])
    lik = _Likelihood(w, X, Y, bool(use_corrected_rho))
    rng = np.random.default_rng(seed)
    p0 = _initial_point(lik)

    best = None
    last = None
    for start in range(max(1, n_starts)):
        p = p0 if start == 0 else p0 + rng.normal(scale=0.1, size=p0.size)
        res = minimize(
            lik, p, method="L-BFGS-B", options={"maxiter": max_iter}
        )
        last = res
        log.debug(
            "ML start %d: success=%s nll=%.6f", start, res.success, res.fun
        )
        if not np.isfinite(res.fun) or res.fun >= lik.PENALTY:
            continue
        # a line-search stop near the optimum still counts
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise ConvergenceError(
            "ML did not converge from any start",
            last_iterate=None if last is None else last.x,
            message_from_optimizer=None if last is None else last.message,
        )

    alpha_CC, alpha_MM, b, sigma_w, sigma_y = lik.unpack(best.x)
    ll, c, rho_y = lik.evaluate(best.x)
    return MLFit(
        alpha_CC=float(alpha_CC),
        alpha_MM=float(alpha_MM),
        beta_C=float(b[0]),
        beta_M=float(b[1]),
        c=c,
        sigma_w=float(sigma_w),
        sigma_C=float(sigma_y[0]),
        sigma_M=float(sigma_y[1]),
        loglik=float(ll),
        corrected=lik.corrected,
        rho_x=lik.rho_x,
        rho_y=float(rho_y),
        meta={
            "iterations": int(best.nit),
            "starts": int(n_starts),
            "converged": bool(best.success),
        },
    )
