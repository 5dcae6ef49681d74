"""
Sieve estimators of the diagonal bilinear technology.

Residuals of observation i are

    rho_i = (w_i - w_n(x_i) - x_i'b,
             y_Ci - kappa_C dw_n/dx_C(x_i),
             y_Mi - kappa_M dw_n/dx_M(x_i))

with w_n a Bernstein sieve and kappa = 1 / alpha. For fixed kappa the model
is linear in (gamma, b); for fixed (gamma, b) it is linear in kappa. SLS,
SGLS and SML all run the same block-coordinate engine and differ only in how
the residuals are weighted.
"""
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import null_space

from otsieve import qp, sieve_basis
from otsieve.common import as_matrix, as_vector
from otsieve.errors import (
    ConvergenceError,
    DataError,
    DomainError,
    NumericalError,
    SingularBreadError,
    SingularCovarianceError,
    UsageError,
)
from otsieve.settings import settings as global_settings
from otsieve.sieve_basis import BernsteinTensor, Domain

log = logging.getLogger(__name__)

METHODS = ("sml", "sls", "sgls")
KAPPA_STARTS = (1.0, 0.5, 2.0, 0.25, 4.0)
EXTRAPOLATION_TRIES = 3
# sweeps of uninterrupted |kappa| growth before a ray search along that axis
DIVERGENCE_WINDOW = 10
GROWTH_TOL = 1e-6
STEP_TOL = 1e-8
EXACT_FIT_TOL = 1e-26
MONOTONE_SLACK = 1e-9
RIDGE = 1e-8
EIG_FLOOR = 1e-6
BREAD_TOL = 1e-10
# distinct entries of a symmetric 3x3 matrix, row-major upper triangle
SIGMA_ENTRIES = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class MatchedSample:
    w: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        w = as_vector("wage", self.w)
        X = as_matrix("X", self.X, cols=2, rows=w.shape[0])
        Y = as_matrix("Y", self.Y, cols=2, rows=w.shape[0])
        for name, a in (("w", w), ("X", X), ("Y", Y)):
            a = np.array(a)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self):
        return self.w.shape[0]

    def take(self, index):
        return MatchedSample(self.w[index], self.X[index], self.Y[index])


@dataclass(frozen=True)
class Theta:
    kappa_C: float
    kappa_M: float
    beta_C: float
    beta_M: float

    def __post_init__(self):
        for name in ("kappa_C", "kappa_M"):
            val = float(getattr(self, name))
            if np.isnan(val) or val == 0.0:
                raise DomainError("%s must be nonzero, got %r" % (name, val))
            object.__setattr__(self, name, val)
        object.__setattr__(self, "beta_C", float(self.beta_C))
        object.__setattr__(self, "beta_M", float(self.beta_M))

    @classmethod
    def from_alpha(cls, alpha_CC, alpha_MM, beta_C, beta_M):
        def inv(a):
            return np.inf if a == 0.0 else 1.0 / a

        return cls(inv(alpha_CC), inv(alpha_MM), beta_C, beta_M)

    @property
    def kappa(self):
        return np.array([self.kappa_C, self.kappa_M])

    @property
    def beta(self):
        return np.array([self.beta_C, self.beta_M])

    @property
    def alpha_CC(self):
        return 1.0 / self.kappa_C

    @property
    def alpha_MM(self):
        return 1.0 / self.kappa_M

    @property
    def at_boundary(self):
        return not (np.isfinite(self.kappa_C) and np.isfinite(self.kappa_M))

    def as_array(self):
        return np.array([self.kappa_C, self.kappa_M, self.beta_C, self.beta_M])


@dataclass(frozen=True)
class SigmaHat:
    """
    Conditional covariance of the residuals given x, either constant or a
    series regression of each distinct entry on a Bernstein basis.
    Evaluation symmetrizes and floors eigenvalues at `floor`.
    """

    floor: float
    constant: np.ndarray = None
    coef: np.ndarray = None
    degrees: tuple = None
    domain: Domain = None
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_matrix(cls, M, floor=0.0):
        M = np.asarray(M, dtype=float)
        if M.shape != (3, 3):
            raise DataError("constant covariance must be 3x3")
        return cls(floor=floor, constant=0.5 * (M + M.T))

    @classmethod
    def identity(cls):
        return cls.from_matrix(np.eye(3))

    @property
    def is_constant(self):
        return self.coef is None

    def raw_at(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.is_constant:
            return np.broadcast_to(self.constant, (X.shape[0], 3, 3)).copy()
        B, _, _ = sieve_basis.design_matrices(
            X, self.degrees[0], self.degrees[1], self.domain
        )
        entries = B @ self.coef
        out = np.empty((X.shape[0], 3, 3))
        for col, (i, j) in enumerate(SIGMA_ENTRIES):
            out[:, i, j] = entries[:, col]
            out[:, j, i] = entries[:, col]
        return out

    def at(self, X):
        raw = self.raw_at(X)
        eig, vec = np.linalg.eigh(raw)
        eig = np.maximum(eig, self.floor)
        return np.einsum("nij,nj,nkj->nik", vec, eig, vec)

    def inverse_at(self, X):
        S = self.at(X)
        eig = np.linalg.eigvalsh(S)
        if eig.min() <= 0.0:
            raise SingularCovarianceError(
                "conditional covariance is singular at some x",
                smallest_eigenvalue=float(eig.min()),
            )
        return np.linalg.inv(S)


@dataclass
class EstimatorOptions:
    degrees: tuple = (3, 3)
    convexity: bool = False
    n_starts: int = 5
    max_iter: int = 500
    tol: float = 1e-10
    kappa_cap: float = 1e4
    domain: Domain = None
    sigma_degrees: tuple = None

    @classmethod
    def from_settings(cls, settings=None, **overrides):
        settings = settings or global_settings
        opts = cls(
            degrees=tuple(settings.degrees),
            convexity=bool(settings.convexity),
            n_starts=int(settings.n_starts),
            max_iter=int(settings.max_iter),
            tol=float(settings.tol),
        )
        for key, val in overrides.items():
            if val is not None:
                setattr(opts, key, val)
        opts.degrees = tuple(opts.degrees)
        return opts


def _finite_or_none(val):
    val = float(val)
    return val if np.isfinite(val) else None


@dataclass
class EstimateReport:
    method: str
    theta: Theta
    gamma: BernsteinTensor
    objective: float
    objective_kind: str
    vcov: np.ndarray = None
    vcov_theta: np.ndarray = None
    se: dict = None
    se_reason: str = None
    sigma: SigmaHat = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def alpha_CC(self):
        return self.theta.alpha_CC

    @property
    def alpha_MM(self):
        return self.theta.alpha_MM

    @property
    def estimates(self):
        """
        (alpha_CC, alpha_MM, beta_C, beta_M)
        """
        return np.array(
            [
                self.alpha_CC,
                self.alpha_MM,
                self.theta.beta_C,
                self.theta.beta_M,
            ]
        )

    @property
    def converged(self):
        return bool(self.meta.get("converged", False))

    def to_dict(self):
        th = self.theta
        out = {
            "method": self.method,
            "parameters": {
                "alpha_CC": _finite_or_none(self.alpha_CC),
                "alpha_MM": _finite_or_none(self.alpha_MM),
                "beta_C": th.beta_C,
                "beta_M": th.beta_M,
                "kappa_C": _finite_or_none(th.kappa_C),
                "kappa_M": _finite_or_none(th.kappa_M),
            },
            "standard_errors": self.se,
            "se_reason": self.se_reason,
            "vcov": None if self.vcov is None else self.vcov.tolist(),
            "objective": _finite_or_none(self.objective),
            "objective_kind": self.objective_kind,
            "degrees": list(self.gamma.degrees),
            "domain": {
                "lo": list(self.gamma.domain.lo),
                "hi": list(self.gamma.domain.hi),
            },
            "meta": {
                k: (v.tolist() if hasattr(v, "tolist") else v)
                for k, v in self.meta.items()
            },
        }
        return out

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def gamma_to_csv(self, fp, float_format="%.17g"):
        self.gamma.to_csv(fp, float_format=float_format)


@dataclass
class VarianceResult:
    vcov_theta: np.ndarray
    vcov_alpha: np.ndarray
    se_theta: np.ndarray
    se_alpha: np.ndarray
    bread_min_eigenvalue: float
    efficient: bool = False


class _BoundaryHit(Exception):
    def __init__(self, kappa, objective):
        super(_BoundaryHit, self).__init__("kappa beyond cap")
        self.kappa = kappa
        self.objective = objective


class _Weights(object):
    """
    Per-observation 3x3 weights W_i; `None` means the identity. Whitening
    uses W_i = L_i L_i' so that rho'W rho = ||L_i' rho||^2.
    """

    def __init__(self, W=None):
        self.W = None if W is None else np.asarray(W, dtype=float)
        self.Lt = None
        if self.W is not None:
            self.Lt = np.swapaxes(np.linalg.cholesky(self.W), -1, -2)

    def whiten(self, D, T):
        if self.Lt is None:
            return D.reshape(-1, D.shape[2]), T.ravel()
        if self.Lt.ndim == 2:
            Z = np.einsum("ij,njp->nip", self.Lt, D)
            t = T @ self.Lt.T
        else:
            Z = np.einsum("nij,njp->nip", self.Lt, D)
            t = np.einsum("nij,nj->ni", self.Lt, T)
        return Z.reshape(-1, D.shape[2]), t.ravel()

    def quad(self, R):
        if self.W is None:
            return float(np.sum(R * R))
        if self.W.ndim == 2:
            return float(np.einsum("ni,ij,nj->", R, self.W, R))
        return float(np.einsum("ni,nij,nj->", R, self.W, R))

    def stack(self, n):
        if self.W is None:
            return np.broadcast_to(np.eye(3), (n, 3, 3))
        if self.W.ndim == 2:
            return np.broadcast_to(self.W, (n, 3, 3))
        return self.W


@dataclass
class _Solution:
    kappa: np.ndarray
    p: np.ndarray
    objective: float
    active: list
    iterations: int
    exact_fit: bool = False
    boundary: bool = False
    alpha: np.ndarray = None


class _SieveProblem(object):
    """
    Design of one sample on one sieve. Parameters p = (gamma, b) for a given
    kappa; `G` holds the convexity rows padded for b.
    """

    def __init__(self, sample, degrees, domain, convexity):
        self.sample = sample
        self.k_C, self.k_M = int(degrees[0]), int(degrees[1])
        self.domain = domain
        self.B, self.GC, self.GM = sieve_basis.design_matrices(
            sample.X, self.k_C, self.k_M, domain
        )
        self.n, self.P = self.B.shape
        self.T = np.column_stack([sample.w, sample.Y])
        self.convexity = convexity
        self.G = None
        if convexity:
            Gg, _ = sieve_basis.convexity_constraints(self.k_C, self.k_M)
            if Gg.shape[0]:
                self.G = np.hstack([Gg, np.zeros((Gg.shape[0], 2))])

    def design(self, kappa):
        D = np.zeros((self.n, 3, self.P + 2))
        D[:, 0, : self.P] = self.B
        D[:, 0, self.P:] = self.sample.X
        D[:, 1, : self.P] = kappa[0] * self.GC
        D[:, 2, : self.P] = kappa[1] * self.GM
        return D

    def residuals(self, kappa, p):
        return self.T - np.einsum("nip,p->ni", self.design(kappa), p)

    def profile(self, kappa, weights, p0=None):
        """
        Minimizes over (gamma, b) for fixed kappa.
        """
        D = self.design(kappa)
        Z, t = weights.whiten(D, self.T)
        res = qp.solve_lsi(Z, t, self.G, x0=p0)
        R = self.T - np.einsum("nip,p->ni", D, res.x)
        return weights.quad(R), res.x, res.active

    def kappa_step(self, kappa, p, weights):
        """
        Weighted least squares for kappa with (gamma, b) fixed.
        """
        gamma = p[: self.P]
        gC = self.GC @ gamma
        gM = self.GM @ gamma
        e0 = self.T[:, 0] - self.B @ gamma - self.sample.X @ p[self.P:]
        a = np.column_stack([e0, self.T[:, 1], self.T[:, 2]])
        W = weights.stack(self.n)
        Wa = np.einsum("nij,nj->ni", W, a)
        M = np.array(
            [
                [np.sum(gC * gC * W[:, 1, 1]), np.sum(gC * gM * W[:, 1, 2])],
                [np.sum(gC * gM * W[:, 1, 2]), np.sum(gM * gM * W[:, 2, 2])],
            ]
        )
        r = np.array([np.sum(gC * Wa[:, 1]), np.sum(gM * Wa[:, 2])])
        new = np.linalg.lstsq(M, r, rcond=None)[0]
        # a flat sieve direction carries no information on its kappa
        flat = np.abs(np.diag(M)) <= 1e-300
        new[flat] = kappa[flat]
        new[new == 0.0] = kappa[new == 0.0]
        return new

    def sieve(self, gamma):
        return BernsteinTensor(self.k_C, self.k_M, self.domain, gamma)

    def objective_scale(self, weights):
        return 1.0 + weights.quad(self.T)


def _check_sample_size(sample, degrees):
    k = sieve_basis.n_coefficients(*degrees)
    if sample.n < k + 4:
        raise DataError(
            "sample of %d rows is too small for %d sieve coefficients"
            % (sample.n, k),
            n=sample.n,
            coefficients=k,
        )


def _moment_kappa(sample):
    """
    Starting kappa from a quadratic wage regression: the fitted gradient
    minus its mean lines up with the demands up to scale.
    """
    X, w = sample.X, sample.w
    xC, xM = X[:, 0], X[:, 1]
    design = np.column_stack(
        [np.ones_like(xC), xC, xM, 0.5 * xC ** 2, xC * xM, 0.5 * xM ** 2]
    )
    coef = np.linalg.lstsq(design, w, rcond=None)[0]
    grads = (
        coef[1] + coef[3] * xC + coef[4] * xM,
        coef[2] + coef[4] * xC + coef[5] * xM,
    )
    out = []
    for g, y in zip(grads, sample.Y.T):
        A = np.column_stack([g, np.ones_like(g)])
        slope = np.linalg.lstsq(A, y, rcond=None)[0][0]
        out.append(slope if np.isfinite(slope) and abs(slope) > 1e-8 else 1.0)
    return np.array(out)


def _sweep(problem, kappa, p, weights, cap):
    """
    One kappa step followed by a profiled (gamma, b) solve, then extrapolation
    along the kappa move while the profiled objective keeps falling.
    """
    kappa_new = problem.kappa_step(kappa, p, weights)
    if np.abs(kappa_new).max() > cap:
        edge = np.clip(kappa_new, -cap, cap)
        raise _BoundaryHit(edge, problem.profile(edge, weights, p)[0])
    f_new, p_new, active = problem.profile(kappa_new, weights, p)
    step = kappa_new - kappa
    factor = 1.0
    for _ in range(EXTRAPOLATION_TRIES):
        factor *= 2.0
        trial = kappa + factor * step
        if np.abs(trial).max() > cap or np.any(trial == 0.0):
            break
        f_t, p_t, a_t = problem.profile(trial, weights, p_new)
        if not f_t < f_new:
            break
        kappa_new, f_new, p_new, active = trial, f_t, p_t, a_t
    return kappa_new, f_new, p_new, active


class _GrowthWatch(object):
    """
    Counts consecutive sweeps in which |kappa_k| grew; the block steps only
    creep along a valley that falls toward the boundary.
    """

    def __init__(self, kappa):
        self.last = np.abs(kappa)
        self.count = np.zeros(len(kappa), dtype=int)

    def update(self, kappa):
        size = np.abs(kappa)
        grown = size > self.last * (1.0 + GROWTH_TOL)
        self.count = np.where(grown, self.count + 1, 0)
        self.last = size
        return np.flatnonzero(self.count >= DIVERGENCE_WINDOW)

    def reset(self, axis, kappa):
        self.count[axis] = 0
        self.last = np.abs(kappa)


def _ray_search(problem, state, weights, axis, cap):
    """
    Doubles kappa along `axis` while the profiled objective keeps falling.
    Still falling at the cap means the minimum sits at the boundary.
    """
    kappa, f, p, active = state
    while True:
        trial = kappa.copy()
        trial[axis] *= 2.0
        if abs(trial[axis]) >= cap:
            trial[axis] = np.sign(trial[axis]) * cap
            f_t = problem.profile(trial, weights, p)[0]
            if f_t < f:
                raise _BoundaryHit(trial, f_t)
            return kappa, f, p, active
        f_t, p_t, a_t = problem.profile(trial, weights, p)
        if not f_t < f:
            return kappa, f, p, active
        log.debug("ray search along axis %d: kappa=%s", axis, trial)
        kappa, f, p, active = trial, f_t, p_t, a_t


def _descend(problem, kappa, weights, opts, p=None):
    """
    Block-coordinate descent of sum rho_i' W_i rho_i for fixed weights.
    """
    kappa = np.array(kappa, dtype=float)
    f, p, active = problem.profile(kappa, weights, p)
    scale = problem.objective_scale(weights)
    watch = _GrowthWatch(kappa)
    for it in range(1, opts.max_iter + 1):
        if f <= EXACT_FIT_TOL * scale:
            return _Solution(kappa, p, f, active, it - 1, exact_fit=True)
        kappa_new, f_new, p_new, active = _sweep(
            problem, kappa, p, weights, opts.kappa_cap
        )
        if f_new > f + MONOTONE_SLACK * f + 1e-14 * scale:
            raise ConvergenceError(
                "objective increased in block-coordinate step",
                last_iterate=kappa_new,
                iteration=it,
                previous=f,
                current=f_new,
            )
        for axis in watch.update(kappa_new):
            kappa_new, f_new, p_new, active = _ray_search(
                problem,
                (kappa_new, f_new, p_new, active),
                weights,
                axis,
                opts.kappa_cap,
            )
            watch.reset(axis, kappa_new)
        move = np.abs(kappa_new - kappa).max()
        log.debug("sweep %d: objective=%.12g kappa=%s", it, f_new, kappa_new)
        done = (
            f - f_new <= opts.tol * f
            or move <= STEP_TOL * (1.0 + np.abs(kappa_new).max())
        )
        kappa, f, p = kappa_new, f_new, p_new
        if done:
            return _Solution(
                kappa,
                p,
                f,
                active,
                it,
                exact_fit=f <= EXACT_FIT_TOL * scale,
            )
    raise ConvergenceError(
        "block-coordinate descent exceeded %d iterations" % opts.max_iter,
        last_iterate=kappa,
        objective=f,
    )


def _covariance(R):
    return R.T @ R / R.shape[0]


def _check_covariance(S):
    eig = np.linalg.eigvalsh(S)
    if eig.min() <= 1e-12 * max(np.trace(S), 1e-300):
        raise SingularCovarianceError(
            "residual covariance is singular; try lower sieve degrees",
            smallest_eigenvalue=float(eig.min()),
        )
    return eig


def _descend_sml(problem, start, opts):
    """
    Majorize-minimize for log det of the residual covariance: each sweep
    reweights with the inverse covariance at the current point, so every
    decrease of the weighted sum also decreases the log determinant.
    """
    kappa, p = start.kappa, start.p
    R = problem.residuals(kappa, p)
    S = _covariance(R)
    _check_covariance(S)
    logdet = np.linalg.slogdet(S)[1]
    active = start.active
    watch = _GrowthWatch(kappa)
    for it in range(1, opts.max_iter + 1):
        weights = _Weights(np.linalg.inv(S))
        f, p, active = problem.profile(kappa, weights, p)
        kappa_new, f_new, p_new, active = _sweep(
            problem, kappa, p, weights, opts.kappa_cap
        )
        for axis in watch.update(kappa_new):
            kappa_new, f_new, p_new, active = _ray_search(
                problem,
                (kappa_new, f_new, p_new, active),
                weights,
                axis,
                opts.kappa_cap,
            )
            watch.reset(axis, kappa_new)
        S_new = _covariance(problem.residuals(kappa_new, p_new))
        _check_covariance(S_new)
        logdet_new = np.linalg.slogdet(S_new)[1]
        if logdet_new > logdet + MONOTONE_SLACK * (1.0 + abs(logdet)):
            raise ConvergenceError(
                "log-determinant increased in majorize-minimize step",
                last_iterate=kappa_new,
                iteration=it,
                previous=logdet,
                current=logdet_new,
            )
        move = np.abs(kappa_new - kappa).max()
        log.debug("SML sweep %d: logdet=%.12g", it, logdet_new)
        done = (
            logdet - logdet_new <= opts.tol * (1.0 + abs(logdet))
            or move <= STEP_TOL * (1.0 + np.abs(kappa_new).max())
        )
        kappa, p, S, logdet = kappa_new, p_new, S_new, logdet_new
        if done:
            return _Solution(kappa, p, logdet, active, it), S
    raise ConvergenceError(
        "SML exceeded %d iterations" % opts.max_iter,
        last_iterate=kappa,
        objective=logdet,
    )


def _alpha_mode(problem, weights, reweight=False, opts=None):
    """
    Boundary fallback in the alpha parameterization: the job-side moments
    become alpha_k y_k - dw_n/dx_k, which is jointly linear in
    (gamma, b, alpha), so one constrained least-squares solve suffices.
    """
    P = problem.P
    D = np.zeros((problem.n, 3, P + 4))
    D[:, 0, :P] = problem.B
    D[:, 0, P:P + 2] = problem.sample.X
    D[:, 1, :P] = problem.GC
    D[:, 1, P + 2] = -problem.sample.Y[:, 0]
    D[:, 2, :P] = problem.GM
    D[:, 2, P + 3] = -problem.sample.Y[:, 1]
    T = np.column_stack(
        [problem.sample.w, np.zeros(problem.n), np.zeros(problem.n)]
    )
    G = None
    if problem.G is not None:
        G = np.hstack([problem.G, np.zeros((problem.G.shape[0], 2))])

    q = None
    logdet = None
    iterations = 0
    max_iter = opts.max_iter if (reweight and opts) else 1
    for it in range(max_iter):
        iterations = it + 1
        Z, t = weights.whiten(D, T)
        res = qp.solve_lsi(Z, t, G, x0=q)
        q = res.x
        R = T - np.einsum("nip,p->ni", D, q)
        if not reweight:
            break
        S = _covariance(R)
        _check_covariance(S)
        new = np.linalg.slogdet(S)[1]
        if logdet is not None and logdet - new <= opts.tol * (1 + abs(logdet)):
            logdet = new
            break
        logdet = new
        weights = _Weights(np.linalg.inv(S))
    objective = logdet if reweight else weights.quad(R)
    alpha = q[P + 2 :]
    return _Solution(
        kappa=np.array([np.inf if a == 0 else 1.0 / a for a in alpha]),
        p=q[: P + 2],
        objective=objective,
        active=res.active,
        iterations=iterations,
        boundary=True,
        alpha=alpha,
    )


def _multistart(problem, weights, opts, kappa0):
    best = None
    failures = []
    edge = []
    for start, mult in enumerate(KAPPA_STARTS[: max(1, opts.n_starts)]):
        try:
            sol = _descend(problem, mult * kappa0, weights, opts)
        except _BoundaryHit as hit:
            edge.append(hit.objective)
            log.debug("start %d hit the kappa cap", start)
            continue
        except ConvergenceError as err:
            failures.append(err)
            log.debug("start %d failed: %s", start, err.message)
            continue
        if best is None or sol.objective < best.objective:
            best = sol
    if edge and (best is None or min(edge) < best.objective):
        log.info("Objective falls toward the kappa cap, using alpha form")
        return _alpha_mode(problem, weights), len(edge)
    if best is None:
        raise failures[-1]
    return best, len(edge)


def _initial_kappa(sample, problem, weights, cap):
    """
    1 / alpha from the joint alpha-form solve, which is exact on noiseless
    data; the wage-regression guess covers a vanishing or huge alpha.
    """
    alpha = _alpha_mode(problem, weights).alpha
    with np.errstate(divide="ignore"):
        kappa = 1.0 / alpha
    if np.all(np.isfinite(kappa)) and np.abs(kappa).max() <= cap:
        return kappa
    return _moment_kappa(sample)


def _report(method, problem, sol, kind, meta, sigma=None):
    P = problem.P
    if sol.boundary:
        theta = Theta.from_alpha(
            sol.alpha[0], sol.alpha[1], sol.p[P], sol.p[P + 1]
        )
    else:
        theta = Theta(sol.kappa[0], sol.kappa[1], sol.p[P], sol.p[P + 1])
    gamma = problem.sieve(sol.p[:P])
    meta = dict(meta)
    meta.update(
        {
            "converged": True,
            "iterations": int(sol.iterations),
            "active_constraints": [int(i) for i in sol.active],
            "boundary": bool(sol.boundary),
            "exact_fit": bool(sol.exact_fit),
            "convexity": bool(problem.convexity),
            "n": int(problem.n),
        }
    )
    report = EstimateReport(
        method=method,
        theta=theta,
        gamma=gamma,
        objective=float(sol.objective),
        objective_kind=kind,
        sigma=sigma,
        meta=meta,
    )
    if sol.boundary:
        report.se_reason = "boundary"
    return report


def _prepare(sample, degrees, convexity, options):
    opts = replace(options) if options else EstimatorOptions.from_settings()
    if degrees is not None:
        opts.degrees = tuple(degrees)
    if convexity is not None:
        opts.convexity = bool(convexity)
    _check_sample_size(sample, opts.degrees)
    domain = opts.domain or Domain.from_data(sample.X)
    problem = _SieveProblem(sample, opts.degrees, domain, opts.convexity)
    return opts, problem


def residuals(sample, theta, sieve):
    """
    n x 3 residual matrix. A boundary theta (infinite kappa) uses the
    alpha form alpha_k y_k - dw_n/dx_k on the job side.
    """
    wn = sieve(sample.X)
    grad = sieve.gradient(sample.X)
    R = np.empty((sample.n, 3))
    R[:, 0] = sample.w - wn - sample.X @ theta.beta
    if theta.at_boundary:
        R[:, 1] = theta.alpha_CC * sample.Y[:, 0] - grad[:, 0]
        R[:, 2] = theta.alpha_MM * sample.Y[:, 1] - grad[:, 1]
    else:
        R[:, 1] = sample.Y[:, 0] - theta.kappa_C * grad[:, 0]
        R[:, 2] = sample.Y[:, 1] - theta.kappa_M * grad[:, 1]
    return R


def _sls(sample, opts, problem):
    weights = _Weights()
    kappa0 = _initial_kappa(sample, problem, weights, opts.kappa_cap)
    sol, boundary = _multistart(problem, weights, opts, kappa0)
    return _report(
        "sls",
        problem,
        sol,
        "ssr",
        {
            "restarts": min(opts.n_starts, len(KAPPA_STARTS)),
            "boundary_starts": boundary,
        },
    )


def sls_fit(sample, degrees=None, convexity=None, options=None):
    """
    Sieve least squares: minimizes sum_i rho_i'rho_i over (theta, gamma).
    """
    opts, problem = _prepare(sample, degrees, convexity, options)
    log.info(
        "Fitting SLS on n=%d with degrees %s ...", sample.n, opts.degrees
    )
    return _sls(sample, opts, problem)


def estimate_sigma0(sample, initial, degrees=None):
    """
    Series estimate of E[rho rho' | x]: each distinct entry of rho_i rho_i'
    is regressed on a Bernstein basis over the sieve domain.
    """
    R = residuals(sample, initial.theta, initial.gamma)
    degrees = tuple(degrees or initial.gamma.degrees)
    domain = initial.gamma.domain
    B, _, _ = sieve_basis.design_matrices(
        sample.X, degrees[0], degrees[1], domain
    )
    prods = np.column_stack([R[:, i] * R[:, j] for i, j in SIGMA_ENTRIES])
    meta = {"ridge": False}
    if np.linalg.matrix_rank(B) < B.shape[1]:
        meta["ridge"] = True
        lhs = B.T @ B + RIDGE * np.eye(B.shape[1])
        coef = np.linalg.solve(lhs, B.T @ prods)
        log.info("Sigma regression is rank deficient, using ridge %g", RIDGE)
    else:
        coef = np.linalg.lstsq(B, prods, rcond=None)[0]
    trace = float(np.trace(_covariance(R)))
    floor = EIG_FLOOR * trace / 3.0
    if not floor > 0.0:
        raise SingularCovarianceError(
            "residuals vanish; conditional covariance is not estimable"
        )
    return SigmaHat(
        floor=floor, coef=coef, degrees=degrees, domain=domain, meta=meta
    )


def sgls_fit(sample, degrees=None, convexity=None, options=None, sigma=None):
    """
    Three steps: SLS, the series covariance estimate, then the fit weighted
    by its inverse warm-started from the SLS solution. A given `sigma`
    replaces the second step.
    """
    opts, problem = _prepare(sample, degrees, convexity, options)
    log.info(
        "Fitting SGLS on n=%d with degrees %s ...", sample.n, opts.degrees
    )
    initial = _sls(sample, opts, problem)
    if initial.meta["exact_fit"] and sigma is None:
        return replace(
            initial,
            method="sgls",
            meta=dict(initial.meta, step1_objective=initial.objective),
        )
    if sigma is None:
        sigma = estimate_sigma0(sample, initial, opts.sigma_degrees)
    weights = _Weights(sigma.inverse_at(sample.X))
    if initial.meta["boundary"]:
        sol = _alpha_mode(problem, weights)
    else:
        p0 = np.concatenate([initial.gamma.gamma.ravel(), initial.theta.beta])
        try:
            sol = _descend(problem, initial.theta.kappa, weights, opts, p=p0)
        except _BoundaryHit:
            sol = _alpha_mode(problem, weights)
    return _report(
        "sgls",
        problem,
        sol,
        "weighted_ssr",
        {
            "step1_objective": initial.objective,
            "sigma_ridge": bool(sigma.meta.get("ridge", False)),
        },
        sigma=sigma,
    )


def sml_fit(sample, degrees=None, convexity=None, options=None):
    """
    Sieve ML on the concentrated Gaussian objective
    -(n/2) log det((1/n) sum rho_i rho_i'). The Jacobian of the map from
    (w, y_C, y_M) to rho is the identity, so no Jacobian term appears.
    """
    opts, problem = _prepare(sample, degrees, convexity, options)
    log.info(
        "Fitting SML on n=%d with degrees %s ...", sample.n, opts.degrees
    )
    initial = _sls(sample, opts, problem)
    if initial.meta["exact_fit"]:
        return replace(
            initial,
            method="sml",
            meta=dict(initial.meta, step1_objective=initial.objective),
        )
    start = _Solution(
        kappa=initial.theta.kappa,
        p=np.concatenate([initial.gamma.gamma.ravel(), initial.theta.beta]),
        objective=initial.objective,
        active=initial.meta["active_constraints"],
        iterations=0,
    )
    if initial.meta["boundary"]:
        sol = _alpha_mode(problem, _Weights(), reweight=True, opts=opts)
    else:
        try:
            sol, _ = _descend_sml(problem, start, opts)
        except _BoundaryHit:
            sol = _alpha_mode(problem, _Weights(), reweight=True, opts=opts)
    n = problem.n
    # logdet -> concentrated log-likelihood
    sol.objective = -0.5 * n * sol.objective
    return _report(
        "sml",
        problem,
        sol,
        "concentrated_loglik",
        {"step1_objective": initial.objective},
    )


def fit(sample, method="sgls", options=None):
    method = method.lower()
    if method not in METHODS:
        raise UsageError(
            "unknown estimator %r, expected one of %s" % (method, METHODS)
        )
    opts = options or EstimatorOptions.from_settings()
    if method == "sls":
        return sls_fit(sample, options=opts)
    if method == "sgls":
        return sgls_fit(sample, options=opts)
    return sml_fit(sample, options=opts)


def _weight_stack(report, sample, sigma, R):
    n = sample.n
    if sigma is not None:
        return sigma.inverse_at(sample.X)
    if report.method == "sml":
        S = _covariance(R)
        _check_covariance(S)
        return np.broadcast_to(np.linalg.inv(S), (n, 3, 3))
    return np.broadcast_to(np.eye(3), (n, 3, 3))


def variance_theta(report, sample, sigma=None, efficient=False):
    """
    Sandwich V1^-1 V2 V1^-1 / n for (theta, gamma) jointly on the sieve,
    restricted to the directions left free by active constraints. The theta
    block maps to alpha by the delta method, se(alpha) = se(kappa) / kappa^2.
    With `efficient` the bread inverse V1^-1 / n is returned instead.
    """
    th = report.theta
    if th.at_boundary or report.meta.get("boundary"):
        raise DomainError("no standard errors at the kappa boundary")
    sieve = report.gamma
    if sigma is None:
        sigma = report.sigma
    B, GC, GM = sieve_basis.design_matrices(
        sample.X, sieve.k_C, sieve.k_M, sieve.domain
    )
    n, P = B.shape
    gam = sieve.gamma.ravel()
    R = residuals(sample, th, sieve)

    Jac = np.zeros((n, 3, 4 + P))
    Jac[:, 0, 2:4] = -sample.X
    Jac[:, 0, 4:] = -B
    Jac[:, 1, 0] = -(GC @ gam)
    Jac[:, 1, 4:] = -th.kappa_C * GC
    Jac[:, 2, 1] = -(GM @ gam)
    Jac[:, 2, 4:] = -th.kappa_M * GM

    W = _weight_stack(report, sample, sigma, R)
    WJ = np.einsum("nij,njp->nip", W, Jac)
    V1 = np.einsum("nip,niq->pq", Jac, WJ) / n
    scores = np.einsum("nip,ni->np", WJ, R)
    V2 = scores.T @ scores / n

    N = np.eye(4 + P)
    active = report.meta.get("active_constraints") or []
    if active:
        Gg, _ = sieve_basis.convexity_constraints(sieve.k_C, sieve.k_M)
        Ga = np.hstack([np.zeros((len(active), 4)), Gg[active]])
        N = null_space(Ga)
    V1n = N.T @ V1 @ N
    V1n = 0.5 * (V1n + V1n.T)
    eig = np.linalg.eigvalsh(V1n)
    if eig.min() <= BREAD_TOL * max(eig.max(), 1e-300):
        raise SingularBreadError(
            "sandwich bread is singular",
            smallest_eigenvalue=float(eig.min()),
        )
    inv = np.linalg.inv(V1n)
    if efficient:
        cov_n = inv / n
    else:
        cov_n = inv @ (N.T @ V2 @ N) @ inv / n
    cov = N @ cov_n @ N.T
    vt = cov[:4, :4]
    vt = 0.5 * (vt + vt.T)
    jd = np.diag([-1.0 / th.kappa_C ** 2, -1.0 / th.kappa_M ** 2, 1.0, 1.0])
    va = jd @ vt @ jd
    return VarianceResult(
        vcov_theta=vt,
        vcov_alpha=va,
        se_theta=np.sqrt(np.clip(np.diag(vt), 0.0, None)),
        se_alpha=np.sqrt(np.clip(np.diag(va), 0.0, None)),
        bread_min_eigenvalue=float(eig.min()),
        efficient=bool(efficient),
    )


def attach_variance(report, sample, sigma=None, efficient=False):
    """
    Returns a copy of the report carrying standard errors, or recording why
    there are none ("boundary", "singular_bread").
    """
    if report.theta.at_boundary or report.meta.get("boundary"):
        return replace(report, se=None, vcov=None, se_reason="boundary")
    try:
        var = variance_theta(report, sample, sigma, efficient=efficient)
    except SingularBreadError as err:
        log.warning("No standard errors: %s", err.message)
        return replace(
            report,
            se=None,
            vcov=None,
            se_reason="singular_bread",
            meta=dict(
                report.meta,
                bread_min_eigenvalue=err.smallest_eigenvalue,
            ),
        )
    names = ("alpha_CC", "alpha_MM", "beta_C", "beta_M")
    se = {k: float(v) for k, v in zip(names, var.se_alpha)}
    se["kappa_C"] = float(var.se_theta[0])
    se["kappa_M"] = float(var.se_theta[1])
    return replace(
        report,
        se=se,
        vcov=var.vcov_alpha,
        vcov_theta=var.vcov_theta,
        se_reason=None,
        meta=dict(report.meta, bread_min_eigenvalue=var.bread_min_eigenvalue),
    )


def select_degrees(sample, candidates, method="sls", options=None):
    """
    Fits each candidate (k_C, k_M) and returns the one with the smallest
    BIC-style score, along with every score.
    """
    opts = options or EstimatorOptions.from_settings()
    scores = []
    for degrees in candidates:
        trial = replace(opts, degrees=tuple(degrees))
        try:
            report = fit(sample, method, trial)
        except NumericalError as err:
            log.info("degrees %s failed: %s", degrees, err.message)
            scores.append({"degrees": tuple(degrees), "bic": np.inf})
            continue
        R = residuals(sample, report.theta, report.gamma)
        n_params = sieve_basis.n_coefficients(*degrees) + 4
        score = sieve_basis.bic_score(sample.n, n_params, _covariance(R))
        scores.append({"degrees": tuple(degrees), "bic": float(score)})
    if not scores:
        raise UsageError("no candidate degrees given")
    best = min(scores, key=lambda s: s["bic"])
    return best["degrees"], scores
