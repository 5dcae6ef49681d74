"""
Simulation designs, the Monte-Carlo harness and the technology sweep.

Every sample is drawn from numpy.random.default_rng(seed) in a fixed order:
worker skills, job demands, then measurement errors. Replication r of a
Monte-Carlo run uses seed cfg.seed + r.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from otsieve import diagnostics, estimators, gaussian_model, ot_solver
from otsieve.errors import (
    ConfigError,
    DomainError,
    OtsieveError,
    PresetError,
    ReplicationFailureError,
)
from otsieve.settings import get_preset_path, load_dict_from_json_file

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "gumbel_transformed", "gumbel_raw", "gaussian_mixture")
ERROR_FAMILIES = (
    "iid_gaussian",
    "gamma_iid",
    "joint_gaussian",
    "gaussian_mixture",
)
ESTIMATORS = ("ml", "ml_star", "sml", "sls", "sgls")
PARAMETERS = ("alpha_CC", "alpha_MM", "beta_C", "beta_M")

GAMMA_SHAPE = 1.0
GAMMA_SCALE = 2.0
JOINT_ERROR_COV = np.array([[2.0, 1.0, 1.0], [1.0, 1.0, 0.5], [1.0, 0.5, 1.0]])
MIXTURE_ERROR_MEANS = (np.full(3, 1.0), np.full(3, -3.0))
MIXTURE_ERROR_COV = np.array(
    [[1.0, 0.7, 0.7], [0.7, 1.0, 0.3], [0.7, 0.3, 1.0]]
)
SKILL_MIXTURE_MEANS = (np.full(2, 1.0), np.full(2, -1.0))
MAX_FAILURE_RATE = 0.05


@dataclass
class DgpConfig:
    family: str = "gaussian"
    n: int = 500
    tech: ot_solver.ProductionTech = field(
        default_factory=lambda: ot_solver.ProductionTech.diagonal(
            0.5, 0.2, 1.7, -0.4
        )
    )
    c: float = 30.0
    rho_x: float = -0.4
    rho_y: float = -0.5
    gumbel_x: float = 1.3
    gumbel_y: float = 1.4
    mixture_rho_x: float = 0.4
    mixture_rho_y: float = 0.5
    error_family: str = "iid_gaussian"
    sigma: tuple = (2.0, 1.0, 1.0)
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(
                "unknown family %r, expected one of %s"
                % (self.family, FAMILIES)
            )
        if self.error_family not in ERROR_FAMILIES:
            raise ConfigError(
                "unknown error family %r, expected one of %s"
                % (self.error_family, ERROR_FAMILIES)
            )
        if int(self.n) < 2:
            raise ConfigError("sample size must be at least 2")
        if min(self.gumbel_x, self.gumbel_y) < 1.0:
            raise DomainError(
                "Gumbel shape parameters must be >= 1",
                gumbel_x=self.gumbel_x,
                gumbel_y=self.gumbel_y,
            )
        if len(self.sigma) != 3 or min(self.sigma) < 0:
            raise ConfigError("sigma must be three nonnegative SDs")
        self.n = int(self.n)
        self.sigma = tuple(float(s) for s in self.sigma)

    @property
    def truth(self):
        t = self.tech
        return np.array([t.alpha_CC, t.alpha_MM, t.beta_C, t.beta_M])

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        tech_keys = ("alpha_CC", "alpha_MM", "beta_C", "beta_M")
        defaults = cls()
        tech = defaults.tech
        if any(k in d for k in tech_keys):
            tech = tech.replace(**{k: d.pop(k) for k in tech_keys if k in d})
        known = set(cls.__dataclass_fields__) - {"tech"}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "sigma" in kwargs:
            kwargs["sigma"] = tuple(kwargs["sigma"])
        return cls(tech=tech, **kwargs)

    @classmethod
    def from_preset(cls, name, **overrides):
        preset = load_preset(name)
        dgp = dict(preset.get("dgp", {}))
        dgp.setdefault("name", name)
        dgp.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(dgp)

    def to_dict(self):
        return {
            "family": self.family,
            "n": self.n,
            "alpha_CC": self.tech.alpha_CC,
            "alpha_MM": self.tech.alpha_MM,
            "beta_C": self.tech.beta_C,
            "beta_M": self.tech.beta_M,
            "c": self.c,
            "rho_x": self.rho_x,
            "rho_y": self.rho_y,
            "gumbel_x": self.gumbel_x,
            "gumbel_y": self.gumbel_y,
            "mixture_rho_x": self.mixture_rho_x,
            "mixture_rho_y": self.mixture_rho_y,
            "error_family": self.error_family,
            "sigma": list(self.sigma),
            "seed": self.seed,
            "name": self.name,
        }


def load_preset(name):
    path = get_preset_path(name)
    try:
        return load_dict_from_json_file(path)
    except FileNotFoundError:
        raise PresetError("no preset named %r" % name, path=path)


@dataclass
class Equilibrium:
    X: np.ndarray
    Y_star: np.ndarray
    W_star: np.ndarray
    coupling: ot_solver.Coupling = None
    check: ot_solver.CouplingCheck = None


def sample_gumbel_copula(n, theta, rng):
    """
    Marshall-Olkin draw of n pairs from the bivariate Gumbel copula: a
    positive stable mixing variable V with Laplace transform exp(-t^(1/theta))
    and U_k = exp(-(E_k / V)^(1/theta)) with E_k standard exponential.
    """
    if theta < 1.0:
        raise DomainError("Gumbel shape must be >= 1, got %r" % (theta,))
    if theta == 1.0:
        return rng.random((n, 2))
    alpha = 1.0 / theta
    V = stats.levy_stable.rvs(
        alpha,
        1.0,
        loc=0.0,
        scale=np.cos(np.pi / (2.0 * theta)) ** theta,
        size=n,
        random_state=rng,
    )
    E = rng.exponential(size=(n, 2))
    return np.exp(-((E / V[:, None]) ** alpha))


def kendall_tau(pairs):
    return float(stats.kendalltau(pairs[:, 0], pairs[:, 1])[0])


def _normal_pairs(n, rho, rng):
    cov = np.array([[1.0, rho], [rho, 1.0]])
    return rng.multivariate_normal(np.zeros(2), cov, size=n)


def _mixture_pairs(n, rho, rng):
    first = rng.random(n) < 0.5
    K1 = rng.multivariate_normal(
        SKILL_MIXTURE_MEANS[0], [[1.0, rho], [rho, 1.0]], size=n
    )
    K2 = rng.multivariate_normal(
        SKILL_MIXTURE_MEANS[1], [[1.0, -rho], [-rho, 1.0]], size=n
    )
    return np.where(first[:, None], K1, K2)


def _gumbel_cloud(n, theta, rng, transformed):
    U = sample_gumbel_copula(n, theta, rng)
    # second coordinate flipped for negative dependence
    U = np.column_stack([U[:, 0], 1.0 - U[:, 1]])
    if transformed:
        return stats.norm.ppf(U)
    return U


def _clouds(cfg, rng):
    n = cfg.n
    if cfg.family == "gumbel_transformed":
        X = _gumbel_cloud(n, cfg.gumbel_x, rng, True)
        Y = _gumbel_cloud(n, cfg.gumbel_y, rng, True)
    elif cfg.family == "gumbel_raw":
        X = _gumbel_cloud(n, cfg.gumbel_x, rng, False)
        Y = _gumbel_cloud(n, cfg.gumbel_y, rng, False)
    else:
        X = _mixture_pairs(n, cfg.mixture_rho_x, rng)
        Y = _mixture_pairs(n, cfg.mixture_rho_y, rng)
    return X, Y


def draw_sample(cfg, rng=None):
    """
    Error-free equilibrium draw. The Gaussian family uses the closed form;
    the others solve the assignment on independent skill and demand clouds
    and check the resulting coupling before returning it.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if cfg.family == "gaussian":
        X = _normal_pairs(cfg.n, cfg.rho_x, rng)
        eq = gaussian_model.GaussianEquilibrium.solve(
            cfg.rho_x, cfg.rho_y, cfg.tech.delta
        )
        Y_star = eq.assign(X)
        W_star = gaussian_model.closed_form_wage(X, cfg.tech, eq.J, c=cfg.c)
        return Equilibrium(X, Y_star, W_star)

    X, Y = _clouds(cfg, rng)
    S = ot_solver.build_surplus_matrix(X, Y, cfg.tech)
    coupling = ot_solver.solve_assignment(S)
    check = ot_solver.verify_coupling(S, coupling, enforce=True)
    W_star = ot_solver.wages_from_dual(coupling, ot_solver.ZeroMean()) + cfg.c
    return Equilibrium(
        X,
        ot_solver.assignment_map(coupling, Y),
        W_star,
        coupling=coupling,
        check=check,
    )


def draw_errors(cfg, rng):
    """
    n x 3 errors on (wage, y_C, y_M), mean zero by construction.
    """
    n = cfg.n
    sd = np.array(cfg.sigma)
    if cfg.error_family == "iid_gaussian":
        return rng.normal(size=(n, 3)) * sd
    if cfg.error_family == "gamma_iid":
        raw = rng.gamma(GAMMA_SHAPE, GAMMA_SCALE, size=(n, 3))
        mean = GAMMA_SHAPE * GAMMA_SCALE
        std = np.sqrt(GAMMA_SHAPE) * GAMMA_SCALE
        return (raw - mean) / std * sd
    if cfg.error_family == "joint_gaussian":
        return rng.multivariate_normal(np.zeros(3), JOINT_ERROR_COV, size=n)
    first = rng.random(n) < 0.5
    M1 = rng.multivariate_normal(
        MIXTURE_ERROR_MEANS[0], MIXTURE_ERROR_COV, size=n
    )
    M2 = rng.multivariate_normal(
        MIXTURE_ERROR_MEANS[1], MIXTURE_ERROR_COV, size=n
    )
    center = 0.5 * (MIXTURE_ERROR_MEANS[0] + MIXTURE_ERROR_MEANS[1])
    return np.where(first[:, None], M1, M2) - center


def add_errors(eq, cfg, rng):
    eps = draw_errors(cfg, rng)
    return estimators.MatchedSample(
        eq.W_star + eps[:, 0], eq.X, eq.Y_star + eps[:, 1:]
    )


def simulate(cfg, rng=None):
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    eq = draw_sample(cfg, rng)
    return add_errors(eq, cfg, rng), eq


@dataclass
class McResult:
    """
    Per-replication estimates keyed by estimator, one row per replication
    (NaN where that estimator failed).
    """

    estimators: list
    truth: np.ndarray
    estimates: dict
    reps: int
    failures: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def kept(self, name):
        est = self.estimates[name]
        return est[np.all(np.isfinite(est), axis=1)]

    def bias(self, name):
        return self.kept(name).mean(axis=0) - self.truth

    def rmse(self, name):
        return np.sqrt(((self.kept(name) - self.truth) ** 2).mean(axis=0))

    def to_frame(self):
        """
        Rows: parameter x {Bias, RMSE}; columns: estimators.
        """
        rows = []
        for k, param in enumerate(PARAMETERS):
            for stat in ("Bias", "RMSE"):
                row = {"parameter": param, "statistic": stat}
                for name in self.estimators:
                    stats = self.bias if stat == "Bias" else self.rmse
                    vals = stats(name)
                    row[name] = float(vals[k])
                rows.append(row)
        columns = ["parameter", "statistic"] + list(self.estimators)
        return pd.DataFrame(rows, columns=columns)

    def replications_frame(self):
        frames = []
        for name in self.estimators:
            frame = pd.DataFrame(self.estimates[name], columns=PARAMETERS)
            frame.insert(0, "estimator", name)
            frame.insert(0, "replication", np.arange(self.reps))
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)


def _ml_estimate(sample, cfg, corrected, opts):
    if cfg.family in ("gaussian_mixture", "gumbel_raw"):
        sample = diagnostics.gaussianize(sample)
    res = gaussian_model.ml_fit(
        sample,
        use_corrected_rho=corrected,
        n_starts=opts.n_starts,
        seed=cfg.seed,
        max_iter=opts.max_iter,
    )
    return res.theta


def _replicate(cfg, r, names, opts):
    rcfg = replace(cfg, seed=cfg.seed + r)
    out = {}
    try:
        sample, _ = simulate(rcfg)
    except OtsieveError as err:
        return {name: err.message for name in names}
    for name in names:
        try:
            if name in ("ml", "ml_star"):
                out[name] = _ml_estimate(sample, rcfg, name == "ml_star", opts)
            else:
                out[name] = estimators.fit(sample, name, opts).estimates
        except OtsieveError as err:
            out[name] = err.message
    return out


def run_monte_carlo(cfg, estimator_names, reps, parallelism=1, options=None):
    """
    Runs `reps` replications and reduces them in replication order.
    Replications where an estimator fails are excluded for that estimator;
    more than 5% failures for any estimator is an error.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    names = [n for n in ESTIMATORS if n in set(estimator_names)]
    unknown = set(estimator_names) - set(ESTIMATORS)
    if unknown or not names:
        raise ConfigError(
            "unknown estimators %s, expected some of %s"
            % (sorted(unknown), ESTIMATORS)
        )
    opts = options or estimators.EstimatorOptions.from_settings()
    log.info(
        "Running %d replications of %s (n=%d) with %d worker(s) ...",
        reps,
        cfg.name,
        cfg.n,
        parallelism,
    )
    start = time.time()
    results = Parallel(n_jobs=parallelism)(
        delayed(_replicate)(cfg, r, names, opts) for r in range(reps)
    )
    estimates = {name: np.full((reps, 4), np.nan) for name in names}
    failures = {name: 0 for name in names}
    for r, res in enumerate(results):
        for name in names:
            val = res[name]
            if isinstance(val, str):
                failures[name] += 1
                log.debug("replication %d %s failed: %s", r, name, val)
            else:
                estimates[name][r] = val
    mc = McResult(
        estimators=names,
        truth=cfg.truth,
        estimates=estimates,
        reps=reps,
        failures=failures,
        config=cfg.to_dict(),
        wall_time=time.time() - start,
    )
    worst = max(failures.values())
    if worst > MAX_FAILURE_RATE * reps:
        raise ReplicationFailureError(
            "too many failed replications",
            failures=failures,
            reps=reps,
        )
    return mc


def technology_sweep(cfg, alpha_grid):
    """
    Wage skewness and variance at each (alpha_CC, alpha_MM) of the grid,
    with the same skill draws at every point.
    """
    alpha_grid = [tuple(p) for p in alpha_grid]
    if not alpha_grid:
        raise ConfigError("technology sweep needs a nonempty grid")
    rows = []
    for alpha_CC, alpha_MM in alpha_grid:
        point = replace(
            cfg, tech=cfg.tech.replace(alpha_CC=alpha_CC, alpha_MM=alpha_MM)
        )
        eq = draw_sample(point, np.random.default_rng(cfg.seed))
        moments = diagnostics.univariate_moments(eq.W_star)
        rows.append(
            {
                "alpha_CC": float(alpha_CC),
                "alpha_MM": float(alpha_MM),
                "skewness": moments["skewness"],
                "variance": moments["variance"],
            }
        )
    return pd.DataFrame(
        rows, columns=["alpha_CC", "alpha_MM", "skewness", "variance"]
    )


def alpha_grid_from_values(values):
    return [(a, b) for a in values for b in values]


def paired_rmse_ordering(mc, a, b, parameter="alpha_CC", n_boot=1000, seed=0):
    """
    Share of bootstrap resamples of the jointly successful replications in
    which estimator `a` has strictly lower RMSE than `b` on `parameter`.
    """
    k = PARAMETERS.index(parameter)
    ea = mc.estimates[a][:, k]
    eb = mc.estimates[b][:, k]
    both = np.isfinite(ea) & np.isfinite(eb)
    da = (ea[both] - mc.truth[k]) ** 2
    db = (eb[both] - mc.truth[k]) ** 2
    m = da.shape[0]
    if m == 0:
        raise ReplicationFailureError("no replication succeeded for both")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, m, size=(n_boot, m))
    wins = np.sqrt(da[idx].mean(axis=1)) < np.sqrt(db[idx].mean(axis=1))
    return float(wins.mean())
