"""
Pre-estimation transforms and post-estimation analysis of matched samples.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from otsieve import ot_solver
from otsieve.common import as_matrix, as_vector
from otsieve.errors import DataError, DomainError, SingularCovarianceError
from otsieve.estimators import MatchedSample

log = logging.getLogger(__name__)

PERCENTILES = np.arange(1, 100)
DECOMPOSITION_MODES = (
    "task_biased_only",
    "skill_biased_only",
    "distribution_only",
    "full",
)
SAMPLE_COLUMNS = ("wage", "x_C", "x_M", "y_C", "y_M")


@dataclass(frozen=True)
class MardiaResult:
    b1: float
    b2: float
    skew_stat: float
    kurt_stat: float
    skew_pvalue: float
    kurt_pvalue: float
    n: int
    d: int

    @property
    def skew_df(self):
        return self.d * (self.d + 1) * (self.d + 2) // 6

    def to_frame(self):
        return pd.DataFrame(
            {
                "statistic": ["skewness", "kurtosis"],
                "b": [self.b1, self.b2],
                "value": [self.skew_stat, self.kurt_stat],
                "p_value": [self.skew_pvalue, self.kurt_pvalue],
            }
        )


@dataclass
class PolarizationCurve:
    """
    Relative wage growth against the median by percentile, one column per
    series ("actual" plus any model predictions).
    """

    percentiles: np.ndarray
    curves: dict = field(default_factory=dict)
    mode: str = "log"

    def to_frame(self):
        frame = pd.DataFrame({"percentile": self.percentiles})
        for name, values in self.curves.items():
            frame[name] = values
        return frame


def gaussian_rank_transform(column):
    """
    Phi^-1(rank / (n + 1)) with average ranks for ties.
    """
    column = as_vector("column", column)
    n = column.shape[0]
    if n < 2:
        raise DataError("rank transform needs at least 2 values, got %d" % n)
    if np.all(column == column[0]):
        raise DomainError("rank transform is undefined for a constant column")
    ranks = stats.rankdata(column, method="average")
    return stats.norm.ppf(ranks / (n + 1.0))


def gaussianize(sample):
    """
    Rank-transforms each of the four skill columns; wages are untouched.
    """
    X = np.column_stack(
        [gaussian_rank_transform(sample.X[:, k]) for k in range(2)]
    )
    Y = np.column_stack(
        [gaussian_rank_transform(sample.Y[:, k]) for k in range(2)]
    )
    return MatchedSample(sample.w, X, Y)


def univariate_moments(column):
    column = as_vector("column", column)
    return {
        "mean": float(np.mean(column)),
        "variance": float(np.var(column)),
        "skewness": float(stats.skew(column)),
        "kurtosis": float(stats.kurtosis(column, fisher=False)),
    }


def mardia_test(data):
    """
    Mardia's multivariate skewness and kurtosis with the 1/n covariance.
    Skewness n b1 / 6 is chi-square with d(d+1)(d+2)/6 degrees of freedom;
    the kurtosis statistic is standard normal with a two-sided p-value.
    """
    data = as_matrix("data", data)
    n, d = data.shape
    centered = data - data.mean(axis=0)
    S = centered.T @ centered / n
    eig = np.linalg.eigvalsh(S)
    if eig.min() <= 1e-12 * max(eig.max(), 1e-300):
        raise SingularCovarianceError(
            "sample covariance is singular",
            smallest_eigenvalue=float(eig.min()),
        )
    C = centered @ np.linalg.solve(S, centered.T)
    b1 = float(np.sum(C ** 3) / n ** 2)
    b2 = float(np.mean(np.diag(C) ** 2))
    skew_stat = n * b1 / 6.0
    kurt_stat = (b2 - d * (d + 2)) / np.sqrt(8.0 * d * (d + 2) / n)
    df = d * (d + 1) * (d + 2) / 6.0
    return MardiaResult(
        b1=b1,
        b2=b2,
        skew_stat=float(skew_stat),
        kurt_stat=float(kurt_stat),
        skew_pvalue=float(stats.chi2.sf(skew_stat, df)),
        kurt_pvalue=float(2.0 * stats.norm.sf(abs(kurt_stat))),
        n=n,
        d=d,
    )


def _growth(w0, w1, mode):
    w0 = as_vector("wages_t0", w0)
    w1 = as_vector("wages_t1", w1)
    if mode == "log":
        if np.any(w0 <= 0) or np.any(w1 <= 0):
            raise DomainError(
                "log mode needs positive wages; use the level mode"
            )
        w0, w1 = np.log(w0), np.log(w1)
    elif mode != "level":
        raise DomainError("unknown polarization mode %r" % (mode,))
    q0 = np.percentile(w0, PERCENTILES)
    q1 = np.percentile(w1, PERCENTILES)
    growth = q1 - q0
    return growth - growth[PERCENTILES == 50][0]


def polarization_curve(wages_t0, wages_t1, predictions=None, mode="log"):
    """
    curve(p) = [q_p(w1) - q_p(w0)] - [q_50(w1) - q_50(w0)] on log wages (or
    levels), for the data and each (t0, t1) pair in `predictions`.
    """
    curve = PolarizationCurve(percentiles=PERCENTILES.copy(), mode=mode)
    curve.curves["actual"] = _growth(wages_t0, wages_t1, mode)
    for name, (p0, p1) in (predictions or {}).items():
        curve.curves[name] = _growth(p0, p1, mode)
    return curve


def _equilibrium_wages(X, Y, tech, level):
    S = ot_solver.build_surplus_matrix(X, Y, tech)
    c = ot_solver.solve_assignment(S)
    return ot_solver.wages_from_dual(c, ot_solver.ZeroMean()) + level


def _tech(report):
    return ot_solver.ProductionTech.diagonal(
        report.alpha_CC,
        report.alpha_MM,
        report.theta.beta_C,
        report.theta.beta_M,
    )


def decompose_counterfactual(
    report_t0, report_t1, sample_t0, sample_t1, mode, scale="log"
):
    """
    Re-solves the t1 equilibrium with parts of the technology held at t0
    and compares its wage distribution with the t0 model baseline.

    task_biased_only holds the linear productivities at t0, skill_biased_only
    holds the complementarities at t0, distribution_only holds both, and
    full uses the t1 technology. Dual wages are centred on the mean observed
    wage of the sample whose skill clouds are used.
    """
    if mode not in DECOMPOSITION_MODES:
        raise DomainError(
            "unknown decomposition mode %r, expected one of %s"
            % (mode, DECOMPOSITION_MODES)
        )
    if sample_t0.X.shape[1] != sample_t1.X.shape[1]:
        raise DataError("samples have different skill dimensions")
    t0 = _tech(report_t0)
    t1 = _tech(report_t1)
    if mode == "task_biased_only":
        cf = t1.replace(beta_C=t0.beta_C, beta_M=t0.beta_M)
    elif mode == "skill_biased_only":
        cf = t1.replace(alpha_CC=t0.alpha_CC, alpha_MM=t0.alpha_MM)
    elif mode == "distribution_only":
        cf = t0
    else:
        cf = t1
    log.info("Solving counterfactual equilibrium (%s) ...", mode)
    base = _equilibrium_wages(
        sample_t0.X, sample_t0.Y, t0, float(np.mean(sample_t0.w))
    )
    counter = _equilibrium_wages(
        sample_t1.X, sample_t1.Y, cf, float(np.mean(sample_t1.w))
    )
    curve = PolarizationCurve(percentiles=PERCENTILES.copy(), mode=scale)
    curve.curves[mode] = _growth(base, counter, scale)
    return curve


@dataclass
class SummaryStats:
    table: pd.DataFrame
    rho_x: float
    rho_y: float

    def to_frame(self):
        frame = self.table.reset_index().rename(columns={"index": "column"})
        extra = pd.DataFrame(
            {
                "column": ["rho_x", "rho_y"],
                "mean": [self.rho_x, self.rho_y],
            }
        )
        return pd.concat([frame, extra], ignore_index=True)


def summary_stats(sample):
    frame = pd.DataFrame(
        np.column_stack([sample.w, sample.X, sample.Y]),
        columns=list(SAMPLE_COLUMNS),
    )
    table = pd.DataFrame(
        {
            "mean": frame.mean(),
            "sd": frame.std(ddof=1) if len(frame) > 1 else frame.std(ddof=0),
            "min": frame.min(),
            "max": frame.max(),
        }
    )
    return SummaryStats(
        table=table,
        rho_x=float(frame["x_C"].corr(frame["x_M"])),
        rho_y=float(frame["y_C"].corr(frame["y_M"])),
    )
