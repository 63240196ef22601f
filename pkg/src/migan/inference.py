"""
Downstream analysis of imputed data: OLS fits, Rubin pooling, benchmark metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import DataError, NumericError

METRIC_COLUMNS = ("Time(s)", "Imp MSE", "Rel Bias", "CR", "SE", "SD")


@dataclass
class OlsFit:
    coefficients: np.ndarray
    se: np.ndarray
    sigma2: float
    df: int


@dataclass
class PooledEstimate:
    qbar: float
    W: float
    B: float
    T_var: float
    se: float
    df: float
    ci95: tuple
    M: int = 1


@dataclass
class MetricsReport:
    imp_mse: float
    rel_bias: float
    coverage_rate: float
    mean_se: float
    sd_across_mc: float
    seconds_per_imputation: float
    n_runs: int = 0
    absolute_bias: bool = False
    flags: list = field(default_factory=list)

    def row(self) -> list[float]:
        """Values in table order: time, imputation MSE, bias, coverage, SE, SD."""
        return [self.seconds_per_imputation, self.imp_mse, self.rel_bias,
                self.coverage_rate, self.mean_se, self.sd_across_mc]


def ols_fit(design: np.ndarray, y: np.ndarray, intercept: bool = True) -> OlsFit:
    """Least squares via column-pivoted QR.

    Raises :class:`DataError` on rank deficiency, naming the first column
    (0-based, counting the intercept as column 0 when added) that the
    pivoting found dependent.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    n = design.shape[0]
    X = np.column_stack([np.ones(n), design]) if intercept else design
    k = X.shape[1]
    if n <= k:
        raise DataError(f"need more than {k} rows for {k} coefficients, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite values in regression input")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, k) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < k:
        raise DataError(f"design is rank deficient: column {int(piv[rank])} is linearly dependent")
    coef_p = scipy.linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(k)
    coef[piv] = coef_p
    resid = y - X @ coef
    df = n - k
    sigma2 = float(resid @ resid / df)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(k))
    var_p = np.sum(Rinv * Rinv, axis=1) * sigma2
    var = np.empty(k)
    var[piv] = var_p
    return OlsFit(coef, np.sqrt(var), sigma2, df)


def _ci(qbar, se, df):
    if se == 0.0:
        return (qbar, qbar)
    crit = stats.norm.ppf(0.975) if math.isinf(df) else stats.t.ppf(0.975, df)
    return (qbar - crit * se, qbar + crit * se)


def rubin_pool(estimates: Sequence[float], variances: Sequence[float]) -> PooledEstimate:
    """Combine M point estimates and their squared standard errors.

    Uses the classic large-sample degrees of freedom
    ``(M - 1) * (1 + W / ((1 + 1/M) B))**2``, infinite when ``B = 0``.
    """
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    M = q.size
    if M < 2:
        raise ValueError("Rubin pooling needs at least two imputations")
    if u.size != M:
        raise ValueError("estimates and variances differ in length")
    qbar = float(q.mean())
    W = float(u.mean())
    B = float(np.sum((q - qbar) ** 2) / (M - 1))
    T = W + (1.0 + 1.0 / M) * B
    ratio = W / ((1.0 + 1.0 / M) * B) if B > 0 else math.inf
    # B tiny next to W: df tends to infinity, and squaring the ratio would overflow
    df = (M - 1) * (1.0 + ratio) ** 2 if ratio < 1e150 else math.inf
    se = math.sqrt(T)
    return PooledEstimate(qbar, W, B, T, se, df, _ci(qbar, se, df), M)


def single_estimate(estimate: float, variance: float, df: float) -> PooledEstimate:
    """Wrap one analysis (no imputation uncertainty) as a pooled estimate."""
    se = math.sqrt(variance)
    return PooledEstimate(float(estimate), float(variance), 0.0, float(variance), se,
                          float(df), _ci(float(estimate), se, df), 1)


def analyze(imputations: Sequence[np.ndarray], predictors: Sequence[int], response: int,
            coef_index: int = 1) -> PooledEstimate:
    """Fit ``response ~ 1 + predictors`` on each completed matrix and pool one coefficient.

    ``coef_index`` counts the intercept as 0. Column indices are 0-based.
    """
    fits = [ols_fit(imp[:, list(predictors)], imp[:, response]) for imp in imputations]
    if len(fits) == 1:
        f = fits[0]
        return single_estimate(f.coefficients[coef_index], f.se[coef_index] ** 2, f.df)
    return rubin_pool([f.coefficients[coef_index] for f in fits],
                      [f.se[coef_index] ** 2 for f in fits])


@dataclass
class McRun:
    """Inputs to the metrics for one Monte-Carlo replicate."""

    pooled: PooledEstimate
    imputations: Sequence[np.ndarray]
    truth: Optional[np.ndarray]
    mask: Optional[np.ndarray]
    beta_true: float
    seconds_per_imputation: float = float("nan")


def imputation_mse(imputations, truth, mask) -> float:
    """Mean squared error over originally missing cells, averaged over imputations."""
    miss = ~np.asarray(mask, dtype=bool)
    if imputations is None or len(imputations) == 0 or not miss.any():
        return float("nan")
    return float(np.mean([np.mean((imp[miss] - truth[miss]) ** 2) for imp in imputations]))


def compute_metrics(runs: Sequence[McRun]) -> MetricsReport:
    if not runs:
        raise ValueError("no runs to summarize")
    beta = runs[0].beta_true
    qbars = np.array([r.pooled.qbar for r in runs])
    flags = []
    absolute = beta == 0
    if absolute:
        flags.append("beta_true is 0: Rel Bias holds the absolute bias")
        bias = float(qbars.mean() - beta)
    else:
        bias = float((qbars.mean() - beta) / beta)
    covered = [r.pooled.ci95[0] <= r.beta_true <= r.pooled.ci95[1] for r in runs]
    ses = np.array([r.pooled.se for r in runs])
    if np.all(ses <= 1e-10 * max(1.0, abs(beta))):
        flags.append("all standard errors are numerically 0: coverage is degenerate")
    mses = [imputation_mse(r.imputations, r.truth, r.mask) for r in runs
            if r.truth is not None and r.mask is not None]
    mses = [m for m in mses if not math.isnan(m)]
    times = [r.seconds_per_imputation for r in runs if not math.isnan(r.seconds_per_imputation)]
    return MetricsReport(
        imp_mse=float(np.mean(mses)) if mses else float("nan"),
        rel_bias=bias,
        coverage_rate=float(np.mean(covered)),
        mean_se=float(ses.mean()),
        sd_across_mc=float(qbars.std(ddof=1)) if len(runs) > 1 else float("nan"),
        seconds_per_imputation=float(np.mean(times)) if times else float("nan"),
        n_runs=len(runs),
        absolute_bias=absolute,
        flags=flags,
    )
