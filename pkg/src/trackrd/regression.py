"""Least squares with heteroskedasticity-robust covariance.

Every estimator in the package reduces to :func:`ols_hc` on a small dense
design, most of them through :func:`local_linear_jump`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.linalg as sla

from .data_model import RDSample

RANK_TOL = 1e-10


class RegressionError(ValueError):
    """Raised for rank-deficient or under-determined designs."""


@dataclass(frozen=True)
class RegressionFit:
    coefficients: np.ndarray
    robust_cov: np.ndarray
    n: int
    dof: int
    residuals: np.ndarray

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.robust_cov), 0.0, None))


def ols_hc(design, outcome, flavor: str = "HC1") -> RegressionFit:
    """OLS coefficients with an HC0/HC1 sandwich covariance.

    Solved through a column-pivoted QR decomposition; the design is
    rejected as rank deficient when a diagonal entry of R falls below
    ``RANK_TOL`` times the largest one.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape != (n,):
        raise RegressionError(f"outcome has shape {y.shape}, expected ({n},)")
    if n < k + 1:
        raise RegressionError(f"insufficient observations: n={n} for {k} regressors")
    if flavor not in ("HC0", "HC1"):
        raise ValueError(f"unknown covariance flavor {flavor!r}")

    Q, R, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or diag.min() <= RANK_TOL * diag[0]:
        raise RegressionError("design matrix is rank deficient")

    beta_p = sla.solve_triangular(R, Q.T @ y)
    resid = y - Q @ (Q.T @ y)
    # sandwich in the rotated basis: R^-1 (Q' diag(e^2) Q) R^-T
    Qe = Q * resid[:, None]
    Rinv = sla.solve_triangular(R, np.eye(k))
    cov_p = Rinv @ (Qe.T @ Qe) @ Rinv.T
    if flavor == "HC1":
        cov_p *= n / (n - k)

    beta = np.empty(k)
    beta[piv] = beta_p
    cov = np.empty((k, k))
    cov[np.ix_(piv, piv)] = cov_p
    cov = 0.5 * (cov + cov.T)
    return RegressionFit(beta, cov, n, n - k, resid)


@dataclass(frozen=True)
class Jump:
    """Discontinuity at the cutoff from the interacted local-linear fit."""

    jump: float
    se: float
    left_intercept: float
    left_intercept_se: float
    fit: RegressionFit

    @property
    def t(self) -> float:
        return _ratio(self.jump, self.se)


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    if num == 0:
        return float("nan")
    return float(np.copysign(np.inf, num))


def rd_design(r) -> np.ndarray:
    """Columns {1, Z, r, Z*r} for a centered running variable."""
    r = np.asarray(r, dtype=float)
    z = (r >= 0).astype(float)
    return np.column_stack([np.ones_like(r), z, r, z * r])


Outcome = Union[str, np.ndarray, Callable[[RDSample], np.ndarray]]


def local_linear_jump(sample: RDSample, outcome: Outcome, flavor: str = "HC1") -> Jump:
    """Jump in ``outcome`` at r = 0 with a separate linear trend on each side.

    ``outcome`` is a column name understood by :meth:`RDSample.column`,
    an array aligned with the sample rows, or a callable on the sample.
    """
    if isinstance(outcome, str):
        y = sample.column(outcome)
    elif callable(outcome):
        y = np.asarray(outcome(sample), dtype=float)
    else:
        y = np.asarray(outcome, dtype=float)
    return jump_from_arrays(sample.r, y, flavor)


def jump_from_arrays(r, y, flavor: str = "HC1") -> Jump:
    r = np.asarray(r)
    left, right = np.unique(r[r < 0]), np.unique(r[r >= 0])
    if len(left) < 2 or len(right) < 2:
        raise RegressionError(
            f"need at least two distinct score points per side (left {len(left)}, right {len(right)})"
        )
    fit = ols_hc(rd_design(r), y, flavor)
    se = fit.se
    return Jump(float(fit.coefficients[1]), float(se[1]), float(fit.coefficients[0]), float(se[0]), fit)
