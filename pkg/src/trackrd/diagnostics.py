"""Validity diagnostics: covariate balance, score density, placebo outcomes, RD plots."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .data_model import SCORE_MAX, SCORE_MIN, RDSample, StudentRecord
from .regression import RegressionError, jump_from_arrays, rd_design


@dataclass(frozen=True)
class DiagnosticResult:
    name: str
    jump: float
    se: float
    left_mean: float
    left_mean_se: float
    n: int
    level: float
    passed: bool

    @property
    def t(self) -> float:
        if self.se > 0:
            return self.jump / self.se
        return 0.0 if self.jump == 0 else math.copysign(math.inf, self.jump)

    def as_dict(self) -> dict:
        return asdict(self)


def _discontinuity_test(sample: RDSample, column: str, level: float, flavor: str) -> DiagnosticResult:
    y = sample.column(column)
    if not np.isfinite(y).all():
        keep = np.isfinite(y)
        r, y = sample.r[keep], y[keep]
    else:
        r = sample.r
    j = jump_from_arrays(r, y, flavor)
    crit = stats.norm.ppf(1 - level / 2)
    t = 0.0 if j.se == 0 and j.jump == 0 else (math.inf if j.se == 0 else abs(j.jump / j.se))
    return DiagnosticResult(column, j.jump, j.se, j.left_intercept, j.left_intercept_se, len(y), level, bool(t < crit))


def balancing_test(sample: RDSample, covariate: str, level: float = 0.05, flavor: str = "HC1") -> DiagnosticResult:
    """Jump in a pre-determined covariate at the cutoff; it should be zero."""
    if covariate not in sample.covariates:
        raise KeyError(f"covariate {covariate!r} not in sample")
    return _discontinuity_test(sample, covariate, level, flavor)


def placebo_rd(sample: RDSample, outcome: str, level: float = 0.05, flavor: str = "HC1") -> DiagnosticResult:
    """Same estimator as :func:`balancing_test` on an outcome that should not jump."""
    if outcome not in sample.covariates:
        raise KeyError(f"placebo outcome {outcome!r} not in sample")
    return _discontinuity_test(sample, outcome, level, flavor)


# ---------------------------------------------------------------------------
# density


@dataclass(frozen=True)
class DensityProfile:
    scores: np.ndarray
    raw: np.ndarray
    questions: np.ndarray
    adjusted: np.ndarray
    cutoff: int
    jump: float
    se: float
    window: int

    @property
    def t(self) -> float:
        return self.jump / self.se if self.se > 0 else 0.0

    def as_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "window": self.window,
            "log_count_jump": self.jump,
            "se": self.se,
            "counts": [
                {"score": int(s), "raw": int(r), "questions": int(k), "adjusted": float(a)}
                for s, r, k, a in zip(self.scores, self.raw, self.questions, self.adjusted)
            ],
        }


def adjusted_counts(raw, questions) -> np.ndarray:
    """Counts per score scaled by 3/K_S, K_S being the number of questions behind score S."""
    return np.asarray(raw, dtype=float) * 3.0 / np.asarray(questions, dtype=float)


def density_profile(
    scores,
    cutoff: int,
    question_counts: Optional[Mapping[int, int]] = None,
    window: int = 5,
) -> DensityProfile:
    """Per-score counts and a local-linear jump in log adjusted counts at ``cutoff``.

    ``scores`` is a sequence of :class:`StudentRecord` or an array of
    integer scores.  The fit uses the ``window`` score points on each side
    with one observation per point; the jump's standard error treats each
    raw count as Poisson, so ``var(log(adjusted + 0.5)) ~ raw * (3/K)^2 /
    (adjusted + 0.5)^2``.
    """
    if len(scores) and isinstance(scores[0], StudentRecord):
        scores = [s.score for s in scores]
    scores = np.asarray(scores, dtype=int)
    grid = np.arange(SCORE_MIN, SCORE_MAX + 1)
    raw = np.bincount(scores - SCORE_MIN, minlength=len(grid))[: len(grid)]
    qc = dict(question_counts or {})
    questions = np.array([qc.get(int(s), 3) for s in grid])
    if (questions <= 0).any():
        raise ValueError("question counts must be positive")
    adjusted = adjusted_counts(raw, questions)

    r = grid - cutoff
    sel = (r >= -window) & (r <= window - 1)
    if not (raw[sel & (r < 0)] > 0).any() or not (raw[sel & (r >= 0)] > 0).any():
        raise ValueError("no observations on one side of the cutoff")
    X = rd_design(r[sel])
    y = np.log(adjusted[sel] + 0.5)
    var = raw[sel] * (3.0 / questions[sel]) ** 2 / (adjusted[sel] + 0.5) ** 2
    bread = np.linalg.inv(X.T @ X)
    beta = bread @ X.T @ y
    cov = bread @ (X.T * var) @ X @ bread
    return DensityProfile(grid, raw, questions, adjusted, cutoff, float(beta[1]), float(math.sqrt(cov[1, 1])), window)


def read_question_counts(path) -> dict[int, int]:
    """Two-column ``score,questions`` CSV (header optional)."""
    import csv

    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or (i == 1 and not row[0].strip().isdigit()):
                continue
            out[int(row[0])] = int(row[1])
    return out


# ---------------------------------------------------------------------------
# RD plots


@dataclass(frozen=True)
class RDPlotData:
    """Binned means per score point plus a separate polynomial on each side."""

    outcome: str
    cutoff: Optional[int]
    r: np.ndarray
    n: np.ndarray
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    fit: np.ndarray
    curve_left: tuple[np.ndarray, np.ndarray]
    curve_right: tuple[np.ndarray, np.ndarray]
    left_limit: float
    right_limit: float
    poly_order: int

    @property
    def jump(self) -> float:
        return self.right_limit - self.left_limit

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.ci_hi - self.ci_lo)

    def rows(self) -> list[dict]:
        return [
            {"r": int(r), "mean": m, "ci_lo": lo, "ci_hi": hi, "fit": f}
            for r, m, lo, hi, f in zip(self.r, self.mean, self.ci_lo, self.ci_hi, self.fit)
        ]


def rd_plot_data(
    sample: RDSample,
    outcome: str,
    range: int = 20,
    poly_order: int = 4,
    level: float = 0.95,
    curve_step: float = 0.25,
) -> RDPlotData:
    """Binned means with normal-approximation CIs and a global polynomial per side.

    Scores are centered at the cutoff; points with ``|r| <= range`` are used.
    """
    y_all = sample.column(outcome)
    keep = (np.abs(sample.r) <= range) & np.isfinite(y_all)
    r, y = sample.r[keep], y_all[keep]
    points = np.unique(r)
    left_pts, right_pts = points[points < 0], points[points >= 0]
    need = poly_order + 2
    if len(left_pts) < need or len(right_pts) < need:
        raise RegressionError(
            f"insufficient support: need {need} score points per side, have {len(left_pts)} and {len(right_pts)}"
        )

    idx = np.searchsorted(points, r)
    n = np.bincount(idx, minlength=len(points)).astype(float)
    sums = np.bincount(idx, weights=y, minlength=len(points))
    means = sums / n
    sq = np.bincount(idx, weights=(y - means[idx]) ** 2, minlength=len(points))
    with np.errstate(invalid="ignore", divide="ignore"):
        sd = np.sqrt(sq / (n - 1))
        half = stats.norm.ppf(0.5 + level / 2) * sd / np.sqrt(n)

    fit = np.empty(len(points))
    curves, limits = {}, {}
    for side, mask in (("left", points < 0), ("right", points >= 0)):
        pts = points[mask]
        # weighted fit on cell means equals the student-level least-squares fit
        poly = np.polynomial.Polynomial.fit(pts, means[mask], poly_order, w=np.sqrt(n[mask]))
        fit[mask] = poly(pts)
        lo, hi = (pts.min(), 0.0) if side == "left" else (0.0, pts.max())
        grid = np.arange(lo, hi + curve_step / 2, curve_step)
        curves[side] = (grid, poly(grid))
        limits[side] = float(poly(0.0))
    return RDPlotData(
        outcome, sample.cutoff, points.astype(int), n.astype(int), means, means - half, means + half, fit,
        curves["left"], curves["right"], limits["left"], limits["right"], poly_order,
    )
