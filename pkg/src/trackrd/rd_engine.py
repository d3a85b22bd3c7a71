"""Fuzzy RD decomposition of compliers into four student types.

The treatment is first-year high-track enrollment ``H1``; the instrument is
scoring at or above the cutoff.  Interacting the fourth-year outcome with
treatment status gives four reduced forms whose ratios to the first stage
each identify the sum of two type shares among compliers at the cutoff:

=========  ===========  =========
outcome    denominator  identifies
=========  ===========  =========
H4 * H1    jump(H1)     AH + TT
H4 * L1    jump(L1)     AH + SS
L4 * H1    jump(H1)     AL + SS
L4 * L1    jump(L1)     AL + TT
=========  ===========  =========
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .data_model import RDSample
from .regression import jump_from_arrays, local_linear_jump

TYPES = ("ah", "al", "tt", "ss")
ESTIMANDS = ("h4h1", "h4l1", "l4h1", "l4l1")


class WeakFirstStageError(RuntimeError):
    def __init__(self, pi: float, se: float, threshold: float):
        self.pi, self.se, self.threshold = pi, se, threshold
        super().__init__(f"weak first stage: pi={pi:.4f}, se={se:.4f}, |t| below {threshold}")


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    @property
    def t(self) -> float:
        if self.se > 0:
            return self.value / self.se
        if self.value == 0:
            return 0.0
        return math.copysign(math.inf, self.value)


@dataclass(frozen=True)
class EstimandSet:
    h4h1: Estimate
    h4l1: Estimate
    l4h1: Estimate
    l4l1: Estimate
    first_stage: Estimate
    n: int
    cutoff: Optional[int] = None
    recommendation: Optional[str] = None

    def values(self) -> np.ndarray:
        return np.array([getattr(self, k).value for k in ESTIMANDS])

    def ses(self) -> np.ndarray:
        return np.array([getattr(self, k).se for k in ESTIMANDS])

    @property
    def pair_sums(self) -> tuple[float, float]:
        """(H4*H1 + L4*H1, H4*L1 + L4*L1); both equal one by construction."""
        return self.h4h1.value + self.l4h1.value, self.h4l1.value + self.l4l1.value

    @property
    def late(self) -> float:
        """Standard fuzzy-RD effect of H1 on H4, equal to TT - SS among compliers."""
        return self.h4h1.value - self.h4l1.value

    def clamped(self) -> np.ndarray:
        return np.clip(self.values(), 0.0, 1.0)

    @classmethod
    def from_values(cls, values, ses=(0.0, 0.0, 0.0, 0.0), first_stage=(1.0, 0.0), n=0, **kw) -> "EstimandSet":
        est = [Estimate(float(v), float(s)) for v, s in zip(values, ses)]
        return cls(*est, Estimate(*map(float, first_stage)), n, **kw)


@dataclass(frozen=True)
class TypeShares:
    ah: float
    al: float
    tt: float
    ss: float
    method: str

    def __post_init__(self):
        vals = np.array([self.ah, self.al, self.tt, self.ss])
        if (vals < -1e-12).any() or (vals > 1 + 1e-12).any():
            raise ValueError(f"type shares outside [0, 1]: {vals}")
        if abs(vals.sum() - 1.0) > 1e-9:
            raise ValueError(f"type shares sum to {vals.sum()}, not 1")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TypeShareBounds:
    """Sharp intervals for each share given the (clamped) estimands.

    Everything is a function of the free parameter ``a`` = AH share.
    """

    ah: tuple[float, float]
    al: tuple[float, float]
    tt: tuple[float, float]
    ss: tuple[float, float]
    a_range: tuple[float, float]

    def midpoint(self) -> TypeShares:
        return TypeShares(
            ah=0.5 * sum(self.ah), al=0.5 * sum(self.al), tt=0.5 * sum(self.tt), ss=0.5 * sum(self.ss),
            method="bounds-midpoint",
        )

    def contains(self, shares: TypeShares, tol: float = 1e-9) -> bool:
        return all(
            getattr(self, k)[0] - tol <= getattr(shares, k) <= getattr(self, k)[1] + tol for k in TYPES
        )

    def as_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in (*TYPES, "a_range")}


@dataclass(frozen=True)
class ValidityReport:
    below_zero: dict
    above_one: dict
    t_below: dict
    t_above: dict
    level: float
    passed: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "passed", not any(self.below_zero.values()) and not any(self.above_one.values()))

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "passed": self.passed,
            "flags": {
                k: {
                    "below_zero": self.below_zero[k],
                    "above_one": self.above_one[k],
                    "t_below_zero": _finite(self.t_below[k]),
                    "t_above_one": _finite(self.t_above[k]),
                }
                for k in ESTIMANDS
            },
        }


def _finite(x: float):
    # JSON has no infinities
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass(frozen=True)
class ZeroRule:
    """An estimand counts as zero when insignificant at ``alpha`` and below ``max_abs``."""

    alpha: float = 0.05
    max_abs: float = 0.25

    def is_zero(self, e: Estimate) -> bool:
        crit = stats.norm.ppf(1 - self.alpha / 2)
        return abs(e.t) < crit and abs(e.value) < self.max_abs


def first_stage(sample: RDSample, flavor: str = "HC1") -> Estimate:
    """Jump in first-year high-track enrollment: the complier share at the cutoff."""
    j = local_linear_jump(sample, "H1", flavor)
    return Estimate(j.jump, j.se)


def weak_iv_guard(pi: float, se: float, threshold: float = 3.0) -> bool:
    """True when the first stage is strong enough (``|pi / se| >= threshold``)."""
    return abs(Estimate(pi, se).t) >= threshold


def estimand_set(
    sample: RDSample,
    *,
    weak_threshold: float = 3.0,
    force: bool = False,
    flavor: str = "HC1",
) -> EstimandSet:
    """The four ratio estimands with approximate standard errors.

    Each standard error is the robust reduced-form SE divided by
    ``|pi|``; first-stage sampling error is ignored.  Raises
    :class:`WeakFirstStageError` unless the first stage passes
    :func:`weak_iv_guard` or ``force`` is set.
    """
    H1 = np.asarray(sample.H1, dtype=float)
    H4 = np.asarray(sample.H4, dtype=float)
    L1, L4 = 1.0 - H1, 1.0 - H4
    fs = jump_from_arrays(sample.r, H1, flavor)
    pi = fs.jump
    if not force and not weak_iv_guard(pi, fs.se, weak_threshold):
        raise WeakFirstStageError(pi, fs.se, weak_threshold)
    if pi == 0:
        raise WeakFirstStageError(pi, fs.se, weak_threshold)

    out = {}
    for name, y, denom in (
        ("h4h1", H4 * H1, pi),
        ("h4l1", H4 * L1, -pi),
        ("l4h1", L4 * H1, pi),
        ("l4l1", L4 * L1, -pi),
    ):
        rf = jump_from_arrays(sample.r, y, flavor)
        out[name] = Estimate(rf.jump / denom, rf.se / abs(pi))
    rec = None if sample.recommendation is None else sample.recommendation.label
    return EstimandSet(**out, first_stage=Estimate(pi, fs.se), n=sample.n, cutoff=sample.cutoff, recommendation=rec)


def late_2sls(sample: RDSample, flavor: str = "HC1") -> float:
    """Plain fuzzy-RD ratio jump(H4) / jump(H1)."""
    return local_linear_jump(sample, "H4", flavor).jump / local_linear_jump(sample, "H1", flavor).jump


def type_share_bounds(e: EstimandSet) -> TypeShareBounds:
    """Intervals for the four shares from AH + TT and AH + SS.

    With a = AH the remaining shares are TT = e1 - a, SS = e2 - a and
    AL = 1 - e1 - e2 + a; non-negativity pins a to
    [max(0, e1 + e2 - 1), min(e1, e2)].
    """
    e1, e2 = e.clamped()[:2]
    lo, hi = max(0.0, e1 + e2 - 1.0), min(e1, e2)
    return TypeShareBounds(
        ah=(lo, hi),
        tt=(e1 - hi, e1 - lo),
        ss=(e2 - hi, e2 - lo),
        al=(1.0 - e1 - e2 + lo, 1.0 - e1 - e2 + hi),
        a_range=(lo, hi),
    )


def point_identify(e: EstimandSet, rule: Optional[ZeroRule] = None) -> Optional[TypeShares]:
    """Point-identify the shares when an estimand is (statistically) zero.

    AH + SS = 0 leaves TT and AL; AL + SS = 0 leaves TT and AH.  Returns
    None when neither estimand is zero.
    """
    rule = rule or ZeroRule()
    ah_ss_zero = rule.is_zero(e.h4l1)
    al_ss_zero = rule.is_zero(e.l4h1)
    c = e.clamped()
    if ah_ss_zero and al_ss_zero:
        # SS = 0; least squares for (AH, AL, TT) on all four equations
        A = np.array([[1, 0, 1], [1, 0, 0], [0, 1, 0], [0, 1, 1]], dtype=float)
        x, *_ = np.linalg.lstsq(A, c, rcond=None)
        x = np.clip(x, 0.0, None)
        if x.sum() == 0:
            return None
        ah, al, tt = x / x.sum()
        return TypeShares(ah=ah, al=al, tt=tt, ss=0.0, method="zero-rule")
    if ah_ss_zero:
        tt = c[0]
        return TypeShares(ah=0.0, al=1.0 - tt, tt=tt, ss=0.0, method="zero-rule")
    if al_ss_zero:
        tt = c[3]
        return TypeShares(ah=1.0 - tt, al=0.0, tt=tt, ss=0.0, method="zero-rule")
    return None


def validity_check(e: EstimandSet, level: float = 0.05) -> ValidityReport:
    """One-sided tests of every estimand against 0 (below) and 1 (above).

    Only violations significant at ``level`` are flagged.
    """
    crit = stats.norm.ppf(1 - level)
    below, above, t_lo, t_hi = {}, {}, {}, {}
    for k in ESTIMANDS:
        est = getattr(e, k)
        t_lo[k] = Estimate(est.value, est.se).t
        t_hi[k] = Estimate(est.value - 1.0, est.se).t
        below[k] = bool(t_lo[k] < -crit)
        above[k] = bool(t_hi[k] > crit)
    return ValidityReport(below, above, t_lo, t_hi, level)
