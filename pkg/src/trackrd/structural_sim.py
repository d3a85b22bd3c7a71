"""Deterministic learning model and synthetic cohorts with known types.

Post-tracking achievement on track T is

    y_post(T) = y_pre + eta * phi(y_pre - mu_T) + beta * eta

with ``phi`` a centered normal density of width ``sigma_phi``.  A student
is on the high track in year four iff ``y_post > y_c``; comparing the two
tracks gives the student's type.  Cohorts add a test score, a two-track
teacher recommendation and a compliance class so that every estimator can
be checked against the tabulated truth.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy import special, stats

from .data_model import SCORE_MAX, SCORE_MIN, RDSample, SimTruth, StudentRecord, TrackLevel
from .rd_engine import TypeShares

TYPE_LABELS = np.array(["AH", "AL", "TT", "SS"])
COMPLIANCE_LABELS = np.array(["NeverTaker", "AlwaysTaker", "Complier"])
NEVER_TAKER, ALWAYS_TAKER, COMPLIER = 0, 1, 2


@dataclass(frozen=True)
class ModelParams:
    mu_low: float = 0.0
    mu_high: float = 1.0
    sigma_phi: float = 0.5
    beta_env: float = 0.05
    y_c: float = 1.2

    def __post_init__(self):
        if not self.sigma_phi > 0:
            raise ValueError("sigma_phi must be positive")
        if not self.mu_low < self.mu_high:
            raise ValueError("mu_low must be below mu_high")


def learning_gain(eta, y_pre, mu_t, params: ModelParams):
    """School value added plus environmental learning: eta * phi(y_pre - mu_t) + beta * eta."""
    d = (np.asarray(y_pre, dtype=float) - mu_t) / params.sigma_phi
    density = np.exp(-0.5 * d * d) / (params.sigma_phi * math.sqrt(2 * math.pi))
    return np.asarray(eta, dtype=float) * (density + params.beta_env)


def post_achievement(eta, y_pre, track: str, params: ModelParams):
    mu = params.mu_high if track == "high" else params.mu_low
    return np.asarray(y_pre, dtype=float) + learning_gain(eta, y_pre, mu, params)


def potential_h4(eta, y_pre, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Fourth-year high-track indicators (H4(1), H4(0)) after starting high / low."""
    h4_1 = post_achievement(eta, y_pre, "high", params) > params.y_c
    h4_0 = post_achievement(eta, y_pre, "low", params) > params.y_c
    return h4_1.astype(np.int8), h4_0.astype(np.int8)


def type_codes(h4_1, h4_0) -> np.ndarray:
    """Index into TYPE_LABELS: AH=0, AL=1, TT=2, SS=3."""
    h4_1 = np.asarray(h4_1).astype(bool)
    h4_0 = np.asarray(h4_0).astype(bool)
    return np.select([h4_1 & h4_0, ~h4_1 & ~h4_0, h4_1 & ~h4_0], [0, 1, 2], default=3).astype(np.int8)


def classify_type(eta, y_pre, params: ModelParams):
    """Type label(s) ``"AH"``, ``"AL"``, ``"TT"`` or ``"SS"`` for given ability and baseline."""
    codes = type_codes(*potential_h4(eta, y_pre, params))
    labels = TYPE_LABELS[codes]
    return str(labels) if labels.ndim == 0 else labels


@dataclass(frozen=True)
class SimConfig:
    """Cohort-generation settings.

    The score is ``clip(round(score_offset + score_scale * (y_pre + noise)))``
    and teachers recommend the high track when ``y_pre`` plus noise exceeds
    ``rec_threshold``.  Compliance probabilities apply to low-recommended
    students; high-recommended students are always on the high track.
    """

    n: int = 20_000
    cohort: str = "2014/15"
    low_track: str = "vmbo-gt"
    high_track: str = "havo"
    cutoff: int = 537
    eta_mean: float = 1.0
    eta_sd: float = 0.3
    eta_lower: float = 0.0
    eta_upper: float = math.inf
    y_pre_mean: float = 0.8
    y_pre_sd: float = 0.4
    rho: float = 0.5
    score_noise_sd: float = 0.15
    score_scale: float = 35.0
    score_offset: float = 513.0
    rec_threshold: float = 0.8
    rec_noise_sd: float = 0.15
    p_always_taker: float = 0.03
    p_complier: float = 0.35
    mu_low: float = 0.0
    mu_high: float = 1.0
    sigma_phi: float = 0.5
    beta_env: float = 0.05
    y_c: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be non-negative")
        for name in ("eta_sd", "y_pre_sd", "score_noise_sd", "rec_noise_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.eta_lower > self.eta_upper:
            raise ValueError("eta_lower exceeds eta_upper")
        if self.score_scale <= 0:
            raise ValueError("score_scale must be positive")
        if not (0 <= self.p_always_taker and 0 <= self.p_complier and self.p_always_taker + self.p_complier <= 1):
            raise ValueError("compliance probabilities must be non-negative and sum to at most 1")
        if not SCORE_MIN <= self.cutoff <= SCORE_MAX:
            raise ValueError(f"cutoff outside [{SCORE_MIN}, {SCORE_MAX}]")
        low, high = TrackLevel.parse(self.low_track), TrackLevel.parse(self.high_track)
        if low.is_mixed or high.is_mixed or not low < high:
            raise ValueError("low_track and high_track must be single tracks with low below high")
        self.params  # validates the model block

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.mu_low, self.mu_high, self.sigma_phi, self.beta_env, self.y_c)

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable short hash of every field, used to tag outputs."""
        payload = json.dumps({k: repr(v) for k, v in asdict(self).items()}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# Named alternatives used by tests and the CLI (``preset = ...``).
PRESETS = {
    "default": {},
    # first stage in the range of the administrative data; needs large n
    "sparse_compliers": {"p_complier": 0.07, "p_always_taker": 0.03},
    # capped ability: no complier near the cutoff can clear y_c on the low track,
    # so Always High and Slow Starter shares are exactly zero there
    "no_ah_ss": {"eta_upper": 1.3, "y_c": 1.4, "rec_threshold": 1.0, "score_offset": 507.8},
    # source of the packaged fixture cohort
    "fixture": {"y_c": 1.3, "rec_threshold": 0.9, "score_offset": 510.3, "n": 30_000, "seed": 20150},
    # everybody near the cutoff is a Trapped-in-Track complier
    "all_tt": {
        "eta_mean": 1.0, "eta_sd": 0.0, "y_pre_mean": 0.6, "y_pre_sd": 0.001,
        "rec_threshold": 5.0, "p_always_taker": 0.0, "p_complier": 1.0,
    },
    # no learning at all
    "zero_ability": {"eta_mean": 0.0, "eta_sd": 0.0},
}


def preset(name: str, **overrides) -> SimConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return SimConfig(**{**base, **overrides})


@dataclass(frozen=True)
class SimStudent:
    eta: float
    y_pre: float
    score: int
    recommendation: str
    compliance: str
    h1_0: int
    h1_1: int
    h4_0: int
    h4_1: int
    type_label: str

    def __post_init__(self):
        if self.h1_1 < self.h1_0:
            raise ValueError("defier: H1(1) < H1(0)")


@dataclass(frozen=True)
class Cohort:
    """Column-wise synthetic cohort.  ``rec_high`` marks high-recommended students."""

    config: SimConfig
    eta: np.ndarray
    y_pre: np.ndarray
    score: np.ndarray
    rec_high: np.ndarray
    compliance: np.ndarray
    h1_0: np.ndarray
    h1_1: np.ndarray
    h4_0: np.ndarray
    h4_1: np.ndarray
    covariates: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.score)

    @property
    def Z(self) -> np.ndarray:
        return (self.score >= self.config.cutoff).astype(np.int8)

    @property
    def H1(self) -> np.ndarray:
        return np.where(self.Z == 1, self.h1_1, self.h1_0)

    @property
    def H4(self) -> np.ndarray:
        # exclusion restriction: Z only enters through H1
        return np.where(self.H1 == 1, self.h4_1, self.h4_0)

    @property
    def types(self) -> np.ndarray:
        return type_codes(self.h4_1, self.h4_0)

    def rd_sample(self, bandwidth: int = 3, window: str = "points") -> RDSample:
        """Low-recommended students around the cutoff."""
        low = ~self.rec_high
        return RDSample.from_arrays(
            self.score[low], self.H1[low], self.H4[low], self.config.cutoff, bandwidth,
            covariates={k: v[low] for k, v in self.covariates.items()},
            window=window,
            recommendation=TrackLevel.parse(self.config.low_track),
            cohort=self.config.cohort,
        )

    def students(self) -> list[SimStudent]:
        types = TYPE_LABELS[self.types]
        return [
            SimStudent(
                float(self.eta[i]), float(self.y_pre[i]), int(self.score[i]),
                "high" if self.rec_high[i] else "low", str(COMPLIANCE_LABELS[self.compliance[i]]),
                int(self.h1_0[i]), int(self.h1_1[i]), int(self.h4_0[i]), int(self.h4_1[i]), str(types[i]),
            )
            for i in range(len(self))
        ]

    def to_records(self) -> list[StudentRecord]:
        """Project onto the observed-data schema with truth attached."""
        cfg = self.config
        low, high = TrackLevel.parse(cfg.low_track), TrackLevel.parse(cfg.high_track)
        H1, H4, types = self.H1, self.H4, TYPE_LABELS[self.types]
        width = max(6, len(str(len(self))))
        out = []
        for i in range(len(self)):
            rec = high if self.rec_high[i] else low
            truth = SimTruth(
                float(self.eta[i]), float(self.y_pre[i]), str(COMPLIANCE_LABELS[self.compliance[i]]),
                int(self.h4_1[i]), int(self.h4_0[i]), str(types[i]),
            )
            out.append(
                StudentRecord.build(
                    f"s{i:0{width}d}", cfg.cohort, rec, int(self.score[i]),
                    high if H1[i] else low, high if H4[i] else low,
                    {k: float(v[i]) for k, v in self.covariates.items()}, truth,
                )
            )
        return out


def _truncated_normal_from_uniform(u, mean, sd, lower, upper):
    if sd == 0:
        return np.full_like(u, min(max(mean, lower), upper))
    a, b = (lower - mean) / sd, (upper - mean) / sd
    return stats.truncnorm.ppf(u, a, b, loc=mean, scale=sd)


def generate_cohort(config: SimConfig) -> Cohort:
    """Draw a cohort; output is a pure function of ``config`` (seed included)."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = config.n
    z1 = rng.standard_normal(n)
    z2 = config.rho * z1 + math.sqrt(1 - config.rho**2) * rng.standard_normal(n)
    # Gaussian copula keeps the correlation while truncating eta
    u = np.clip(special.ndtr(z1), 1e-15, 1 - 1e-15)
    eta = _truncated_normal_from_uniform(u, config.eta_mean, config.eta_sd, config.eta_lower, config.eta_upper)
    y_pre = config.y_pre_mean + config.y_pre_sd * z2
    x = y_pre + config.score_noise_sd * rng.standard_normal(n)
    score = np.clip(np.rint(config.score_offset + config.score_scale * x), SCORE_MIN, SCORE_MAX).astype(np.int64)
    rec_high = y_pre + config.rec_noise_sd * rng.standard_normal(n) > config.rec_threshold

    draw = rng.random(n)
    compliance = np.where(
        draw < config.p_always_taker,
        ALWAYS_TAKER,
        np.where(draw < config.p_always_taker + config.p_complier, COMPLIER, NEVER_TAKER),
    )
    compliance = np.where(rec_high, ALWAYS_TAKER, compliance).astype(np.int8)
    h1_0 = (compliance == ALWAYS_TAKER).astype(np.int8)
    h1_1 = (compliance != NEVER_TAKER).astype(np.int8)
    h4_1, h4_0 = potential_h4(eta, y_pre, config.params)

    covariates = {
        "girl": (rng.random(n) < 0.5).astype(float),
        "income": np.round(np.exp(math.log(80_000) + 0.5 * rng.standard_normal(n))),
        "age": np.round(11.8 + 0.4 * rng.standard_normal(n), 2),
        "nonwestern": (rng.random(n) < 0.2).astype(float),
        "progress_y2": (rng.random(n) < 0.99).astype(float),
        "progress_y3": (rng.random(n) < 0.96).astype(float),
        "progress_y4": (rng.random(n) < 0.91).astype(float),
    }
    return Cohort(config, eta, y_pre, score, rec_high, compliance, h1_0, h1_1, h4_0, h4_1, covariates)


def oracle_type_shares(cohort: Cohort, cutoff: Optional[int] = None, bandwidth: Optional[int] = None) -> TypeShares:
    """Type shares among compliers scoring exactly at the cutoff.

    With ``bandwidth`` the tabulation covers the estimation window
    (cutoff - h .. cutoff + h - 1) instead.
    """
    c = cohort.config.cutoff if cutoff is None else cutoff
    if bandwidth is None:
        at = cohort.score == c
    else:
        at = (cohort.score >= c - bandwidth) & (cohort.score <= c + bandwidth - 1)
    mask = at & (cohort.compliance == COMPLIER)
    k = int(mask.sum())
    if k == 0:
        raise ValueError(f"no compliers at score {c}" if bandwidth is None else f"no compliers within {bandwidth} of {c}")
    counts = np.bincount(cohort.types[mask], minlength=4) / k
    return TypeShares(*(float(x) for x in counts), method="oracle")


def oracle_complier_share(cohort: Cohort, cutoff: Optional[int] = None) -> float:
    """Share of compliers among low-recommended students scoring at the cutoff."""
    c = cohort.config.cutoff if cutoff is None else cutoff
    at = (cohort.score == c) & ~cohort.rec_high
    if not at.any():
        return math.nan
    return float((cohort.compliance[at] == COMPLIER).mean())


def calibrate_score_offset(config: SimConfig, quantile: float = 0.75, n: int = 200_000) -> float:
    """Offset placing the cutoff at ``quantile`` of the low-recommended score distribution."""
    probe = generate_cohort(config.with_(n=n, score_offset=0.0))
    rng = np.random.default_rng(config.seed)
    x = probe.y_pre + config.score_noise_sd * rng.standard_normal(n)
    q = np.quantile(x[~probe.rec_high], quantile)
    # scores round to the nearest integer, so S < c means offset + scale * x < c - 1/2
    return float(config.cutoff - 0.5 - config.score_scale * q)
