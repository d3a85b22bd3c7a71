"""Domain types for track-assignment data and construction of RD samples.

Students carry an initial teacher recommendation, an end-of-primary test
score and first/fourth-year track enrollment.  Enrollment is binarized
relative to the recommendation (``H1``/``H4``) and students are windowed
around the test-score cutoff of the single track directly above their
recommendation.
"""

from __future__ import annotations

import csv
import enum
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SCORE_MIN = 501
SCORE_MAX = 550

REQUIRED_COLUMNS = ("id", "cohort", "recommendation", "score", "enrollment_y1", "enrollment_y4")
TRUTH_COLUMNS = ("sim_eta", "sim_y_pre", "sim_compliance", "sim_h4_1", "sim_h4_0", "sim_type")


class DataError(ValueError):
    """Invalid input data.  ``row`` is the 1-based data row (header excluded)."""

    def __init__(self, message: str, *, path=None, row: Optional[int] = None, field: Optional[str] = None):
        self.path = path
        self.row = row
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class TrackLevel(enum.Enum):
    """Secondary-school track levels, from most vocational to most academic.

    Values are ranks: single tracks sit on even ranks and each mixed
    (double) recommendation on the odd rank between its two components.
    """

    VMBO_BL = 0
    VMBO_BL_KL = 1
    VMBO_KL = 2
    VMBO_KL_GT = 3
    VMBO_GT = 4
    VMBO_GT_HAVO = 5
    HAVO = 6
    HAVO_VWO = 7
    VWO = 8

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def is_mixed(self) -> bool:
        return self.value % 2 == 1

    def lowest(self) -> "TrackLevel":
        return TrackLevel(self.value - 1) if self.is_mixed else self

    def highest(self) -> "TrackLevel":
        return TrackLevel(self.value + 1) if self.is_mixed else self

    def next_single(self) -> Optional["TrackLevel"]:
        """Single track directly above the recommendation, None for vwo.

        For mixed recommendations this is the higher component.
        """
        if self.is_mixed:
            return self.highest()
        if self is TrackLevel.VWO:
            return None
        return TrackLevel(self.value + 2)

    def __lt__(self, other):
        if not isinstance(other, TrackLevel):
            return NotImplemented
        return self.value < other.value

    def __le__(self, other):
        if not isinstance(other, TrackLevel):
            return NotImplemented
        return self.value <= other.value

    def __gt__(self, other):
        if not isinstance(other, TrackLevel):
            return NotImplemented
        return self.value > other.value

    def __ge__(self, other):
        if not isinstance(other, TrackLevel):
            return NotImplemented
        return self.value >= other.value

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: str) -> "TrackLevel":
        key = text.strip().lower().replace(" ", "").replace("_", "-")
        try:
            return _BY_LABEL[key]
        except KeyError:
            raise ValueError(f"unknown track label {text!r}") from None

    @classmethod
    def singles(cls) -> list["TrackLevel"]:
        return [t for t in cls if not t.is_mixed]


_LABELS = {
    TrackLevel.VMBO_BL: "vmbo-bl",
    TrackLevel.VMBO_BL_KL: "vmbo-bl/kl",
    TrackLevel.VMBO_KL: "vmbo-kl",
    TrackLevel.VMBO_KL_GT: "vmbo-kl/gt",
    TrackLevel.VMBO_GT: "vmbo-gt",
    TrackLevel.VMBO_GT_HAVO: "vmbo-gt/havo",
    TrackLevel.HAVO: "havo",
    TrackLevel.HAVO_VWO: "havo/vwo",
    TrackLevel.VWO: "vwo",
}
_BY_LABEL = {label: level for level, label in _LABELS.items()}
# long forms used in administrative exports
_BY_LABEL.update(
    {
        "vmbo-bl/vmbo-kl": TrackLevel.VMBO_BL_KL,
        "vmbo-kl/vmbo-gt": TrackLevel.VMBO_KL_GT,
    }
)


class CutoffTable:
    """Minimum test score per (cohort, test-based track level).

    The default table holds the score bands of the Cito end-of-primary test
    for the 2014/15 to 2016/17 cohorts; only band minima are stored since
    those are the cutoffs.
    """

    DEFAULT = {
        ("2014/15", TrackLevel.VMBO_KL): 524,
        ("2014/15", TrackLevel.VMBO_GT): 529,
        ("2014/15", TrackLevel.HAVO): 537,
        ("2014/15", TrackLevel.VWO): 545,
        ("2015/16", TrackLevel.VMBO_BL_KL): 519,
        ("2015/16", TrackLevel.VMBO_KL): 526,
        ("2015/16", TrackLevel.VMBO_GT): 529,
        ("2015/16", TrackLevel.VMBO_GT_HAVO): 533,
        ("2015/16", TrackLevel.HAVO): 537,
        ("2015/16", TrackLevel.HAVO_VWO): 540,
        ("2015/16", TrackLevel.VWO): 545,
        ("2016/17", TrackLevel.VMBO_BL_KL): 519,
        ("2016/17", TrackLevel.VMBO_KL): 526,
        ("2016/17", TrackLevel.VMBO_GT): 529,
        ("2016/17", TrackLevel.VMBO_GT_HAVO): 533,
        ("2016/17", TrackLevel.HAVO): 537,
        ("2016/17", TrackLevel.HAVO_VWO): 540,
        ("2016/17", TrackLevel.VWO): 545,
    }

    def __init__(self, entries: Optional[Mapping[tuple[str, TrackLevel], int]] = None):
        self._entries = dict(self.DEFAULT if entries is None else entries)
        self._validate()

    def _validate(self) -> None:
        by_cohort: dict[str, list[tuple[TrackLevel, int]]] = {}
        for (cohort, level), score in self._entries.items():
            if not SCORE_MIN <= score <= SCORE_MAX:
                raise ValueError(f"cutoff {score} for {cohort} {level} outside [{SCORE_MIN}, {SCORE_MAX}]")
            by_cohort.setdefault(cohort, []).append((level, score))
        for cohort, rows in by_cohort.items():
            rows.sort()
            scores = [s for _, s in rows]
            if any(b <= a for a, b in zip(scores, scores[1:])):
                raise ValueError(f"cutoffs for cohort {cohort} are not strictly increasing in track level")

    def __getitem__(self, key: tuple[str, TrackLevel]) -> int:
        try:
            return self._entries[key]
        except KeyError:
            cohort, level = key
            raise KeyError(f"no cutoff for cohort {cohort!r}, track {level}") from None

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    @property
    def cohorts(self) -> list[str]:
        return sorted({c for c, _ in self._entries})

    def cutoff_for(self, cohort: str, recommendation: TrackLevel) -> int:
        """Cutoff relevant to students with the given initial recommendation."""
        target = recommendation.next_single()
        if target is None:
            raise KeyError(f"recommendation {recommendation} cannot be revised upwards")
        return self[cohort, target]


@dataclass(frozen=True)
class SimTruth:
    """Ground truth attached by the simulator."""

    eta: float
    y_pre: float
    compliance: str
    h4_1: int
    h4_0: int
    type_label: str

    def __post_init__(self):
        if self.h4_1 not in (0, 1) or self.h4_0 not in (0, 1):
            raise ValueError("potential outcomes must be binary")
        if type_from_potential(self.h4_1, self.h4_0) != self.type_label:
            raise ValueError(f"type {self.type_label} inconsistent with H4(1)={self.h4_1}, H4(0)={self.h4_0}")


def type_from_potential(h4_1: int, h4_0: int) -> str:
    """Student type implied by the two potential fourth-year outcomes."""
    if h4_1 and h4_0:
        return "AH"
    if not h4_1 and not h4_0:
        return "AL"
    return "TT" if h4_1 else "SS"


@dataclass(frozen=True)
class StudentRecord:
    id: str
    cohort: str
    initial_recommendation: TrackLevel
    score: int
    enrollment_y1: Optional[TrackLevel]
    enrollment_y4: Optional[TrackLevel]
    H1: Optional[int]
    H4: Optional[int]
    covariates: Mapping[str, float] = field(default_factory=dict)
    sim_truth: Optional[SimTruth] = None

    @classmethod
    def build(
        cls,
        id,
        cohort,
        recommendation: TrackLevel,
        score: int,
        enrollment_y1: Optional[TrackLevel],
        enrollment_y4: Optional[TrackLevel],
        covariates: Optional[Mapping[str, float]] = None,
        sim_truth: Optional[SimTruth] = None,
        hybrid: str = "highest",
    ) -> "StudentRecord":
        """Construct a record, deriving H1/H4 from the enrollment fields."""
        h1 = None if enrollment_y1 is None else binarize_enrollment(recommendation, enrollment_y1, hybrid)
        h4 = None if enrollment_y4 is None else binarize_enrollment(recommendation, enrollment_y4, hybrid)
        return cls(
            str(id), str(cohort), recommendation, int(score), enrollment_y1, enrollment_y4,
            h1, h4, dict(covariates or {}), sim_truth,
        )


def binarize_enrollment(recommendation: TrackLevel, enrollment: TrackLevel, hybrid: str = "highest") -> int:
    """1 if enrollment is strictly above the (lowest component of the) recommendation.

    Hybrid enrollment labels are mapped to their highest component by
    default; ``hybrid="lowest"`` maps them to the lower one instead.
    """
    if enrollment.is_mixed:
        if hybrid == "highest":
            enrollment = enrollment.highest()
        elif hybrid == "lowest":
            enrollment = enrollment.lowest()
        else:
            raise ValueError(f"hybrid mapping must be 'highest' or 'lowest', got {hybrid!r}")
    return int(enrollment > recommendation.lowest())


# ---------------------------------------------------------------------------
# CSV I/O


def load_students(
    path,
    schema: Optional[Mapping[str, str]] = None,
    *,
    hybrid: str = "highest",
) -> list[StudentRecord]:
    """Read student records from a UTF-8 CSV file with a header row.

    ``schema`` maps the canonical column names (id, cohort, recommendation,
    score, enrollment_y1, enrollment_y4) to the names used in the file.
    Every other column except the ``sim_*`` truth columns is read as a
    numeric covariate.  An empty ``enrollment_y4`` cell marks attrition.
    """
    path = Path(path)
    schema = dict(schema or {})
    colname = {c: schema.get(c, c) for c in REQUIRED_COLUMNS}
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open: {exc.strerror}", path=path) from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [canon for canon, name in colname.items() if name not in header]
        if missing:
            raise DataError(f"missing required column(s): {', '.join(colname[m] for m in missing)}", path=path)
        used = set(colname.values()) | set(TRUTH_COLUMNS)
        cov_cols = [c for c in header if c not in used]
        has_truth = all(c in header for c in TRUTH_COLUMNS)

        records = []
        for i, row in enumerate(reader, start=1):
            records.append(_parse_row(row, i, path, colname, cov_cols, has_truth, hybrid))
    return records


def _parse_row(row, i, path, colname, cov_cols, has_truth, hybrid) -> StudentRecord:
    def track(canon, optional=False):
        text = (row[colname[canon]] or "").strip()
        if not text and optional:
            return None
        try:
            return TrackLevel.parse(text)
        except ValueError:
            raise DataError(f"unknown track label {text!r}", path=path, row=i, field=colname[canon]) from None

    def number(name, text, cast=float):
        try:
            return cast(text)
        except (TypeError, ValueError):
            raise DataError(f"unparsable value {text!r}", path=path, row=i, field=name) from None

    score_text = (row[colname["score"]] or "").strip()
    score = number(colname["score"], score_text, float)
    if not float(score).is_integer():
        raise DataError(f"score {score_text!r} is not an integer", path=path, row=i, field=colname["score"])
    score = int(score)
    if not SCORE_MIN <= score <= SCORE_MAX:
        raise DataError(
            f"score {score} outside [{SCORE_MIN}, {SCORE_MAX}]", path=path, row=i, field=colname["score"]
        )
    rec = track("recommendation")
    y1 = track("enrollment_y1", optional=True)
    y4 = track("enrollment_y4", optional=True)
    covariates = {}
    for c in cov_cols:
        text = (row[c] or "").strip()
        covariates[c] = math.nan if text == "" else number(c, text)
    truth = None
    if has_truth and (row["sim_type"] or "").strip():
        try:
            truth = SimTruth(
                eta=float(row["sim_eta"]),
                y_pre=float(row["sim_y_pre"]),
                compliance=row["sim_compliance"].strip(),
                h4_1=int(row["sim_h4_1"]),
                h4_0=int(row["sim_h4_0"]),
                type_label=row["sim_type"].strip(),
            )
        except ValueError as exc:
            raise DataError(f"invalid simulation truth: {exc}", path=path, row=i, field="sim_type") from None
    return StudentRecord.build(
        row[colname["id"]], row[colname["cohort"]].strip(), rec, score, y1, y4, covariates, truth, hybrid
    )


def write_students(records: Sequence[StudentRecord], path, *, covariates: Optional[Sequence[str]] = None) -> None:
    """Write records in the canonical CSV schema; truth columns are appended when any record has them."""
    if covariates is None:
        seen: dict[str, None] = {}
        for r in records:
            seen.update(dict.fromkeys(r.covariates))
        covariates = list(seen)
    with_truth = any(r.sim_truth is not None for r in records)
    header = list(REQUIRED_COLUMNS) + list(covariates) + (list(TRUTH_COLUMNS) if with_truth else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            row = [
                r.id,
                r.cohort,
                r.initial_recommendation.label,
                r.score,
                "" if r.enrollment_y1 is None else r.enrollment_y1.label,
                "" if r.enrollment_y4 is None else r.enrollment_y4.label,
            ]
            row += [_fmt(r.covariates.get(c, math.nan)) for c in covariates]
            if with_truth:
                t = r.sim_truth
                row += ["", "", "", "", "", ""] if t is None else [
                    _fmt(t.eta), _fmt(t.y_pre), t.compliance, t.h4_1, t.h4_0, t.type_label
                ]
            w.writerow(row)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x))


# ---------------------------------------------------------------------------
# RD samples


def window_offsets(bandwidth: int, window: str = "points") -> tuple[int, int]:
    """Inclusive range (lo, hi) of centered scores r = S - c kept in the window.

    ``"points"`` keeps ``bandwidth`` score points per side: c-h .. c+h-1,
    since the cutoff score itself is the first treated point.
    ``"distance"`` keeps every score within distance h: c-h .. c+h.
    """
    if bandwidth < 1:
        raise ValueError(f"bandwidth must be a positive integer, got {bandwidth}")
    if window == "points":
        return -bandwidth, bandwidth - 1
    if window == "distance":
        return -bandwidth, bandwidth
    raise ValueError(f"window must be 'points' or 'distance', got {window!r}")


@dataclass(frozen=True)
class RDSample:
    """Cutoff-centered analysis window, stored column-wise.

    ``r`` is the centered score S - c, ``Z = 1{r >= 0}``.  ``covariates``
    holds any extra numeric columns aligned with the rows.
    """

    cutoff: Optional[int]
    bandwidth: int
    r: np.ndarray
    H1: np.ndarray
    H4: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    recommendation: Optional[TrackLevel] = None
    cohort: Optional[str] = None
    attrition: int = 0

    def __post_init__(self):
        for name in ("r", "H1", "H4"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.r)
        if len(self.H1) != n or len(self.H4) != n:
            raise ValueError("RDSample columns must have equal length")
        covs = {}
        for k, v in self.covariates.items():
            v = np.asarray(v, dtype=float)
            if len(v) != n:
                raise ValueError(f"covariate {k!r} has length {len(v)}, expected {n}")
            v.setflags(write=False)
            covs[k] = v
        object.__setattr__(self, "covariates", covs)

    @property
    def Z(self) -> np.ndarray:
        return (self.r >= 0).astype(float)

    @property
    def L1(self) -> np.ndarray:
        return 1.0 - self.H1

    @property
    def L4(self) -> np.ndarray:
        return 1.0 - self.H4

    @property
    def n(self) -> int:
        return len(self.r)

    def column(self, name: str) -> np.ndarray:
        """Outcome column by name: H1, H4, L1, L4, Z, products like ``H4*H1``, or a covariate."""
        if name in self.covariates:
            return self.covariates[name]
        if "*" in name:
            a, b = name.split("*")
            return self.column(a.strip()) * self.column(b.strip())
        if name in ("H1", "H4", "L1", "L4", "Z"):
            return np.asarray(getattr(self, name), dtype=float)
        raise KeyError(f"unknown column {name!r}")

    @classmethod
    def from_arrays(
        cls,
        score,
        H1,
        H4,
        cutoff,
        bandwidth: int = 3,
        *,
        covariates: Optional[Mapping[str, Iterable[float]]] = None,
        window: str = "points",
        recommendation: Optional[TrackLevel] = None,
        cohort: Optional[str] = None,
    ) -> "RDSample":
        """Window raw columns around ``cutoff`` (scalar or per-row array).

        Rows with missing H1 or H4 (NaN) are dropped and counted as attrition.
        """
        lo, hi = window_offsets(bandwidth, window)
        score = np.asarray(score)
        r = score - np.asarray(cutoff)
        H1 = np.asarray(H1, dtype=float)
        H4 = np.asarray(H4, dtype=float)
        inside = (r >= lo) & (r <= hi)
        missing = inside & (np.isnan(H4) | np.isnan(H1))
        keep = inside & ~missing
        covs = {k: np.asarray(v, dtype=float)[keep] for k, v in (covariates or {}).items()}
        r_kept = r[keep].astype(int)
        if not (r_kept < 0).any() or not (r_kept >= 0).any():
            side = "left" if not (r_kept < 0).any() else "right"
            raise ValueError(f"no observations on the {side} side of the cutoff")
        cut = int(cutoff) if np.ndim(cutoff) == 0 else None
        if cut is None:
            distinct = np.unique(np.asarray(cutoff)[keep])
            if len(distinct) == 1:
                cut = int(distinct[0])
        return cls(cut, bandwidth, r_kept, H1[keep], H4[keep], covs, recommendation, cohort, int(missing.sum()))


def build_rd_sample(
    records: Sequence[StudentRecord],
    cohort: Optional[str],
    recommendation: TrackLevel,
    cutoff_table: Optional[CutoffTable] = None,
    bandwidth: int = 3,
    *,
    window: str = "points",
    covariates: Optional[Sequence[str]] = None,
) -> RDSample:
    """Select students with ``recommendation`` around their cohort's cutoff.

    ``cohort=None`` pools all cohorts, centering each student at the cutoff
    that applies to their own cohort.
    """
    if bandwidth < 1:
        raise ValueError(f"bandwidth must be a positive integer, got {bandwidth}")
    table = cutoff_table or CutoffTable()
    chosen = [
        s for s in records
        if s.initial_recommendation is recommendation and (cohort is None or s.cohort == cohort)
    ]
    if cohort is not None:
        table.cutoff_for(cohort, recommendation)  # raises for unknown cutoff
    if not chosen:
        raise ValueError(f"no students with recommendation {recommendation} in cohort {cohort or 'any'}")
    cutoffs = np.array([table.cutoff_for(s.cohort, recommendation) for s in chosen])
    if covariates is None:
        covariates = sorted(set().union(*(s.covariates.keys() for s in chosen)))
    covs = {c: [s.covariates.get(c, math.nan) for s in chosen] for c in covariates}
    return RDSample.from_arrays(
        np.array([s.score for s in chosen]),
        np.array([math.nan if s.H1 is None else s.H1 for s in chosen], dtype=float),
        np.array([math.nan if s.H4 is None else s.H4 for s in chosen], dtype=float),
        cutoffs,
        bandwidth,
        covariates=covs,
        window=window,
        recommendation=recommendation,
        cohort=cohort,
    )
