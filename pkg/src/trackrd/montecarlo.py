"""Replication harness: simulate, estimate, diagnose, and compare with the truth.

Replication ``k`` draws its cohort with seed :func:`replication_seed`
``(base_seed, k)``, so any single replication can be re-run in isolation
and results do not depend on execution order.
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .rd_engine import (
    ESTIMANDS,
    WeakFirstStageError,
    ZeroRule,
    estimand_set,
    point_identify,
    type_share_bounds,
    validity_check,
)
from .diagnostics import balancing_test, placebo_rd
from .regression import RegressionError, jump_from_arrays
from .structural_sim import SimConfig, generate_cohort, oracle_complier_share, oracle_type_shares

BALANCE_COVARIATES = ("girl", "income", "age", "nonwestern")
PLACEBO_OUTCOMES = ("progress_y2", "progress_y3", "progress_y4")

# estimate column -> oracle column
TARGETS = {
    "pi": "oracle_pi",
    "e_h4h1": "oracle_ah_tt",
    "e_h4l1": "oracle_ah_ss",
    "e_l4h1": "oracle_al_ss",
    "e_l4l1": "oracle_al_tt",
    "tt_share": "oracle_tt",
    "tt_point": "oracle_tt",
}


def replication_seed(base_seed: int, k: int) -> int:
    """First 8 bytes (little endian) of sha256("base_seed:k")."""
    digest = hashlib.sha256(f"{int(base_seed)}:{int(k)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class McOptions:
    bandwidth: int = 3
    window: str = "points"
    weak_threshold: float = 3.0
    zero_alpha: float = 0.05
    zero_max_abs: float = 0.25
    level: float = 0.05
    flavor: str = "HC1"
    diagnostics: bool = True


def run_one(config: SimConfig, k: int, base_seed: int, options: McOptions = McOptions()) -> dict:
    """One replication as a flat row of numbers (NaN where not applicable)."""
    seed = replication_seed(base_seed, k)
    cohort = generate_cohort(config.with_(seed=seed))
    row: dict = {"rep": k, "seed": seed}
    sample = cohort.rd_sample(options.bandwidth, options.window)
    row["n_sample"] = sample.n

    try:
        o = oracle_type_shares(cohort)
        row.update(oracle_ah=o.ah, oracle_al=o.al, oracle_tt=o.tt, oracle_ss=o.ss)
    except ValueError:
        row.update(oracle_ah=math.nan, oracle_al=math.nan, oracle_tt=math.nan, oracle_ss=math.nan)
    row["oracle_ah_tt"] = row["oracle_ah"] + row["oracle_tt"]
    row["oracle_ah_ss"] = row["oracle_ah"] + row["oracle_ss"]
    row["oracle_al_ss"] = row["oracle_al"] + row["oracle_ss"]
    row["oracle_al_tt"] = row["oracle_al"] + row["oracle_tt"]
    row["oracle_pi"] = oracle_complier_share(cohort)

    fs = jump_from_arrays(sample.r, sample.H1, options.flavor)
    row["pi"], row["se_pi"] = fs.jump, fs.se
    row["weak"] = 0
    try:
        e = estimand_set(sample, weak_threshold=options.weak_threshold, flavor=options.flavor)
    except WeakFirstStageError:
        row["weak"] = 1
        e = None
    for name in ESTIMANDS:
        est = getattr(e, name) if e is not None else None
        row[f"e_{name}"] = est.value if est else math.nan
        row[f"se_e_{name}"] = est.se if est else math.nan
    if e is not None:
        s1, s2 = e.pair_sums
        row["identity_error"] = max(abs(s1 - 1), abs(s2 - 1), abs(s1 + s2 - 2))
        shares = point_identify(e, ZeroRule(options.zero_alpha, options.zero_max_abs))
        bounds = type_share_bounds(e)
        row["point_identified"] = int(shares is not None)
        row["tt_point"] = shares.tt if shares is not None else math.nan
        row["tt_share"] = (shares or bounds.midpoint()).tt
        row["tt_lo"], row["tt_hi"] = bounds.tt
        row["validity_flag"] = int(not validity_check(e, options.level).passed)
    else:
        for key in ("identity_error", "point_identified", "tt_point", "tt_share", "tt_lo", "tt_hi", "validity_flag"):
            row[key] = math.nan

    if options.diagnostics:
        for cov in BALANCE_COVARIATES:
            row[f"reject_{cov}"] = _rejects(balancing_test, sample, cov, options)
        for out in PLACEBO_OUTCOMES:
            row[f"reject_{out}"] = _rejects(placebo_rd, sample, out, options)
    return row


def _rejects(test, sample, column, options) -> float:
    try:
        return float(not test(sample, column, options.level, options.flavor).passed)
    except RegressionError:
        return math.nan


def _run_chunk(args) -> list[dict]:
    config, ks, base_seed, options = args
    return [run_one(config, k, base_seed, options) for k in ks]


@dataclass
class McSummary:
    R: int
    n: int
    base_seed: int
    config_digest: str
    weak_replications: int
    quantities: dict = field(default_factory=dict)
    rejection_rates: dict = field(default_factory=dict)
    max_identity_error: float = math.nan
    point_identified_rate: float = math.nan
    rows: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "R": self.R,
            "n": self.n,
            "base_seed": self.base_seed,
            "config_digest": self.config_digest,
            "weak_replications": self.weak_replications,
            "mc_se_defined": self.R - self.weak_replications > 1,
            "max_identity_error": self.max_identity_error,
            "point_identified_rate": self.point_identified_rate,
            "quantities": self.quantities,
            "rejection_rates": self.rejection_rates,
        }


def _stats(est: np.ndarray, truth: Optional[np.ndarray], se: Optional[np.ndarray]) -> dict:
    ok = np.isfinite(est) & (np.isfinite(truth) if truth is not None else True)
    est_ok = est[ok]
    m = len(est_ok)
    out = {"replications": m}
    if m == 0:
        return out | {"mean": math.nan, "mc_se": math.nan}
    out["mean"] = float(est_ok.mean())
    out["mc_se"] = float(est_ok.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    if truth is not None:
        diff = est_ok - truth[ok]
        out["oracle_mean"] = float(truth[ok].mean())
        out["bias"] = float(diff.mean())
        out["bias_mc_se"] = float(diff.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
        if se is not None:
            half = 1.959963984540054 * se[ok]
            out["coverage"] = float(np.mean(np.abs(diff) <= half))
    return out


def summarize(rows: list[dict], config: SimConfig, R: int, base_seed: int) -> McSummary:
    def col(name):
        return np.array([r.get(name, math.nan) for r in rows], dtype=float)

    weak = int(np.nansum(col("weak")))
    if weak == R:
        raise RuntimeError(f"all {R} replications failed the first-stage guard")
    quantities = {}
    for est, truth in TARGETS.items():
        se_name = {"pi": "se_pi"}.get(est, f"se_{est}" if est.startswith("e_") else None)
        quantities[est] = _stats(col(est), col(truth), col(se_name) if se_name else None)
    quantities["late"] = _stats(col("e_h4h1") - col("e_h4l1"), col("oracle_tt") - col("oracle_ss"), None)

    rates = {}
    names = [k for k in rows[0] if k.startswith("reject_")] + ["validity_flag"]
    for name in names:
        v = col(name)
        v = v[np.isfinite(v)]
        if len(v):
            key = name.removeprefix("reject_")
            rates[key] = {"rate": float(v.mean()), "replications": len(v)}
    ident = col("identity_error")
    pid = col("point_identified")
    return McSummary(
        R=R,
        n=config.n,
        base_seed=base_seed,
        config_digest=config.digest(),
        weak_replications=weak,
        quantities=quantities,
        rejection_rates=rates,
        max_identity_error=float(np.nanmax(ident)) if np.isfinite(ident).any() else math.nan,
        point_identified_rate=float(np.nanmean(pid)) if np.isfinite(pid).any() else math.nan,
        rows=rows,
    )


def run_replications(
    config: SimConfig,
    R: int,
    base_seed: int = 0,
    options: McOptions = McOptions(),
    n_jobs: int = 1,
) -> McSummary:
    """Run ``R`` replications and aggregate them in replication order."""
    if R < 1:
        raise ValueError("R must be at least 1")
    ks = list(range(R))
    if n_jobs <= 1:
        rows = [run_one(config, k, base_seed, options) for k in ks]
    else:
        chunks = [ks[i::n_jobs] for i in range(n_jobs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(_run_chunk, [(config, c, base_seed, options) for c in chunks]))
        rows = sorted((r for part in parts for r in part), key=lambda r: r["rep"])
    return summarize(rows, config, R, base_seed)


def write_replications_csv(summary: McSummary, path) -> None:
    rows = summary.rows
    header = list(rows[0])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if isinstance(v, float) and math.isnan(v) else repr(v) if isinstance(v, float) else v
                        for v in (r[h] for h in header)])
