"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the lines
inline; they are also repeated in the terminal summary).
"""

import json
import math
import time

import numpy as np
import pytest

import conftest
from conftest import random_sample
from oracles import enumerate_bounds, normal_equations_hc1
from trackrd import fixture_path
from trackrd.cli import main as cli_main
from trackrd.data_model import TrackLevel, build_rd_sample, load_students
from trackrd.montecarlo import McOptions, run_replications
from trackrd.rd_engine import EstimandSet, estimand_set, point_identify, type_share_bounds, weak_iv_guard
from trackrd.regression import ols_hc
from trackrd.structural_sim import SimConfig, generate_cohort, preset


_CONFIG = {}


@pytest.fixture(autouse=True)
def _remember_config(pytestconfig):
    _CONFIG["config"] = pytestconfig


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    capture = _CONFIG["config"].pluginmanager.getplugin("capturemanager")
    with capture.global_and_fixture_disabled():
        print("\n" + line)
    assert ok, line


def test_criterion_1_identity_suite():
    start = time.perf_counter()
    worst_pair, worst_total = 0.0, 0.0
    for k in range(100):
        rng = np.random.default_rng(1000 + k)
        s = random_sample(rng, n=int(rng.integers(60, 3000)), bandwidth=int(rng.integers(2, 8)),
                          pi=float(rng.uniform(0.05, 0.8)))
        e = estimand_set(s, force=True)
        s1, s2 = e.pair_sums
        worst_pair = max(worst_pair, abs(s1 - 1), abs(s2 - 1))
        worst_total = max(worst_total, abs(e.values().sum() - 2))
    elapsed = time.perf_counter() - start
    ok = worst_pair < 1e-9 and worst_total < 1e-9 and elapsed < 10
    report(1, "identity suite", ok,
           f"max pair-sum error {worst_pair:.1e}, max total error {worst_total:.1e}, {elapsed:.2f} s")


def test_criterion_2_regression_oracle():
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(2000 + k)
        n, p = int(rng.integers(6, 60)), int(rng.integers(1, 6))
        if n < p + 1:
            continue
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1)) * rng.uniform(0.1, 10, p - 1)])
        y = X @ rng.normal(size=p) + rng.normal(size=n) * (0.5 + np.abs(X[:, -1]))
        beta, cov = normal_equations_hc1(X, y)
        fit = ols_hc(X, y)
        worst = max(
            worst,
            np.abs(fit.coefficients - beta).max() / np.abs(beta).max(),
            np.abs(fit.robust_cov - cov).max() / np.abs(cov).max(),
        )
    report(2, "regression oracle", worst <= 1e-8, f"max relative error {worst:.1e} over 50 instances")


def test_criterion_3_bounds_oracle():
    rng = np.random.default_rng(3000)
    worst = 0.0
    for _ in range(1000):
        e1, e2 = rng.uniform(-0.2, 1.2, 2)  # clamping happens inside
        e = EstimandSet.from_values((e1, e2, 1 - e1, 1 - e2))
        b = type_share_bounds(e)
        grid = enumerate_bounds(*np.clip((e1, e2), 0, 1))
        for k in ("ah", "al", "tt", "ss"):
            worst = max(worst, abs(getattr(b, k)[0] - grid[k][0]), abs(getattr(b, k)[1] - grid[k][1]))
    worked = type_share_bounds(EstimandSet.from_values((0.52, 0.36, 0.48, 0.64)))
    expected = {"ah": (0, 0.36), "tt": (0.16, 0.52), "ss": (0, 0.36), "al": (0.12, 0.48)}
    example_ok = all(np.allclose(getattr(worked, k), v, atol=1e-12) for k, v in expected.items())
    report(3, "bounds oracle", worst <= 2e-4 and example_ok,
           f"max endpoint error {worst:.1e} over 1000 sets; worked example {'matches' if example_ok else 'differs'}")


def test_criterion_4_estimator_vs_oracle():
    start = time.perf_counter()
    opts = McOptions(diagnostics=False)
    s = run_replications(SimConfig(n=20_000), 500, base_seed=400, options=opts)
    worst = 0.0
    parts = []
    for k in ("e_h4h1", "e_h4l1", "e_l4h1", "e_l4l1"):
        q = s.quantities[k]
        z = abs(q["mean"] - q["oracle_mean"]) / q["mc_se"]
        worst = max(worst, z)
        parts.append(f"{k} {z:.3f}")
    forced = run_replications(preset("no_ah_ss", n=20_000), 500, base_seed=401, options=opts)
    tt = forced.quantities["tt_point"]
    elapsed = time.perf_counter() - start
    ok = worst <= 3 and abs(tt["bias"]) <= 0.02 and elapsed <= 300
    report(4, "estimator vs oracle", ok,
           f"|mean - oracle| / MC SE: {', '.join(parts)}; point-identified TT bias {tt['bias']:+.4f} "
           f"({tt['replications']} of 500 identified); {elapsed:.0f} s")


def test_criterion_5_validity_and_size():
    R = 1000
    s = run_replications(SimConfig(n=20_000), R, base_seed=500)
    flag = s.rejection_rates["validity_flag"]
    level = 0.05
    limit = level + 3 * math.sqrt(level * (1 - level) / flag["replications"])
    rates = {k: v["rate"] for k, v in s.rejection_rates.items() if k != "validity_flag"}
    in_band = all(0.02 <= r <= 0.08 for r in rates.values())
    ok = flag["rate"] <= limit and in_band and len(rates) == 7
    shown = ", ".join(f"{k} {v:.3f}" for k, v in rates.items())
    report(5, "validity and size", ok,
           f"validity flag rate {flag['rate']:.3f} (limit {limit:.3f}); rejection rates {shown}")


def test_criterion_6_consistency():
    opts = McOptions(diagnostics=False)
    bias = {}
    for n in (5_000, 50_000):
        s = run_replications(preset("no_ah_ss", n=n), 200, base_seed=6, options=opts)
        bias[n] = abs(s.quantities["tt_share"]["bias"])
    ok = bias[50_000] <= 0.5 * bias[5_000]
    report(6, "consistency", ok, f"|TT bias| {bias[5_000]:.4f} at n=5,000, {bias[50_000]:.4f} at n=50,000")


def test_criterion_7_calibrated_fixture():
    records = load_students(fixture_path())
    sample = build_rd_sample(records, None, TrackLevel.VMBO_GT)
    e = estimand_set(sample)
    shares = point_identify(e)
    t = e.first_stage.t
    ok = shares is not None and 0.5 <= shares.tt <= 0.9 and weak_iv_guard(e.first_stage.value, e.first_stage.se)
    tt = "not identified" if shares is None else f"{shares.tt:.3f}"
    report(7, "calibrated fixture", ok, f"point-identified TT {tt}, first-stage t {t:.1f}")


def _run_all_commands(root):
    root.mkdir()
    cohort = root / "cohort.csv"
    codes = [
        cli_main(["simulate", "--output", str(cohort), "--seed", "8", "--set", "simulate.n=6000"]),
        cli_main(["estimate", "--input", str(cohort), "--output", str(root / "estimate.json"), "--no-timestamp"]),
        cli_main(["diagnose", "--input", str(cohort), "--output", str(root / "diag"), "--no-timestamp"]),
        cli_main(["montecarlo", "--R", "4", "--seed", "8", "--output", str(root / "mc"), "--no-timestamp",
                  "--set", "simulate.n=5000"]),
        cli_main(["plot", "--input", str(cohort), "--output", str(root / "rd.svg")]),
        cli_main(["plot", "--output", str(root / "types.svg"), "--set", "plot.kind=types"]),
    ]
    files = {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return codes, files


def test_criterion_8_determinism(tmp_path, capsys):
    codes_a, files_a = _run_all_commands(tmp_path / "a")
    codes_b, files_b = _run_all_commands(tmp_path / "b")
    capsys.readouterr()
    differing = [k for k in files_a if files_a[k] != files_b.get(k)]
    ok = codes_a == codes_b == [0] * 6 and files_a.keys() == files_b.keys() and not differing
    report(8, "determinism", ok, f"{len(files_a)} output files from 5 subcommands, {len(differing)} differ")


def test_criterion_9_degenerate_dgps():
    c = generate_cohort(preset("all_tt", seed=9))
    e = estimand_set(c.rd_sample())
    dev = np.abs(e.values() - np.array([1, 0, 0, 1]))
    within = bool(np.all(dev <= 3 * e.ses() + 1e-12))
    z = generate_cohort(preset("zero_ability", seed=9))
    equal = bool(np.array_equal(z.h4_1, z.h4_0))
    report(9, "degenerate DGPs", within and equal,
           f"all-TT max |estimand - target| {dev.max():.2e}; zero-ability potential outcomes equal: {equal}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
