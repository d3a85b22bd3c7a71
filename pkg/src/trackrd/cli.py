"""Command-line interface: simulate, estimate, diagnose, montecarlo, plot.

Exit codes: 0 success, 1 unexpected error, 2 configuration error, 3 data
error, 4 weak first stage (no estimable cutoff), 5 validity check failed
under ``--strict``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, describe_keys
from .data_model import CutoffTable, DataError, TrackLevel, build_rd_sample, load_students, write_students
from .diagnostics import balancing_test, density_profile, placebo_rd, rd_plot_data, read_question_counts
from .montecarlo import McOptions, run_replications, write_replications_csv
from .rd_engine import (
    ESTIMANDS,
    WeakFirstStageError,
    ZeroRule,
    estimand_set,
    point_identify,
    type_share_bounds,
    validity_check,
)
from .regression import RegressionError

SCHEMA_VERSION = "1.0"

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_WEAK, EXIT_INVALID = 0, 1, 2, 3, 4, 5


class WeakRefusal(Exception):
    pass


class StrictFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, NaN to null, infinities to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def _write_json(payload: dict, path: Optional[Path], cfg: RunConfig, command: str) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "version": __version__}
    if cfg["run", "timestamp"]:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    doc.update(payload)
    text = json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n"
    if path is not None:
        path.write_text(text, encoding="utf-8")
    return text


def _require_input(args) -> Path:
    if args.input is None:
        raise ConfigError("--input is required for this command")
    path = Path(args.input)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    return path


def _output_dir(args, default: str) -> Path:
    out = Path(args.output or default)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output must be a directory: {out}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _output_file(args) -> Optional[Path]:
    if args.output is None:
        return None
    out = Path(args.output)
    if not out.parent.exists():
        raise ConfigError(f"output directory does not exist: {out.parent}")
    return out


def _groups(records, cfg: RunConfig):
    """(recommendation, cohort, cutoff or None) for every analysis group."""
    rec_text = cfg["estimate", "recommendation"].strip()
    cohort = cfg["estimate", "cohort"].strip() or None
    cutoff = cfg.explicit_cutoff()
    try:
        recs = [TrackLevel.parse(rec_text)] if rec_text else sorted({s.initial_recommendation for s in records})
    except ValueError as exc:
        raise ConfigError(f"[estimate] recommendation: {exc}") from None
    table = CutoffTable()
    groups = []
    for rec in recs:
        if cutoff is None and rec.next_single() is None:
            continue
        groups.append((rec, cohort, cutoff))
    if not groups:
        raise DataError("no recommendation group with a cutoff to analyse")
    return groups, table


def _sample(records, rec, cohort, cutoff, table, bandwidth, window, covariates=None):
    if cutoff is not None:
        table = _FixedCutoff(cutoff)
    return build_rd_sample(records, cohort, rec, table, bandwidth, window=window, covariates=covariates)


class _FixedCutoff(CutoffTable):
    """Same cutoff for every cohort and recommendation."""

    def __init__(self, cutoff: int):
        self._cutoff = cutoff
        super().__init__({("*", TrackLevel.VWO): cutoff})

    def cutoff_for(self, cohort, recommendation) -> int:
        return self._cutoff


def _load(path: Path, cfg: RunConfig):
    return load_students(path, hybrid=cfg["estimate", "hybrid"])


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _output_file(args)
    if out is None:
        raise ConfigError("--output is required for simulate")
    sim = cfg.sim_config()
    from .structural_sim import generate_cohort

    cohort = generate_cohort(sim)
    write_students(cohort.to_records(), out)
    print(f"wrote {len(cohort)} students to {out} (config {sim.digest()})")
    return EXIT_OK


def estimate_group(sample, cfg: RunConfig, force: bool) -> dict:
    e = estimand_set(
        sample,
        weak_threshold=cfg["estimate", "weak_threshold"],
        force=force,
        flavor=cfg["estimate", "flavor"],
    )
    rule = ZeroRule(cfg["estimate", "zero_alpha"], cfg["estimate", "zero_max_abs"])
    bounds = type_share_bounds(e)
    shares = point_identify(e, rule)
    validity = validity_check(e, cfg["estimate", "level"])
    s1, s2 = e.pair_sums
    tt = shares if shares is not None else bounds.midpoint()
    return {
        "first_stage": {"pi": e.first_stage.value, "se": e.first_stage.se, "t": e.first_stage.t},
        "estimands": {k: {"value": getattr(e, k).value, "se": getattr(e, k).se} for k in ESTIMANDS},
        "pair_sums": {"h4h1+l4h1": s1, "h4l1+l4l1": s2},
        "identity_check": [f"{s1:.6f}", f"{s2:.6f}"],
        "late": e.late,
        "bounds": bounds.as_dict(),
        "point_identified": None if shares is None else shares.as_dict(),
        "tt_share": {"value": tt.tt, "method": tt.method},
        "validity": validity.as_dict(),
    }


def cmd_estimate(cfg: RunConfig, args) -> int:
    path = _require_input(args)
    out = _output_file(args)
    records = _load(path, cfg)
    groups, table = _groups(records, cfg)
    results, weak, invalid = [], 0, 0
    for rec, cohort, cutoff in groups:
        entry = {"recommendation": rec.label, "cohort": cohort}
        try:
            sample = _sample(records, rec, cohort, cutoff, table, cfg["estimate", "bandwidth"], cfg["estimate", "window"], [])
        except (ValueError, KeyError) as exc:
            entry.update(status="no_sample", message=str(exc).strip("'\""))
            results.append(entry)
            continue
        entry.update(cutoff=sample.cutoff, bandwidth=sample.bandwidth, n=sample.n, attrition=sample.attrition)
        try:
            entry.update(estimate_group(sample, cfg, cfg["run", "force"]))
            entry["status"] = "ok" if entry["validity"]["passed"] else "validity_flagged"
            invalid += not entry["validity"]["passed"]
        except WeakFirstStageError as exc:
            weak += 1
            entry.update(status="weak_first_stage", first_stage={"pi": exc.pi, "se": exc.se}, message=str(exc))
        except RegressionError as exc:
            entry.update(status="no_sample", message=str(exc))
        results.append(entry)

    payload = {"input": path.name, "config": cfg.as_dict()["estimate"], "results": results}
    text = _write_json(payload, out, cfg, "estimate")
    if out is None:
        sys.stdout.write(text)
    else:
        for r in results:
            print(_estimate_line(r))
    estimated = sum(r["status"] in ("ok", "validity_flagged") for r in results)
    if estimated == 0:
        if weak:
            raise WeakRefusal("every group failed the first-stage guard (use --force to estimate anyway)")
        raise DataError("no group could be estimated")
    if cfg["run", "strict"] and invalid:
        raise StrictFailure(f"validity check flagged {invalid} group(s)")
    return EXIT_OK


def _estimate_line(r: dict) -> str:
    head = f"{r['recommendation']}"
    if "cutoff" in r:
        head += f" cutoff {r['cutoff']}"
    if r["status"] not in ("ok", "validity_flagged"):
        return f"{head}: {r['status']}"
    fs = r["first_stage"]
    tt = r["tt_share"]
    return (
        f"{head}: pi {fs['pi']:.4f} (se {fs['se']:.4f})  pair sums {r['identity_check'][0]} {r['identity_check'][1]}"
        f"  TT {tt['value']:.4f} [{tt['method']}]  validity {'ok' if r['validity']['passed'] else 'FLAGGED'}"
    )


def cmd_diagnose(cfg: RunConfig, args) -> int:
    from .plotting import plot_density, plot_rd, write_plot_csv

    path = _require_input(args)
    outdir = _output_dir(args, "diagnostics")
    qc_path = cfg["diagnose", "question_counts"].strip()
    if qc_path and not Path(qc_path).is_file():
        raise ConfigError(f"[diagnose] question_counts: file not found: {qc_path}")
    qc = read_question_counts(qc_path) if qc_path else None
    records = _load(path, cfg)
    groups, table = _groups(records, cfg)
    level = cfg["estimate", "level"]
    flavor = cfg["estimate", "flavor"]
    placebo = [c.strip() for c in cfg["diagnose", "placebo"].split(",") if c.strip()]
    covs_cfg = [c.strip() for c in cfg["diagnose", "covariates"].split(",") if c.strip()]
    known = sorted(set().union(*(s.covariates.keys() for s in records))) if records else []
    for name in placebo + covs_cfg:
        if name not in known:
            raise DataError(f"column {name!r} not in input", path=path)
    balance = covs_cfg or [c for c in known if c not in placebo]

    results = []
    for rec, cohort, cutoff in groups:
        slug = rec.label.replace("/", "-")
        entry = {"recommendation": rec.label, "cohort": cohort}
        try:
            sample = _sample(records, rec, cohort, cutoff, table, cfg["estimate", "bandwidth"], cfg["estimate", "window"])
        except (ValueError, KeyError) as exc:
            entry.update(status="no_sample", message=str(exc).strip("'\""))
            results.append(entry)
            continue
        entry.update(status="ok", cutoff=sample.cutoff, n=sample.n)
        entry["balancing"] = [_safe(balancing_test, sample, c, level, flavor) for c in balance]
        entry["placebo"] = [_safe(placebo_rd, sample, c, level, flavor) for c in placebo]

        # density on scores re-centred to a common cutoff
        chosen = [s for s in records if s.initial_recommendation is rec and (cohort is None or s.cohort == cohort)]
        ref = sample.cutoff if sample.cutoff is not None else _cutoff_for(chosen[0], rec, cutoff, table)
        shifted = [s.score - _cutoff_for(s, rec, cutoff, table) + ref for s in chosen]
        shifted = [min(max(x, 501), 550) for x in shifted]
        try:
            dens = density_profile(shifted, ref, qc, cfg["diagnose", "density_window"])
            entry["density"] = {k: v for k, v in dens.as_dict().items() if k != "counts"} | {"t": dens.t}
            plot_density(dens, outdir / f"density_{slug}.svg", span=cfg["plot", "range"])
        except ValueError as exc:
            entry["density"] = {"error": str(exc)}

        plots = []
        for outcome in ("H1", "H4"):
            try:
                wide = _sample(records, rec, cohort, cutoff, table, cfg["plot", "range"], "distance", [])
                data = rd_plot_data(wide, outcome, cfg["plot", "range"], cfg["plot", "poly_order"], cfg["plot", "level"])
            except (ValueError, RegressionError) as exc:
                plots.append({"outcome": outcome, "error": str(exc)})
                continue
            stem = f"rd_{slug}_{outcome}"
            plot_rd(data, outdir / f"{stem}.svg")
            write_plot_csv(data, outdir / f"{stem}.csv")
            plots.append({"outcome": outcome, "jump": data.jump, "svg": f"{stem}.svg", "csv": f"{stem}.csv"})
        entry["rd_plots"] = plots
        results.append(entry)

    _write_json({"input": path.name, "results": results}, outdir / "diagnostics.json", cfg, "diagnose")
    for r in results:
        if r["status"] != "ok":
            print(f"{r['recommendation']}: {r['status']}")
            continue
        fails = [d["name"] for d in r["balancing"] + r["placebo"] if d.get("passed") is False]
        print(f"{r['recommendation']} cutoff {r['cutoff']}: {len(r['balancing'])} balancing, "
              f"{len(r['placebo'])} placebo tests, rejected: {', '.join(fails) or 'none'}")
    print(f"wrote {outdir / 'diagnostics.json'}")
    return EXIT_OK


def _cutoff_for(student, rec, cutoff, table) -> int:
    return cutoff if cutoff is not None else table.cutoff_for(student.cohort, rec)


def _safe(test, sample, column, level, flavor) -> dict:
    try:
        return test(sample, column, level, flavor).as_dict()
    except RegressionError as exc:
        return {"name": column, "error": str(exc)}


def cmd_montecarlo(cfg: RunConfig, args) -> int:
    outdir = _output_dir(args, "montecarlo")
    sim = cfg.sim_config()
    R = cfg["montecarlo", "R"]
    if R < 1:
        raise ConfigError("[montecarlo] R must be at least 1")
    options = McOptions(
        bandwidth=cfg["estimate", "bandwidth"],
        window=cfg["estimate", "window"],
        weak_threshold=cfg["estimate", "weak_threshold"],
        zero_alpha=cfg["estimate", "zero_alpha"],
        zero_max_abs=cfg["estimate", "zero_max_abs"],
        level=cfg["estimate", "level"],
        flavor=cfg["estimate", "flavor"],
        diagnostics=cfg["montecarlo", "diagnostics"],
    )
    try:
        summary = run_replications(sim, R, cfg["run", "seed"], options, n_jobs=cfg["montecarlo", "jobs"])
    except RuntimeError as exc:
        raise WeakRefusal(str(exc)) from None
    payload = {"simulation": sim.as_dict(), "options": options.__dict__, "summary": summary.as_dict()}
    _write_json(payload, outdir / "summary.json", cfg, "montecarlo")
    write_replications_csv(summary, outdir / "replications.csv")
    q = summary.quantities
    print(f"R={R} n={sim.n} weak={summary.weak_replications} max identity error {summary.max_identity_error:.2e}")
    for name in ("pi", "e_h4h1", "e_h4l1", "e_l4h1", "e_l4l1", "tt_share"):
        s = q[name]
        print(f"  {name:8s} mean {s['mean']:.4f}  bias {s.get('bias', math.nan):+.4f}  mc se {s['mc_se']:.4f}")
    print(f"wrote {outdir / 'summary.json'} and {outdir / 'replications.csv'}")
    return EXIT_OK


def cmd_plot(cfg: RunConfig, args) -> int:
    from .plotting import plot_density, plot_rd, plot_type_regions, write_plot_csv

    out = _output_file(args)
    if out is None:
        raise ConfigError("--output is required for plot")
    kind = cfg["plot", "kind"]
    if kind == "types":
        plot_type_regions(cfg.sim_config().params, out)
        print(f"wrote {out}")
        return EXIT_OK
    if kind not in ("rd", "density"):
        raise ConfigError(f"[plot] kind must be rd, density or types, got {kind!r}")
    path = _require_input(args)
    records = _load(path, cfg)
    groups, table = _groups(records, cfg)
    rec, cohort, cutoff = groups[0]
    rng = cfg["plot", "range"]
    try:
        sample = _sample(records, rec, cohort, cutoff, table, rng, "distance", [])
    except (ValueError, KeyError) as exc:
        raise DataError(str(exc), path=path) from None
    if kind == "density":
        chosen = [s.score for s in records if s.initial_recommendation is rec and (cohort is None or s.cohort == cohort)]
        qc_path = cfg["diagnose", "question_counts"].strip()
        dens = density_profile(chosen, sample.cutoff, read_question_counts(qc_path) if qc_path else None,
                               cfg["diagnose", "density_window"])
        plot_density(dens, out, span=rng)
        print(f"wrote {out}")
        return EXIT_OK
    try:
        data = rd_plot_data(sample, cfg["plot", "outcome"], rng, cfg["plot", "poly_order"], cfg["plot", "level"])
    except KeyError as exc:
        raise DataError(f"unknown outcome {cfg['plot', 'outcome']!r}", path=path) from exc
    plot_rd(data, out)
    csv_path = write_plot_csv(data, out.with_suffix(".csv"))
    print(f"{rec.label}: jump at cutoff {data.jump:.4f}; wrote {out} and {csv_path}")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic cohort CSV"),
    "estimate": (cmd_estimate, "first stage, type-share estimands, bounds and validity (JSON)"),
    "diagnose": (cmd_diagnose, "balancing, placebo and density checks plus RD plots"),
    "montecarlo": (cmd_montecarlo, "replicate simulate + estimate and summarize against the truth"),
    "plot": (cmd_plot, "one RD plot (SVG + CSV), density plot or type-region map"),
}


def build_parser() -> argparse.ArgumentParser:
    epilog = describe_keys() + (
        "\n\nexit codes: 0 ok, 1 unexpected error, 2 config error, 3 data error,"
        "\n            4 weak first stage, 5 validity check failed (--strict)"
    )
    parser = argparse.ArgumentParser(
        prog="trackrd",
        description="Decompose track-placement compliers with a fuzzy regression discontinuity.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--input", help="student CSV")
    common.add_argument("--output", help="output file or directory")
    common.add_argument("--cutoff", type=int, help="explicit cutoff score ([estimate] cutoff)")
    common.add_argument("--bandwidth", type=int, help="score points per side ([estimate] bandwidth)")
    common.add_argument("--seed", type=int, help="[run] seed")
    common.add_argument("--R", type=int, dest="R", help="[montecarlo] R")
    common.add_argument("--preset", help="[simulate] preset")
    common.add_argument("--strict", action="store_true", default=None, help="exit 5 when the validity check flags")
    common.add_argument("--no-timestamp", action="store_true", help="omit generated_at from JSON")
    common.add_argument("--force", action="store_true", default=None, help="estimate despite a weak first stage")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any key")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def _apply_flags(cfg: RunConfig, args) -> None:
    flags = {
        ("estimate", "cutoff"): None if args.cutoff is None else str(args.cutoff),
        ("estimate", "bandwidth"): args.bandwidth,
        ("run", "seed"): args.seed,
        ("montecarlo", "R"): args.R,
        ("simulate", "preset"): args.preset,
        ("run", "strict"): args.strict,
        ("run", "force"): args.force,
        ("run", "timestamp"): False if args.no_timestamp else None,
    }
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(section.strip(), name.strip(), value)
    for (section, key), value in flags.items():
        if value is not None:
            cfg.set(section, key, value)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        _apply_flags(cfg, args)
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except WeakRefusal as exc:
        print(f"weak first stage: {exc}", file=sys.stderr)
        return EXIT_WEAK
    except StrictFailure as exc:
        print(f"strict: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
