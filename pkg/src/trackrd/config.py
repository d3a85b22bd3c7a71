"""Run configuration: INI file with one section per concern, plus CLI overrides.

Unknown sections or keys are rejected, and values are parsed to the type
of their default.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .structural_sim import PRESETS, SimConfig


class ConfigError(ValueError):
    """Bad config file, key, value or path."""


# section -> key -> default; the simulate section is filled from SimConfig below
DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {
        "seed": 0,
        "strict": False,
        "timestamp": True,
        "force": False,
    },
    "estimate": {
        "cohort": "",
        "recommendation": "",
        "cutoff": "",
        "bandwidth": 3,
        "window": "points",
        "flavor": "HC1",
        "hybrid": "highest",
        "weak_threshold": 3.0,
        "zero_alpha": 0.05,
        "zero_max_abs": 0.25,
        "level": 0.05,
    },
    "diagnose": {
        "covariates": "",
        "placebo": "progress_y2,progress_y3,progress_y4",
        "question_counts": "",
        "density_window": 5,
    },
    "plot": {
        "kind": "rd",
        "outcome": "H1",
        "range": 20,
        "poly_order": 4,
        "level": 0.95,
    },
    "simulate": {"preset": "default"},
    "montecarlo": {
        "R": 100,
        "jobs": 1,
        "diagnostics": True,
    },
}
for _f in fields(SimConfig):
    if _f.name != "seed":
        DEFAULTS["simulate"][_f.name] = _f.default

DESCRIPTIONS = {
    ("run", "seed"): "simulation seed and Monte Carlo base seed",
    ("run", "timestamp"): "add a generated_at field to JSON reports",
    ("estimate", "cohort"): "restrict to one cohort (empty: pool cohorts)",
    ("estimate", "recommendation"): "restrict to one recommendation (empty: every one with a cutoff)",
    ("estimate", "cutoff"): "explicit cutoff score overriding the cutoff table",
    ("estimate", "window"): "points (c-h..c+h-1) or distance (c-h..c+h)",
    ("estimate", "hybrid"): "map mixed-track enrollment to its highest or lowest component",
    ("diagnose", "covariates"): "balancing covariates (empty: every non-placebo covariate)",
    ("diagnose", "question_counts"): "CSV of score,questions for the density adjustment",
    ("plot", "kind"): "rd, density or types",
    ("simulate", "preset"): f"one of {', '.join(PRESETS)}; explicit keys override it",
}


def _parse(section: str, key: str, text: str, default: Any) -> Any:
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None
    return text


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: dict(v) for s, v in DEFAULTS.items()})
    explicit: set = field(default_factory=set)  # (section, key) pairs set by file or flags
    source: Optional[Path] = None

    def __getitem__(self, key: tuple[str, str]) -> Any:
        section, name = key
        return self.values[section][name]

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        default = DEFAULTS[section][key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse(section, key, value, default)
        self.values[section][key] = value
        self.explicit.add((section, key))

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case (R)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, text in parser.items(section):
                try:
                    cfg.set(section, key, text)
                except ConfigError as exc:
                    raise ConfigError(f"{path}: {exc}") from None
        cfg.source = path
        return cfg

    def sim_config(self) -> SimConfig:
        """Preset values, then explicitly set simulate keys, then the run seed."""
        sim = self.values["simulate"]
        name = sim["preset"]
        if name not in PRESETS:
            raise ConfigError(f"[simulate] preset: unknown preset {name!r}")
        params = dict(PRESETS[name])
        params.update({k: v for k, v in sim.items() if k != "preset" and ("simulate", k) in self.explicit})
        if ("run", "seed") in self.explicit or "seed" not in params:
            params["seed"] = self["run", "seed"]
        try:
            return SimConfig(**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[simulate] {exc}") from None

    def explicit_cutoff(self) -> Optional[int]:
        text = str(self["estimate", "cutoff"]).strip()
        if not text:
            return None
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"[estimate] cutoff: not an integer: {text!r}") from None

    def as_dict(self) -> dict:
        out = {}
        for section, vals in self.values.items():
            out[section] = {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in vals.items()}
        return out


def describe_keys() -> str:
    """Every config key with its default, for ``--help``."""
    lines = ["config keys ([section] key = default):"]
    for section, vals in DEFAULTS.items():
        lines.append(f"  [{section}]")
        for key, default in vals.items():
            shown = str(default).lower() if isinstance(default, bool) else default
            note = DESCRIPTIONS.get((section, key))
            lines.append(f"    {key} = {shown}" + (f"    ; {note}" if note else ""))
    return "\n".join(lines)
