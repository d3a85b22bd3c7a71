"""Fuzzy regression-discontinuity decomposition of compliers into student types."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def fixture_path() -> Path:
    """Packaged synthetic cohort (``preset = fixture``) used by examples and tests."""
    return Path(str(resources.files(__name__) / "data" / "fixture_cohort.csv"))
