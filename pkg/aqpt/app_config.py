"""
Configuration parameters for the whole application.

Every value can be overridden through an environment variable of the same
name. Invalid values silently fall back to the built-in default.
"""

import os


def is_positive_int(value: str) -> bool:
    """Check if the provided string holds a strictly positive integer."""
    try:
        return int(value) > 0
    except (TypeError, ValueError):
        return False


def is_unit_fraction(value: str) -> bool:
    """Check if the provided string holds a real number in (0, 1]."""
    try:
        return 0.0 < float(value) <= 1.0
    except (TypeError, ValueError):
        return False


def is_positive_float(value: str) -> bool:
    """Check if the provided string holds a strictly positive real number."""
    try:
        return float(value) > 0.0
    except (TypeError, ValueError):
        return False


def _read_int(name: str, default: int) -> int:
    try:
        raw = os.environ[name]
        return int(raw) if is_positive_int(raw) else default
    except KeyError:
        return default


def _read_float(name: str, default: float, check=is_positive_float) -> float:
    try:
        raw = os.environ[name]
        return float(raw) if check(raw) else default
    except KeyError:
        return default


def _read_flag(name: str, default: bool) -> bool:
    try:
        raw = os.environ[name].strip().lower()
    except KeyError:
        return default
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    return default


# Sample counts (lossy processes need ten times more samples)
AQPT_PARTICLES_TP = _read_int("AQPT_PARTICLES_TP", 1000)
AQPT_PARTICLES_LOSSY = _read_int("AQPT_PARTICLES_LOSSY", 10000)

# Metropolis-Hastings rejuvenation
AQPT_MH_STEPS = _read_int("AQPT_MH_STEPS", 20)
AQPT_MH_SCALE = _read_float("AQPT_MH_SCALE", 0.5)
AQPT_RESAMPLE_THRESHOLD = _read_float(
    "AQPT_RESAMPLE_THRESHOLD", 0.1, check=is_unit_fraction
)

# Measurement planning
AQPT_POOL_SIZE = _read_int("AQPT_POOL_SIZE", 100)
AQPT_BMIN = _read_int("AQPT_BMIN", 50)
AQPT_ETA = _read_float("AQPT_ETA", 0.1, check=is_unit_fraction)

# Diagnostics and apparatus
AQPT_CHECKPOINTS_PER_DECADE = _read_int("AQPT_CHECKPOINTS_PER_DECADE", 20)
AQPT_INTENSITY = _read_float("AQPT_INTENSITY", 1.0e4)

AQPT_LOG_ENABLED = _read_flag("AQPT_LOG_ENABLED", True)
