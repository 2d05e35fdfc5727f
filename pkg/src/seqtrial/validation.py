"""Small argument checks shared by the estimator and simulation front ends."""

from __future__ import annotations

import math
from numbers import Integral

from .exceptions import UnsupportedDesignError


def check_estimation_design(design) -> None:
    """Reject designs the closed-form estimators do not cover.

    Raises:
        UnsupportedDesignError: unless ``design`` has exactly two looks and
            no futility bounds.
    """
    if design.lower_z is not None:
        raise UnsupportedDesignError(
            "estimators support efficacy-only two-stage designs (futility bounds given)"
        )
    if design.looks != 2:
        raise UnsupportedDesignError(
            f"estimators support efficacy-only two-stage designs (got {design.looks} looks)"
        )


def check_probability(value: float, name: str, *, open_interval: bool = True) -> float:
    value = float(value)
    ok = 0.0 < value < 1.0 if open_interval else 0.0 <= value <= 1.0
    if not ok:
        raise ValueError(f"{name} must lie in {'(0, 1)' if open_interval else '[0, 1]'}, got {value}")
    return value


def check_count(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_seed(seed) -> int:
    if seed is None:
        raise ValueError("a seed is required for randomised computations")
    return check_count(seed, "seed", minimum=0)


def check_finite(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value
