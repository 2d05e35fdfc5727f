"""Point estimators after a two-stage group sequential trial with efficacy stopping.

All closed forms assume the canonical normal model: the stage-1 estimate has
variance ``1/I1``, the overall estimate ``1/I2``, and the trial stops at the
interim when ``Z1 = theta1 * sqrt(I1) >= e``. The array-level functions
(``*_formula``, :func:`evaluate_estimators`) broadcast over numpy inputs and
are what the simulation module calls; :func:`estimate_all` and
:class:`TwoStageEstimator` wrap them for a single observed trial.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .design import TrialDesign
from .exceptions import (
    BracketError,
    SeqTrialError,
    UnsupportedPerspectiveError,
    ValidationError,
)
from .numerics import (
    bvn_cdf,
    find_root_bracketed,
    find_roots_vectorized,
    solve_fixed_point,
)
from .trial_data import (
    BinaryTwoArmData,
    StageSummary,
    cumulative_summary,
    increment_summary,
)
from .validation import check_estimation_design

__all__ = [
    "ESTIMATORS",
    "EstimateEntry",
    "EstimateSet",
    "TwoStageEstimator",
    "TwoStageOutcome",
    "cbc_mle",
    "conditional_bias",
    "estimate_all",
    "evaluate_estimators",
    "mue",
    "pvalue_stagewise",
    "ubc_mle",
    "ubc_mle_single_step",
    "umvcue",
    "umvue",
    "unconditional_bias",
]

# Table order; perspective and whether the estimator is a naive MLE.
ESTIMATORS: dict[str, tuple[str, bool]] = {
    "mle_overall": ("unconditional", True),
    "mle_stage1": ("unconditional", True),
    "mue": ("unconditional", False),
    "umvue": ("unconditional", False),
    "ubc_mle": ("unconditional", False),
    "ubc_mle_single_step": ("unconditional", False),
    "mle_stage2": ("conditional", True),
    "umvcue": ("conditional", False),
    "cbc_mle": ("conditional", False),
}
CONDITIONAL_ONLY = frozenset(k for k, (p, _) in ESTIMATORS.items() if p == "conditional")

_LOG_INV_SQRT_2PI = -0.5 * math.log(2.0 * math.pi)


def _mills(x):
    """phi(x) / Phi(x), stable far into the left tail."""
    x = np.asarray(x, dtype=float)
    return np.exp(_LOG_INV_SQRT_2PI - 0.5 * x * x - special.log_ndtr(x))


# ---------------------------------------------------------------------------
# Array-level formulas


def unconditional_bias(theta, info1, info2, e):
    """Bias of the overall MLE averaged over both stopping stages (Emerson)."""
    theta, info1, info2, e = map(np.asarray, (theta, info1, info2, e))
    s1 = np.sqrt(info1)
    coef = (info2 - info1) / (info2 * s1)
    with np.errstate(under="ignore"):
        return coef * np.exp(_LOG_INV_SQRT_2PI - 0.5 * (e - theta * s1) ** 2)


def conditional_bias(theta, info1, info2, e):
    """Bias of the overall MLE given continuation to stage 2; always negative."""
    theta, info1, info2, e = map(np.asarray, (theta, info1, info2, e))
    s1 = np.sqrt(info1)
    with np.errstate(under="ignore"):
        return -s1 / info2 * _mills(e - theta * s1)


def umvue_formula(theta_obs, info1, info2, e):
    """Rao-Blackwellised stage-1 MLE for a trial that continued to stage 2."""
    theta_obs, info1, info2, e = map(np.asarray, (theta_obs, info1, info2, e))
    z2 = theta_obs * np.sqrt(info2)
    arg = (e - z2 * np.sqrt(info1 / info2)) / np.sqrt((info2 - info1) / info2)
    scale = np.sqrt(info2 - info1) / np.sqrt(info1 * info2)
    with np.errstate(under="ignore"):
        return theta_obs - scale * _mills(arg)


def umvcue_formula(theta_obs, info1, info2, e):
    """Rao-Blackwellised stage-2 increment MLE given continuation to stage 2.

    Equals ``theta_obs + w1 * phi(w2 (c - theta_obs)) / Phi(w2 (c - theta_obs))``
    with ``c = e / sqrt(I1)`` the interim boundary on the estimate scale.
    """
    theta_obs, info1, info2, e = map(np.asarray, (theta_obs, info1, info2, e))
    d = info2 - info1
    root = np.sqrt(1.0 / info1 + 1.0 / d)
    w1 = 1.0 / (d * root)
    w2 = info1 * root
    c = e / np.sqrt(info1)
    with np.errstate(under="ignore"):
        return theta_obs + w1 * _mills(w2 * (c - theta_obs))


def pvalue_formula(theta, z_obs, stage, info1, info2, e):
    """Stagewise-ordering p-value function P(theta), vectorised.

    For trials stopped at stage 1, ``P = Pr(Z1 >= z_obs)``. For trials that
    continued, ``P = Pr(Z1 >= e) + Pr(Z1 < e, Z2 >= z_obs)``.
    """
    theta, z_obs, stage, info1, info2, e = np.broadcast_arrays(
        *map(lambda v: np.asarray(v, dtype=float), (theta, z_obs, stage, info1, info2, e))
    )
    s1, s2 = np.sqrt(info1), np.sqrt(info2)
    out = np.empty(theta.shape)
    one = stage == 1
    out[one] = special.ndtr(theta[one] * s1[one] - z_obs[one])
    two = ~one
    if np.any(two):
        rho = np.sqrt(info1[two] / info2[two])
        out[two] = 1.0 - bvn_cdf(
            e[two] - theta[two] * s1[two], z_obs[two] - theta[two] * s2[two], rho
        )
    return out


def _ubc_roots(theta_obs, info1, info2, e, tol=1e-12):
    # theta + bias(theta) - theta_obs is increasing: |d bias / d theta| < 1.
    def f(x, i):
        return x + unconditional_bias(x, info1[i], info2[i], e[i]) - theta_obs[i]

    half = 5.0 * np.maximum(np.abs(unconditional_bias(theta_obs, info1, info2, e)),
                            1.0 / np.sqrt(info2))
    return find_roots_vectorized(f, theta_obs - half, theta_obs + half, tol=tol)


def _cbc_roots(theta_obs, info1, info2, e, tol=1e-12):
    def f(x, i):
        return x + conditional_bias(x, info1[i], info2[i], e[i]) - theta_obs[i]

    half = 5.0 * np.maximum(np.abs(conditional_bias(theta_obs, info1, info2, e)),
                            1.0 / np.sqrt(info2))
    return find_roots_vectorized(f, theta_obs - half, theta_obs + half, tol=tol)


def _mue_roots(z_obs, stage, info1, info2, e, theta_obs, tol=1e-12):
    def f(x, i):
        return pvalue_formula(x, z_obs[i], stage[i], info1[i], info2[i], e[i]) - 0.5

    half = 10.0 / np.sqrt(info1)
    return find_roots_vectorized(f, theta_obs - half, theta_obs + half, tol=tol)


def evaluate_estimators(
    stage,
    theta1,
    theta_overall,
    theta2_inc,
    info1,
    info2,
    e,
    estimators: Iterable[str] = ESTIMATORS,
) -> dict[str, np.ndarray]:
    """Evaluate estimators on arrays of simulated or observed trials.

    Conditional estimators are NaN for trials that stopped at stage 1; on
    those trials the unconditional ones reduce to stage-1 quantities (the
    Whitehead correction is still solved, with ``theta_obs = theta1``).
    """
    stage = np.asarray(stage)
    theta1, theta_overall, theta2_inc, info1, info2, e = (
        np.asarray(v, dtype=float) for v in (theta1, theta_overall, theta2_inc, info1, info2, e)
    )
    theta1, theta_overall, theta2_inc, info1, info2, e, stage = (
        np.atleast_1d(v).copy() for v in np.broadcast_arrays(
            theta1, theta_overall, theta2_inc, info1, info2, e, stage)
    )
    two = stage == 2
    obs = np.where(two, theta_overall, theta1)
    out: dict[str, np.ndarray] = {}
    for name in estimators:
        if name not in ESTIMATORS:
            raise KeyError(f"unknown estimator {name!r}")
        if name == "mle_overall":
            val = obs.copy()
        elif name == "mle_stage1":
            val = theta1.copy()
        elif name == "mle_stage2":
            val = np.where(two, theta2_inc, np.nan)
        elif name == "umvue":
            val = np.where(two, umvue_formula(obs, info1, info2, e), theta1)
        elif name == "umvcue":
            val = np.where(two, umvcue_formula(obs, info1, info2, e), np.nan)
        elif name == "ubc_mle":
            val = _ubc_roots(obs, info1, info2, e)
        elif name == "ubc_mle_single_step":
            val = obs - unconditional_bias(obs, info1, info2, e)
        elif name == "cbc_mle":
            val = np.full(obs.shape, np.nan)
            if two.any():
                val[two] = _cbc_roots(obs[two], info1[two], info2[two], e[two])
        else:  # mue
            val = theta1.copy()
            if two.any():
                z2 = obs[two] * np.sqrt(info2[two])
                val[two] = _mue_roots(z2, stage[two], info1[two], info2[two], e[two], obs[two])
        out[name] = val
    return out


# ---------------------------------------------------------------------------
# Single observed trial


@dataclass(frozen=True)
class TwoStageOutcome:
    """A realised two-stage trial on the normal-approximation scale.

    ``design.info`` holds the observed information levels ``(I1, I2)``. For
    trials that stopped at stage 1, ``I2`` is the planned final information.
    """

    design: TrialDesign
    stopped_stage: int
    theta_hat_overall: float
    theta_hat_stage1: float
    theta_hat_stage2_increment: float | None
    wald_z_final: float
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        check_estimation_design(self.design)
        if self.stopped_stage not in (1, 2):
            raise ValidationError([f"stopped_stage must be 1 or 2, got {self.stopped_stage}"])
        notes = list(self.warnings)
        if self.stopped_stage == 2:
            if self.theta_hat_stage2_increment is None:
                raise ValidationError(["stage-2 increment estimate required when stopped_stage=2"])
            if abs(math.sqrt(self.info2) * self.theta_hat_overall - self.wald_z_final) > 1e-9:
                raise ValidationError(["wald_z_final inconsistent with theta_hat_overall and I2"])
            z1 = self.theta_hat_stage1 * math.sqrt(self.info1)
            if z1 >= self.e:
                msg = (f"interim Wald statistic {z1:.4f} is at or above the efficacy boundary "
                       f"{self.e:.4f} but the trial continued; estimates computed anyway")
                if msg not in notes:
                    notes.append(msg)
                    warnings.warn(msg, stacklevel=3)
        else:
            if abs(math.sqrt(self.info1) * self.theta_hat_stage1 - self.wald_z_final) > 1e-9:
                raise ValidationError(["wald_z_final inconsistent with theta_hat_stage1 and I1"])
        if self.design.sided == 2:
            msg = "two-sided design: estimators use the upper efficacy boundary only"
            if msg not in notes:
                notes.append(msg)
        object.__setattr__(self, "warnings", tuple(notes))

    @property
    def info1(self) -> float:
        return self.design.info[0]

    @property
    def info2(self) -> float:
        return self.design.info[1]

    @property
    def e(self) -> float:
        return self.design.upper_z[0]

    @property
    def theta_obs(self) -> float:
        return self.theta_hat_overall if self.stopped_stage == 2 else self.theta_hat_stage1

    @property
    def boundary_estimate_scale(self) -> float:
        """Interim efficacy boundary expressed as a difference estimate."""
        return self.e / math.sqrt(self.info1)

    @classmethod
    def from_summaries(cls, summaries: Sequence[StageSummary], design: TrialDesign,
                       theta_hat_stage2_increment: float | None = None) -> "TwoStageOutcome":
        """Assemble from cumulative stage summaries (one or two of them).

        ``design`` supplies the boundary; when only one stage was observed its
        planned information ratio ``info[1] / info[0]`` fixes ``I2``.
        """
        check_estimation_design(design)
        s1 = summaries[0]
        if len(summaries) == 1:
            info2 = s1.information * design.info[1] / design.info[0]
            return cls(design.with_info((s1.information, info2)), 1, s1.theta_hat,
                       s1.theta_hat, None, s1.wald_z)
        if len(summaries) != 2:
            raise ValidationError([f"two-stage estimation needs 1 or 2 stages, got {len(summaries)}"])
        s2 = summaries[1]
        if theta_hat_stage2_increment is None:
            theta_hat_stage2_increment = (
                (s2.information * s2.theta_hat - s1.information * s1.theta_hat)
                / (s2.information - s1.information)
            )
        return cls(design.with_info((s1.information, s2.information)), 2, s2.theta_hat,
                   s1.theta_hat, theta_hat_stage2_increment, s2.wald_z)

    @classmethod
    def from_data(cls, data: BinaryTwoArmData, design: TrialDesign) -> "TwoStageOutcome":
        summaries = [cumulative_summary(data, k) for k in range(1, data.n_stages + 1)]
        inc = increment_summary(data, 2).theta_hat if data.n_stages == 2 else None
        return cls.from_summaries(summaries, design, inc)

    def _args(self):
        return self.theta_obs, self.info1, self.info2, self.e


def _float(x) -> float:
    return float(np.asarray(x))


def ubc_mle_detail(outcome: TwoStageOutcome):
    theta_obs, i1, i2, e = outcome._args()

    def g(t):
        return theta_obs - _float(unconditional_bias(t, i1, i2, e))

    half = 5.0 * max(abs(_float(unconditional_bias(theta_obs, i1, i2, e))), 1.0 / math.sqrt(i2))
    return solve_fixed_point(g, theta_obs, tol=1e-12, bracket=(theta_obs - half, theta_obs + half))


def ubc_mle(outcome: TwoStageOutcome) -> float:
    """Whitehead's bias-corrected MLE: solves ``t = theta_obs - bias(t)``."""
    return ubc_mle_detail(outcome).value


def ubc_mle_single_step(outcome: TwoStageOutcome) -> float:
    theta_obs, i1, i2, e = outcome._args()
    return theta_obs - _float(unconditional_bias(theta_obs, i1, i2, e))


def cbc_mle_detail(outcome: TwoStageOutcome):
    if outcome.stopped_stage != 2:
        raise UnsupportedPerspectiveError("CBC-MLE is defined only for trials reaching stage 2")
    theta_obs, i1, i2, e = outcome._args()

    def g(t):
        return theta_obs - _float(conditional_bias(t, i1, i2, e))

    half = 5.0 * max(abs(_float(conditional_bias(theta_obs, i1, i2, e))), 1.0 / math.sqrt(i2))
    lo, hi = theta_obs - half, theta_obs + half
    for _ in range(20):
        if hi - g(hi) > 0:
            break
        hi += 2.0 * half
    return solve_fixed_point(g, theta_obs, tol=1e-12, max_iter=200, bracket=(lo, hi))


def cbc_mle(outcome: TwoStageOutcome) -> float:
    """Conditional bias-corrected MLE: solves ``t = theta_obs - cbias(t)``."""
    return cbc_mle_detail(outcome).value


def umvue(outcome: TwoStageOutcome) -> float:
    if outcome.stopped_stage == 1:
        return outcome.theta_hat_stage1
    return _float(umvue_formula(*outcome._args()))


def umvcue(outcome: TwoStageOutcome) -> float:
    if outcome.stopped_stage != 2:
        raise UnsupportedPerspectiveError("UMVCUE is defined only for trials reaching stage 2")
    return _float(umvcue_formula(*outcome._args()))


def pvalue_stagewise(theta, outcome: TwoStageOutcome):
    """Stagewise-ordering p-value function evaluated at ``theta``."""
    out = pvalue_formula(theta, outcome.wald_z_final, outcome.stopped_stage,
                         outcome.info1, outcome.info2, outcome.e)
    return float(out) if np.ndim(theta) == 0 else out


def mue(outcome: TwoStageOutcome) -> float:
    """Median-unbiased estimator: the root of ``P(theta) = 0.5``."""
    if outcome.stopped_stage == 1:
        return outcome.theta_hat_stage1
    theta_obs = outcome.theta_obs
    half = 10.0 / math.sqrt(outcome.info1)

    def f(t):
        return pvalue_stagewise(t, outcome) - 0.5

    for _ in range(10):
        try:
            return find_root_bracketed(f, theta_obs - half, theta_obs + half, tol=1e-12)
        except BracketError:
            half *= 2.0
    raise BracketError("could not bracket the median-unbiased estimate")


# ---------------------------------------------------------------------------
# Estimate sets


@dataclass
class EstimateEntry:
    value: float | None
    perspective: str
    naive: bool
    converged: bool = True
    iterations: int = 0
    relative_to_mle: float | None = None
    supported: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "perspective": self.perspective,
            "naive": self.naive,
            "converged": self.converged,
            "iterations": self.iterations,
            "relative_to_mle": self.relative_to_mle,
            "supported": self.supported,
            "note": self.note,
        }


_LABELS = {
    "mle_overall": "MLE (overall)",
    "mle_stage1": "MLE (stage 1)",
    "mue": "Median unbiased estimator (MUE)",
    "umvue": "UMVUE",
    "ubc_mle": "Bias-corrected MLE (UBC-MLE)",
    "ubc_mle_single_step": "Single-step bias-corrected MLE",
    "mle_stage2": "MLE (stage 2)",
    "umvcue": "UMVCUE",
    "cbc_mle": "Bias-corrected MLE (CBC-MLE)",
}


@dataclass
class EstimateSet:
    entries: dict[str, EstimateEntry]
    stopped_stage: int
    primary: str | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.entries.items() if v.supported and v.value is None]

    def value(self, name: str) -> float | None:
        return self.entries[name].value

    def as_dict(self) -> dict[str, float | None]:
        return {k: v.value for k, v in self.entries.items()}

    def to_dict(self) -> dict:
        return {
            "stopped_stage": self.stopped_stage,
            "primary": self.primary,
            "estimates": {k: v.to_dict() for k, v in self.entries.items()},
            "notes": list(self.notes),
        }

    def to_table(self) -> str:
        """Aligned text table: estimator, perspective, value, relative difference."""
        header = ("Estimator", "Perspective", "Estimate", "Relative to MLE")
        rows = []
        for name, entry in self.entries.items():
            label = _LABELS[name] + (" [primary]" if name == self.primary else "")
            label += " *" if entry.naive else ""
            if entry.value is None:
                val = "n/a" if not entry.supported else "FAILED"
                rel = "-"
            else:
                val = f"{entry.value:.4f}"
                rel = "-" if name == "mle_overall" or entry.relative_to_mle is None \
                    else f"{entry.relative_to_mle:.2f}"
            rows.append((label, entry.perspective, val, rel))
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(4)]
        fmt = "  ".join(f"{{:<{w}}}" if i < 2 else f"{{:>{w}}}" for i, w in enumerate(widths))
        lines = [fmt.format(*header), "  ".join("-" * w for w in widths)]
        lines += [fmt.format(*r) for r in rows]
        lines.append("")
        lines.append("* naive estimator: ignores the interim stopping rule.")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def estimate_all(
    outcome: TwoStageOutcome,
    primary: str | None = None,
    estimators: Iterable[str] | None = None,
) -> EstimateSet:
    """Evaluate every estimator defined for ``outcome.stopped_stage``.

    A failing estimator is recorded with ``value=None`` and a note instead of
    aborting the whole set.
    """
    names = list(ESTIMATORS if estimators is None else estimators)
    if primary is not None and primary not in ESTIMATORS:
        raise KeyError(f"unknown primary estimator {primary!r}")
    if "mle_overall" not in names:
        names.insert(0, "mle_overall")
    entries: dict[str, EstimateEntry] = {}
    notes = list(outcome.warnings)
    two = outcome.stopped_stage == 2
    for name in [n for n in ESTIMATORS if n in names]:
        perspective, naive = ESTIMATORS[name]
        entry = EstimateEntry(None, perspective, naive)
        if name in CONDITIONAL_ONLY and not two:
            entry.supported = False
            entry.note = "undefined for trials stopped at stage 1"
            entries[name] = entry
            continue
        try:
            if name == "mle_overall":
                entry.value = outcome.theta_obs
            elif name == "mle_stage1":
                entry.value = outcome.theta_hat_stage1
            elif name == "mle_stage2":
                entry.value = outcome.theta_hat_stage2_increment
            elif name in ("ubc_mle", "cbc_mle"):
                res = (ubc_mle_detail if name == "ubc_mle" else cbc_mle_detail)(outcome)
                entry.value, entry.iterations = res.value, res.iterations
                entry.converged = res.converged
                if res.used_fallback:
                    entry.note = "fixed-point iteration fell back to bracketing"
            else:
                entry.value = {"mue": mue, "umvue": umvue, "umvcue": umvcue,
                               "ubc_mle_single_step": ubc_mle_single_step}[name](outcome)
            if name.startswith("ubc") and not two:
                entry.note = "bias correction applied to a stage-1 stop (extrapolation)"
        except (SeqTrialError, ArithmeticError) as exc:
            entry.converged = False
            entry.note = f"failed: {exc}"
        entries[name] = entry

    mle = entries["mle_overall"].value
    for entry in entries.values():
        if entry.value is not None and mle:
            entry.relative_to_mle = entry.value / mle
    return EstimateSet(entries, outcome.stopped_stage, primary, notes)


class TwoStageEstimator(BaseEstimator):
    """Estimator-style front end for analysing one two-stage trial.

    Parameters:
        design: boundary and planned information of the trial. Only its
            efficacy boundaries and information ratio are used; the observed
            information is taken from the data passed to :meth:`fit`.
        primary: identifier of the pre-specified primary adjusted estimator.
        estimators: subset of estimator identifiers (default: all).

    Attributes:
        outcome_: the :class:`TwoStageOutcome` built from the data.
        estimates_: the resulting :class:`EstimateSet`.
        estimate_: value of the primary estimator (``None`` without one).
    """

    def __init__(self, design: TrialDesign | None = None, primary: str | None = None,
                 estimators: Sequence[str] | None = None):
        self.design = design
        self.primary = primary
        self.estimators = estimators

    def fit(self, X, y=None):
        if isinstance(X, TwoStageOutcome):
            outcome = X
        elif self.design is None:
            raise ValueError("a design is required unless X is a TwoStageOutcome")
        elif isinstance(X, BinaryTwoArmData):
            outcome = TwoStageOutcome.from_data(X, self.design)
        else:
            outcome = TwoStageOutcome.from_summaries(list(X), self.design)
        self.outcome_ = outcome
        self.estimates_ = estimate_all(outcome, self.primary, self.estimators)
        self.estimate_ = None if self.primary is None else self.estimates_.value(self.primary)
        return self

    def summary(self) -> str:
        check_is_fitted(self, "estimates_")
        return self.estimates_.to_table()
