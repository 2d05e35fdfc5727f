"""Parametric bootstrap standard errors and planning-stage performance sweeps.

Two data-generating paths are available:

* ``"binomial"`` draws stagewise response counts and recomputes the pooled
  Wald statistic and information in every replicate, as an analyst would
  with real data;
* ``"normal"`` draws the stage-1 estimate and the stage-2 increment from the
  canonical normal model at fixed information, which is the model the
  closed-form estimators are derived under.

Replicates are processed in blocks of :data:`seqtrial.design.BLOCK_SIZE`;
block ``b`` of grid point ``g`` always uses the Philox stream keyed by
``(seed, g * 2**32 + b)``, so output is identical for any thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .design import BLOCK_SIZE, TrialDesign, _blocks
from .estimators import CONDITIONAL_ONLY, ESTIMATORS, evaluate_estimators
from .exceptions import InsufficientConditioningError, ValidationError
from .trial_data import BinaryTwoArmData
from .validation import check_count, check_estimation_design, check_probability, check_seed

__all__ = [
    "BootstrapModel",
    "BootstrapResult",
    "ReportRow",
    "SimulationReport",
    "emit_report",
    "parse_theta_grid",
    "run_bootstrap",
    "run_performance_sweep",
    "simulate_trials",
]

MIN_BOOTSTRAP_REPLICATES = 1000
MIN_CONDITIONAL_REPLICATES = 100


@dataclass(frozen=True)
class BootstrapModel:
    """Binomial data-generating model for a two-stage two-arm trial.

    ``stage_sample_sizes`` holds cumulative ``(control, experimental)`` totals
    per stage.
    """

    control_rate: float
    true_difference: float
    stage_sample_sizes: tuple[tuple[int, int], tuple[int, int]]
    design: TrialDesign
    replicates: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_sample_sizes",
                           tuple(tuple(int(n) for n in s) for s in self.stage_sample_sizes))
        errors = []
        try:
            check_probability(self.control_rate, "control_rate")
            check_probability(self.experimental_rate, "experimental rate")
        except ValueError as exc:
            errors.append(str(exc))
        sizes = self.stage_sample_sizes
        if len(sizes) != 2:
            errors.append("stage_sample_sizes needs exactly two stages")
        elif any(b <= a for a, b in zip(sizes[0], sizes[1])) or min(sizes[0]) <= 0:
            errors.append("stage sample sizes must be positive and strictly increasing")
        if self.replicates < MIN_BOOTSTRAP_REPLICATES:
            errors.append(f"replicates must be >= {MIN_BOOTSTRAP_REPLICATES}")
        check_seed(self.seed)
        if errors:
            raise ValidationError(errors)
        check_estimation_design(self.design)

    @property
    def experimental_rate(self) -> float:
        return self.control_rate + self.true_difference

    @classmethod
    def from_data(cls, data: BinaryTwoArmData, design: TrialDesign, true_difference: float,
                  control_rate: float | None = None, replicates: int = 1_000_000,
                  seed: int = 0) -> "BootstrapModel":
        """Model anchored at the observed final control proportion by default."""
        if data.n_stages != 2:
            raise ValidationError(["bootstrap needs data from both stages"])
        final = data.stages[-1]
        if control_rate is None:
            control_rate = final.control_responders / final.control_total
        sizes = tuple((s.control_total, s.experimental_total) for s in data.stages)
        return cls(control_rate, true_difference, sizes, design, replicates, seed)

    def to_dict(self) -> dict:
        return {
            "control_rate": self.control_rate,
            "true_difference": self.true_difference,
            "stage_sample_sizes": [list(s) for s in self.stage_sample_sizes],
            "design": self.design.to_dict(),
            "replicates": self.replicates,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BootstrapModel":
        doc = dict(doc)
        doc["design"] = TrialDesign.from_dict(doc["design"])
        return cls(**doc)


def _stream(seed: int, grid_index: int, block: int) -> np.random.Generator:
    key = np.array([seed % (1 << 64), (grid_index << 32) | block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _pooled(r0, n0, r1, n1):
    pbar = (r0 + r1) / (n0 + n1)
    ok = (pbar > 0) & (pbar < 1)
    var = np.where(ok, pbar * (1 - pbar) * (1.0 / n0 + 1.0 / n1), 1.0)
    return r1 / n1 - r0 / n0, 1.0 / var, ok


def _binomial_block(rng, size, p0, p1, sizes, e, ratio):
    (a0, a1), (b0, b1) = sizes
    r0 = rng.binomial(a0, p0, size)
    r1 = rng.binomial(a1, p1, size)
    s0 = rng.binomial(b0 - a0, p0, size)
    s1 = rng.binomial(b1 - a1, p1, size)
    theta1, info1, ok1 = _pooled(r0, a0, r1, a1)
    theta, info2, ok2 = _pooled(r0 + s0, b0, r1 + s1, b1)
    theta2 = s1 / (b1 - a1) - s0 / (b0 - a0)
    stage = np.where(theta1 * np.sqrt(info1) >= e, 1, 2)
    info2 = np.where(stage == 1, info1 * ratio, info2)
    # Recomputed information can fail to increase; such replicates are degenerate.
    keep = ok1 & ((stage == 1) | (ok2 & (info2 > info1)))
    return stage[keep], theta1[keep], theta[keep], theta2[keep], info1[keep], info2[keep]


def _normal_block(rng, size, theta, info1, info2):
    d = info2 - info1
    theta1 = theta + rng.standard_normal(size) / math.sqrt(info1)
    theta2 = theta + rng.standard_normal(size) / math.sqrt(d)
    overall = (info1 * theta1 + d * theta2) / info2
    return theta1, overall, theta2


def simulate_trials(
    design: TrialDesign,
    theta: float,
    replicates: int,
    seed: int,
    *,
    model: str = "normal",
    control_rate: float | None = None,
    stage_sample_sizes=None,
    estimators: Iterable[str] = ESTIMATORS,
    grid_index: int = 0,
    threads: int | None = 1,
) -> tuple[np.ndarray, dict[str, np.ndarray], int]:
    """Simulate trials and evaluate estimators on each replicate.

    Returns:
        ``(stage, values, dropped)``: stopping stage per retained replicate,
        estimator values keyed by identifier (NaN where undefined), and the
        number of replicates dropped as degenerate.
    """
    check_estimation_design(design)
    check_seed(seed)
    estimators = list(estimators)
    e = design.upper_z[0]
    info1, info2 = design.info
    if model == "binomial":
        if control_rate is None or stage_sample_sizes is None:
            raise ValueError("binomial model needs control_rate and stage_sample_sizes")
        p0 = check_probability(control_rate, "control_rate")
        p1 = check_probability(control_rate + theta, "experimental rate")
    elif model != "normal":
        raise ValueError(f"unknown model {model!r}")

    def work(block_spec):
        block, size = block_spec
        rng = _stream(seed, grid_index, block)
        if model == "binomial":
            stage, t1, t, t2, i1, i2 = _binomial_block(
                rng, size, p0, p1, stage_sample_sizes, e, info2 / info1)
        else:
            t1, t, t2 = _normal_block(rng, size, theta, info1, info2)
            stage = np.where(t1 * math.sqrt(info1) >= e, 1, 2)
            i1, i2 = info1, info2
        vals = evaluate_estimators(stage, t1, t, t2, i1, i2, e, estimators) if estimators else {}
        return stage, vals, size - stage.size

    blocks = _blocks(replicates)
    if threads == 1:
        parts = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    stage = np.concatenate([p[0] for p in parts])
    values = {k: np.concatenate([p[1][k] for p in parts]) for k in estimators}
    dropped = sum(p[2] for p in parts)
    return stage, values, dropped


# ---------------------------------------------------------------------------
# Bootstrap


@dataclass
class BootstrapResult:
    se_unconditional: dict[str, float | None]
    se_conditional_T2: dict[str, float | None]
    replicates_used: int
    replicates_dropped: int
    n_stage2: int
    prob_stop_stage1: float

    def to_dict(self) -> dict:
        return asdict(self)


def run_bootstrap(
    model: BootstrapModel,
    estimators: Iterable[str] | None = None,
    threads: int | None = 1,
    path: str = "binomial",
) -> BootstrapResult:
    """Parametric-bootstrap standard errors for each estimator.

    Unconditional SEs are sample standard deviations over all retained
    replicates; conditional SEs use only replicates that reached stage 2.

    Raises:
        InsufficientConditioningError: fewer than 100 replicates reached stage 2.
    """
    names = list(ESTIMATORS if estimators is None else estimators)
    theta = model.true_difference
    design = model.design
    if path == "normal":
        stage, vals, dropped = simulate_trials(design, theta, model.replicates, model.seed,
                                               estimators=names, threads=threads)
    else:
        stage, vals, dropped = simulate_trials(
            design, theta, model.replicates, model.seed, model="binomial",
            control_rate=model.control_rate, stage_sample_sizes=model.stage_sample_sizes,
            estimators=names, threads=threads)
    two = stage == 2
    n2 = int(two.sum())
    if n2 < MIN_CONDITIONAL_REPLICATES:
        raise InsufficientConditioningError(
            f"only {n2} replicates reached stage 2; conditional SEs need {MIN_CONDITIONAL_REPLICATES}"
        )
    se_u, se_c = {}, {}
    for name in names:
        v = vals[name]
        se_u[name] = None if name in CONDITIONAL_ONLY else float(np.std(v, ddof=1))
        se_c[name] = float(np.std(v[two], ddof=1))
    return BootstrapResult(se_u, se_c, int(stage.size), int(dropped), n2,
                           float(np.mean(stage == 1)))


# ---------------------------------------------------------------------------
# Performance sweeps


@dataclass
class ReportRow:
    theta: float
    estimator: str
    mean: float | None = None
    bias: float | None = None
    sd_unconditional: float | None = None
    mse: float | None = None
    mean_conditional_T2: float | None = None
    conditional_bias_T2: float | None = None
    sd_conditional_T2: float | None = None
    mse_conditional_T2: float | None = None
    prob_below_theta: float | None = None
    prob_stop_stage1: float = 0.0
    prob_stop_stage1_se: float = 0.0
    replicates_used: int = 0
    replicates_dropped: int = 0
    n_stage2: int = 0
    mc_se: float | None = None
    mc_se_conditional_T2: float | None = None


COLUMNS = [f.name for f in fields(ReportRow)]
_INT_COLUMNS = {"replicates_used", "replicates_dropped", "n_stage2"}


@dataclass
class SimulationReport:
    rows: list[ReportRow] = field(default_factory=list)
    model: str = "normal"
    seed: int = 0
    replicates: int = 0

    def row(self, theta: float, estimator: str) -> ReportRow:
        for r in self.rows:
            if r.estimator == estimator and math.isclose(r.theta, theta, abs_tol=1e-12):
                return r
        raise KeyError((theta, estimator))

    def to_dict(self) -> dict:
        return {"model": self.model, "seed": self.seed, "replicates": self.replicates,
                "columns": COLUMNS, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, doc: dict) -> "SimulationReport":
        return cls([ReportRow(**r) for r in doc["rows"]], doc["model"], doc["seed"],
                   doc["replicates"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                             for v in (getattr(r, c) for c in COLUMNS)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, model: str = "normal", seed: int = 0,
                 replicates: int = 0) -> "SimulationReport":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            kw = {}
            for c in COLUMNS:
                raw = rec[c]
                if c == "estimator":
                    kw[c] = raw
                elif c in _INT_COLUMNS:
                    kw[c] = int(raw)
                else:
                    kw[c] = None if raw == "" else float(raw)
            rows.append(ReportRow(**kw))
        return cls(rows, model, seed, replicates)


def _summarise(theta: float, name: str, v: np.ndarray, two: np.ndarray, base: dict) -> ReportRow:
    row = ReportRow(theta=theta, estimator=name, **base)
    vc = v[two]
    if vc.size:
        row.mean_conditional_T2 = float(np.mean(vc))
        row.conditional_bias_T2 = row.mean_conditional_T2 - theta
        row.sd_conditional_T2 = float(np.std(vc))
        row.mse_conditional_T2 = float(np.mean((vc - theta) ** 2))
        row.mc_se_conditional_T2 = row.sd_conditional_T2 / math.sqrt(vc.size)
    if name not in CONDITIONAL_ONLY:
        row.mean = float(np.mean(v))
        row.bias = row.mean - theta
        row.sd_unconditional = float(np.std(v))
        row.mse = float(np.mean((v - theta) ** 2))
        row.prob_below_theta = float(np.mean(v < theta))
        row.mc_se = row.sd_unconditional / math.sqrt(v.size)
    else:
        row.mc_se = row.mc_se_conditional_T2
    return row


def run_performance_sweep(
    design: TrialDesign,
    theta_grid: Sequence[float],
    replicates: int,
    seed: int,
    estimators: Iterable[str] | None = None,
    *,
    model: str = "normal",
    control_rate: float | None = None,
    stage_sample_sizes=None,
    threads: int | None = 1,
) -> SimulationReport:
    """Bias, SD, MSE and stopping probability of each estimator over a grid of effects.

    With an empty estimator set, one row per effect (estimator ``"-"``)
    reports the stopping probabilities only.
    """
    theta_grid = list(theta_grid)
    if not theta_grid:
        raise ValueError("theta grid must be nonempty")
    check_count(replicates, "replicates")
    names = list(ESTIMATORS if estimators is None else estimators)
    report = SimulationReport(model=model, seed=seed, replicates=replicates)
    for g, theta in enumerate(theta_grid):
        stage, vals, dropped = simulate_trials(
            design, theta, replicates, seed, model=model, control_rate=control_rate,
            stage_sample_sizes=stage_sample_sizes, estimators=names, grid_index=g,
            threads=threads)
        two = stage == 2
        p1 = float(np.mean(stage == 1))
        base = dict(prob_stop_stage1=p1,
                    prob_stop_stage1_se=math.sqrt(p1 * (1 - p1) / stage.size),
                    replicates_used=int(stage.size), replicates_dropped=int(dropped),
                    n_stage2=int(two.sum()))
        if not names:
            report.rows.append(ReportRow(theta=float(theta), estimator="-", **base))
        for name in names:
            report.rows.append(_summarise(float(theta), name, vals[name], two, base))
    return report


def emit_report(report: SimulationReport, format: str = "csv",
                destination: str | Path | IO[str] | None = None) -> None:
    """Write ``report`` as CSV or JSON to a path, an open file, or stdout."""
    if format == "csv":
        text = report.to_csv()
    elif format == "json":
        text = report.to_json() + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    if destination is None or destination == "-":
        sys.stdout.write(text)
    elif hasattr(destination, "write"):
        destination.write(text)
    else:
        Path(destination).write_text(text)


def parse_theta_grid(spec: str) -> list[float]:
    """Parse ``lo:hi:step`` (inclusive of ``hi`` up to rounding) into a grid."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError as exc:
        raise ValueError(f"theta grid must look like lo:hi:step, got {spec!r}") from exc
    if step <= 0 or hi < lo:
        raise ValueError("theta grid needs step > 0 and hi >= lo")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(n)]
