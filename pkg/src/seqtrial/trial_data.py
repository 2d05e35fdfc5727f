"""Stagewise two-arm binary trial data and the summaries the estimators consume.

Counts are cumulative at each analysis. Information is the inverse of the
pooled-proportion variance of the difference in response rates, which is
the convention that reproduces the published MUSEC Wald statistics
(2.540 interim, 2.718 final); the unpooled variance would give 2.598 at the
interim.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import DegenerateVarianceError, ValidationError

__all__ = [
    "BinaryTwoArmData",
    "StageCounts",
    "StageSummary",
    "cumulative_summary",
    "increment_summary",
    "information_fraction",
    "load_data",
    "parse_data_csv",
    "parse_data_json",
    "pooled_summary",
    "validate",
]


@dataclass(frozen=True)
class StageCounts:
    control_responders: int
    control_total: int
    experimental_responders: int
    experimental_total: int


@dataclass(frozen=True)
class StageSummary:
    """Effect estimate, information and Wald statistic at one analysis."""

    theta_hat: float
    information: float
    wald_z: float
    info_fraction: float = 1.0

    @classmethod
    def from_estimate(cls, theta_hat: float, information: float, info_fraction: float = 1.0):
        """Summary-level entry path for endpoints that are not binary counts."""
        if not information > 0:
            raise ValidationError([f"information must be positive, got {information}"])
        return cls(theta_hat, information, theta_hat * math.sqrt(information), info_fraction)


@dataclass(frozen=True)
class BinaryTwoArmData:
    stages: tuple[StageCounts, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @classmethod
    def from_counts(cls, rows: Iterable[Sequence[int]]) -> "BinaryTwoArmData":
        """Build from ``(control_resp, control_total, exp_resp, exp_total)`` rows."""
        return cls(tuple(StageCounts(*map(int, row)) for row in rows))

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def scaled(self, factor: int) -> "BinaryTwoArmData":
        return BinaryTwoArmData(
            tuple(
                StageCounts(*(factor * v for v in (
                    s.control_responders, s.control_total,
                    s.experimental_responders, s.experimental_total)))
                for s in self.stages
            )
        )

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "control": {"responders": s.control_responders, "total": s.control_total},
                    "experimental": {
                        "responders": s.experimental_responders,
                        "total": s.experimental_total,
                    },
                }
                for s in self.stages
            ]
        }


def _violations(data: BinaryTwoArmData) -> list[str]:
    errors = []
    if not data.stages:
        errors.append("data contain no stages")
    prev = None
    for k, s in enumerate(data.stages, start=1):
        for arm in ("control", "experimental"):
            r = getattr(s, f"{arm}_responders")
            n = getattr(s, f"{arm}_total")
            if n <= 0:
                errors.append(f"stage {k}: {arm}.total must be positive (got {n})")
            if r < 0:
                errors.append(f"stage {k}: {arm}.responders must be nonnegative (got {r})")
            if r > n:
                errors.append(f"stage {k}: {arm}.responders {r} exceeds {arm}.total {n}")
            if prev is not None:
                for kind, now, before in (
                    ("total", n, getattr(prev, f"{arm}_total")),
                    ("responders", r, getattr(prev, f"{arm}_responders")),
                ):
                    if now < before:
                        errors.append(
                            f"stage {k}: {arm}.{kind} {now} is below stage {k - 1} value "
                            f"{before} (counts must be cumulative)"
                        )
        prev = s
    return errors


def validate(data: BinaryTwoArmData) -> BinaryTwoArmData:
    """Return ``data`` unchanged if it satisfies every invariant.

    Raises:
        ValidationError: listing all violations with stage index and field.
    """
    errors = _violations(data)
    if errors:
        raise ValidationError(errors)
    return data


def pooled_summary(r0: int, n0: int, r1: int, n1: int) -> tuple[float, float]:
    """Difference in proportions and its pooled-variance information.

    Raises:
        DegenerateVarianceError: if the pooled proportion is 0 or 1.
    """
    pbar = (r0 + r1) / (n0 + n1)
    if pbar <= 0.0 or pbar >= 1.0:
        raise DegenerateVarianceError(
            f"pooled response proportion is {pbar}; Wald variance is zero"
        )
    theta = r1 / n1 - r0 / n0
    info = 1.0 / (pbar * (1.0 - pbar) * (1.0 / n0 + 1.0 / n1))
    return theta, info


def _stage_index(data: BinaryTwoArmData, stage: int) -> int:
    if not 1 <= stage <= data.n_stages:
        raise IndexError(f"stage {stage} out of range 1..{data.n_stages}")
    return stage - 1


def cumulative_summary(data: BinaryTwoArmData, stage: int) -> StageSummary:
    """Summary of all data accrued up to analysis ``stage`` (1-based)."""
    validate(data)
    s = data.stages[_stage_index(data, stage)]
    theta, info = pooled_summary(
        s.control_responders, s.control_total, s.experimental_responders, s.experimental_total
    )
    final = data.stages[-1]
    _, info_final = pooled_summary(
        final.control_responders, final.control_total,
        final.experimental_responders, final.experimental_total,
    )
    return StageSummary(theta, info, theta * math.sqrt(info), info / info_final)


def increment_summary(data: BinaryTwoArmData, stage: int) -> StageSummary:
    """Summary of only the patients accrued between analyses ``stage-1`` and ``stage``.

    ``info_fraction`` reports the increment's share of the final cumulative
    information, computed as a difference of cumulative informations.
    """
    validate(data)
    if stage < 2:
        raise ValueError("increment summaries need stage >= 2")
    i = _stage_index(data, stage)
    cur, prev = data.stages[i], data.stages[i - 1]
    n0 = cur.control_total - prev.control_total
    n1 = cur.experimental_total - prev.experimental_total
    if n0 <= 0 or n1 <= 0:
        raise DegenerateVarianceError(
            f"stage {stage} adds no patients to at least one arm (control {n0}, "
            f"experimental {n1})"
        )
    theta, info = pooled_summary(
        cur.control_responders - prev.control_responders, n0,
        cur.experimental_responders - prev.experimental_responders, n1,
    )
    fractions = information_fraction(data)
    share = fractions[i] - fractions[i - 1]
    return StageSummary(theta, info, theta * math.sqrt(info), share)


def information_fraction(data: BinaryTwoArmData) -> list[float]:
    """Cumulative information at each analysis relative to the last one."""
    validate(data)
    infos = [
        pooled_summary(
            s.control_responders, s.control_total, s.experimental_responders, s.experimental_total
        )[1]
        for s in data.stages
    ]
    return [v / infos[-1] for v in infos[:-1]] + [1.0]


# ---------------------------------------------------------------------------
# File formats

_STAGE_KEYS = {"control", "experimental"}
_ARM_KEYS = {"responders", "total"}
_SUMMARY_KEYS = {"theta_hat", "information"}


def _require_int(value, where: str, errors: list[str]) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append(f"{where}: expected an integer, got {value!r}")
        return 0
    return value


def parse_data_json(doc: dict | str) -> BinaryTwoArmData | list[StageSummary]:
    """Parse the JSON data document.

    Two layouts are accepted: ``{"stages": [{"control": {...}, "experimental":
    {...}}, ...]}`` with cumulative counts, or the summary-level
    ``{"summaries": [{"theta_hat": x, "information": i}, ...]}``. Unknown
    fields anywhere are rejected.

    Raises:
        ValidationError: with one message per problem found.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ValidationError([f"line {exc.lineno}: invalid JSON ({exc.msg})"]) from exc
    if not isinstance(doc, dict):
        raise ValidationError(["top level must be a JSON object"])
    extra = set(doc) - {"stages", "summaries"}
    errors = [f"unknown top-level field {k!r}" for k in sorted(extra)]
    if ("stages" in doc) == ("summaries" in doc):
        errors.append("exactly one of 'stages' or 'summaries' is required")
        raise ValidationError(errors)

    if "summaries" in doc:
        out = []
        for k, item in enumerate(doc["summaries"], start=1):
            if not isinstance(item, dict):
                errors.append(f"summaries[{k}]: expected an object")
                continue
            for key in sorted(set(item) - _SUMMARY_KEYS):
                errors.append(f"summaries[{k}]: unknown field {key!r}")
            missing = _SUMMARY_KEYS - set(item)
            for key in sorted(missing):
                errors.append(f"summaries[{k}]: missing field {key!r}")
            if not missing:
                try:
                    out.append(StageSummary.from_estimate(float(item["theta_hat"]),
                                                          float(item["information"])))
                except (TypeError, ValueError) as exc:
                    errors.append(f"summaries[{k}]: {exc}")
        if len(out) >= 2 and any(a.information >= b.information for a, b in zip(out, out[1:])):
            errors.append("summaries: information must be strictly increasing")
        if errors:
            raise ValidationError(errors)
        last = out[-1].information if out else 1.0
        return [StageSummary(s.theta_hat, s.information, s.wald_z, s.information / last)
                for s in out]

    rows = []
    stages = doc["stages"]
    if not isinstance(stages, list):
        raise ValidationError(errors + ["'stages' must be a list"])
    for k, stage in enumerate(stages, start=1):
        if not isinstance(stage, dict):
            errors.append(f"stages[{k}]: expected an object")
            continue
        for key in sorted(set(stage) - _STAGE_KEYS):
            errors.append(f"stages[{k}]: unknown field {key!r}")
        row = []
        for arm in ("control", "experimental"):
            block = stage.get(arm)
            if not isinstance(block, dict):
                errors.append(f"stages[{k}]: missing or invalid {arm!r} block")
                row += [0, 0]
                continue
            for key in sorted(set(block) - _ARM_KEYS):
                errors.append(f"stages[{k}].{arm}: unknown field {key!r}")
            for key in ("responders", "total"):
                if key not in block:
                    errors.append(f"stages[{k}].{arm}: missing field {key!r}")
                    row.append(0)
                else:
                    row.append(_require_int(block[key], f"stages[{k}].{arm}.{key}", errors))
        rows.append(row)
    if errors:
        raise ValidationError(errors)
    return validate(BinaryTwoArmData.from_counts(rows))


def parse_data_csv(text: str) -> BinaryTwoArmData:
    """Parse CSV with header ``stage,arm,responders,total`` (one row per arm and stage)."""
    reader = csv.DictReader(io.StringIO(text))
    expected = ["stage", "arm", "responders", "total"]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
        raise ValidationError([f"line 1: header must be {','.join(expected)}"])
    errors: list[str] = []
    cells: dict[int, dict[str, tuple[int, int]]] = {}
    for line_no, row in enumerate(reader, start=2):
        try:
            stage = int(row["stage"])
            arm = row["arm"].strip()
            resp, total = int(row["responders"]), int(row["total"])
        except (TypeError, ValueError):
            errors.append(f"line {line_no}: fields must be integers (stage, responders, total)")
            continue
        if arm not in _STAGE_KEYS:
            errors.append(f"line {line_no}: unknown arm {arm!r}")
            continue
        if arm in cells.setdefault(stage, {}):
            errors.append(f"line {line_no}: duplicate row for stage {stage}, arm {arm}")
        cells[stage][arm] = (resp, total)
    stages = sorted(cells)
    if stages != list(range(1, len(stages) + 1)):
        errors.append(f"stages must be numbered 1..K without gaps, got {stages}")
    for k in stages:
        for arm in sorted(_STAGE_KEYS - set(cells[k])):
            errors.append(f"stage {k}: missing row for arm {arm}")
    if errors:
        raise ValidationError(errors)
    rows = [cells[k]["control"] + cells[k]["experimental"] for k in stages]
    return validate(BinaryTwoArmData.from_counts(rows))


def load_data(path: str | Path) -> BinaryTwoArmData | list[StageSummary]:
    """Read a data file, choosing the parser by extension (``.csv`` or JSON)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return parse_data_csv(text)
    return parse_data_json(text)
