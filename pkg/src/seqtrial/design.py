"""Group sequential designs, boundary families and stopping probabilities.

Stopping probabilities are computed on the score scale ``S_k = Z_k sqrt(I_k)``,
which under effect ``theta`` is a Gaussian random walk with drift
``theta * I_k`` and independent increments of variance ``I_k - I_{k-1}``.
The sub-density of ``S_k`` on each continuation interval is propagated with
Simpson's rule; a Monte Carlo routine with reproducible, block-keyed
Philox streams serves as an independent check.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .exceptions import AccuracyError, ValidationError
from .numerics import find_root_bracketed, std_normal_quantile

__all__ = [
    "BLOCK_SIZE",
    "StoppingProfile",
    "TrialDesign",
    "block_generator",
    "haybittle_peto_boundaries",
    "load_design",
    "obf_boundaries",
    "stopping_probabilities_mc",
    "stopping_probabilities_recursive",
]

# Replicates per RNG stream. Fixed so results never depend on thread count.
BLOCK_SIZE = 1 << 16

_DESIGN_KEYS = {"looks", "info", "upper_z", "lower_z", "sided"}


@dataclass(frozen=True)
class TrialDesign:
    """Boundaries and information levels of a K-look group sequential test.

    Two-sided designs reject when ``|Z_k| >= upper_z[k]`` and may not carry
    futility bounds. One-sided designs reject for ``Z_k >= upper_z[k]`` and
    optionally stop for futility when ``Z_k < lower_z[k]``.
    """

    info: tuple[float, ...]
    upper_z: tuple[float, ...]
    lower_z: tuple[float, ...] | None = None
    sided: int = 1

    def __post_init__(self):
        object.__setattr__(self, "info", tuple(float(v) for v in self.info))
        object.__setattr__(self, "upper_z", tuple(float(v) for v in self.upper_z))
        if self.lower_z is not None:
            object.__setattr__(self, "lower_z", tuple(float(v) for v in self.lower_z))
        errors = self._violations()
        if errors:
            raise ValidationError(errors)

    def _violations(self) -> list[str]:
        errors = []
        k = len(self.info)
        if k < 1:
            errors.append("design needs at least one look")
        if len(self.upper_z) != k:
            errors.append(f"upper_z has {len(self.upper_z)} entries for {k} looks")
        if any(not v > 0 for v in self.info):
            errors.append("info must be positive")
        if any(b <= a for a, b in zip(self.info, self.info[1:])):
            errors.append("info must be strictly increasing")
        if self.sided not in (1, 2):
            errors.append(f"sided must be 1 or 2, got {self.sided}")
        if self.sided == 2 and any(u <= 0 for u in self.upper_z):
            errors.append("two-sided boundaries must be positive")
        if self.lower_z is not None:
            if self.sided == 2:
                errors.append("two-sided designs cannot carry futility bounds")
            if len(self.lower_z) != k:
                errors.append(f"lower_z has {len(self.lower_z)} entries for {k} looks")
            else:
                for j, (lo, up) in enumerate(zip(self.lower_z[:-1], self.upper_z[:-1]), 1):
                    if not lo < up:
                        errors.append(f"look {j}: lower_z {lo} must be below upper_z {up}")
                if k and self.lower_z[-1] != self.upper_z[-1]:
                    errors.append("final lower_z must equal final upper_z")
        return errors

    @property
    def looks(self) -> int:
        return len(self.info)

    def with_info(self, info: Sequence[float]) -> "TrialDesign":
        return replace(self, info=tuple(info))

    def to_dict(self) -> dict:
        return {
            "looks": self.looks,
            "info": list(self.info),
            "upper_z": list(self.upper_z),
            "lower_z": None if self.lower_z is None else list(self.lower_z),
            "sided": self.sided,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrialDesign":
        """Strict inverse of :meth:`to_dict`; unknown fields are rejected."""
        if not isinstance(doc, dict):
            raise ValidationError(["design document must be a JSON object"])
        errors = [f"unknown design field {k!r}" for k in sorted(set(doc) - _DESIGN_KEYS)]
        errors += [f"missing design field {k!r}" for k in ("looks", "info", "upper_z")
                   if k not in doc]
        if errors:
            raise ValidationError(errors)
        if len(doc["info"]) != doc["looks"]:
            raise ValidationError([f"looks={doc['looks']} but info has {len(doc['info'])} entries"])
        return cls(
            info=doc["info"],
            upper_z=doc["upper_z"],
            lower_z=doc.get("lower_z"),
            sided=doc.get("sided", 1),
        )


def load_design(path: str | Path) -> TrialDesign:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"line {exc.lineno}: invalid JSON ({exc.msg})"]) from exc
    return TrialDesign.from_dict(doc)


@dataclass(frozen=True)
class StoppingProfile:
    """Per-look boundary crossing probabilities.

    For two-sided designs ``efficacy`` counts rejection in either tail.
    Monte Carlo profiles also carry binomial standard errors.
    """

    efficacy: tuple[float, ...]
    futility: tuple[float, ...]
    no_crossing: float
    efficacy_se: tuple[float, ...] | None = None
    futility_se: tuple[float, ...] | None = None
    no_crossing_se: float | None = None
    method: str = "recursion"
    nodes: int | None = field(default=None, compare=False)

    @property
    def total(self) -> float:
        return float(sum(self.efficacy) + sum(self.futility) + self.no_crossing)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "efficacy": list(self.efficacy),
            "futility": list(self.futility),
            "no_crossing": self.no_crossing,
        }
        if self.efficacy_se is not None:
            out["efficacy_se"] = list(self.efficacy_se)
            out["futility_se"] = list(self.futility_se)
            out["no_crossing_se"] = self.no_crossing_se
        return out


# ---------------------------------------------------------------------------
# Recursive numerical integration


def _simpson_weights(n: int, h: float) -> np.ndarray:
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _odd(n: int) -> int:
    return n if n % 2 else n + 1


def _continuation(design: TrialDesign, k: int) -> tuple[float, float]:
    """Continuation interval for Z at look ``k`` (0-based)."""
    up = design.upper_z[k]
    if design.sided == 2:
        return -up, up
    lo = -np.inf if design.lower_z is None else design.lower_z[k]
    return lo, up


def _recursion(design: TrialDesign, theta: float, n_nodes: int, span: float = 8.0):
    info = np.asarray(design.info)
    sq = np.sqrt(info)
    K = design.looks
    eff = np.zeros(K)
    fut = np.zeros(K)

    lo_z, hi_z = _continuation(design, 0)
    m1 = theta * sq[0]
    eff[0] = special.ndtr(m1 - hi_z)
    if design.sided == 2:
        eff[0] += special.ndtr(lo_z - m1)
    else:
        fut[0] = special.ndtr(lo_z - m1)
    if K == 1:
        return eff, fut, float(special.ndtr(hi_z - m1) - special.ndtr(lo_z - m1)), n_nodes

    max_nodes = n_nodes
    s = w = f = None
    for k in range(K):
        if k > 0:
            delta = info[k] - info[k - 1]
            sd = math.sqrt(delta)
            shift = s + theta * delta
            lo_z, hi_z = _continuation(design, k)
            up = special.ndtr((shift - hi_z * sq[k]) / sd)
            eff[k] = w @ (f * up)
            low = special.ndtr((lo_z * sq[k] - shift) / sd)
            if design.sided == 2:
                eff[k] += w @ (f * low)
            else:
                fut[k] = w @ (f * low)
            if k == K - 1:
                between = 1.0 - up - low
                return eff, fut, float(w @ (f * np.clip(between, 0.0, 1.0))), max_nodes

        # Grid for S_k over its continuation interval, trimmed to mean +/- span sd.
        mean, sdk = theta * info[k], sq[k]
        a = max(lo_z * sq[k], mean - span * sdk)
        b = min(hi_z * sq[k], mean + span * sdk)
        next_sd = math.sqrt(info[k + 1] - info[k])
        if b <= a:
            # All mass has already left through the boundaries.
            return eff, fut, 0.0, max_nodes
        n = max(n_nodes, _odd(int(math.ceil((b - a) / (next_sd / 8.0))) + 1))
        n = _odd(n)
        max_nodes = max(max_nodes, n)
        s_new = np.linspace(a, b, n)
        w_new = _simpson_weights(n, (b - a) / (n - 1))
        if k == 0:
            f_new = np.exp(-0.5 * ((s_new - mean) / sdk) ** 2) / (sdk * math.sqrt(2 * math.pi))
        else:
            kern = (s_new[:, None] - shift[None, :]) / sd
            kern = np.exp(-0.5 * kern * kern) / (sd * math.sqrt(2 * math.pi))
            f_new = kern @ (w * f)
        s, w, f = s_new, w_new, f_new
    raise AssertionError("unreachable")


def stopping_probabilities_recursive(
    design: TrialDesign,
    theta: float,
    n_nodes: int = 1001,
    tol: float = 1e-9,
    max_doublings: int = 4,
) -> StoppingProfile:
    """Exact stagewise crossing probabilities by iterated numerical integration.

    The grid is refined by doubling until two successive profiles agree to
    ``tol`` in every entry.

    Raises:
        AccuracyError: if ``max_doublings`` refinements do not reach ``tol``.
    """
    n = _odd(n_nodes)
    prev = _recursion(design, theta, n)
    diffs = []
    for _ in range(max_doublings):
        n = 2 * n - 1
        cur = _recursion(design, theta, n)
        diff = max(
            float(np.max(np.abs(cur[0] - prev[0]))),
            float(np.max(np.abs(cur[1] - prev[1]))),
            abs(cur[2] - prev[2]),
        )
        diffs.append(diff)
        prev = cur
        if diff < tol:
            eff, fut, cont, used = cur
            return StoppingProfile(tuple(map(float, eff)), tuple(map(float, fut)), cont,
                                   method="recursion", nodes=used)
    raise AccuracyError(
        f"recursion did not stabilise to {tol:g}; successive differences {diffs}"
    )


# ---------------------------------------------------------------------------
# Monte Carlo


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Counter-based generator for replicate block ``block`` under ``seed``."""
    key = np.array([seed % (1 << 64), block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _mc_block(design: TrialDesign, theta: float, seed: int, block: int, size: int):
    rng = block_generator(seed, block)
    info = np.asarray(design.info)
    delta = np.diff(np.concatenate([[0.0], info]))
    inc = rng.standard_normal((size, design.looks)) * np.sqrt(delta) + theta * delta
    z = np.cumsum(inc, axis=1) / np.sqrt(info)
    K = design.looks
    counts = np.zeros(2 * K + 1, dtype=np.int64)
    alive = np.ones(size, dtype=bool)
    for k in range(K):
        lo_z, hi_z = _continuation(design, k)
        zk = z[:, k]
        if design.sided == 2:
            cross_e = alive & (np.abs(zk) >= hi_z)
            cross_f = np.zeros(size, dtype=bool)
        else:
            cross_e = alive & (zk >= hi_z)
            cross_f = alive & (zk < lo_z)
        counts[k] = cross_e.sum()
        counts[K + k] = cross_f.sum()
        alive &= ~(cross_e | cross_f)
    counts[2 * K] = alive.sum()
    return counts


def _blocks(reps: int) -> list[tuple[int, int]]:
    out = []
    start = 0
    b = 0
    while start < reps:
        size = min(BLOCK_SIZE, reps - start)
        out.append((b, size))
        start += size
        b += 1
    return out


def stopping_probabilities_mc(
    design: TrialDesign,
    theta: float,
    reps: int,
    seed: int,
    threads: int | None = 1,
) -> StoppingProfile:
    """Monte Carlo stopping profile with binomial standard errors.

    Deterministic given ``seed``: replicate block ``b`` always draws from
    stream ``(seed, b)``, whatever the number of worker threads.
    """
    if reps < 10_000:
        raise ValueError("Monte Carlo stopping probabilities need reps >= 1e4")
    blocks = _blocks(reps)
    if threads == 1:
        parts = [_mc_block(design, theta, seed, b, size) for b, size in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda bs: _mc_block(design, theta, seed, *bs), blocks))
    counts = np.sum(parts, axis=0)
    p = counts / reps
    se = np.sqrt(p * (1.0 - p) / reps)
    K = design.looks
    return StoppingProfile(
        tuple(map(float, p[:K])), tuple(map(float, p[K:2 * K])), float(p[2 * K]),
        tuple(map(float, se[:K])), tuple(map(float, se[K:2 * K])), float(se[2 * K]),
        method="mc",
    )


# ---------------------------------------------------------------------------
# Boundary families


def _total_crossing(design: TrialDesign) -> float:
    return float(sum(stopping_probabilities_recursive(design, 0.0).efficacy))


def obf_boundaries(looks: int, alpha: float = 0.05, sided: int = 2) -> TrialDesign:
    """O'Brien-Fleming boundaries ``z_k = C sqrt(K/k)`` at equally spaced looks.

    ``C`` is calibrated so that the probability of crossing any efficacy
    boundary under ``theta = 0`` is ``alpha`` (two-sided when ``sided=2``).
    The returned design uses the relative information levels ``k/K``.
    """
    if looks < 1:
        raise ValueError("looks must be >= 1")
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    info = tuple((k + 1) / looks for k in range(looks))
    shape = np.sqrt(looks / np.arange(1, looks + 1))

    def excess(c: float) -> float:
        d = TrialDesign(info=info, upper_z=tuple(c * shape), sided=sided)
        return _total_crossing(d) - alpha

    crit = std_normal_quantile(1.0 - alpha / sided)
    c = find_root_bracketed(excess, 0.5 * crit, 2.0 * crit, tol=1e-10)
    return TrialDesign(info=info, upper_z=tuple(c * shape), sided=sided)


def haybittle_peto_boundaries(
    looks: int,
    interim_z: float | None = None,
    alpha: float = 0.05,
    sided: int = 2,
    calibrate: bool = True,
) -> TrialDesign:
    """Haybittle-Peto boundaries: a constant, extreme interim critical value.

    ``interim_z`` defaults to 3.2905, the two-sided 0.1% point. The final
    boundary is calibrated so the total crossing probability under the null
    equals ``alpha``; with ``calibrate=False`` it is left at the nominal
    fixed-sample value.
    """
    if looks < 2:
        raise ValueError("Haybittle-Peto boundaries need looks >= 2")
    if interim_z is None:
        interim_z = std_normal_quantile(1.0 - 0.001 / 2.0)
    info = tuple((k + 1) / looks for k in range(looks))
    nominal = std_normal_quantile(1.0 - alpha / sided)
    interim = (float(interim_z),) * (looks - 1)
    if not calibrate:
        return TrialDesign(info=info, upper_z=interim + (nominal,), sided=sided)

    def excess(final: float) -> float:
        return _total_crossing(TrialDesign(info=info, upper_z=interim + (final,), sided=sided)) - alpha

    final = find_root_bracketed(excess, 0.5 * nominal, 2.0 * nominal, tol=1e-10)
    return TrialDesign(info=info, upper_z=interim + (final,), sided=sided)
