"""Normal distribution functions and scalar/vectorised equation solvers.

The univariate normal functions delegate to :mod:`scipy.special`; the
bivariate normal cdf is computed here with the Drezner-Wesolowsky
Gauss-Legendre scheme as refined by Genz, including the high-correlation
branch, and is fully vectorised so that simulation code can evaluate it on
millions of points at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize, special

from .exceptions import BracketError, ConvergenceError, DomainError

__all__ = [
    "BivariateNormalSpec",
    "FixedPointResult",
    "bivariate_normal_cdf",
    "bvn_cdf",
    "find_root_bracketed",
    "find_roots_vectorized",
    "solve_fixed_point",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi

# 20-point Gauss-Legendre rule shifted from [-1, 1] to [0, 2].
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_GL_X = _GL_X + 1.0


def std_normal_pdf(x):
    """Standard normal density; accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out if out.ndim else float(out)


def std_normal_cdf(x):
    """Standard normal cdf. ``±inf`` map to exactly 1 and 0."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf`.

    Raises:
        DomainError: if any ``p`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError(f"quantile requires p in (0, 1), got {p!r}")
    out = special.ndtri(arr)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BivariateNormalSpec:
    """Bivariate normal with unit variances, given means and correlation."""

    mean1: float = 0.0
    mean2: float = 0.0
    correlation: float = 0.0

    def __post_init__(self):
        if not abs(self.correlation) < 1.0:
            raise DomainError(
                f"correlation must satisfy |rho| < 1, got {self.correlation}"
            )


def _bvnu(h: np.ndarray, k: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Upper orthant probability P(X > h, Y > k) for finite h, k and |r| < 1."""
    out = np.empty_like(h)
    hk = h * k

    low = np.abs(r) < 0.925
    if np.any(low):
        hl, kl, hkl = h[low], k[low], hk[low]
        hs = 0.5 * (hl * hl + kl * kl)
        asr = 0.5 * np.arcsin(r[low])
        sn = np.sin(asr[:, None] * _GL_X)
        terms = np.exp((sn * hkl[:, None] - hs[:, None]) / (1.0 - sn * sn))
        bvn = terms @ _GL_W
        out[low] = bvn * asr / _TWO_PI + special.ndtr(-hl) * special.ndtr(-kl)

    high = ~low
    if np.any(high):
        hh, rh = h[high], r[high]
        kh = np.where(rh < 0, -k[high], k[high])
        hkh = np.where(rh < 0, -hk[high], hk[high])
        a_s = (1.0 - rh) * (1.0 + rh)
        a = np.sqrt(a_s)
        bs = (hh - kh) ** 2
        c = (4.0 - hkh) / 8.0
        d = (12.0 - hkh) / 80.0
        asr = -0.5 * (bs / a_s + hkh)
        with np.errstate(under="ignore", over="ignore"):
            bvn = np.where(
                asr > -100.0,
                a * np.exp(asr) * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0
                                   + c * d * a_s * a_s),
                0.0,
            )
            b = np.sqrt(bs)
            sp = math.sqrt(_TWO_PI) * special.ndtr(-b / a)
            bvn = np.where(
                hkh > -100.0,
                bvn - np.exp(-0.5 * hkh) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
                bvn,
            )
            a2 = 0.5 * a
            xs = (a2[:, None] * _GL_X) ** 2
            asr2 = -0.5 * (bs[:, None] / xs + hkh[:, None])
            keep = asr2 > -100.0
            spx = 1.0 + c[:, None] * xs * (1.0 + 5.0 * d[:, None] * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-0.5 * hkh[:, None] * xs / (1.0 + rs) ** 2) / rs
            contrib = np.where(keep, np.exp(np.where(keep, asr2, 0.0)) * (spx - ep), 0.0)
        bvn = (a2 * (contrib @ _GL_W) - bvn) / _TWO_PI

        res = np.empty_like(bvn)
        pos = rh > 0
        res[pos] = bvn[pos] + special.ndtr(-np.maximum(hh[pos], kh[pos]))
        neg = ~pos
        if np.any(neg):
            hn, kn, bn = hh[neg], kh[neg], bvn[neg]
            lterm = np.where(
                hn < 0,
                special.ndtr(kn) - special.ndtr(hn),
                special.ndtr(-hn) - special.ndtr(-kn),
            )
            res[neg] = np.where(hn >= kn, -bn, lterm - bn)
        out[high] = res

    return np.clip(out, 0.0, 1.0)


def bvn_cdf(a, b, rho):
    """Standardised bivariate normal cdf P(X <= a, Y <= b), vectorised.

    ``a``, ``b`` and ``rho`` broadcast against each other. Infinite limits
    are handled exactly.

    Raises:
        DomainError: if any ``|rho| >= 1``.
    """
    a, b, rho = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(rho, dtype=float)
    )
    if np.any(~(np.abs(rho) < 1.0)):
        raise DomainError("bivariate normal correlation must satisfy |rho| < 1")
    shape = a.shape
    a, b, rho = a.ravel(), b.ravel(), rho.ravel()
    out = np.zeros(a.size)

    finite = np.isfinite(a) & np.isfinite(b)
    a_ninf = a == -np.inf
    b_ninf = b == -np.inf
    zero = a_ninf | b_ninf
    a_pinf = (a == np.inf) & ~zero
    b_pinf = (b == np.inf) & ~zero & ~a_pinf
    out[a_pinf] = special.ndtr(b[a_pinf])
    out[b_pinf] = special.ndtr(a[b_pinf])
    if np.any(finite):
        out[finite] = _bvnu(-a[finite], -b[finite], rho[finite])
    return float(out[0]) if not shape else out.reshape(shape)


def bivariate_normal_cdf(a, b, spec: BivariateNormalSpec):
    """P(X1 <= a, X2 <= b) for the unit-variance bivariate normal ``spec``.

    Examples:
        >>> round(bivariate_normal_cdf(0.0, 0.0, BivariateNormalSpec(correlation=0.5)), 6)
        0.333333
    """
    return bvn_cdf(
        np.asarray(a, dtype=float) - spec.mean1,
        np.asarray(b, dtype=float) - spec.mean2,
        spec.correlation,
    )


def find_root_bracketed(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10
) -> float:
    """Root of a continuous function bracketed by ``[lo, hi]`` (Brent's method).

    Raises:
        BracketError: if ``f(lo)`` and ``f(hi)`` have the same sign.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo:.3g}, f(hi)={fhi:.3g}"
        )
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


class FixedPointResult(NamedTuple):
    value: float
    iterations: int
    converged: bool
    used_fallback: bool


def solve_fixed_point(
    g: Callable[[float], float],
    start: float,
    damping: float = 1.0,
    max_iter: int = 100,
    tol: float = 1e-10,
    bracket: tuple[float, float] | None = None,
) -> FixedPointResult:
    """Solve ``x = g(x)`` by damped iteration starting at ``start``.

    The damping factor is halved whenever the step length stops shrinking.
    If iteration fails to converge within ``max_iter`` steps the equation
    ``x - g(x) = 0`` is handed to :func:`find_root_bracketed` on ``bracket``.

    Raises:
        DomainError: for damping outside (0, 1] or a non-finite start.
        ConvergenceError: when both the iteration and the fallback fail.
    """
    if not 0.0 < damping <= 1.0:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    if not math.isfinite(start):
        raise DomainError("fixed-point start must be finite")

    x = float(start)
    prev_step = math.inf
    for it in range(max_iter + 1):
        gx = g(x)
        step = gx - x
        if abs(step) <= tol:
            return FixedPointResult(x, it, True, False)
        if abs(step) >= prev_step:
            damping *= 0.5
        prev_step = abs(step)
        x = x + damping * step
        if not math.isfinite(x):
            break

    if bracket is not None:
        try:
            root = find_root_bracketed(lambda t: t - g(t), bracket[0], bracket[1], tol)
        except BracketError as exc:
            raise ConvergenceError(
                f"fixed-point iteration did not converge in {max_iter} steps and "
                f"bracketing fallback failed: {exc}"
            ) from exc
        return FixedPointResult(root, max_iter, True, True)
    raise ConvergenceError(f"fixed-point iteration did not converge in {max_iter} steps")


def find_roots_vectorized(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> np.ndarray:
    """Elementwise roots of increasing functions by the Illinois method.

    ``f(x, idx)`` must evaluate the functions belonging to positions
    ``idx`` at the points ``x``. Brackets are widened (doubling their
    half-width) until ``f(lo) < 0 < f(hi)`` holds everywhere.

    Raises:
        BracketError: if a bracket cannot be established.
        ConvergenceError: if some root is not located within ``max_iter``.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    n = a.size
    idx_all = np.arange(n)
    fa = f(a, idx_all)
    fb = f(b, idx_all)
    for _ in range(60):
        bad_lo = fa > 0
        bad_hi = fb < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = b - a
        if bad_lo.any():
            i = np.flatnonzero(bad_lo)
            b[i], fb[i] = a[i], fa[i]
            a[i] = a[i] - 2.0 * width[i]
            fa[i] = f(a[i], i)
        if bad_hi.any():
            i = np.flatnonzero(bad_hi)
            a[i], fa[i] = b[i], fb[i]
            b[i] = b[i] + 2.0 * width[i]
            fb[i] = f(b[i], i)
    else:
        raise BracketError("could not bracket all roots")

    x = np.full(n, np.nan)
    side = np.zeros(n, dtype=np.int8)
    active = np.flatnonzero((fa != 0) & (fb != 0))
    x[fa == 0] = a[fa == 0]
    x[fb == 0] = b[fb == 0]
    for _ in range(max_iter):
        if active.size == 0:
            return x
        aa, bb, ffa, ffb = a[active], b[active], fa[active], fb[active]
        xn = (aa * ffb - bb * ffa) / (ffb - ffa)
        inside = (xn > aa) & (xn < bb)
        xn = np.where(inside, xn, 0.5 * (aa + bb))
        fx = f(xn, active)
        left = fx < 0
        right = fx > 0
        s = side[active]
        # Illinois: halve the retained endpoint's value after two same-side moves.
        a[active] = np.where(left, xn, aa)
        fa[active] = np.where(left, fx, np.where(right & (s == 1), 0.5 * ffa, ffa))
        b[active] = np.where(right, xn, bb)
        fb[active] = np.where(right, fx, np.where(left & (s == -1), 0.5 * ffb, ffb))
        side[active] = np.where(left, -1, np.where(right, 1, 0))
        done = (np.abs(xn - x[active]) <= tol) | (fx == 0) | (b[active] - a[active] <= tol)
        x[active] = xn
        active = active[~done]
    if active.size:
        raise ConvergenceError(f"{active.size} roots did not converge in {max_iter} iterations")
    return x
