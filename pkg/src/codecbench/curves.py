"""Rate-quality and rate-energy curve analysis.

Two comparison metrics are computed from the per-QP sweep of a codec:

* the slope of the least-squares line through (bitrate, energy) points,
  which expresses the energy cost per unit of bitrate between compression
  levels (lower is more energy-efficient), gated by the fit's R²; and
* the Bjøntegaard delta of a quality metric between a test codec and the
  anchor: the average vertical gap between the two quality-over-log-rate
  curves across their overlapping rate range, interpolated with a
  shape-preserving monotone piecewise cubic.

BD-Rate is deliberately not computed: with widely differing quality
scales it would require extrapolating across the bitrate axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    DegenerateRates,
    NonFiniteQuality,
    NoOverlap,
    RaggedCurves,
    TooFewPoints,
)

DEFAULT_R2_FLOOR = 0.92
BD_OUTLIER_LIMIT = 20.0


class LowFitWarning(UserWarning):
    """The rate-energy line fit is poorer than the configured R² floor."""


class DuplicateRateWarning(UserWarning):
    """Two QP rungs produced the same bitrate; the lower-quality one was dropped."""


class NegativeSlopeWarning(UserWarning):
    """A rate-energy fit has a negative slope, which is physically odd."""


@dataclass(frozen=True)
class CurvePoint:
    """One QP rung: bitrate, a quality value, optional phase energy."""

    rate_kbps: float
    quality: float
    energy_j: float | None = None

    def __post_init__(self):
        if not self.rate_kbps > 0:
            raise ValueError("rate_kbps must be positive")


@dataclass(frozen=True)
class CurveFit:
    """Least-squares line E = alpha * R + beta with its goodness of fit."""

    alpha: float
    beta: float
    r_squared: float
    n_points: int

    @property
    def slope_negative(self) -> bool:
        return self.alpha < 0


@dataclass(frozen=True)
class BDResult:
    """Average quality delta of a test codec against the anchor."""

    metric: str
    bd_quality: float
    overlap_lo: float  # log10(kbps)
    overlap_hi: float
    anchor_id: str = ""
    test_id: str = ""

    @property
    def outlier(self) -> bool:
        return abs(self.bd_quality) > BD_OUTLIER_LIMIT


def fit_re_line(points: list[CurvePoint]) -> CurveFit:
    """Ordinary least squares of energy on rate across QP rungs.

    R² is 1 - SSres/SStot, with R² = 1 for an exact fit of constant
    energies (SStot = SSres = 0).
    """
    pts = [p for p in points if p.energy_j is not None]
    if len(pts) < 2:
        raise TooFewPoints(f"need >= 2 points with energy, got {len(pts)}")
    r = np.asarray([p.rate_kbps for p in pts], dtype=np.float64)
    e = np.asarray([p.energy_j for p in pts], dtype=np.float64)
    r_centered = r - r.mean()
    sxx = float(r_centered @ r_centered)
    if sxx == 0.0:
        raise DegenerateRates("all rates are equal; cannot fit a line")
    alpha = float(r_centered @ (e - e.mean())) / sxx
    beta = float(e.mean()) - alpha * float(r.mean())
    residuals = e - (alpha * r + beta)
    ss_res = float(residuals @ residuals)
    ss_tot = float(((e - e.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res == 0.0 else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    r_squared = min(max(r_squared, 0.0), 1.0)
    fit = CurveFit(alpha=alpha, beta=beta, r_squared=r_squared, n_points=len(pts))
    if fit.slope_negative:
        warnings.warn(
            f"rate-energy slope is negative ({alpha:.4g} J/kbps)", NegativeSlopeWarning
        )
    return fit


def ebr(fit: CurveFit, floor_r2: float = DEFAULT_R2_FLOOR) -> float:
    """Energy-to-bitrate ratio: the slope of the rate-energy line.

    Warns with :class:`LowFitWarning` when the fit's R² is below
    ``floor_r2`` (the ratio is then a questionable summary of the curve).
    """
    if fit.r_squared < floor_r2:
        warnings.warn(
            f"R² {fit.r_squared:.3f} below floor {floor_r2:.3f}; EBR may be unreliable",
            LowFitWarning,
        )
    return fit.alpha


def _prepare_curve(points: list[CurvePoint], label: str) -> tuple[np.ndarray, np.ndarray]:
    """Sort by rate, drop duplicate rates (keeping higher quality)."""
    for p in points:
        if not math.isfinite(p.quality):
            raise NonFiniteQuality(f"{label}: non-finite quality at {p.rate_kbps} kbps")
    ordered = sorted(points, key=lambda p: (p.rate_kbps, p.quality))
    dedup: list[CurvePoint] = []
    for p in ordered:
        if dedup and p.rate_kbps == dedup[-1].rate_kbps:
            warnings.warn(
                f"{label}: duplicate rate {p.rate_kbps} kbps, keeping higher quality",
                DuplicateRateWarning,
            )
            dedup[-1] = p  # ordered ascending by quality within equal rates
        else:
            dedup.append(p)
    if len(dedup) < 3:
        raise TooFewPoints(f"{label}: need >= 3 distinct-rate points, got {len(dedup)}")
    x = np.log10([p.rate_kbps for p in dedup])
    y = np.asarray([p.quality for p in dedup], dtype=np.float64)
    return x, y


def bd_quality(
    anchor: list[CurvePoint],
    test: list[CurvePoint],
    metric: str = "psnr",
    anchor_id: str = "",
    test_id: str = "",
) -> BDResult:
    """Bjøntegaard delta of ``metric`` between a test curve and the anchor.

    Both curves are interpolated as quality over log10(rate) with a
    monotone piecewise cubic and integrated exactly over the overlapping
    log-rate interval. Negative values mean the test codec delivers lower
    quality than the anchor at equal rate.
    """
    xa, ya = _prepare_curve(anchor, "anchor")
    xt, yt = _prepare_curve(test, "test")
    lo = max(xa[0], xt[0])
    hi = min(xa[-1], xt[-1])
    if not lo < hi:
        raise NoOverlap("curves share no rate interval")
    ia = PchipInterpolator(xa, ya)
    it = PchipInterpolator(xt, yt)
    int_anchor = float(ia.integrate(lo, hi))
    int_test = float(it.integrate(lo, hi))
    return BDResult(
        metric=metric,
        bd_quality=(int_test - int_anchor) / (hi - lo),
        overlap_lo=float(lo),
        overlap_hi=float(hi),
        anchor_id=anchor_id,
        test_id=test_id,
    )


def interpolate_quality(points: list[CurvePoint], rates_kbps) -> np.ndarray:
    """Quality of the curve's interpolant at the given rates."""
    x, y = _prepare_curve(points, "curve")
    return PchipInterpolator(x, y)(np.log10(np.asarray(rates_kbps, dtype=np.float64)))


def average_curves(curves: list[list[CurvePoint]]) -> list[CurvePoint]:
    """Average curves rung-by-rung across sequences.

    Point i of every curve must correspond to the same QP rung; the result
    has the rung-wise mean rate, quality and energy. Energy is averaged
    only when every curve provides it.
    """
    if not curves:
        raise TooFewPoints("need at least one curve")
    n = len(curves[0])
    if any(len(c) != n for c in curves):
        raise RaggedCurves(f"curves have differing point counts: {[len(c) for c in curves]}")
    out = []
    for i in range(n):
        rung = [c[i] for c in curves]
        energies = [p.energy_j for p in rung]
        energy = float(np.mean(energies)) if all(e is not None for e in energies) else None
        out.append(
            CurvePoint(
                rate_kbps=float(np.mean([p.rate_kbps for p in rung])),
                quality=float(np.mean([p.quality for p in rung])),
                energy_j=energy,
            )
        )
    return out
