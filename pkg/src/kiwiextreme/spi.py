"""Standardised Precipitation Index.

Monthly totals are summed over a rolling window of ``k`` months. For every
calendar month, the rolling sums from all years are split into a zero mass
``q`` and a gamma distribution fitted to the positive sums. A value maps to
the cumulative probability ``H = q + (1 - q) G(x)`` (``q / 2`` for exact
zeros), clamped away from 0 and 1, then to the standard normal quantile of
``H``.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigInvalid, DegenerateSample, InsufficientHistory, NonPositiveSample
from .preprocess import MonthlySeries

TIMESCALES = (1, 3, 6, 12)
DEFAULT_TIMESCALE = 3
MIN_FIT_SAMPLES = 10
CLAMP = 1e-6
NEWTON_MAX_STEPS = 20
NEWTON_TOL = 1e-10


class DroughtClass(str, enum.Enum):
    NONE = "NONE"
    MODERATE = "MODERATE"
    SEVERE = "SEVERE"
    EXTREME = "EXTREME"

    @property
    def rank(self) -> int:
        return list(DroughtClass).index(self)


def classify_drought(spi_value: float) -> DroughtClass:
    """Thresholds -1.0 / -1.5 / -2.0, each inclusive toward the drier class."""
    if spi_value <= -2.0:
        return DroughtClass.EXTREME
    if spi_value <= -1.5:
        return DroughtClass.SEVERE
    if spi_value <= -1.0:
        return DroughtClass.MODERATE
    return DroughtClass.NONE


def rolling_precip(monthly, k: int) -> np.ndarray:
    """k-month trailing sums; the first ``k - 1`` entries are NaN.

    A NaN month poisons every window that contains it.
    """
    x = np.asarray(monthly.values if isinstance(monthly, MonthlySeries) else monthly, dtype=float)
    if k < 1:
        raise ConfigInvalid("timescale must be >= 1")
    if len(x) < k:
        raise InsufficientHistory(f"{len(x)} months is shorter than the {k}-month window")
    out = np.full(len(x), np.nan)
    out[k - 1:] = np.lib.stride_tricks.sliding_window_view(x, k).sum(axis=1)
    return out


@dataclass(frozen=True)
class GammaFit:
    alpha: float
    beta: float
    zero_prob: float = 0.0


def fit_gamma(samples) -> tuple[float, float]:
    """Maximum-likelihood gamma ``(shape, scale)``.

    Starts from Thom's closed-form approximation and polishes the shape with
    Newton steps on ``ln(a) - digamma(a) = ln(mean) - mean(ln x)``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if (x <= 0).any():
        raise NonPositiveSample("gamma fit needs strictly positive samples")
    if len(x) < MIN_FIT_SAMPLES:
        raise DegenerateSample(f"{len(x)} samples, need at least {MIN_FIT_SAMPLES}")
    if np.all(x == x[0]):
        raise DegenerateSample("all samples are equal")
    mean = x.mean()
    A = np.log(mean) - np.log(x).mean()
    if not A > 0:
        raise DegenerateSample("samples have no spread on the log scale")
    alpha = (1.0 + np.sqrt(1.0 + 4.0 * A / 3.0)) / (4.0 * A)
    for _ in range(NEWTON_MAX_STEPS):
        f = np.log(alpha) - special.digamma(alpha) - A
        fprime = 1.0 / alpha - special.polygamma(1, alpha)
        step = f / fprime
        new = alpha - step
        while new <= 0:
            step /= 2
            new = alpha - step
        alpha, delta = new, abs(new - alpha)
        if delta < NEWTON_TOL:
            break
    return float(alpha), float(mean / alpha)


def gamma_cdf(x, alpha: float, beta: float):
    return special.gammainc(alpha, np.asarray(x, dtype=float) / beta)


def normal_quantile(p):
    return special.ndtri(p)


def spi_transform(value, fit: GammaFit):
    """SPI of one rolling sum (or an array of them) under a calendar-month fit."""
    v = np.asarray(value, dtype=float)
    q = fit.zero_prob
    with np.errstate(invalid="ignore"):
        pos = q + (1.0 - q) * gamma_cdf(np.where(v > 0, v, 1.0), fit.alpha, fit.beta)
    H = np.where(v > 0, pos, q / 2.0)
    H = np.clip(H, CLAMP, 1.0 - CLAMP)
    out = normal_quantile(H)
    out = np.where(np.isnan(v), np.nan, out)
    return float(out) if out.ndim == 0 else out


@dataclass
class SpiSeries:
    station_id: str
    timescale_months: int
    start_year: int
    start_month: int
    values: np.ndarray
    fit_params: dict[int, GammaFit] = field(default_factory=dict)

    def month_at(self, i: int) -> tuple[int, int]:
        k = self.start_year * 12 + self.start_month - 1 + int(i)
        return k // 12, k % 12 + 1

    def defined(self):
        """``((year, month), spi)`` for months with full window coverage."""
        for i, v in enumerate(self.values):
            if not np.isnan(v):
                yield self.month_at(i), float(v)

    def to_csv(self) -> str:
        out = io.StringIO(newline="")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("station_id", "month", "spi", "drought_class"))
        for (y, m), v in self.defined():
            w.writerow([self.station_id, f"{y:04d}-{m:02d}", repr(v), classify_drought(v).value])
        return out.getvalue()


def compute_spi(monthly: MonthlySeries, k: int = DEFAULT_TIMESCALE,
                min_years: int = MIN_FIT_SAMPLES) -> SpiSeries:
    """Fit every calendar month separately and transform the whole series."""
    if k not in TIMESCALES:
        raise ConfigInvalid(f"timescale {k} not in {TIMESCALES}")
    rolled = rolling_precip(monthly.values, k)
    cal = monthly.calendar_months()
    spi = np.full(len(rolled), np.nan)
    fits = {}
    for m in range(1, 13):
        sel = (cal == m) & ~np.isnan(rolled)
        vals = rolled[sel]
        if len(vals) < min_years:
            raise InsufficientHistory(
                f"{monthly.station_id}: calendar month {m} has {len(vals)} "
                f"complete {k}-month sums, need {min_years}"
            )
        q = float(np.mean(vals == 0.0))
        alpha, beta = fit_gamma(vals[vals > 0])
        fits[m] = GammaFit(alpha, beta, q)
        spi[sel] = spi_transform(vals, fits[m])
    return SpiSeries(monthly.station_id, k, monthly.start_year, monthly.start_month, spi, fits)
