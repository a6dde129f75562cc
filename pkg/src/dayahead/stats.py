"""Accuracy metric and Diebold-Mariano tests for hourly day-ahead forecasts."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import AlignmentError, LengthMismatch, MissingColumn, UndefinedTerm, ZeroVariance

FULL_SEQUENCE_ORDER = 23


def smape_terms(actual, predicted) -> np.ndarray:
    """Per-value terms ``200 |y - yhat| / (|y| + |yhat|)``, each in [0, 200]."""
    y = np.asarray(actual, dtype=float).ravel()
    yhat = np.asarray(predicted, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise LengthMismatch(f"{y.size} actual vs {yhat.size} predicted values")
    if y.size == 0:
        raise LengthMismatch("sMAPE needs at least one value")
    denom = np.abs(y) + np.abs(yhat)
    if np.any(denom == 0):
        raise UndefinedTerm("actual and predicted value both zero")
    # the ratio is at most 1 after rounding, so terms never exceed 200
    return 200.0 * (np.abs(y - yhat) / denom)


def smape(actual, predicted) -> float:
    """Symmetric mean absolute percentage error, in percent (0 to 200)."""
    return float(np.mean(smape_terms(actual, predicted)))


@dataclass(frozen=True)
class ErrorSeries:
    """Forecast errors ``actual - predicted`` with day and hour (1..24) labels."""

    errors: np.ndarray
    dates: tuple[dt.date, ...]
    hours: np.ndarray

    def __post_init__(self):
        n = len(self.errors)
        if n % 24 or len(self.dates) != n or len(self.hours) != n:
            raise LengthMismatch("error series must cover whole days with one label per value")
        if not np.array_equal(self.hours, np.tile(np.arange(1, 25), n // 24)):
            raise AlignmentError("hour labels must cycle 1..24")

    def __len__(self) -> int:
        return len(self.errors)

    @classmethod
    def from_days(cls, days, errors) -> "ErrorSeries":
        errors = np.asarray(errors, dtype=float).reshape(-1)
        n_days = len(days)
        return cls(errors, tuple(d for d in days for _ in range(24)), np.tile(np.arange(1, 25), n_days))


def loss_differential(e1, e2, p: int = 1) -> np.ndarray:
    """``|e1|^p - |e2|^p`` elementwise."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if isinstance(e1, ErrorSeries) and isinstance(e2, ErrorSeries):
        if e1.dates != e2.dates:
            raise AlignmentError("error series cover different days")
    a = np.asarray(getattr(e1, "errors", e1), dtype=float)
    b = np.asarray(getattr(e2, "errors", e2), dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} vs {b.size} errors")
    return np.abs(a) ** p - np.abs(b) ** p


@dataclass(frozen=True)
class DMResult:
    """Outcome of one DM test.

    ``side == "one"`` tests ``H1: E[d] < 0`` (model 1 more accurate) with
    ``p = Phi(statistic)``; ``side == "two"`` uses ``p = 2 * Phi(-|statistic|)``.
    ``bartlett`` flags that the truncated long-run variance was not positive
    and Bartlett weights were used instead. A ``degenerate`` result (zero
    variance differential) has statistic 0 and p-value 1.
    """

    statistic: float
    p_value: float
    side: str
    order: int
    n_obs: int
    bartlett: bool = False
    degenerate: bool = False

    @property
    def direction(self) -> str:
        return "M1 better (one-sided)" if self.side == "one" else "two-sided"

    def significant(self, alpha: float = 0.05) -> bool:
        return not self.degenerate and self.p_value < alpha


def long_run_variance(d: np.ndarray, order: int) -> tuple[float, bool]:
    """Truncated autocovariance sum ``g0 + 2 * sum_{j<=order} g_j`` (divisor N).

    Falls back to Bartlett weights if the truncated sum is not positive; the
    second return value reports the fallback.
    """
    d = np.asarray(d, dtype=float)
    n = len(d)
    dc = d - d.mean()
    gam = np.array([dc[j:] @ dc[: n - j] / n for j in range(order + 1)])
    lrv = gam[0] + 2.0 * gam[1:].sum()
    if lrv > 0:
        return float(lrv), False
    weights = 1.0 - np.arange(1, order + 1) / (order + 1)
    return float(gam[0] + 2.0 * (weights * gam[1:]).sum()), True


def dm_test(d, order: int = 0, side: str = "one", strict: bool = True) -> DMResult:
    """Diebold-Mariano test on a loss differential ``d``.

    ``order`` is the number of autocovariance lags kept in the long-run
    variance (0 gives the plain test). With ``strict=False`` a zero-variance
    differential returns a degenerate result instead of raising
    :class:`ZeroVariance`.
    """
    if side not in ("one", "two"):
        raise ValueError("side must be 'one' or 'two'")
    d = np.asarray(d, dtype=float).ravel()
    n = len(d)
    if n <= order + 1:
        raise LengthMismatch(f"{n} observations cannot support order {order}")
    if np.ptp(d) == 0:
        if strict:
            raise ZeroVariance("loss differential has zero variance")
        return DMResult(0.0, 1.0, side, order, n, degenerate=True)
    lrv, bartlett = long_run_variance(d, order)
    if lrv <= 0:
        # only reachable when even the Bartlett estimate vanishes
        if strict:
            raise ZeroVariance("long-run variance of the loss differential is zero")
        return DMResult(0.0, 1.0, side, order, n, bartlett=bartlett, degenerate=True)
    stat = float(d.mean() / np.sqrt(lrv / n))
    if side == "one":
        p = float(norm.cdf(stat))
    else:
        p = float(2.0 * norm.sf(abs(stat)))
    return DMResult(stat, p, side, order, n, bartlett=bartlett)


def hourly_dm(e1: ErrorSeries, e2: ErrorSeries, side: str = "one", p: int = 1, strict: bool = True) -> list[DMResult]:
    """One test per hour of day (index 0 is hour 1), each with order 0."""
    d = loss_differential(e1, e2, p)
    by_hour = d.reshape(-1, 24)
    return [dm_test(by_hour[:, h], 0, side, strict=strict) for h in range(24)]


def full_dm(e1: ErrorSeries, e2: ErrorSeries, side: str = "one", p: int = 1, strict: bool = True) -> DMResult:
    """Single test on the whole sequence allowing serial correlation of order 23."""
    return dm_test(loss_differential(e1, e2, p), FULL_SEQUENCE_ORDER, side, strict=strict)


def format_p(p: float) -> str:
    """Render like ``1.2e-11`` for tiny values, plainly otherwise."""
    if p == 0:
        return "0"
    return f"{p:.1e}" if p < 1e-2 else f"{p:.3f}"


def read_error_csv(path: str | Path) -> tuple[ErrorSeries, ErrorSeries]:
    """Read ``date,hour,error_m1,error_m2`` rows into two aligned series."""
    dates, hours, e1, e2 = [], [], [], []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"date", "hour", "error_m1", "error_m2"} - set(reader.fieldnames or [])
        if missing:
            raise MissingColumn(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            dates.append(dt.date.fromisoformat(row["date"]))
            hours.append(int(row["hour"]))
            e1.append(float(row["error_m1"]))
            e2.append(float(row["error_m2"]))
    h = np.array(hours)
    return ErrorSeries(np.array(e1), tuple(dates), h), ErrorSeries(np.array(e2), tuple(dates), h)


def write_error_csv(path: str | Path, e1: ErrorSeries, e2: ErrorSeries) -> None:
    if e1.dates != e2.dates:
        raise AlignmentError("error series cover different days")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "hour", "error_m1", "error_m2"])
        for d, h, a, b in zip(e1.dates, e1.hours, e1.errors, e2.errors):
            w.writerow([d.isoformat(), int(h), f"{a:.10g}", f"{b:.10g}"])
