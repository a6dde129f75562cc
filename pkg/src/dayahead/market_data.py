"""Hourly two-market data: CSV ingestion, DST repair, splitting, scaling and a
synthetic coupled-market generator.

Market ``B`` is the market being forecast and ``F`` is the connected market.
Timestamps are naive local market time at hourly resolution.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    BoundaryOutOfRange,
    DegenerateChannel,
    MissingColumn,
    NonMonotoneTimestamps,
    UnparseableRow,
    UnrepairableDay,
)

NUMERIC_CHANNELS = ("price_B", "price_F", "load_B", "load_F", "gen_B", "gen_F")
HOLIDAY_CHANNELS = ("holiday_B", "holiday_F")
CHANNELS = NUMERIC_CHANNELS + HOLIDAY_CHANNELS
COLUMNS = ("timestamp",) + CHANNELS

HOUR = np.timedelta64(1, "h")


@dataclass(frozen=True)
class MarketSeries:
    """Aligned hourly records of both markets.

    ``frame`` is indexed by ``timestamp`` and holds one column per channel.
    Instances are treated as immutable; every operation returns a new series.
    """

    frame: pd.DataFrame
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def timestamps(self) -> np.ndarray:
        return self.frame.index.values

    @property
    def days(self) -> list[dt.date]:
        return sorted(set(self.frame.index.date))

    @property
    def n_days(self) -> int:
        return len(self) // 24

    def channel(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy(dtype=float)

    def is_regular(self) -> bool:
        if len(self) == 0 or len(self) % 24 or self.frame.index[0].hour != 0:
            return False
        return bool(np.all(np.diff(self.timestamps) == HOUR))

    def check_regular(self) -> None:
        if not self.is_regular():
            raise NonMonotoneTimestamps(
                "series must consist of whole days with strictly hourly timestamps"
            )

    def day_slice(self, first: int, stop: int) -> "MarketSeries":
        """Days ``first .. stop-1`` by position."""
        return MarketSeries(self.frame.iloc[24 * first : 24 * stop], self.provenance)

    def between(self, start: dt.date | None, stop: dt.date | None) -> "MarketSeries":
        """Records with ``start <= date < stop``; ``None`` leaves a side open."""
        idx = self.frame.index
        mask = np.ones(len(idx), dtype=bool)
        if start is not None:
            mask &= idx >= pd.Timestamp(start)
        if stop is not None:
            mask &= idx < pd.Timestamp(stop)
        return MarketSeries(self.frame.loc[mask], self.provenance)

    def to_csv(self, path: str | Path) -> None:
        out = self.frame.copy()
        for name in HOLIDAY_CHANNELS:
            out[name] = out[name].astype(int)
        out.index = out.index.strftime("%Y-%m-%dT%H:%M")
        out.index.name = "timestamp"
        out.to_csv(path, columns=list(CHANNELS), float_format="%.10g")

    @classmethod
    def concat(cls, parts: Sequence["MarketSeries"]) -> "MarketSeries":
        frame = pd.concat([p.frame for p in parts])
        return cls(frame, parts[0].provenance if parts else "")


@dataclass(frozen=True)
class DatasetSplit:
    train: MarketSeries
    validation: MarketSeries
    test: MarketSeries

    @staticmethod
    def _range(series: MarketSeries) -> tuple[dt.date, dt.date]:
        days = series.days
        return days[0], days[-1]

    @property
    def train_range(self) -> tuple[dt.date, dt.date]:
        return self._range(self.train)

    @property
    def validation_range(self) -> tuple[dt.date, dt.date]:
        return self._range(self.validation)

    @property
    def test_range(self) -> tuple[dt.date, dt.date]:
        return self._range(self.test)


def load_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    allow_dst_duplicates: bool = False,
) -> MarketSeries:
    """Read the canonical CSV layout.

    ``schema`` maps canonical column names to the header names used in the
    file (identity by default). With ``allow_dst_duplicates`` a timestamp may
    repeat on consecutive rows, as it does in local-time exports on the
    autumn DST day; ``repair_dst`` then removes the repeat.
    """
    schema = {c: c for c in COLUMNS} | dict(schema or {})
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        positions = {}
        for col in COLUMNS:
            if schema[col] not in header:
                raise MissingColumn(f"{path}: missing column {schema[col]!r}")
            positions[col] = header.index(schema[col])

        stamps: list[dt.datetime] = []
        values: list[list[float]] = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                ts = dt.datetime.fromisoformat(row[positions["timestamp"]].strip())
                vals = [float(row[positions[c]]) for c in CHANNELS]
            except (ValueError, IndexError) as exc:
                raise UnparseableRow(line, str(exc)) from None
            if ts.minute or ts.second or not all(math.isfinite(v) for v in vals):
                raise UnparseableRow(line, "timestamps must be on the hour, values finite")
            if any(vals[len(NUMERIC_CHANNELS) + i] not in (0.0, 1.0) for i in range(2)):
                raise UnparseableRow(line, "holiday flags must be 0 or 1")
            if stamps:
                prev = stamps[-1]
                if ts < prev or (ts == prev and not allow_dst_duplicates):
                    raise NonMonotoneTimestamps(f"{path}: line {line} timestamp {ts} after {prev}")
                if ts == prev and len(stamps) > 1 and stamps[-2] == ts:
                    raise NonMonotoneTimestamps(f"{path}: line {line} repeats {ts} twice")
            stamps.append(ts)
            values.append(vals)

    frame = pd.DataFrame(values, columns=list(CHANNELS), index=pd.DatetimeIndex(stamps, name="timestamp"))
    return MarketSeries(frame, provenance=str(path))


def repair_dst(series: MarketSeries) -> MarketSeries:
    """Bring every calendar day to exactly 24 hourly records.

    A 23-record day gets its missing hour filled by linear interpolation of
    the numeric channels between the neighbouring records; holiday flags take
    the day's value. In a 25-record day the repeated hour keeps its first
    occurrence.
    """
    frame = series.frame
    if len(frame) == 0:
        return series
    # drop repeated timestamps (first occurrence wins)
    dup = frame.index.duplicated(keep="first")
    counts = pd.Series(1, index=frame.index).groupby(frame.index.date).sum()
    bad = counts[(counts < 23) | (counts > 25)]
    if len(bad):
        day = bad.index[0]
        raise UnrepairableDay(f"{day} has {bad.iloc[0]} records")
    for day, n in counts[counts == 25].items():
        in_day = frame.index.date == day
        if not dup[in_day].any():
            raise UnrepairableDay(f"{day} has 25 records but no repeated hour")
    frame = frame.loc[~dup]

    first = frame.index[0].normalize()
    last = frame.index[-1].normalize() + pd.Timedelta(hours=23)
    full = pd.date_range(first, last, freq="h", name="timestamp")
    out = frame.reindex(full)
    missing = out[NUMERIC_CHANNELS[0]].isna()
    if missing.any():
        miss_days = pd.Series(missing.to_numpy(), index=full).groupby(full.date).sum()
        worst = miss_days[miss_days > 1]
        if len(worst):
            raise UnrepairableDay(f"{worst.index[0]} lacks {int(worst.iloc[0])} hours")
        out[list(NUMERIC_CHANNELS)] = out[list(NUMERIC_CHANNELS)].interpolate(
            method="linear", limit_area="inside"
        )
        if out[list(NUMERIC_CHANNELS)].isna().any().any():
            raise UnrepairableDay("missing hour at the edge of the series cannot be interpolated")
        for name in HOLIDAY_CHANNELS:
            out[name] = out[name].groupby(full.date).transform("first")
    return MarketSeries(out, series.provenance)


def split(series: MarketSeries, train_end: dt.date, val_end: dt.date) -> DatasetSplit:
    """Cut a regular series into train / validation / test.

    Boundaries are the first day of the following slice:
    ``train = [start, train_end)``, ``validation = [train_end, val_end)`` and
    ``test = [val_end, end]``.
    """
    series.check_regular()
    days = series.days
    if not (days[0] < train_end < val_end <= days[-1]):
        raise BoundaryOutOfRange(
            f"need {days[0]} < train_end < val_end <= {days[-1]}, got {train_end}, {val_end}"
        )
    return DatasetSplit(
        train=series.between(None, train_end),
        validation=series.between(train_end, val_end),
        test=series.between(val_end, None),
    )


@dataclass(frozen=True)
class ScalingParams:
    """Per-channel min/max fitted on the training slice."""

    minimum: Mapping[str, float]
    maximum: Mapping[str, float]

    def apply(self, values, channel: str) -> np.ndarray:
        lo, hi = self.minimum[channel], self.maximum[channel]
        return 2.0 * (np.asarray(values, dtype=float) - lo) / (hi - lo) - 1.0

    def invert(self, values, channel: str) -> np.ndarray:
        lo, hi = self.minimum[channel], self.maximum[channel]
        return (np.asarray(values, dtype=float) + 1.0) * 0.5 * (hi - lo) + lo


def fit_scaler(train: MarketSeries, channels: Sequence[str] = NUMERIC_CHANNELS) -> ScalingParams:
    """Fit an affine min-max map to [-1, 1] for each channel."""
    lo, hi = {}, {}
    for name in channels:
        col = train.channel(name)
        lo[name], hi[name] = float(col.min()), float(col.max())
        if not hi[name] > lo[name]:
            raise DegenerateChannel(f"channel {name} is constant on the training slice")
    return ScalingParams(lo, hi)


def apply_scale(values, params: ScalingParams, channel: str) -> np.ndarray:
    return params.apply(values, channel)


def invert_scale(values, params: ScalingParams, channel: str) -> np.ndarray:
    return params.invert(values, channel)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSettings:
    """Shape parameters of the synthetic coupled-market generator.

    Noise levels are in currency/MWh. Market B also carries a daily shock
    that does not persist, so F's past prices are the cleaner view of the
    shared price level.
    """

    start: dt.date = dt.date(2010, 1, 1)
    base_price: float = 60.0
    level_persistence: float = 0.95
    level_sd: float = 12.0
    level_persistence_B: float = 0.5
    load_coef: float = 7.0
    gen_coef: float = 4.0
    scarcity_coef: float = 4.0
    holiday_effect: float = -6.0
    noise_F: float = 1.5
    noise_B: float = 3.0
    shock_B: float = 9.0
    n_holidays: int = 10


def synth_generate(
    seed: int,
    n_days: int,
    coupling: float,
    settings: SynthSettings | None = None,
) -> MarketSeries:
    """Generate two coupled day-ahead markets.

    Randomness comes from ``numpy.random.Philox`` (a counter-based bit
    generator) keyed by ``seed``, so output is reproducible across platforms.

    Market F's price is a persistent daily level plus hourly responses to its
    own load and generation forecasts (with a convex scarcity term) and a
    holiday effect. Market B's price mixes that F component with weight
    ``coupling`` and an independent component, driven by an independent level
    and ``gen_B``, with weight ``1 - coupling``. ``load_B`` never enters any
    price and is a known-irrelevant feature.
    """
    if n_days < 60:
        raise ValueError("n_days must be at least 60")
    if not 0.0 <= coupling <= 1.0:
        raise ValueError("coupling must lie in [0, 1]")
    s = settings or SynthSettings()
    rng = np.random.Generator(np.random.Philox(seed))
    n = 24 * n_days
    hours = np.tile(np.arange(24), n_days)
    day_idx = np.repeat(np.arange(n_days), 24)
    dates = [s.start + dt.timedelta(days=int(d)) for d in range(n_days)]
    weekday = np.array([d.weekday() for d in dates])
    doy = np.array([d.timetuple().tm_yday for d in dates])

    def ar1(size: int, phi: float, sd: float) -> np.ndarray:
        eps = rng.normal(0.0, sd * math.sqrt(1 - phi**2), size)
        out = np.empty(size)
        out[0] = rng.normal(0.0, sd)
        for i in range(1, size):
            out[i] = phi * out[i - 1] + eps[i]
        return out

    def holidays() -> np.ndarray:
        flags = np.zeros(n_days)
        per_year = max(1, round(s.n_holidays * n_days / 365))
        flags[rng.choice(n_days, size=min(per_year, n_days), replace=False)] = 1.0
        return flags

    hol_F = holidays()
    hol_B = holidays()

    daily_shape = 0.5 - 0.5 * np.cos(2 * np.pi * (hours - 4) / 24) + 0.25 * np.exp(-((hours - 19) ** 2) / 6)
    weekend = (weekday >= 5).astype(float)
    annual = np.cos(2 * np.pi * (doy - 15) / 365.25)

    # market F exogenous forecasts (MW)
    load_F_day = 55000 + 9000 * annual - 6000 * weekend - 5000 * hol_F + ar1(n_days, 0.7, 2500)
    load_F = load_F_day[day_idx] * (0.85 + 0.3 * daily_shape) + rng.normal(0, 600, n)
    gen_F_day = 80000 + ar1(n_days, 0.85, 5000)
    solar = np.clip(np.sin(np.pi * (hours - 6) / 12), 0, None)
    gen_F = gen_F_day[day_idx] + 4000 * solar * (1 + 0.5 * rng.random(n_days))[day_idx] + rng.normal(0, 800, n)

    # market B exogenous forecasts (MW); load_B never drives prices
    load_B = 10000 * (0.85 + 0.3 * daily_shape) + ar1(n_days, 0.7, 700)[day_idx] + rng.normal(0, 250, n)
    gen_B_day = 14000 + ar1(n_days, 0.85, 1200)
    gen_B = gen_B_day[day_idx] + rng.normal(0, 300, n)

    z_load_F = (load_F - 55000) / 9000
    z_gen_F = (gen_F - 80000) / 5000
    tightness = z_load_F - 0.6 * z_gen_F
    level_F = s.base_price + ar1(n_days, s.level_persistence, s.level_sd)
    comp_F = (
        level_F[day_idx]
        + s.load_coef * z_load_F
        - s.gen_coef * z_gen_F
        + s.scarcity_coef * np.exp(np.clip(tightness, None, 3.0))
        + s.holiday_effect * hol_F[day_idx]
    )

    level_B = s.base_price + ar1(n_days, s.level_persistence_B, s.level_sd)
    z_gen_B = (gen_B - 14000) / 1200
    comp_B = level_B[day_idx] + 8.0 * daily_shape - 6.0 * z_gen_B

    price_F = comp_F + rng.normal(0, s.noise_F, n)
    shock_B = rng.normal(0, s.shock_B, n_days)
    price_B = coupling * comp_F + (1 - coupling) * comp_B + shock_B[day_idx] + rng.normal(0, s.noise_B, n)

    index = pd.date_range(pd.Timestamp(s.start), periods=n, freq="h", name="timestamp")
    frame = pd.DataFrame(
        {
            "price_B": price_B,
            "price_F": price_F,
            "load_B": load_B,
            "load_F": load_F,
            "gen_B": gen_B,
            "gen_F": gen_F,
            "holiday_B": hol_B[day_idx],
            "holiday_F": hol_F[day_idx],
        },
        index=index,
    )
    return MarketSeries(frame, provenance=f"synthetic(seed={seed}, n_days={n_days}, coupling={coupling})")
