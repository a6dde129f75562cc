"""Joint feature / hyperparameter space and sample construction.

A :class:`FeatureConfig` is one point of the search space: two integer lag
counts for the forecast market's prices, seven inclusion flags and the two
hidden-layer widths. Input columns are always laid out in the order

    B daily lags, B weekly lags, F daily lags, F weekly lags,
    load_B, load_F, gen_B, gen_F, holiday_B, holiday_F

so trained weights stay portable between runs.
"""
from __future__ import annotations

import configparser
import dataclasses
import datetime as dt
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import InvalidConfig, SliceTooShort
from .market_data import MarketSeries, ScalingParams

PRICE_LAGS = ("pBd", "pBw")
BINARY_FEATURES = ("pF", "lB", "lF", "gB", "gF", "HB", "HF")
FEATURES = PRICE_LAGS + BINARY_FEATURES
HYPERPARAMETERS = ("n1", "n2")
COORDINATES = FEATURES + HYPERPARAMETERS

# exogenous day-ahead curves, keyed by their flag
CURVES = {"lB": "load_B", "lF": "load_F", "gB": "gen_B", "gF": "gen_F"}
HOLIDAYS = {"HB": "holiday_B", "HF": "holiday_F"}

WEEK = 7


@dataclass(frozen=True)
class FeatureConfig:
    pBd: int = 1
    pBw: int = 1
    pF: int = 0
    lB: int = 0
    lF: int = 0
    gB: int = 0
    gF: int = 0
    HB: int = 0
    HF: int = 0
    n1: int = 100
    n2: int = 0

    def as_dict(self) -> dict[str, int]:
        return dataclasses.asdict(self)

    def replace(self, **changes: int) -> "FeatureConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())

    @classmethod
    def loads(cls, text: str) -> "FeatureConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[config]\n" + text)
        except configparser.Error as exc:
            raise InvalidConfig(str(exc)) from None
        raw = dict(parser["config"])
        unknown = set(raw) - set(COORDINATES)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**{k: int(v) for k, v in raw.items()})
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass(frozen=True)
class SearchSpace:
    """Finite, sorted integer domain for every coordinate."""

    domains: Mapping[str, tuple[int, ...]]

    def __post_init__(self):
        for name in COORDINATES:
            dom = self.domains.get(name)
            if not dom:
                raise InvalidConfig(f"empty domain for {name}")
            if list(dom) != sorted(set(dom)):
                raise InvalidConfig(f"domain of {name} must be sorted and unique")

    @property
    def names(self) -> tuple[str, ...]:
        return COORDINATES

    def collapse(self, **fixed: int) -> "SearchSpace":
        """Freeze coordinates to one value, e.g. ``collapse(gB=0)``."""
        doms = dict(self.domains)
        for name, value in fixed.items():
            if name not in doms:
                raise InvalidConfig(f"unknown coordinate {name}")
            doms[name] = (int(value),)
        return SearchSpace(doms)

    def contains(self, config: FeatureConfig) -> bool:
        return all(getattr(config, k) in self.domains[k] for k in COORDINATES)

    def is_binary(self, name: str) -> bool:
        return set(self.domains[name]) <= {0, 1}

    def size(self) -> int:
        return int(np.prod([len(self.domains[k]) for k in COORDINATES], dtype=float))

    def grid(self) -> Iterator[FeatureConfig]:
        """Every configuration; only sensible for small spaces."""
        for values in np.ndindex(*(len(self.domains[k]) for k in COORDINATES)):
            yield FeatureConfig(**{k: self.domains[k][i] for k, i in zip(COORDINATES, values)})


def default_space() -> SearchSpace:
    """Feature domains of the Belgian study together with the layer widths."""
    doms = {"pBd": tuple(range(1, 7)), "pBw": (1, 2, 3)}
    doms |= {k: (0, 1) for k in BINARY_FEATURES}
    doms["n1"] = tuple(range(100, 401))
    doms["n2"] = (0,) + tuple(range(48, 361))
    return SearchSpace(doms)


def small_space(n1: Sequence[int] = range(16, 65), n2: Sequence[int] = (0, *range(8, 33))) -> SearchSpace:
    """Same feature domains with narrow layers, for desk-scale studies."""
    doms = dict(default_space().domains)
    doms["n1"] = tuple(n1)
    doms["n2"] = tuple(n2)
    return SearchSpace(doms)


def validate(config: FeatureConfig, space: SearchSpace | None = None) -> None:
    space = space or default_space()
    for name in COORDINATES:
        value = getattr(config, name)
        if not isinstance(value, (int, np.integer)) or value not in space.domains[name]:
            raise InvalidConfig(f"{name}={value!r} outside {space.domains[name][0]}..{space.domains[name][-1]}")


def _check_shape(config: FeatureConfig) -> None:
    if not (1 <= config.pBd <= 6 and 1 <= config.pBw <= 3):
        raise InvalidConfig(f"price lags out of range: pBd={config.pBd}, pBw={config.pBw}")
    for name in BINARY_FEATURES:
        if getattr(config, name) not in (0, 1):
            raise InvalidConfig(f"{name} must be 0 or 1")
    if config.n1 < 1 or config.n2 < 0:
        raise InvalidConfig("layer widths must be positive (n2 may be 0)")


def input_dimension(config: FeatureConfig) -> int:
    _check_shape(config)
    price_block = 24 * config.pBd + 24 * config.pBw
    n = price_block * (1 + config.pF)
    n += 24 * sum(getattr(config, k) for k in CURVES)
    n += sum(getattr(config, k) for k in HOLIDAYS)
    return n


def min_history_days(config: FeatureConfig) -> int:
    """Days of history needed before the first target day."""
    return max(config.pBd, WEEK * config.pBw)


def input_layout(config: FeatureConfig) -> list[tuple[str, str, np.ndarray]]:
    """Column blocks as ``(block name, channel, hour offsets)``.

    Offsets are relative to hour 0 of the target day: negative offsets are
    past hours, 0..23 are the target day itself.
    """
    _check_shape(config)
    daily = -1 - np.arange(24 * config.pBd)
    weekly = np.concatenate([np.arange(24) - 24 * WEEK * k for k in range(1, config.pBw + 1)])
    blocks = [("pB_daily", "price_B", daily), ("pB_weekly", "price_B", weekly)]
    if config.pF:
        blocks += [("pF_daily", "price_F", daily), ("pF_weekly", "price_F", weekly)]
    for flag, channel in CURVES.items():
        if getattr(config, flag):
            blocks.append((flag, channel, np.arange(24)))
    for flag, channel in HOLIDAYS.items():
        if getattr(config, flag):
            blocks.append((flag, channel, np.array([0])))
    return blocks


def input_names(config: FeatureConfig) -> list[str]:
    """One ``channel@offset`` descriptor per input column, in column order."""
    return [f"{channel}@{int(h):+d}" for _, channel, offsets in input_layout(config) for h in offsets]


@dataclass(frozen=True)
class SampleSet:
    inputs: np.ndarray
    targets: np.ndarray
    origin_days: list[dt.date]
    target_index: np.ndarray  # day position of each target inside the source series

    def __len__(self) -> int:
        return len(self.inputs)


def target_channels(dual: bool) -> tuple[str, ...]:
    return ("price_B", "price_F") if dual else ("price_B",)


def build_samples(
    config: FeatureConfig,
    series: MarketSeries,
    scaler: ScalingParams,
    dual: bool = False,
    first_target: dt.date | None = None,
    last_target: dt.date | None = None,
) -> SampleSet:
    """Materialise supervised samples for every usable target day.

    Target days run from ``first_target`` (default: earliest day with enough
    lag history) through ``last_target`` (default: last day). Days before
    ``first_target`` serve only as lag context, so a validation slice can be
    built from a series that still contains the preceding training days.
    """
    series.check_regular()
    days = series.days
    need = min_history_days(config)
    start = need
    if first_target is not None:
        start = max(start, _first_on_or_after(days, first_target))
    stop = len(days)
    if last_target is not None:
        stop = min(stop, _first_on_or_after(days, last_target + dt.timedelta(days=1)))
    if start >= stop:
        raise SliceTooShort(
            f"{len(days)} days cannot supply {need} days of lag history plus one target day"
        )

    target_days = np.arange(start, stop)
    cols = []
    for _block, channel, offsets in input_layout(config):
        raw = series.channel(channel)
        if channel in ("holiday_B", "holiday_F"):
            scaled = raw
        else:
            scaled = scaler.apply(raw, channel)
        rows = 24 * target_days[:, None] + offsets[None, :]
        cols.append(scaled[rows])
    inputs = np.concatenate(cols, axis=1)

    hours = 24 * target_days[:, None] + np.arange(24)[None, :]
    targets = np.concatenate(
        [scaler.apply(series.channel(ch), ch)[hours] for ch in target_channels(dual)], axis=1
    )
    return SampleSet(inputs, targets, [days[i] for i in target_days], target_days)


def _first_on_or_after(days: list[dt.date], day: dt.date) -> int:
    for i, d in enumerate(days):
        if d >= day:
            return i
    return len(days)


def sample_config(space: SearchSpace, rng: np.random.Generator) -> FeatureConfig:
    """Uniform draw over every coordinate's domain."""
    return FeatureConfig(**{k: int(space.domains[k][rng.integers(len(space.domains[k]))]) for k in COORDINATES})


def neighbors(config: FeatureConfig, space: SearchSpace) -> list[FeatureConfig]:
    """Configs differing from ``config`` by one step in one coordinate."""
    out = []
    for name in COORDINATES:
        dom = space.domains[name]
        value = getattr(config, name)
        if value not in dom:
            continue
        i = dom.index(value)
        for j in (i - 1, i + 1):
            if 0 <= j < len(dom):
                out.append(config.replace(**{name: dom[j]}))
    return out
