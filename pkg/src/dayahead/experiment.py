"""End-to-end studies: feature selection, walk-forward backtests and model
comparisons.

A study is described by a :class:`StudySpec`, read from a flat ``key = value``
text file. The forecast origin for target day ``d`` is the last hour of day
``d - 1``: price lags must end at or before it, while the day-ahead load and
generation forecasts and holiday flags of day ``d`` are published before it
and may be used.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import fanova
from .errors import AlignmentError, NumericDegeneracy, SpecError
from .feature_space import (
    COORDINATES,
    FeatureConfig,
    SampleSet,
    SearchSpace,
    build_samples,
    default_space,
    input_dimension,
    input_layout,
    input_names,
    min_history_days,
    small_space,
    target_channels,
)
from .market_data import DatasetSplit, MarketSeries, ScalingParams, fit_scaler, load_csv, repair_dst, split, synth_generate
from .neural_net import ForecastModel, NetworkShape, NetworkWeights, TrainSettings, predict_day, train
from .stats import DMResult, ErrorSeries, format_p, full_dm, hourly_dm, smape
from .tpe import TpeSettings, TrialHistory, optimize

logger = logging.getLogger(__name__)

ONE_SIDED_CRITICAL = 1.645

FEATURE_LABELS = {
    "pBd": "Past days number",
    "pBw": "Weekly lags number",
    "pF": "F prices",
    "lB": "B load",
    "lF": "F load",
    "gB": "B generation",
    "gF": "F generation",
    "HB": "B holidays",
    "HF": "F holidays",
    "n1": "Neurons layer 1",
    "n2": "Neurons layer 2",
}


@dataclass(frozen=True)
class StudySpec:
    data: str | None = None
    synth_seed: int = 0
    synth_days: int = 3 * 365
    synth_coupling: float = 0.9
    train_end: dt.date | None = None
    val_end: dt.date | None = None
    space: str = "default"
    freeze: Mapping[str, int] = field(default_factory=dict)
    tpe_trials: int = 1000
    tpe_startup: int = 20
    tpe_gamma: float = 0.25
    tpe_candidates: int = 24
    seed: int = 0
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 20
    batch_size: int = 32
    epsilon: float = 0.005
    n_trees: int = 30
    min_leaf: int = 3
    forest_max_features: int | None = None  # None: ceil(sqrt(#coordinates))
    model: str = "single"
    test_days: int | None = None
    retrain_every: int = 1
    warm_start: bool = False
    fold_test: bool = True
    config: str | None = None
    output_dir: str = "out"

    def __post_init__(self):
        if self.model not in ("single", "dual"):
            raise SpecError(f"model must be 'single' or 'dual', got {self.model!r}")
        if self.space not in ("default", "small"):
            raise SpecError(f"space must be 'default' or 'small', got {self.space!r}")
        if self.retrain_every < 1:
            raise SpecError("retrain_every must be at least 1")
        if not 0 < self.epsilon <= 1:
            raise SpecError("epsilon must lie in (0, 1]")

    def replace(self, **changes) -> "StudySpec":
        return dataclasses.replace(self, **changes)

    @property
    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    @property
    def tpe_settings(self) -> TpeSettings:
        return TpeSettings(self.tpe_trials, self.tpe_startup, self.tpe_gamma, self.tpe_candidates, self.seed)

    def search_space(self) -> SearchSpace:
        space = small_space() if self.space == "small" else default_space()
        return space.collapse(**self.freeze) if self.freeze else space


def _parse_value(fld: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = str(fld.type)
    if fld.name == "freeze":
        out = {}
        for item in filter(None, (s.strip() for s in raw.split(","))):
            key, _, value = item.partition("=")
            out[key.strip()] = int(value)
        return out
    if raw.lower() in ("", "none") and "None" in kind:
        return None
    if "bool" in kind:
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {raw}")
        return raw.lower() in ("true", "1", "yes", "on")
    if "date" in kind:
        return dt.date.fromisoformat(raw)
    if "float" in kind:
        return float(raw)
    if "int" in kind:
        return int(raw)
    return raw


def parse_study_spec(text: str, overrides: Mapping[str, str] | None = None) -> StudySpec:
    """Parse ``key = value`` lines (``#`` comments allowed) plus overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[study]\n" + text)
    except configparser.Error as exc:
        raise SpecError(str(exc)) from None
    raw = dict(parser["study"])
    raw.update(overrides or {})
    fields = {f.name: f for f in dataclasses.fields(StudySpec)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise SpecError(f"unknown study keys: {sorted(unknown)}")
    try:
        values = {k: _parse_value(fields[k], v) for k, v in raw.items()}
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    return StudySpec(**values)


def load_study_spec(path: str | Path | None, overrides: Mapping[str, str] | None = None) -> StudySpec:
    text = Path(path).read_text() if path else ""
    spec = parse_study_spec(text, overrides)
    if spec.data is not None and not Path(spec.data).exists():
        raise SpecError(f"data file {spec.data} does not exist")
    if spec.config is not None and not Path(spec.config).exists():
        raise SpecError(f"config file {spec.config} does not exist")
    return spec


# ---------------------------------------------------------------------------
# data preparation


@dataclass(frozen=True)
class PreparedData:
    series: MarketSeries
    split: DatasetSplit
    scaler: ScalingParams

    @property
    def train_end(self) -> dt.date:
        return self.split.validation_range[0]

    @property
    def val_end(self) -> dt.date:
        return self.split.test_range[0]


def prepare_data(spec: StudySpec) -> PreparedData:
    """Load or synthesise the series, repair DST, split and fit the scaler.

    Without explicit boundaries the series is cut 60/20/20 by days.
    """
    if spec.data:
        series = repair_dst(load_csv(spec.data, allow_dst_duplicates=True))
    else:
        series = synth_generate(spec.synth_seed, spec.synth_days, spec.synth_coupling)
    days = series.days
    train_end = spec.train_end or days[int(0.6 * len(days))]
    val_end = spec.val_end or days[int(0.8 * len(days))]
    parts = split(series, train_end, val_end)
    return PreparedData(series, parts, fit_scaler(parts.train))


def _shape(config: FeatureConfig, dual: bool) -> NetworkShape:
    return NetworkShape(input_dimension(config), config.n1, config.n2, 48 if dual else 24)


def make_objective(spec: StudySpec, data: PreparedData) -> Callable[[FeatureConfig], float]:
    """Validation sMAPE of a single-market net trained with early stopping."""
    history = data.series.between(None, data.val_end)
    settings = spec.train_settings

    def objective(config: FeatureConfig) -> float:
        tr = build_samples(config, history, data.scaler, last_target=data.train_end - dt.timedelta(days=1))
        va = build_samples(config, history, data.scaler, first_target=data.train_end)
        weights, _ = train(tr.inputs, tr.targets, va.inputs, va.targets, _shape(config, False), settings)
        pred = predict_day(weights, va.inputs, data.scaler)
        actual = data.scaler.invert(va.targets, "price_B")
        return smape(actual, pred)

    return objective


# ---------------------------------------------------------------------------
# feature selection


@dataclass
class FeatureSelectionOutcome:
    best: FeatureConfig
    history: TrialHistory
    # None when the history is too small or flat for the importance analysis
    report: fanova.ImportanceReport | None
    selection: fanova.SelectionResult | None


def analyse_history(history: TrialHistory, spec: StudySpec) -> tuple[fanova.ImportanceReport, fanova.SelectionResult]:
    forest = fanova.fit_forest(
        history, n_trees=spec.n_trees, min_leaf=spec.min_leaf, max_features=spec.forest_max_features, seed=spec.seed
    )
    report = fanova.decompose(forest)
    selection = fanova.select_features(report, spec.epsilon, space=history.space)
    return report, selection


def run_feature_selection(spec: StudySpec, data: PreparedData | None = None, persist: bool = True) -> FeatureSelectionOutcome:
    """TPE search over features and layer widths, then fANOVA-based selection."""
    data = data or prepare_data(spec)
    space = spec.search_space()
    out = Path(spec.output_dir)
    log_path = None
    if persist:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "trials.ndjson"
        log_path.write_text("")
    best, history = optimize(make_objective(spec, data), space, spec.tpe_settings, log_path=log_path)
    try:
        report, selection = analyse_history(history, spec)
    except NumericDegeneracy as exc:
        logger.warning("importance analysis skipped: %s", exc)
        report, selection = None, None
    if persist:
        write_selection_artifacts(out, best, report, selection)
    return FeatureSelectionOutcome(best, history, report, selection)


def write_selection_artifacts(out: Path, best: FeatureConfig, report, selection) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "best_config.txt").write_text(best.dumps())
    if report is None:
        (out / "importance.txt").write_text("importance analysis skipped: trial history is degenerate\n")
        return
    (out / "importance.txt").write_text(report.to_text(FEATURE_LABELS))
    (out / "selection.txt").write_text(selection.to_text())
    (out / "importance.json").write_text(json.dumps(report.to_record(), indent=1))
    (out / "selection.json").write_text(json.dumps(selection.to_record(), indent=1))


# ---------------------------------------------------------------------------
# backtesting


@dataclass
class BacktestResult:
    name: str
    config: FeatureConfig
    dual: bool
    days: list[dt.date]
    actual: np.ndarray  # (n_days, 24), market B, currency units
    predicted: np.ndarray  # (n_days, 24)
    retrain_every: int
    retrains: int
    # per test day: last target day used for training and last input hour
    train_cutoff: list[dt.date] = field(default_factory=list)
    input_last_hour: list[np.datetime64] = field(default_factory=list)
    deadline: list[np.datetime64] = field(default_factory=list)
    exog_hours: list[tuple[np.datetime64, np.datetime64]] = field(default_factory=list)
    model: ForecastModel | None = field(default=None, repr=False, compare=False)  # last net trained

    @property
    def smape(self) -> float:
        return smape(self.actual, self.predicted)

    @property
    def errors(self) -> ErrorSeries:
        return ErrorSeries.from_days(self.days, self.actual - self.predicted)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "hour", "actual", "predicted", "error"])
            for d, act, pred in zip(self.days, self.actual, self.predicted):
                for h in range(24):
                    w.writerow([d.isoformat(), h + 1, f"{act[h]:.10g}", f"{pred[h]:.10g}", f"{act[h] - pred[h]:.10g}"])

    @classmethod
    def from_csv(cls, path: str | Path, name: str | None = None) -> "BacktestResult":
        rows = list(csv.DictReader(Path(path).open(newline="")))
        if len(rows) % 24:
            raise AlignmentError(f"{path}: backtest rows must cover whole days")
        days = [dt.date.fromisoformat(r["date"]) for r in rows[::24]]
        actual = np.array([float(r["actual"]) for r in rows]).reshape(-1, 24)
        pred = np.array([float(r["predicted"]) for r in rows]).reshape(-1, 24)
        return cls(name or Path(path).stem, FeatureConfig(), False, days, actual, pred, 1, len(days))


def run_backtest(
    spec: StudySpec,
    config: FeatureConfig,
    data: PreparedData | None = None,
    dual: bool | None = None,
    name: str | None = None,
) -> BacktestResult:
    """Walk forward through the test slice, retraining before each forecast.

    Every ``retrain_every`` days the net is re-fitted on all samples whose
    target day lies before the current day (training slice plus, with
    ``fold_test``, the elapsed test days), using the validation slice for
    early stopping. Nothing at or after the current day's deadline is used.
    """
    data = data or prepare_data(spec)
    dual = (spec.model == "dual") if dual is None else dual
    channels = target_channels(dual)
    samples = build_samples(config, data.series, data.scaler, dual=dual)
    day_of = np.array(samples.origin_days)
    train_end, val_end = data.train_end, data.val_end
    test_rows = np.flatnonzero(day_of >= val_end)
    if spec.test_days is not None:
        test_rows = test_rows[: spec.test_days]
    if len(test_rows) == 0:
        raise SpecError("test slice is empty")
    val_rows = np.flatnonzero((day_of >= train_end) & (day_of < val_end))
    base_rows = np.flatnonzero(day_of < train_end)
    settings = spec.train_settings
    shape = _shape(config, dual)
    layout = input_layout(config)
    stamps = data.series.timestamps

    weights: NetworkWeights | None = None
    result = BacktestResult(name or spec.model, config, dual, [], np.zeros((0, 24)), np.zeros((0, 24)), spec.retrain_every, 0)
    actual, predicted = [], []
    for i, row in enumerate(test_rows):
        day = samples.origin_days[row]
        if i % spec.retrain_every == 0:
            rows = base_rows
            if spec.fold_test:
                rows = np.concatenate([base_rows, test_rows[:i]])
            init = weights if spec.warm_start else None
            weights, _ = train(
                samples.inputs[rows], samples.targets[rows],
                samples.inputs[val_rows], samples.targets[val_rows],
                shape, settings.replace(seed=settings.seed + i), init=init,
            )
            result.retrains += 1
            cutoff = samples.origin_days[rows[-1]]
        pred = predict_day(weights, samples.inputs[row], data.scaler, channels)[:24]
        predicted.append(pred)
        actual.append(data.scaler.invert(samples.targets[row, :24], "price_B"))
        result.days.append(day)
        result.train_cutoff.append(cutoff)
        d = int(samples.target_index[row])
        past = [24 * d + offs for blk, _, offs in layout if offs.max() < 0]
        result.input_last_hour.append(stamps[max(int(p.max()) for p in past)])
        result.deadline.append(stamps[24 * d - 1])
        exog = [24 * d + offs for blk, _, offs in layout if offs.max() >= 0]
        if exog:
            lo = min(int(e.min()) for e in exog)
            hi = max(int(e.max()) for e in exog)
            result.exog_hours.append((stamps[lo], stamps[hi]))
    result.actual = np.array(actual)
    result.predicted = np.array(predicted)
    result.model = ForecastModel(weights, data.scaler, input_names(config), channels)
    return result


def audit_leakage(result: BacktestResult, data: PreparedData | None = None) -> list[str]:
    """Return a description of every look-ahead violation (empty when clean).

    Checks that price lags end at or before the deadline, that day-ahead
    exogenous inputs stay within the target day, that training never used a
    target day at or after the forecast day, and, when ``data`` is given,
    that the recorded sample inputs really are the series values at the
    audited hours.
    """
    problems = []
    for k, day in enumerate(result.days):
        if result.input_last_hour[k] > result.deadline[k]:
            problems.append(f"{day}: price input at {result.input_last_hour[k]} after deadline {result.deadline[k]}")
        if result.train_cutoff[k] >= day:
            problems.append(f"{day}: trained on target day {result.train_cutoff[k]}")
        if k < len(result.exog_hours):
            lo, hi = result.exog_hours[k]
            start = np.datetime64(day.isoformat() + "T00")
            if lo < start or hi > start + np.timedelta64(23, "h"):
                problems.append(f"{day}: exogenous input outside target day ({lo}..{hi})")
    if data is not None:
        problems += _audit_values(result, data)
    return problems


def _audit_values(result: BacktestResult, data: PreparedData) -> list[str]:
    samples = build_samples(result.config, data.series, data.scaler, dual=result.dual)
    layout = input_layout(result.config)
    problems = []
    pos = {d: i for i, d in enumerate(samples.origin_days)}
    for day in result.days:
        row = pos[day]
        d = int(samples.target_index[row])
        col = 0
        for blk, channel, offs in layout:
            raw = data.series.channel(channel)[24 * d + offs]
            expect = raw if channel.startswith("holiday") else data.scaler.apply(raw, channel)
            got = samples.inputs[row, col : col + len(offs)]
            if not np.array_equal(got, expect):
                problems.append(f"{day}: block {blk} does not match audited hours")
            col += len(offs)
    return problems


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonReport:
    name_a: str
    name_b: str
    smape_a: float
    smape_b: float
    hourly: list[DMResult]
    full: DMResult

    @property
    def degenerate(self) -> bool:
        return self.full.degenerate or any(r.degenerate for r in self.hourly)

    def to_text(self) -> str:
        wa = max(len(self.name_a), 7)
        wb = max(len(self.name_b), 7)
        lines = [
            f"| {'Model':<6} | {self.name_a:^{wa}} | {self.name_b:^{wb}} |",
            f"| {'sMAPE':<6} | {f'{self.smape_a:.1f}%':^{wa}} | {f'{self.smape_b:.1f}%':^{wb}} |",
            "",
            f"One-sided DM tests, H1: {self.name_a} more accurate than {self.name_b}",
            "hour  statistic  p-value",
        ]
        for h, r in enumerate(self.hourly, start=1):
            flag = " (degenerate)" if r.degenerate else (" *" if r.significant() else "")
            lines.append(f"{h:>4}  {r.statistic:>9.3f}  {format_p(r.p_value):>7}{flag}")
        f = self.full
        note = " (degenerate)" if f.degenerate else (" (Bartlett fallback)" if f.bartlett else "")
        lines.append("")
        lines.append(f"Full sequence (order {f.order}, N={f.n_obs}): statistic {f.statistic:.3f}, p-value {format_p(f.p_value)}{note}")
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        def rec(r: DMResult) -> dict:
            return dataclasses.asdict(r)

        return {
            "models": [self.name_a, self.name_b],
            "smape": [self.smape_a, self.smape_b],
            "hourly": [rec(r) for r in self.hourly],
            "full": rec(self.full),
        }

    def dm_rows(self) -> list[list]:
        rows = [["test", "hour", "statistic", "p_value", "order", "n_obs", "degenerate", "bartlett"]]
        for h, r in enumerate(self.hourly, start=1):
            rows.append(["hourly", h, r.statistic, r.p_value, r.order, r.n_obs, int(r.degenerate), int(r.bartlett)])
        f = self.full
        rows.append(["full", "", f.statistic, f.p_value, f.order, f.n_obs, int(f.degenerate), int(f.bartlett)])
        return rows

    def plot_rows(self) -> list[list]:
        rows = [["hour", "statistic", "critical_value"]]
        rows += [[h, r.statistic, ONE_SIDED_CRITICAL] for h, r in enumerate(self.hourly, start=1)]
        return rows

    def write(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(self.to_text())
        (out / "comparison.json").write_text(json.dumps(self.to_record(), indent=1))
        for fname, rows in (("dm.csv", self.dm_rows()), ("hourly_dm_plotdata.csv", self.plot_rows())):
            with (out / fname).open("w", newline="") as fh:
                csv.writer(fh).writerows(rows)


def compare_models(a: BacktestResult, b: BacktestResult) -> ComparisonReport:
    """sMAPE of both models plus one-sided DM tests of ``a`` beating ``b``."""
    if a.days != b.days:
        raise AlignmentError("backtests cover different days")
    if not np.array_equal(a.actual, b.actual):
        raise AlignmentError("backtests disagree on actual prices")
    ea, eb = a.errors, b.errors
    return ComparisonReport(
        a.name,
        b.name,
        a.smape,
        b.smape,
        hourly_dm(ea, eb, "one", strict=False),
        full_dm(ea, eb, "one", strict=False),
    )


@dataclass
class DualStudyOutcome:
    single: BacktestResult
    dual: BacktestResult
    comparison: ComparisonReport


def run_dual_study(spec: StudySpec, config: FeatureConfig, data: PreparedData | None = None) -> DualStudyOutcome:
    """Backtest single- and dual-output nets with identical inputs and widths.

    Only the market-B half of the dual net's output is scored.
    """
    data = data or prepare_data(spec)
    single = run_backtest(spec, config, data, dual=False, name="Single")
    dual = run_backtest(spec, config, data, dual=True, name="Dual")
    return DualStudyOutcome(single, dual, compare_models(dual, single))


def load_config(path: str | Path) -> FeatureConfig:
    return FeatureConfig.loads(Path(path).read_text())
