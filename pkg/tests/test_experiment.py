import csv
import datetime as dt
import json

import numpy as np
import pytest

from dayahead import experiment as ex
from dayahead.errors import AlignmentError, SpecError
from dayahead.feature_space import FeatureConfig

FAST = dict(synth_days=160, max_epochs=8, patience=3, space="small")
CONFIG = FeatureConfig(pBd=2, pBw=1, pF=1, lF=1, n1=16)


@pytest.fixture(scope="module")
def fast_data():
    return ex.prepare_data(ex.StudySpec(**FAST))


# -- study specs ------------------------------------------------------------


def test_parse_spec_with_comments_and_overrides():
    text = """
    # coupled synthetic study
    synth_days = 400   # about 13 months
    train_end = 2010-10-01
    freeze = gB=0, n2=0
    warm_start = yes
    model = dual
    forest_max_features = none
    """
    spec = ex.parse_study_spec(text, {"tpe_trials": "12"})
    assert spec.synth_days == 400 and spec.tpe_trials == 12
    assert spec.train_end == dt.date(2010, 10, 1)
    assert spec.freeze == {"gB": 0, "n2": 0}
    assert spec.warm_start is True and spec.model == "dual"
    assert spec.forest_max_features is None
    assert spec.search_space().domains["gB"] == (0,)


@pytest.mark.parametrize(
    "text",
    ["colour = red", "model = triple", "warm_start = maybe", "synth_days = many", "retrain_every = 0", "epsilon = 2"],
)
def test_bad_spec(text):
    with pytest.raises(SpecError):
        ex.parse_study_spec(text)


def test_spec_files_must_exist(tmp_path):
    (tmp_path / "s.txt").write_text(f"data = {tmp_path / 'nope.csv'}\n")
    with pytest.raises(SpecError):
        ex.load_study_spec(tmp_path / "s.txt")


def test_default_split_fractions(fast_data):
    parts = fast_data.split
    assert len(parts.train) == 24 * 96 and len(parts.validation) == 24 * 32 and len(parts.test) == 24 * 32


# -- feature selection ------------------------------------------------------


def test_smoke_selection_persists_trials(tmp_path):
    spec = ex.StudySpec(**FAST, tpe_trials=5, tpe_startup=2, freeze={"gB": 0}, output_dir=str(tmp_path))
    outcome = ex.run_feature_selection(spec)
    lines = (tmp_path / "trials.ndjson").read_text().splitlines()
    assert len(lines) == 5 == len(outcome.history)
    assert all(json.loads(line)["config"]["gB"] == 0 for line in lines)
    # five trials cannot support trees with three trials per leaf
    assert outcome.report is None and outcome.selection is None
    assert "skipped" in (tmp_path / "importance.txt").read_text()
    assert FeatureConfig.loads((tmp_path / "best_config.txt").read_text()) == outcome.best
    assert outcome.history.best().config == outcome.best


def test_frozen_feature_never_tried(fast_data, tmp_path):
    spec = ex.StudySpec(**FAST, tpe_trials=15, tpe_startup=5, freeze={"gB": 0}, output_dir=str(tmp_path))
    outcome = ex.run_feature_selection(spec, fast_data)
    for name in ("best_config.txt", "importance.txt", "selection.txt", "importance.json", "selection.json"):
        assert (tmp_path / name).exists()
    assert all(t.config.gB == 0 for t in outcome.history)
    assert "gB" not in outcome.selection.selected


def test_objective_is_deterministic(fast_data):
    f = ex.make_objective(ex.StudySpec(**FAST), fast_data)
    assert f(CONFIG) == f(CONFIG)
    assert 0 < f(CONFIG) < 200


# -- backtests --------------------------------------------------------------


@pytest.fixture(scope="module")
def backtest(fast_data):
    return ex.run_backtest(ex.StudySpec(**FAST, test_days=30), CONFIG, fast_data)


def test_daily_backtest_cardinality(backtest, fast_data):
    assert backtest.retrains == 30
    assert backtest.predicted.shape == backtest.actual.shape == (30, 24)
    assert backtest.days[0] == fast_data.val_end
    assert all(b - a == dt.timedelta(days=1) for a, b in zip(backtest.days, backtest.days[1:]))
    assert len(backtest.errors) == 720


def test_backtest_actuals_are_series_values(backtest, fast_data):
    i = fast_data.series.days.index(backtest.days[3])
    np.testing.assert_allclose(backtest.actual[3], fast_data.series.channel("price_B")[24 * i : 24 * i + 24], rtol=1e-12)


def test_backtest_is_leak_free(backtest, fast_data):
    assert ex.audit_leakage(backtest) == []
    assert ex.audit_leakage(backtest, fast_data) == []
    # the day before each test day is the last one trained on
    assert all(c == d - dt.timedelta(days=1) for c, d in zip(backtest.train_cutoff[1:], backtest.days[1:]))


def test_audit_flags_injected_violations(backtest):
    import copy

    bad = copy.deepcopy(backtest)
    bad.train_cutoff[2] = bad.days[2]
    bad.input_last_hour[4] = bad.deadline[4] + np.timedelta64(1, "h")
    bad.exog_hours[5] = (bad.exog_hours[5][0], bad.exog_hours[5][1] + np.timedelta64(1, "h"))
    problems = ex.audit_leakage(bad)
    assert len(problems) == 3
    assert str(bad.days[2]) in problems[0]


def test_weekly_cadence(fast_data):
    r = ex.run_backtest(ex.StudySpec(**FAST, test_days=30, retrain_every=7), CONFIG, fast_data)
    assert r.retrains == 5 and len(r.days) == 30
    assert ex.audit_leakage(r, fast_data) == []


def test_without_test_folding_trains_once_per_cadence(fast_data):
    r = ex.run_backtest(ex.StudySpec(**FAST, test_days=10, fold_test=False), CONFIG, fast_data)
    assert set(r.train_cutoff) == {fast_data.train_end - dt.timedelta(days=1)}


def test_backtest_reproducible(backtest, fast_data):
    again = ex.run_backtest(ex.StudySpec(**FAST, test_days=30), CONFIG, fast_data)
    np.testing.assert_array_equal(again.predicted, backtest.predicted)


def test_backtest_keeps_last_model(backtest, fast_data, tmp_path):
    from dayahead.feature_space import build_samples
    from dayahead.neural_net import ForecastModel

    backtest.model.save(tmp_path / "m.npz")
    model = ForecastModel.load(tmp_path / "m.npz")
    samples = build_samples(CONFIG, fast_data.series, fast_data.scaler)
    x = samples.inputs[samples.origin_days.index(backtest.days[-1])]
    np.testing.assert_allclose(model.predict_day(x), backtest.predicted[-1], rtol=1e-12)


def test_backtest_csv_round_trip(backtest, tmp_path):
    backtest.to_csv(tmp_path / "b.csv")
    back = ex.BacktestResult.from_csv(tmp_path / "b.csv")
    assert back.days == backtest.days
    np.testing.assert_allclose(back.predicted, backtest.predicted, rtol=1e-9)


def test_f_market_inputs_help():
    wins = []
    for s in range(4):
        spec = ex.StudySpec(synth_seed=s, seed=s, synth_days=300, test_days=30, retrain_every=30, max_epochs=60, patience=10)
        data = ex.prepare_data(spec)
        with_f = ex.run_backtest(spec, FeatureConfig(pBd=2, pBw=1, pF=1, lF=1, gF=1, n1=32), data)
        without_f = ex.run_backtest(spec, FeatureConfig(pBd=2, pBw=1, lB=1, gB=1, n1=32), data)
        wins.append(with_f.smape < without_f.smape)
    assert sum(wins) >= 3


# -- comparisons ------------------------------------------------------------


def test_identical_models_are_degenerate(backtest):
    rep = ex.compare_models(backtest, backtest)
    assert rep.smape_a == rep.smape_b
    assert rep.degenerate and rep.full.p_value == 1.0
    assert "(degenerate)" in rep.to_text()


def other_model(backtest, scale=1.1, seed=0):
    import copy

    rng = np.random.default_rng(seed)
    b = copy.deepcopy(backtest)
    b.name = "Other"
    b.predicted = b.actual - scale * (b.actual - b.predicted) + rng.normal(0, 0.5, b.actual.shape)
    return b


def test_compare_is_antisymmetric(backtest):
    other = other_model(backtest)
    ab, ba = ex.compare_models(backtest, other), ex.compare_models(other, backtest)
    assert ab.full.statistic == -ba.full.statistic
    assert ab.full.p_value + ba.full.p_value == pytest.approx(1.0)
    for x, y in zip(ab.hourly, ba.hourly):
        assert x.statistic == -y.statistic


def test_comparison_outputs(backtest, tmp_path):
    rep = ex.compare_models(backtest, other_model(backtest))
    text = rep.to_text()
    assert "| Model" in text and "| sMAPE" in text
    assert f"{rep.smape_a:.1f}%" in text and f"{rep.smape_b:.1f}%" in text and "Other" in text
    rep.write(tmp_path)
    plot = list(csv.reader((tmp_path / "hourly_dm_plotdata.csv").open()))
    assert len(plot) == 25 and plot[0] == ["hour", "statistic", "critical_value"]
    assert all(float(r[2]) == 1.645 for r in plot[1:])
    dm = list(csv.reader((tmp_path / "dm.csv").open()))
    assert len(dm) == 26 and dm[-1][0] == "full" and dm[-1][4] == "23"
    rec = json.loads((tmp_path / "comparison.json").read_text())
    assert len(rec["hourly"]) == 24


def test_compare_rejects_misaligned(backtest):
    import copy

    shifted = copy.deepcopy(backtest)
    shifted.days = [d + dt.timedelta(days=1) for d in shifted.days]
    with pytest.raises(AlignmentError):
        ex.compare_models(backtest, shifted)


def test_dual_study_scores_market_b_only(fast_data):
    spec = ex.StudySpec(**FAST, test_days=6, retrain_every=3)
    out = ex.run_dual_study(spec, CONFIG, fast_data)
    assert out.single.predicted.shape == out.dual.predicted.shape == (6, 24)
    np.testing.assert_array_equal(out.single.actual, out.dual.actual)
    assert out.dual.dual and not out.single.dual
    assert out.comparison.name_a == "Dual" and out.comparison.name_b == "Single"
    again = ex.run_dual_study(spec, CONFIG, fast_data)
    assert again.comparison.full.statistic == out.comparison.full.statistic
