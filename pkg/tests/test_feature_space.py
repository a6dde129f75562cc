import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from conftest import make_series
from dayahead.errors import InvalidConfig, SliceTooShort
from dayahead.feature_space import (
    BINARY_FEATURES,
    COORDINATES,
    FeatureConfig,
    build_samples,
    default_space,
    input_dimension,
    input_layout,
    input_names,
    neighbors,
    sample_config,
    small_space,
    validate,
)
from dayahead.market_data import ScalingParams, fit_scaler

configs = st.builds(
    FeatureConfig,
    pBd=st.integers(1, 6),
    pBw=st.integers(1, 3),
    **{k: st.integers(0, 1) for k in BINARY_FEATURES},
    n1=st.integers(100, 400),
    n2=st.sampled_from([0, 48, 100, 360]),
)

IDENTITY = ScalingParams({c: -1.0 for c in ("price_B", "price_F", "load_B", "load_F", "gen_B", "gen_F")},
                         {c: 1.0 for c in ("price_B", "price_F", "load_B", "load_F", "gen_B", "gen_F")})


def enumerate_inputs(c):
    """Independent count: list every (channel, hour offset) input one by one."""
    cols = []
    for market, on in (("B", True), ("F", bool(c.pF))):
        if not on:
            continue
        for j in range(1, 24 * c.pBd + 1):
            cols.append((f"price_{market}", -j))
        for k in range(1, c.pBw + 1):
            for h in range(24):
                cols.append((f"price_{market}", h - 168 * k))
    for flag, ch in (("lB", "load_B"), ("lF", "load_F"), ("gB", "gen_B"), ("gF", "gen_F")):
        if getattr(c, flag):
            cols += [(ch, h) for h in range(24)]
    for flag, ch in (("HB", "holiday_B"), ("HF", "holiday_F")):
        if getattr(c, flag):
            cols.append((ch, 0))
    return cols


def test_dimension_example():
    c = FeatureConfig(pBd=2, pBw=1, pF=1, lF=1, gF=1)
    assert input_dimension(c) == 192 == len(enumerate_inputs(c))


def test_dimension_minimal():
    assert input_dimension(FeatureConfig(pBd=1, pBw=1)) == 48


@pytest.mark.parametrize("bad", [dict(pBd=7), dict(pBd=0), dict(pBw=4), dict(pF=2), dict(n1=0)])
def test_dimension_rejects_out_of_range(bad):
    with pytest.raises(InvalidConfig):
        input_dimension(FeatureConfig(**bad))


@given(configs)
def test_dimension_matches_enumeration(c):
    assert input_dimension(c) == len(enumerate_inputs(c))
    layout = [(ch, int(o)) for _, ch, offs in input_layout(c) for o in offs]
    assert layout == enumerate_inputs(c)


def test_first_usable_target_day():
    series = make_series(10)
    s = build_samples(FeatureConfig(pBd=1, pBw=1), series, fit_scaler(series))
    assert s.target_index[0] == 7
    assert s.origin_days[0] == series.days[7]
    assert len(s) == 3


def test_short_slice():
    series = make_series(3)
    with pytest.raises(SliceTooShort):
        build_samples(FeatureConfig(pBd=1, pBw=1), series, fit_scaler(series))


def test_dual_targets():
    series = make_series(12)
    scaler = fit_scaler(series)
    c = FeatureConfig(pBd=2, pBw=1, pF=1)
    single = build_samples(c, series, scaler)
    dual = build_samples(c, series, scaler, dual=True)
    assert single.targets.shape[1] == 24 and dual.targets.shape[1] == 48
    np.testing.assert_array_equal(dual.targets[:, :24], single.targets)
    day = dual.target_index[0]
    np.testing.assert_allclose(
        dual.targets[0, 24:], scaler.apply(series.channel("price_F")[24 * day : 24 * day + 24], "price_F")
    )


def test_target_window_bounds():
    series = make_series(30)
    s = build_samples(FeatureConfig(), series, fit_scaler(series),
                      first_target=dt.date(2015, 1, 20), last_target=dt.date(2015, 1, 25))
    assert s.origin_days[0] == dt.date(2015, 1, 20)
    assert s.origin_days[-1] == dt.date(2015, 1, 25)


def clock_series(n_days):
    """Every numeric channel holds the absolute hour index."""
    series = make_series(n_days)
    frame = series.frame.copy()
    for ch in ("price_B", "price_F", "load_B", "load_F", "gen_B", "gen_F"):
        frame[ch] = np.arange(len(frame), dtype=float)
    return type(series)(frame)


@given(configs)
@settings(max_examples=40, deadline=None)
def test_inputs_respect_deadline(c):
    series = clock_series(30)
    s = build_samples(c, series, IDENTITY)
    assert s.inputs.shape == (len(s), input_dimension(c))
    col = 0
    for block, _ch, offs in input_layout(c):
        values = s.inputs[:, col : col + len(offs)]
        col += len(offs)
        if block.startswith("H"):
            continue
        deadline = 24 * s.target_index[:, None]  # first hour of the target day
        if block.startswith("p"):
            assert (values < deadline).all()
        else:
            # day-ahead curves belong to the target day itself
            assert ((values >= deadline) & (values < deadline + 24)).all()


def test_weekly_lags_are_exact_weeks():
    series = clock_series(30)
    s = build_samples(FeatureConfig(pBd=1, pBw=2), series, IDENTITY)
    d = s.target_index[0]
    weekly = s.inputs[0, 24:72]
    expected = np.concatenate([24 * d + np.arange(24) - 168, 24 * d + np.arange(24) - 336])
    np.testing.assert_array_equal(weekly, expected)
    np.testing.assert_array_equal(s.inputs[0, :24], 24 * d - 1 - np.arange(24))


@given(configs, st.sampled_from(BINARY_FEATURES))
@settings(max_examples=40, deadline=None)
def test_toggling_flag_removes_only_its_block(c, flag):
    series = make_series(25)
    scaler = fit_scaler(series)
    on = build_samples(c.replace(**{flag: 1}), series, scaler)
    off = build_samples(c.replace(**{flag: 0}), series, scaler)
    keep = []
    col = 0
    for block, _ch, offs in input_layout(c.replace(**{flag: 1})):
        owned = block == flag or (flag == "pF" and block.startswith("pF"))
        if not owned:
            keep.extend(range(col, col + len(offs)))
        col += len(offs)
    np.testing.assert_array_equal(on.inputs[:, keep], off.inputs)
    np.testing.assert_array_equal(on.targets, off.targets)


def test_holidays_enter_unscaled():
    series = make_series(20)
    s = build_samples(FeatureConfig(HB=1, HF=1), series, fit_scaler(series))
    d = s.target_index
    np.testing.assert_array_equal(s.inputs[:, -2], series.channel("holiday_B")[24 * d])
    np.testing.assert_array_equal(s.inputs[:, -1], series.channel("holiday_F")[24 * d])


# -- configs and spaces -----------------------------------------------------


def test_collapsed_domain_always_drawn():
    space = default_space().collapse(gB=0)
    rng = np.random.default_rng(0)
    assert all(sample_config(space, rng).gB == 0 for _ in range(500))


def test_sampling_reproducible():
    space = small_space()
    a = [sample_config(space, np.random.default_rng(5)) for _ in range(3)]
    b = [sample_config(space, np.random.default_rng(5)) for _ in range(3)]
    assert a == b


def test_pBd_draws_uniform():
    rng = np.random.default_rng(2024)
    space = default_space()
    draws = np.array([sample_config(space, rng).pBd for _ in range(10_000)])
    counts = np.bincount(draws, minlength=7)[1:]
    assert np.all(np.abs(counts / 10_000 - 1 / 6) < 0.02)
    assert chisquare(counts).pvalue > 0.001


@given(configs)
def test_config_text_round_trip(c):
    assert FeatureConfig.loads(c.dumps()) == c


def test_config_loads_rejects_unknown_key():
    with pytest.raises(InvalidConfig):
        FeatureConfig.loads("pBd = 2\nfoo = 1\n")


def test_validate_against_space():
    validate(FeatureConfig(pBd=3, n1=150, n2=48))
    with pytest.raises(InvalidConfig):
        validate(FeatureConfig(n2=20))
    validate(FeatureConfig(n1=20, n2=10), small_space())


def test_neighbors_stay_in_space():
    space = small_space()
    c = FeatureConfig(pBd=1, pBw=3, n1=16, n2=0)
    nb = neighbors(c, space)
    assert all(space.contains(x) for x in nb)
    assert FeatureConfig(pBd=2, pBw=3, n1=16, n2=0) in nb
    assert len({x for x in nb}) == len(nb)


def test_space_size_and_grid():
    space = default_space().collapse(pBd=1, pBw=1, n1=100, n2=0, lB=0, lF=0, gB=0, gF=0)
    grid = list(space.grid())
    assert space.size() == len(grid) == 8
    assert set(COORDINATES) == set(grid[0].as_dict())


def test_input_names_follow_column_order():
    c = FeatureConfig(pBd=1, pBw=1, pF=1, lF=1, HB=1, n1=100)
    names = input_names(c)
    assert len(names) == input_dimension(c) == 24 * 5 + 1
    assert names[0] == "price_B@-1" and names[23] == "price_B@-24"
    assert names[24] == "price_B@-168" and names[48] == "price_F@-1"
    assert names[96:98] == ["load_F@+0", "load_F@+1"] and names[-1] == "holiday_B@+0"
