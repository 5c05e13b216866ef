import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchexp3.normalization import (NormalizationConfig, NormalizationError, Normalizer,
                                     fit_alphas, fit_from_history, fit_quantiles,
                                     minimax_normalize, read_history, traffic_normalize,
                                     write_history)


def linear_quantile(values, pct):
    """Order-statistic interpolation at position pct/100 * (n - 1)."""
    xs = sorted(values)
    pos = pct / 100 * (len(xs) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


def test_quantiles_on_uniform_grid():
    lo, hi = fit_quantiles({0: list(range(101))})
    assert (lo[0], hi[0]) == (5.0, 95.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=20, max_size=200))
def test_quantiles_match_order_statistics(values):
    if linear_quantile(values, 5) >= linear_quantile(values, 95):
        with pytest.raises(NormalizationError):
            fit_quantiles([values])
        return
    lo, hi = fit_quantiles([values])
    assert lo[0] == pytest.approx(linear_quantile(values, 5), rel=1e-9, abs=1e-6)
    assert hi[0] == pytest.approx(linear_quantile(values, 95), rel=1e-9, abs=1e-6)


def test_quantiles_need_twenty_points():
    with pytest.raises(NormalizationError, match="item 0"):
        fit_quantiles([list(range(19))])


def test_quantiles_degenerate():
    with pytest.raises(NormalizationError, match="degenerate"):
        fit_quantiles([[7.0] * 50])


def test_alphas_example():
    assert fit_alphas([[100], [50], [25]]) == (1.0, 0.5, 0.25)


@given(st.lists(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=10), min_size=1, max_size=12))
def test_busiest_period_alpha_is_exactly_one(history):
    alphas = fit_alphas(history)
    assert max(alphas) == 1.0
    assert all(0 < a <= 1 for a in alphas)


def test_alphas_zero_volume():
    with pytest.raises(NormalizationError, match="period 2"):
        fit_alphas([[3.0], [0.0, 0.0]])


def test_traffic_normalize():
    assert traffic_normalize(80, 2, (1.0, 0.5)) == 40
    with pytest.raises(NormalizationError):
        traffic_normalize(1, 3, (1.0, 0.5))


def test_minimax_examples():
    assert minimax_normalize(50, 0, 100) == 0.5
    assert minimax_normalize(-30, 0, 100) == 0.0
    assert minimax_normalize(130, 0, 100) == 1.0
    with pytest.raises(NormalizationError):
        minimax_normalize(1, 5, 5)


@given(st.floats(-1e9, 1e9), st.integers(1, 4), st.integers(0, 1))
def test_composed_normalization_in_unit_interval(profit, period, item):
    n = Normalizer(NormalizationConfig((0.25, 1.0, 0.5, 0.75), (-40.0, 0.0), (300.0, 1.0)))
    assert 0.0 <= n(item, period, profit) <= 1.0


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_composed_normalization_monotone(a, b):
    n = Normalizer(NormalizationConfig((0.5, 1.0), (-10.0,), (90.0,)))
    lo, hi = min(a, b), max(a, b)
    assert n(0, 1, lo) <= n(0, 1, hi)


def test_table_matches_scalar():
    cfg = NormalizationConfig((0.5, 1.0, 0.8), (-20.0, 5.0), (60.0, 400.0))
    n = Normalizer(cfg)
    profits = np.random.default_rng(0).integers(-100, 500, size=(2, 9, 4))
    table = n.table(profits, 3)
    for j in range(2):
        for t in range(9):
            for b in range(4):
                assert table[j, t, b] == pytest.approx(n(j, t % 3 + 1, profits[j, t, b]), abs=1e-15)


@pytest.mark.parametrize("kw", [
    dict(alphas=(), r_min=(0.0,), r_max=(1.0,)),
    dict(alphas=(0.5, 0.9), r_min=(0.0,), r_max=(1.0,)),
    dict(alphas=(1.0, 1.2), r_min=(0.0,), r_max=(1.0,)),
    dict(alphas=(1.0,), r_min=(0.0, 1.0), r_max=(1.0,)),
    dict(alphas=(1.0,), r_min=(2.0,), r_max=(1.0,)),
])
def test_config_validation(kw):
    with pytest.raises(NormalizationError):
        NormalizationConfig(**kw)


def test_history_csv_round_trip(tmp_path):
    rows = [{"item": j, "period": l, "profit": float(j * 100 + l * 3 + d), "volume": float(l * 10)}
            for j in range(2) for d in range(15) for l in (1, 2)]
    path = tmp_path / "h.csv"
    write_history(path, rows)
    assert read_history(path) == rows
    cfg = fit_from_history(read_history(path), 2, 2)
    assert cfg.alphas == (0.5, 1.0)
    assert cfg.n_items == 2


def test_history_bad_columns(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("item,when,profit\n0,1,3\n")
    with pytest.raises(NormalizationError, match="columns"):
        read_history(path)


def test_history_missing_item():
    rows = [{"item": 0, "period": 1, "profit": float(i), "volume": 1.0} for i in range(30)]
    with pytest.raises(NormalizationError, match=r"items \[1\]"):
        fit_from_history(rows, 2, 1)
