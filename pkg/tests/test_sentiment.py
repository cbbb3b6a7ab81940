import datetime as dt

import numpy as np
import pytest
from scipy import stats

from tvpsent.ingestion import CommentRecord
from tvpsent.sentiment import (SentimentSeries, WeightScheme, bullishness, daily_bullishness,
                               load_sentiment, sample_skewness, summarize_sentiment, write_sentiment)

D0 = dt.date(2018, 1, 2)


def msg(label, read=1, day=0, pos=None, neg=None):
    pos = {2: 0.9, 1: 0.2, 0: 0.05}[label] if pos is None else pos
    neg = {2: 0.05, 1: 0.2, 0: 0.9}[label] if neg is None else neg
    return CommentRecord(D0 + dt.timedelta(days=day), 10, read, 0, label, pos, neg)


def test_worked_example():
    s = daily_bullishness([msg(2), msg(2), msg(2), msg(0)])
    assert s.values[0] == 0.5
    assert (s.n_pos[0], s.n_neu[0], s.n_neg[0]) == (3, 0, 1)


def test_all_neutral_is_degenerate():
    s = daily_bullishness([msg(1), msg(1)])
    assert s.values[0] == 0.0 and s.degenerate[0]


def test_readership_weights():
    s = daily_bullishness([msg(2, read=2115), msg(0, read=1159)], WeightScheme("readership"))
    assert s.values[0] == pytest.approx((2115 - 1159) / (2115 + 1159), abs=1e-12)
    assert s.values[0] == pytest.approx(0.2920, abs=1e-4)


def test_log1p_and_prob_schemes():
    s = daily_bullishness([msg(2, read=9), msg(0, read=0)], WeightScheme("log1p_readership"))
    assert s.values[0] == 1.0
    s = daily_bullishness([msg(2, pos=0.7, neg=0.1), msg(1, pos=0.3, neg=0.5)], WeightScheme("prob_weighted"))
    assert s.values[0] == pytest.approx((1.0 - 0.6) / (1.0 + 0.6))


def test_unknown_scheme():
    with pytest.raises(ValueError, match="unknown weight scheme"):
        WeightScheme("votes")


def test_bullishness_bounds_exact():
    assert bullishness(3.0, 0.0) == (1.0, False)
    assert bullishness(0.0, 2.0) == (-1.0, False)
    assert bullishness(0.0, 0.0) == (0.0, True)


def test_days_are_ordered_and_separate():
    s = daily_bullishness([msg(0, day=1), msg(2, day=0)])
    assert s.dates == (D0, D0 + dt.timedelta(days=1))
    np.testing.assert_array_equal(s.values, [1.0, -1.0])


def test_summary_basic():
    s = summarize_sentiment(SentimentSeries((D0, D0 + dt.timedelta(1), D0 + dt.timedelta(2)), [-1, 0, 1]))
    assert (s.mean, s.min, s.max, s.count) == (0.0, -1.0, 1.0, 3)
    assert s.skewness == pytest.approx(0.0, abs=1e-12)


def test_constant_series_skewness_errors():
    with pytest.raises(ValueError, match="constant"):
        summarize_sentiment(SentimentSeries(tuple(D0 + dt.timedelta(i) for i in range(4)), [0.3] * 4))
    with pytest.raises(ValueError, match="at least 3"):
        sample_skewness([0.1, 0.2])


def test_skewness_matches_scipy():
    x = np.random.default_rng(0).gamma(2.0, size=200)
    assert sample_skewness(x) == pytest.approx(stats.skew(x, bias=False), rel=1e-12)


def test_symmetric_series_zero_skew():
    x = np.array([-0.7, -0.2, 0.0, 0.2, 0.7])
    assert abs(sample_skewness(x)) < 1e-12


def test_sentiment_round_trip(tmp_path):
    s = daily_bullishness([msg(2), msg(0, day=1), msg(1, day=2)])
    write_sentiment(tmp_path / "s.csv", s)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "date,sent,degenerate_flag,n_pos,n_neu,n_neg"
    back = load_sentiment(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.values, s.values)
    np.testing.assert_array_equal(back.degenerate, s.degenerate)


def test_values_out_of_range_rejected():
    with pytest.raises(ValueError, match="\\[-1, 1\\]"):
        SentimentSeries((D0,), [1.5])
