"""Daily bullishness index from classified forum comments.

For each day t the weighted positive and negative message masses are

    M_pos = sum of w_i over positive messages
    M_neg = sum of w_i over negative messages

and ``sent_t = (M_pos - M_neg) / (M_pos + M_neg)``. Neutral messages enter
neither mass. Days without any opinionated weight are reported as 0 and
flagged as degenerate.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingestion import NEGATIVE, NEUTRAL, POSITIVE, CommentRecord, IngestError, parse_date

SENTIMENT_FIELDS = ("date", "sent", "degenerate_flag", "n_pos", "n_neu", "n_neg")


@dataclass(frozen=True)
class WeightScheme:
    """Per-message weights.

    ``prob_weighted`` is an extension outside the hard-label index: each
    message contributes ``w * pos_prob`` to the positive mass and
    ``w * neg_prob`` to the negative mass, with ``w = 1``.
    """

    kind: str = "unit"

    KINDS = ("unit", "readership", "log1p_readership", "prob_weighted")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown weight scheme {self.kind!r}; choose from {self.KINDS}")

    def weight(self, rec: CommentRecord) -> float:
        if self.kind == "readership":
            return float(rec.readership)
        if self.kind == "log1p_readership":
            return math.log1p(rec.readership)
        return 1.0


@dataclass
class SentimentSeries:
    dates: tuple[dt.date, ...]
    values: np.ndarray
    degenerate: np.ndarray = field(default=None)
    n_pos: np.ndarray = field(default=None)
    n_neu: np.ndarray = field(default=None)
    n_neg: np.ndarray = field(default=None)

    def __post_init__(self):
        T = len(self.dates)
        self.values = np.asarray(self.values, dtype=float)
        if self.degenerate is None:
            self.degenerate = np.zeros(T, dtype=bool)
        for name in ("n_pos", "n_neu", "n_neg"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(T, dtype=int))
        if np.any(np.abs(self.values) > 1.0):
            raise ValueError("sentiment values must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.dates)


def _masses(day: Sequence[CommentRecord], scheme: WeightScheme) -> tuple[float, float]:
    pos = neg = 0.0
    for r in day:
        w = scheme.weight(r)
        if scheme.kind == "prob_weighted":
            pos += w * r.pos_prob
            neg += w * r.neg_prob
        elif r.label == POSITIVE:
            pos += w
        elif r.label == NEGATIVE:
            neg += w
    return pos, neg


def bullishness(pos_mass: float, neg_mass: float) -> tuple[float, bool]:
    """Index value and degenerate flag for one day's masses."""
    total = pos_mass + neg_mass
    if total <= 0.0:
        return 0.0, True
    value = (pos_mass - neg_mass) / total
    return min(1.0, max(-1.0, value)), False


def daily_bullishness(records: Iterable[CommentRecord],
                      scheme: WeightScheme = WeightScheme()) -> SentimentSeries:
    recs = sorted(records, key=lambda r: r.date)
    dates, values, flags, counts = [], [], [], []
    for d, group in groupby(recs, key=lambda r: r.date):
        day = list(group)
        value, degenerate = bullishness(*_masses(day, scheme))
        dates.append(d)
        values.append(value)
        flags.append(degenerate)
        counts.append([sum(r.label == c for r in day) for c in (POSITIVE, NEUTRAL, NEGATIVE)])
    counts_arr = np.array(counts, dtype=int).reshape(-1, 3)
    return SentimentSeries(tuple(dates), np.array(values), np.array(flags, dtype=bool),
                           counts_arr[:, 0], counts_arr[:, 1], counts_arr[:, 2])


@dataclass(frozen=True)
class SentimentSummary:
    mean: float
    sd: float
    skewness: float
    min: float
    max: float
    count: int


def sample_skewness(x) -> float:
    """Adjusted Fisher-Pearson skewness G1 = sqrt(n(n-1))/(n-2) * m3/m2**1.5."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 3:
        raise ValueError("skewness needs at least 3 points")
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    if m2 == 0.0:
        raise ValueError("skewness undefined for a constant series")
    m3 = np.mean(d ** 3)
    return float(np.sqrt(n * (n - 1)) / (n - 2) * m3 / m2 ** 1.5)


def summarize_sentiment(series: SentimentSeries) -> SentimentSummary:
    """Table-3 style moments. SD uses the n-1 denominator."""
    x = np.asarray(series.values, dtype=float)
    if x.size == 0:
        raise ValueError("empty sentiment series")
    return SentimentSummary(
        mean=float(x.mean()),
        sd=float(x.std(ddof=1)) if x.size > 1 else 0.0,
        skewness=sample_skewness(x),
        min=float(x.min()),
        max=float(x.max()),
        count=int(x.size),
    )


def write_sentiment(path, series: SentimentSeries) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SENTIMENT_FIELDS)
        for i, d in enumerate(series.dates):
            w.writerow([d.isoformat(), repr(float(series.values[i])), int(series.degenerate[i]),
                        int(series.n_pos[i]), int(series.n_neu[i]), int(series.n_neg[i])])


def load_sentiment(path) -> SentimentSeries:
    path = Path(path)
    if not path.is_file():
        raise IngestError("file not found", path=str(path))
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SENTIMENT_FIELDS:
            raise IngestError(f"header must be {','.join(SENTIMENT_FIELDS)}", 1, str(path))
        for row in reader:
            if not row:
                continue
            try:
                rows.append((parse_date(row[0]), float(row[1]), bool(int(row[2])),
                             int(row[3]), int(row[4]), int(row[5])))
            except (ValueError, IndexError) as exc:
                raise IngestError(str(exc), reader.line_num, str(path)) from None
    cols = list(zip(*rows)) if rows else [()] * 6
    return SentimentSeries(tuple(cols[0]), np.array(cols[1], dtype=float),
                           np.array(cols[2], dtype=bool), np.array(cols[3], dtype=int),
                           np.array(cols[4], dtype=int), np.array(cols[5], dtype=int))
