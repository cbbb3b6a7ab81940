"""Loading, filtering and aligning comment records and daily market bars."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .sentiment import SentimentSeries

COMMENT_FIELDS = ("date", "text_length", "readership", "replies", "label", "pos_prob", "neg_prob")
MARKET_FIELDS = ("date", "turnover", "rv")
PANEL_FIELDS = ("date", "sent", "rv", "dturn")

NEGATIVE, NEUTRAL, POSITIVE = 0, 1, 2
PROB_SUM_TOL = 1e-6


class IngestError(ValueError):
    """Bad input file or record. ``line`` is the 1-based file line when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class CommentRecord:
    date: dt.date
    text_length: int
    readership: int
    replies: int
    label: int
    pos_prob: float
    neg_prob: float

    def __post_init__(self):
        if self.text_length < 1:
            raise ValueError("text_length must be >= 1")
        if self.readership < 0 or self.replies < 0:
            raise ValueError("readership and replies must be nonnegative")
        if self.label not in (NEGATIVE, NEUTRAL, POSITIVE):
            raise ValueError(f"label must be 0, 1 or 2, got {self.label}")
        for name in ("pos_prob", "neg_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        # printed probabilities are rounded, so allow 1e-6 slack
        if self.pos_prob + self.neg_prob > 1.0 + PROB_SUM_TOL:
            raise ValueError("pos_prob + neg_prob exceeds 1")


@dataclass(frozen=True)
class MarketBar:
    date: dt.date
    turnover: float
    rv: float

    def __post_init__(self):
        if not self.turnover > 0:
            raise ValueError(f"turnover must be positive, got {self.turnover}")
        if not self.rv >= 0:
            raise ValueError(f"rv must be nonnegative, got {self.rv}")


@dataclass(frozen=True)
class AlignedPanel:
    """Date-indexed model input y_t = (sent_t, rv_t, dturn_t)."""

    dates: tuple[dt.date, ...]
    sent: np.ndarray
    rv: np.ndarray
    dturn: np.ndarray

    def __post_init__(self):
        T = len(self.dates)
        if T < 1:
            raise ValueError("panel must hold at least one date")
        for name in ("sent", "rv", "dturn"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (T,):
                raise ValueError(f"{name} has length {arr.shape}, expected {T}")
            object.__setattr__(self, name, arr)
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("panel dates must be strictly increasing")

    columns = ("sent", "rv", "dturn")

    def __len__(self) -> int:
        return len(self.dates)

    def matrix(self, order: Sequence[str] = ("sent", "rv", "dturn")) -> np.ndarray:
        return np.column_stack([getattr(self, name) for name in order])


def parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


def _open_rows(path, fields: Sequence[str]):
    path = Path(path)
    if not path.is_file():
        raise IngestError("file not found", path=str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != tuple(fields):
            raise IngestError(f"header must be {','.join(fields)}, got {header}", line=1, path=str(path))
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, row


def load_comments(path) -> list[CommentRecord]:
    """Read a classified-comments CSV; any bad row raises with its line number."""
    records = []
    for line, row in _open_rows(path, COMMENT_FIELDS):
        if len(row) != len(COMMENT_FIELDS):
            raise IngestError(f"expected {len(COMMENT_FIELDS)} fields, got {len(row)}", line, str(path))
        try:
            records.append(CommentRecord(
                date=parse_date(row[0]),
                text_length=int(row[1]),
                readership=int(row[2]),
                replies=int(row[3]),
                label=int(row[4]),
                pos_prob=float(row[5]),
                neg_prob=float(row[6]),
            ))
        except ValueError as exc:
            raise IngestError(str(exc), line, str(path)) from None
    return records


def filter_comments(records: Iterable[CommentRecord], max_len: int = 150,
                    top_k: int = 50) -> list[CommentRecord]:
    """Drop long comments, then keep the ``top_k`` most-read per day.

    Length cut is strict (``text_length < max_len``). Ties in readership are
    broken by replies (descending), then by input order. Output is grouped by
    date in ascending order.
    """
    kept = [(i, r) for i, r in enumerate(records) if r.text_length < max_len]
    kept.sort(key=lambda ir: (ir[1].date, -ir[1].readership, -ir[1].replies, ir[0]))
    out: list[CommentRecord] = []
    for _, group in groupby(kept, key=lambda ir: ir[1].date):
        out.extend(r for _, r in list(group)[:top_k])
    return out


def load_market(path) -> list[MarketBar]:
    bars = []
    seen: dict[dt.date, int] = {}
    for line, row in _open_rows(path, MARKET_FIELDS):
        if len(row) != len(MARKET_FIELDS):
            raise IngestError(f"expected {len(MARKET_FIELDS)} fields, got {len(row)}", line, str(path))
        try:
            bar = MarketBar(parse_date(row[0]), float(row[1]), float(row[2]))
        except ValueError as exc:
            raise IngestError(str(exc), line, str(path)) from None
        if bar.date in seen:
            raise IngestError(f"duplicate date {bar.date} (first seen on line {seen[bar.date]})",
                              line, str(path))
        seen[bar.date] = line
        bars.append(bar)
    bars.sort(key=lambda b: b.date)
    return bars


def align_panel(sent: "SentimentSeries", bars: Sequence[MarketBar]) -> AlignedPanel:
    """Inner-join sentiment with market bars and first-difference turnover.

    The earliest common date is consumed by the differencing, so the panel
    has one row fewer than the number of common dates.
    """
    by_date = {b.date: b for b in bars}
    sent_by_date = dict(zip(sent.dates, sent.values))
    common = sorted(set(sent_by_date) & set(by_date))
    if len(common) < 2:
        raise IngestError(f"need at least 2 common dates, found {len(common)}")
    turn = np.array([by_date[d].turnover for d in common])
    return AlignedPanel(
        dates=tuple(common[1:]),
        sent=np.array([sent_by_date[d] for d in common[1:]], dtype=float),
        rv=np.array([by_date[d].rv for d in common[1:]]),
        dturn=np.diff(turn),
    )


def write_comments(path, records: Iterable[CommentRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMMENT_FIELDS)
        for r in records:
            w.writerow([r.date.isoformat(), r.text_length, r.readership, r.replies,
                        r.label, repr(r.pos_prob), repr(r.neg_prob)])


def write_market(path, bars: Iterable[MarketBar]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MARKET_FIELDS)
        for b in bars:
            w.writerow([b.date.isoformat(), repr(b.turnover), repr(b.rv)])


def write_panel(path, panel: AlignedPanel) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_FIELDS)
        for d, s, r, t in zip(panel.dates, panel.sent, panel.rv, panel.dturn):
            w.writerow([d.isoformat(), repr(float(s)), repr(float(r)), repr(float(t))])


def load_panel(path) -> AlignedPanel:
    dates, cols = [], []
    for line, row in _open_rows(path, PANEL_FIELDS):
        try:
            dates.append(parse_date(row[0]))
            cols.append([float(x) for x in row[1:]])
        except (ValueError, IndexError) as exc:
            raise IngestError(str(exc), line, str(path)) from None
    if not dates:
        raise IngestError("panel file has no rows", path=str(path))
    arr = np.array(cols)
    return AlignedPanel(tuple(dates), arr[:, 0], arr[:, 1], arr[:, 2])
