"""Simulate TVP-VAR-SV data with known states, for recovery tests and demo runs."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ingestion import (AlignedPanel, CommentRecord, MarketBar, write_comments,
                        write_market, write_panel)
from .posterior import companion
from .tvpvar import TvpVarSpec, build_A, stack_beta, unit_lower_inverse, unstack_beta


class SimulationError(RuntimeError):
    pass


@dataclass
class DgpSpec:
    """Data-generating process.

    State-innovation variances of 0 give constant paths. ``beta0``/``a0``/
    ``h0`` fix the starting states; when ``beta0`` is None a stable set of
    coefficients is drawn (lag-i entries ~ N(0, (coef_scale / i)^2)).
    """

    n: int = 3
    p: int = 3
    T: int = 400
    intercept: bool = True
    sig_beta: float | np.ndarray = 0.0
    sig_a: float | np.ndarray = 0.0
    sig_h: float | np.ndarray = 0.0
    beta0: Optional[np.ndarray] = None
    a0: Optional[np.ndarray] = None
    h0: Optional[np.ndarray] = None
    coef_scale: float = 0.2
    intercept_scale: float = 0.1
    max_radius: float = 0.98
    presample: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.T < 50:
            raise ValueError("T must be at least 50")
        if self.T <= self.p:
            raise ValueError("T must exceed p")

    @property
    def model_spec(self) -> TvpVarSpec:
        names = ("sent", "rv", "dturn") if self.n == 3 else tuple(f"y{i + 1}" for i in range(self.n))
        return TvpVarSpec(self.n, self.p, names, "time-varying" if self.intercept else "none")


@dataclass
class SimulatedData:
    y: np.ndarray          # (T, n); first p rows are presample values
    beta: np.ndarray       # (T-p, k_beta)
    a: np.ndarray          # (T-p, k_a)
    h: np.ndarray          # (T-p, n)
    sig_beta: np.ndarray   # true innovation variances
    sig_a: np.ndarray
    sig_h: np.ndarray
    spec: TvpVarSpec
    dates: tuple = field(default=())

    def panel(self) -> AlignedPanel:
        if self.spec.n != 3:
            raise ValueError("panel view needs n = 3")
        return AlignedPanel(self.dates, self.y[:, 0], self.y[:, 1], self.y[:, 2])


def spectral_radius(B: np.ndarray) -> np.ndarray:
    """Largest companion eigenvalue modulus for B of shape (..., p, n, n)."""
    return np.max(np.abs(np.linalg.eigvals(companion(B))), axis=-1)


def _rw(start: np.ndarray, var, steps: int, rng: np.random.Generator) -> np.ndarray:
    start = np.asarray(start, dtype=float)
    sd = np.sqrt(np.broadcast_to(np.asarray(var, dtype=float), start.shape))
    inc = rng.standard_normal((steps - 1,) + start.shape) * sd
    return np.concatenate([start[None], start + np.cumsum(inc, axis=0)], axis=0)


def trading_dates(T: int, start: dt.date = dt.date(2018, 1, 2)) -> tuple:
    days = np.busday_offset(np.datetime64(start), np.arange(T), roll="forward")
    return tuple(d.astype(object) for d in days)


def simulate_observations(beta: np.ndarray, a: np.ndarray, h: np.ndarray, y_init: np.ndarray,
                          spec: TvpVarSpec, rng: np.random.Generator) -> np.ndarray:
    """Run the measurement equation forward from ``y_init`` (p, n) along given state paths."""
    Te = beta.shape[0]
    n, p = spec.n, spec.p
    c, B = unstack_beta(beta, spec)
    Ainv = unit_lower_inverse(build_A(a, n))
    shocks = np.einsum("tij,tj->ti", Ainv, np.exp(0.5 * h) * rng.standard_normal((Te, n)))
    y = np.empty((Te + p, n))
    y[:p] = y_init
    for t in range(Te):
        mean = np.zeros(n) if c is None else c[t].copy()
        for i in range(p):
            mean += B[t, i] @ y[p + t - 1 - i]
        y[p + t] = mean + shocks[t]
    return y


def _initial_beta(spec: DgpSpec, ms: TvpVarSpec, rng: np.random.Generator) -> np.ndarray:
    scale = spec.coef_scale / np.arange(1, spec.p + 1)
    B = rng.standard_normal((spec.p, spec.n, spec.n)) * scale[:, None, None]
    c = rng.standard_normal(spec.n) * spec.intercept_scale if spec.intercept else None
    return stack_beta(B, ms, c)


def simulate(spec: DgpSpec) -> SimulatedData:
    """Draw states and data; companion matrices along the path stay below ``max_radius``."""
    rng = np.random.default_rng(spec.seed)
    ms = spec.model_spec
    n, p, Te = spec.n, spec.p, spec.T - spec.p
    for attempt in range(1000):
        b0 = _initial_beta(spec, ms, rng) if spec.beta0 is None else np.asarray(spec.beta0, dtype=float)
        beta = _rw(b0, spec.sig_beta, Te, rng)
        _, B = unstack_beta(beta, ms)
        if np.all(spectral_radius(B) <= spec.max_radius):
            break
        if spec.beta0 is not None and np.all(np.asarray(spec.sig_beta) == 0):
            raise SimulationError("supplied beta0 is not stable")
    else:
        raise SimulationError("no stable coefficient path after 1000 attempts")
    a0 = np.zeros(ms.k_a) if spec.a0 is None else np.asarray(spec.a0, dtype=float)
    h0 = np.zeros(n) if spec.h0 is None else np.asarray(spec.h0, dtype=float)
    a = _rw(a0, spec.sig_a, Te, rng)
    h = _rw(h0, spec.sig_h, Te, rng)
    # presample: run the starting-date system from zero so y_init is near stationarity
    pre = spec.presample + p
    y_pre = simulate_observations(np.tile(beta[0], (pre, 1)), np.tile(a[0], (pre, 1)),
                                  np.tile(h[0], (pre, 1)), np.zeros((p, n)), ms, rng)
    y = simulate_observations(beta, a, h, y_pre[-p:], ms, rng)
    def full(v, k):
        return np.broadcast_to(np.asarray(v, dtype=float), (k,)).copy()
    return SimulatedData(y, beta, a, h, full(spec.sig_beta, ms.k_beta), full(spec.sig_a, ms.k_a),
                         full(spec.sig_h, n), ms, trading_dates(spec.T))


def prior_draw_states(spec: TvpVarSpec, prior, Te: int, rng: np.random.Generator):
    """Draw hyper-variances and state paths from the prior (used by the getting-it-right check)."""
    out = {}
    for fam, k in (("beta", spec.k_beta), ("a", spec.k_a), ("h", spec.n)):
        prec = rng.gamma(getattr(prior, f"{fam}_shape"), 1.0 / getattr(prior, f"{fam}_rate"), size=k)
        var = 1.0 / prec
        start = getattr(prior, f"{fam}0_mean") + np.sqrt(getattr(prior, f"{fam}0_var")) * rng.standard_normal(k)
        out[f"sig_{fam}"] = var
        out[fam] = _rw(start, var, Te, rng)
    return out


# ---------------------------------------------------------------------------
# CSV emission so the full pipeline can run on simulated inputs

def to_market_and_sentiment(sim: SimulatedData, turnover_floor: float = 0.5,
                            rv_floor: float = 0.2):
    """Map simulated (sent, rv, dturn) to market bars plus a bounded sentiment target.

    Turnover is rebuilt by cumulating dturn from a level chosen to keep it
    above ``turnover_floor``; rv is shifted to stay above ``rv_floor``;
    sentiment is scaled into (-1, 1). All three are affine maps, so the
    dynamics are unchanged.
    """
    y = sim.y
    turn = np.concatenate([[0.0], np.cumsum(y[:, 2])])
    turn += max(1.25, turnover_floor - turn.min())
    rv = y[:, 1] + max(0.0, rv_floor - y[:, 1].min())
    sent = y[:, 0] / (1.05 * np.max(np.abs(y[:, 0])))
    # one extra leading date carries the first turnover level consumed by differencing
    dates = (np.busday_offset(np.datetime64(sim.dates[0]), -1, roll="backward").astype(object),) + tuple(sim.dates)
    bars = [MarketBar(dates[0], float(turn[0]), float(rv[0]))]
    bars += [MarketBar(d, float(tu), float(r)) for d, tu, r in zip(dates[1:], turn[1:], rv)]
    return bars, dates, np.concatenate([[sent[0]], sent])


def comments_for_sentiment(dates, sent, rng: np.random.Generator, opinionated: int = 40,
                           neutral: int = 8, too_long: int = 5) -> list[CommentRecord]:
    """Comment records whose unit-weight index approximates ``sent`` on each date.

    Each day gets ``opinionated`` labelled messages split to match the target
    (quantized to 2/opinionated), some neutral messages, a few over-long
    messages that the length filter removes, and one weekend-dated message
    that the date join drops.
    """
    out = []
    for d, s in zip(dates, sent):
        n_pos = int(round(opinionated * (1 + s) / 2))
        labels = [2] * n_pos + [0] * (opinionated - n_pos) + [1] * neutral
        for lab in labels:
            p_lab = float(rng.uniform(0.6, 0.99))
            rest = 1.0 - p_lab
            pos, neg = {2: (p_lab, rest * 0.5), 0: (rest * 0.5, p_lab), 1: (rest * 0.5, rest * 0.5)}[lab]
            out.append(CommentRecord(d, int(rng.integers(5, 150)), int(rng.integers(100, 5000)),
                                     int(rng.integers(0, 50)), lab, round(pos, 6), round(neg, 6)))
        for _ in range(too_long):
            out.append(CommentRecord(d, int(rng.integers(150, 400)), int(rng.integers(5000, 9000)),
                                     0, 2, 0.9, 0.05))
    weekend = [d + dt.timedelta(days=1) for d in dates if d.weekday() == 4]
    for d in weekend[:10]:
        out.append(CommentRecord(d, 20, 10, 0, 0, 0.1, 0.9))
    out.sort(key=lambda r: r.date)
    return out


def write_synthetic_inputs(sim: SimulatedData, out_dir, seed: int = 0) -> dict:
    """Write comments.csv, market.csv and the true panel; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bars, dates, sent = to_market_and_sentiment(sim)
    rng = np.random.default_rng(seed)
    comments = comments_for_sentiment(dates, sent, rng)
    paths = {"comments": out / "comments.csv", "market": out / "market.csv",
             "truth_panel": out / "truth_panel.csv"}
    write_comments(paths["comments"], comments)
    write_market(paths["market"], bars)
    write_panel(paths["truth_panel"], AlignedPanel(tuple(dates[1:]), sent[1:],
                                                   np.array([b.rv for b in bars[1:]]), sim.y[:, 2]))
    return paths
