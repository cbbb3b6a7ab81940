"""Posterior summaries, convergence diagnostics and time-varying impulse responses."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .tvpvar import PosteriorDraws, TvpVarSpec, build_A, unit_lower_inverse, unstack_beta

SUMMARY_FIELDS = ("parameter", "mean", "sd", "ci_low", "ci_high", "geweke_cd", "inefficiency")
TRACE_FIELDS = ("shock", "response", "horizon", "date", "value")
PROFILE_FIELDS = ("shock", "response", "date", "horizon", "value")


class DiagnosticError(ValueError):
    pass


def parzen(x):
    """Parzen lag window."""
    x = np.abs(np.asarray(x, dtype=float))
    return np.where(x <= 0.5, 1 - 6 * x ** 2 + 6 * x ** 3,
                    np.where(x <= 1.0, 2 * (1 - x) ** 3, 0.0))


def autocovariance(x, max_lag: int) -> np.ndarray:
    """Biased sample autocovariances gamma_0..gamma_max_lag via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:max_lag + 1] / n
    return acov


def spectral_density_zero(x, bandwidth: float) -> float:
    """Parzen-window estimate of 2*pi*f(0) = gamma_0 + 2 sum w(s/B) gamma_s."""
    x = np.asarray(x, dtype=float)
    B = float(bandwidth)
    max_lag = min(int(np.ceil(B)), x.size - 1)
    g = autocovariance(x, max_lag)
    s = np.arange(1, max_lag + 1)
    return float(g[0] + 2.0 * np.sum(parzen(s / B) * g[1:]))


def geweke_cd(chain, first: float = 0.1, last: float = 0.5) -> float:
    """Geweke convergence z-score comparing the first 10% and last 50% of a chain.

    Each window's long-run variance uses a Parzen window with bandwidth
    4 (n_w / 100)^(1/4).
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 400:
        raise DiagnosticError(f"chain of length {n} is shorter than 400")
    na, nb = int(first * n), int(last * n)
    a, b = x[:na], x[n - nb:]
    var = []
    for w in (a, b):
        if np.ptp(w) == 0.0:
            raise DiagnosticError("zero-variance window")
        S = spectral_density_zero(w, 4.0 * (w.size / 100.0) ** 0.25)
        var.append(max(S, 0.0) / w.size)
    denom = np.sqrt(var[0] + var[1])
    if denom == 0.0:
        raise DiagnosticError("zero long-run variance")
    return float((a.mean() - b.mean()) / denom)


def inefficiency_factor(chain, bandwidth: int = 500) -> float:
    """1 + 2 sum_{s=1}^{B} parzen(s/B) rho_s, floored at 0; B = min(500, n/10)."""
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 1000:
        raise DiagnosticError(f"chain of length {n} is shorter than 1000")
    if np.ptp(x) == 0.0:
        raise DiagnosticError("zero-variance chain")
    B = min(bandwidth, n // 10)
    g = autocovariance(x, B)
    rho = g[1:] / g[0]
    s = np.arange(1, B + 1)
    return float(max(0.0, 1.0 + 2.0 * np.sum(parzen(s / B) * rho)))


@dataclass(frozen=True)
class ParameterSummary:
    parameter: str
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    geweke_cd: float
    inefficiency: float

    def row(self) -> tuple:
        return (self.parameter, self.mean, self.sd, self.ci_low, self.ci_high,
                self.geweke_cd, self.inefficiency)


@dataclass
class PosteriorSummary:
    rows: list[ParameterSummary] = field(default_factory=list)

    def __getitem__(self, name: str) -> ParameterSummary:
        for r in self.rows:
            if r.parameter == name:
                return r
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.rows)


def summarize_chain(name: str, chain) -> ParameterSummary:
    x = np.asarray(chain, dtype=float)
    lo, hi = np.percentile(x, [2.5, 97.5])
    if np.ptp(x) == 0.0:
        cd, ineff = float("nan"), float("nan")
    else:
        cd = geweke_cd(x) if x.size >= 400 else float("nan")
        ineff = inefficiency_factor(x) if x.size >= 1000 else float("nan")
    return ParameterSummary(name, float(x.mean()), float(x.std(ddof=1)), float(lo), float(hi), cd, ineff)


def summarize(draws, min_draws: int = 100) -> PosteriorSummary:
    """Mean, SD, 95% interval, Geweke CD and inefficiency per hyperparameter.

    ``draws`` is a :class:`PosteriorDraws` (hyperparameters reported as
    innovation standard deviations) or a mapping ``name -> chain``. Constant
    chains get NaN diagnostics instead of raising.
    """
    chains: Mapping[str, np.ndarray] = draws.hyper_chains() if isinstance(draws, PosteriorDraws) else draws
    out = PosteriorSummary()
    for name, chain in chains.items():
        if len(chain) < min_draws:
            raise DiagnosticError(f"{name}: {len(chain)} draws, need at least {min_draws}")
        out.rows.append(summarize_chain(name, chain))
    return out


# ---------------------------------------------------------------------------
# impulse responses

@dataclass
class IrfSurface:
    """responses[shock, response, date, horizon]."""

    responses: np.ndarray
    date_index: np.ndarray
    horizons: np.ndarray
    shock_size: np.ndarray
    variables: tuple
    dates: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def date_label(self, i: int) -> str:
        t = int(self.date_index[i])
        if self.dates is not None:
            d = self.dates[t]
            return d.isoformat() if hasattr(d, "isoformat") else str(d)
        return str(t)

    def trace_rows(self) -> Iterable[tuple]:
        """(shock, response, horizon, date, value): response over time per horizon."""
        names = self.variables
        for j in range(len(names)):
            for i in range(len(names)):
                for hi, h in enumerate(self.horizons):
                    for di in range(len(self.date_index)):
                        yield (names[j], names[i], int(h), self.date_label(di),
                               float(self.responses[j, i, di, hi]))

    def profile_rows(self) -> Iterable[tuple]:
        """(shock, response, date, horizon, value): response over horizons per date."""
        names = self.variables
        for j in range(len(names)):
            for i in range(len(names)):
                for di in range(len(self.date_index)):
                    for hi, h in enumerate(self.horizons):
                        yield (names[j], names[i], self.date_label(di), int(h),
                               float(self.responses[j, i, di, hi]))


def companion(B: np.ndarray) -> np.ndarray:
    """Companion matrices for B of shape (..., p, n, n)."""
    p, n = B.shape[-3], B.shape[-1]
    lead = B.shape[:-3]
    F = np.zeros(lead + (n * p, n * p))
    F[..., :n, :] = np.concatenate([B[..., i, :, :] for i in range(p)], axis=-1)
    if p > 1:
        F[..., n:, :-n] = np.eye(n * (p - 1))
    return F


def irf_paths(B: np.ndarray, impact: np.ndarray, max_horizon: int) -> np.ndarray:
    """Responses for horizons 0..max_horizon by companion-form propagation.

    ``B`` is (D, p, n, n), ``impact`` is (D, n, n) with column j the horizon-0
    response to shock j. Returns (D, max_horizon+1, n_response, n_shock).
    """
    D, p, n, _ = B.shape
    F = companion(B)
    state = np.zeros((D, n * p, n))
    state[:, :n, :] = impact
    out = np.empty((D, max_horizon + 1, n, n))
    out[:, 0] = impact
    for h in range(1, max_horizon + 1):
        state = F @ state
        out[:, h] = state[:, :n, :]
    return out


def ma_coefficients(B: np.ndarray, max_horizon: int) -> np.ndarray:
    """MA matrices Psi_0..Psi_H of a fixed VAR by Psi_s = sum_i B_i Psi_{s-i}; B is (p, n, n)."""
    p, n, _ = B.shape
    psi = [np.eye(n)]
    for s in range(1, max_horizon + 1):
        acc = np.zeros((n, n))
        for i in range(1, min(s, p) + 1):
            acc += B[i - 1] @ psi[s - i]
        psi.append(acc)
    return np.array(psi)


def tv_irf(draws: PosteriorDraws, horizons: Sequence[int] = (1, 7, 14),
           dates: Optional[Sequence[int]] = None, mode: str = "per-draw",
           draw_stride: int = 1, shock_scale: float = 1.0) -> IrfSurface:
    """Time-varying impulse responses with coefficients frozen at each date.

    The shock to variable j has size sigma_bar_j = mean over t of
    exp(h_jt / 2) (times ``shock_scale``); its impact vector at date t is
    A_t^{-1} sigma_bar_j e_j. ``mode='per-draw'`` computes responses for each
    retained draw (every ``draw_stride``-th) and averages them in draw order;
    ``mode='posterior-mean'`` uses the posterior-mean paths only.
    """
    if mode not in ("per-draw", "posterior-mean"):
        raise ValueError("mode must be 'per-draw' or 'posterior-mean'")
    horizons = np.asarray(sorted(set(int(h) for h in horizons)))
    if horizons.size == 0 or horizons.min() < 0:
        raise ValueError("horizons must be nonnegative")
    Te = draws.nobs
    idx = np.arange(Te) if dates is None else np.asarray(dates, dtype=int)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= Te:
        raise ValueError(f"date indices must lie in [0, {Te - 1}]")
    src = draws.posterior_mean() if mode == "posterior-mean" else draws
    spec: TvpVarSpec = src.spec
    n = spec.n
    H = int(horizons.max())
    total = np.zeros((n, n, idx.size, horizons.size))
    shock_total = np.zeros(n)
    sel = range(0, src.n_draws, max(1, int(draw_stride)))
    count = 0
    for d in sel:
        sig_bar = np.mean(np.exp(0.5 * src.h[d]), axis=0) * shock_scale
        _, B = unstack_beta(src.beta[d, idx], spec)
        Ainv = unit_lower_inverse(build_A(src.a[d, idx], n))
        impact = Ainv * sig_bar[None, None, :]
        paths = irf_paths(B, impact, H)[:, horizons]      # (dates, h, resp, shock)
        total += np.transpose(paths, (3, 2, 0, 1))
        shock_total += sig_bar
        count += 1
    return IrfSurface(total / count, idx, horizons, shock_total / count, spec.variable_order,
                      draws.dates, {"mode": mode, "draws_used": count, "shock_scale": shock_scale,
                                    "shock_size": "time-average of exp(h_jt/2)"})
