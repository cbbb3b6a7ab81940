"""TVP-VAR with stochastic volatility, estimated by Gibbs sampling.

Measurement, for the effective sample t = p..T-1::

    y_t = X_t beta_t + A_t^{-1} Sigma_t eps_t,   eps_t ~ N(0, I)
    X_t = I_n kron x_t',  x_t = ([1,] y_{t-1}', ..., y_{t-p}')

``beta_t`` stacks the rows of [c_t, B_1t, ..., B_pt]; ``a_t`` stacks the free
below-diagonal elements of the unit lower-triangular ``A_t`` row by row;
``h_t = log diag(Sigma_t)**2``. All three follow random walks with diagonal
innovation variances whose precisions have Gamma(shape, rate) priors, i.e.
prior mean precision = shape / rate.

One sweep draws beta, a, h and the hyper-variances in that order.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import state_space as ss
from .econ_tests import ols

log = logging.getLogger(__name__)

INTERCEPT_MODES = ("time-varying", "constant", "none")


class McmcError(RuntimeError):
    def __init__(self, iteration: int, block: str, cause: Exception):
        self.iteration = iteration
        self.block = block
        super().__init__(f"sampler failed at iteration {iteration} in block {block!r}: {cause}")


@dataclass(frozen=True)
class TvpVarSpec:
    n: int = 3
    p: int = 3
    variable_order: tuple = ("sent", "rv", "dturn")
    intercept_mode: str = "time-varying"

    def __post_init__(self):
        object.__setattr__(self, "variable_order", tuple(self.variable_order))
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if len(self.variable_order) != self.n or len(set(self.variable_order)) != self.n:
            raise ValueError("variable_order must name each of the n variables once")
        if self.intercept_mode not in INTERCEPT_MODES:
            raise ValueError(f"intercept_mode must be one of {INTERCEPT_MODES}")

    @property
    def has_intercept(self) -> bool:
        return self.intercept_mode == "time-varying"

    @property
    def k_x(self) -> int:
        return self.n * self.p + int(self.has_intercept)

    @property
    def k_beta(self) -> int:
        return self.n * self.k_x

    @property
    def k_a(self) -> int:
        return self.n * (self.n - 1) // 2


@dataclass(frozen=True)
class PriorSpec:
    """Gamma(shape, rate) priors on the random-walk precisions and N(mean, var*I) initial states."""

    beta_shape: float = 20.0
    beta_rate: float = 1e-4
    a_shape: float = 4.0
    a_rate: float = 1e-4
    h_shape: float = 4.0
    h_rate: float = 1e-4
    beta0_mean: float = 0.0
    beta0_var: float = 10.0
    a0_mean: float = 0.0
    a0_var: float = 10.0
    h0_mean: float = 0.0
    h0_var: float = 10.0

    def __post_init__(self):
        for name in ("beta", "a", "h"):
            if not (getattr(self, f"{name}_shape") > 0 and getattr(self, f"{name}_rate") > 0):
                raise ValueError(f"{name} Gamma shape and rate must be positive")
            if not getattr(self, f"{name}0_var") > 0:
                raise ValueError(f"{name}0_var must be positive")

    def prior_mean_variance(self, family: str) -> float:
        """1 / E[precision] = rate / shape."""
        return getattr(self, f"{family}_rate") / getattr(self, f"{family}_shape")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 11000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if (self.iterations - self.burn_in) % self.thin:
            raise ValueError("iterations - burn_in must be a multiple of thin")

    @property
    def n_keep(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


# ---------------------------------------------------------------------------
# layout helpers

def build_regressors(data, spec: TvpVarSpec):
    """Return (y, X, x) for the effective sample.

    ``y`` is (T-p, n), ``X`` is (T-p, n, k_beta) with X_t = I_n kron x_t',
    ``x`` is (T-p, k_x).
    """
    Y = data.matrix(spec.variable_order) if hasattr(data, "matrix") else np.asarray(data, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T, n = Y.shape
    if n != spec.n:
        raise ValueError(f"data has {n} columns, spec expects {spec.n}")
    p = spec.p
    if not T > p:
        raise ValueError(f"need more than p={p} observations, got {T}")
    cols = [Y[p - i:T - i] for i in range(1, p + 1)]
    if spec.has_intercept:
        cols.insert(0, np.ones((T - p, 1)))
    x = np.ascontiguousarray(np.concatenate(cols, axis=1))
    X = np.zeros((T - p, n, spec.k_beta))
    for i in range(n):
        X[:, i, i * spec.k_x:(i + 1) * spec.k_x] = x
    return np.ascontiguousarray(Y[p:]), X, x


def unstack_beta(beta: np.ndarray, spec: TvpVarSpec):
    """Split beta (..., k_beta) into intercepts (..., n) or None and B (..., p, n, n)."""
    coef = beta.reshape(beta.shape[:-1] + (spec.n, spec.k_x))
    c = None
    if spec.has_intercept:
        c = coef[..., 0]
        coef = coef[..., 1:]
    B = coef.reshape(coef.shape[:-1] + (spec.p, spec.n))  # (..., n, p, n)
    return c, np.moveaxis(B, -2, -3)


def stack_beta(B: np.ndarray, spec: TvpVarSpec, c: Optional[np.ndarray] = None) -> np.ndarray:
    """Inverse of :func:`unstack_beta`; B is (..., p, n, n)."""
    coef = np.moveaxis(B, -3, -2).reshape(B.shape[:-3] + (spec.n, spec.n * spec.p))
    if spec.has_intercept:
        if c is None:
            c = np.zeros(B.shape[:-3] + (spec.n,))
        coef = np.concatenate([c[..., None], coef], axis=-1)
    return coef.reshape(coef.shape[:-2] + (spec.k_beta,))


def a_index(n: int):
    """(row, col) of each free element of A, stacked row by row."""
    return [(i, j) for i in range(1, n) for j in range(i)]


def build_A(a: np.ndarray, n: int) -> np.ndarray:
    """Unit lower-triangular A from a (..., n(n-1)/2)."""
    A = np.zeros(a.shape[:-1] + (n, n))
    A[..., np.arange(n), np.arange(n)] = 1.0
    for idx, (i, j) in enumerate(a_index(n)):
        A[..., i, j] = a[..., idx]
    return A


def unit_lower_inverse(A: np.ndarray) -> np.ndarray:
    """Inverse of unit lower-triangular matrices by forward substitution (exact unit diagonal)."""
    n = A.shape[-1]
    Ainv = np.zeros_like(A)
    Ainv[..., np.arange(n), np.arange(n)] = 1.0
    for i in range(1, n):
        for j in range(i):
            Ainv[..., i, j] = -np.sum(A[..., i, j:i] * Ainv[..., j:i, j], axis=-1)
    return Ainv


# ---------------------------------------------------------------------------
# Gibbs blocks

@dataclass
class GibbsState:
    y: np.ndarray          # (Te, n)
    X: np.ndarray          # (Te, n, k_beta)
    spec: TvpVarSpec
    prior: PriorSpec
    beta: np.ndarray       # (Te, k_beta)
    a: np.ndarray          # (Te, k_a)
    h: np.ndarray          # (Te, n)
    sig_beta: np.ndarray   # variances (k_beta,)
    sig_a: np.ndarray
    sig_h: np.ndarray
    s: Optional[np.ndarray] = None  # mixture indicators (Te, n)

    @property
    def nobs(self) -> int:
        return self.y.shape[0]


def _rw_draw(y, Z, H, Hf, qvar, m0, v0, rng):
    Te, m, k = Z.shape
    z0 = rng.standard_normal(k)
    zs = rng.standard_normal((Te, k))
    zo = rng.standard_normal((Te, m))
    return ss._sim_smooth_rw_diag(np.ascontiguousarray(y), np.ascontiguousarray(Z),
                                  np.ascontiguousarray(H), np.ascontiguousarray(Hf),
                                  np.asarray(qvar, dtype=float), float(m0), float(v0), z0, zs, zo)


def residuals(state: GibbsState, beta: Optional[np.ndarray] = None) -> np.ndarray:
    b = state.beta if beta is None else beta
    return state.y - np.einsum("tik,tk->ti", state.X, b)


def sample_beta(state: GibbsState, rng: np.random.Generator) -> np.ndarray:
    n = state.spec.n
    Ainv = unit_lower_inverse(build_A(state.a, n))
    sd = np.exp(0.5 * state.h)
    Hf = Ainv * sd[:, None, :]
    H = Hf @ np.swapaxes(Hf, 1, 2)
    return _rw_draw(state.y, state.X, H, Hf, state.sig_beta,
                    state.prior.beta0_mean, state.prior.beta0_var, rng)


def a_design(resid: np.ndarray) -> np.ndarray:
    """Rows 2..n of A_t r_t = Sigma_t eps_t as r_{j,t} = Z_t a_t + noise."""
    Te, n = resid.shape
    Z = np.zeros((Te, n - 1, n * (n - 1) // 2))
    for idx, (i, j) in enumerate(a_index(n)):
        Z[:, i - 1, idx] = -resid[:, j]
    return Z


def sample_a(state: GibbsState, rng: np.random.Generator) -> np.ndarray:
    n = state.spec.n
    if n < 2:
        return np.zeros((state.nobs, 0))
    r = residuals(state)
    Z = a_design(r)
    var = np.exp(state.h[:, 1:])
    m = n - 1
    H = np.zeros((state.nobs, m, m))
    Hf = np.zeros((state.nobs, m, m))
    H[:, np.arange(m), np.arange(m)] = var
    Hf[:, np.arange(m), np.arange(m)] = np.sqrt(var)
    return _rw_draw(r[:, 1:], Z, H, Hf, state.sig_a, state.prior.a0_mean, state.prior.a0_var, rng)


def structural_residuals(state: GibbsState) -> np.ndarray:
    A = build_A(state.a, state.spec.n)
    return np.einsum("tij,tj->ti", A, residuals(state))


def sample_h(state: GibbsState, rng: np.random.Generator) -> np.ndarray:
    """Auxiliary-mixture draw of the log-volatility paths.

    Sets ``state.s`` to the sampled mixture indicators as a side effect.
    """
    w = structural_residuals(state)
    ystar = np.log(w ** 2 + ss.SV_OFFSET)
    s = ss.sv_auxiliary_sample(ystar, state.h, rng)
    state.s = s
    Te, n = w.shape
    obs = ystar - ss.OMORI_MEANS[s]
    var = ss.OMORI_VARS[s]
    Z = np.zeros((Te, n, n))
    H = np.zeros((Te, n, n))
    Hf = np.zeros((Te, n, n))
    d = np.arange(n)
    Z[:, d, d] = 1.0
    H[:, d, d] = var
    Hf[:, d, d] = np.sqrt(var)
    return _rw_draw(obs, Z, H, Hf, state.sig_h, state.prior.h0_mean, state.prior.h0_var, rng)


def gamma_posterior(shape: float, rate: float, path: np.ndarray):
    """Posterior (shape, rate) for each element's random-walk precision."""
    inc = np.diff(path, axis=0)
    return shape + 0.5 * inc.shape[0], rate + 0.5 * np.sum(inc ** 2, axis=0)


def sample_hyper(state: GibbsState, rng: np.random.Generator):
    """Draw new diagonal variances (sig_beta, sig_a, sig_h)."""
    pr = state.prior
    out = []
    for fam, path in (("beta", state.beta), ("a", state.a), ("h", state.h)):
        shape, rate = gamma_posterior(getattr(pr, f"{fam}_shape"), getattr(pr, f"{fam}_rate"), path)
        out.append(1.0 / rng.gamma(shape, 1.0 / rate))
    return tuple(out)


def gibbs_sweep(state: GibbsState, rng: np.random.Generator, iteration: int = 0) -> None:
    """One systematic scan over (beta, a, h, hyper), updating ``state`` in place."""
    blocks: Sequence[tuple[str, Callable]] = (
        ("beta", sample_beta), ("a", sample_a), ("h", sample_h), ("hyper", sample_hyper))
    for name, fn in blocks:
        try:
            new = fn(state, rng)
            if name == "hyper":
                state.sig_beta, state.sig_a, state.sig_h = new
                bad = not all(np.all(np.isfinite(v)) and np.all(v > 0) for v in new)
            else:
                setattr(state, name, new)
                bad = not np.all(np.isfinite(new))
        except (np.linalg.LinAlgError, ss.StateSpaceError, FloatingPointError, ValueError) as exc:
            raise McmcError(iteration, name, exc) from exc
        if bad:
            raise McmcError(iteration, name, ValueError("non-finite draw"))


def initial_state(y: np.ndarray, X: np.ndarray, x: np.ndarray, spec: TvpVarSpec,
                  prior: PriorSpec) -> GibbsState:
    """Start from constant-parameter OLS estimates; falls back to prior means."""
    Te, n = y.shape
    beta0 = np.full(spec.k_beta, prior.beta0_mean)
    a0 = np.full(spec.k_a, prior.a0_mean)
    h0 = np.full(n, prior.h0_mean)
    try:
        fit = ols(x, y)
        beta0 = fit.coef.T.reshape(-1)
        S = fit.resid.T @ fit.resid / Te
        L = np.linalg.cholesky(S)
        d = np.diag(L)
        A = np.linalg.inv(L / d)
        a0 = np.array([A[i, j] for i, j in a_index(n)])
        h0 = np.log(d ** 2)
    except (ValueError, np.linalg.LinAlgError):
        pass
    return GibbsState(
        y=y, X=X, spec=spec, prior=prior,
        beta=np.tile(beta0, (Te, 1)), a=np.tile(a0, (Te, 1)), h=np.tile(h0, (Te, 1)),
        sig_beta=np.full(spec.k_beta, prior.prior_mean_variance("beta")),
        sig_a=np.full(spec.k_a, prior.prior_mean_variance("a")),
        sig_h=np.full(n, prior.prior_mean_variance("h")),
    )


# ---------------------------------------------------------------------------
# driver

@dataclass
class PosteriorDraws:
    spec: TvpVarSpec
    prior: PriorSpec
    cfg: McmcConfig
    beta: np.ndarray       # (D, Te, k_beta)
    a: np.ndarray          # (D, Te, k_a)
    h: np.ndarray          # (D, Te, n)
    sig_beta: np.ndarray   # (D, k_beta) variances
    sig_a: np.ndarray
    sig_h: np.ndarray
    dates: Optional[tuple] = None
    y: Optional[np.ndarray] = None
    intercept_means: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def nobs(self) -> int:
        return self.beta.shape[1]

    def posterior_mean(self) -> "PosteriorDraws":
        """Single pseudo-draw holding the posterior-mean paths."""
        return PosteriorDraws(
            self.spec, self.prior, self.cfg,
            self.beta.mean(0, keepdims=True), self.a.mean(0, keepdims=True),
            self.h.mean(0, keepdims=True), self.sig_beta.mean(0, keepdims=True),
            self.sig_a.mean(0, keepdims=True), self.sig_h.mean(0, keepdims=True),
            self.dates, self.y, self.intercept_means, dict(self.meta, posterior_mean=True))

    def hyper_chains(self) -> dict:
        """Standard deviations of the random-walk innovations, one chain per element."""
        out = {}
        for fam, arr in (("sigma_beta", self.sig_beta), ("sigma_a", self.sig_a), ("sigma_h", self.sig_h)):
            for i in range(arr.shape[1]):
                out[f"{fam}[{i + 1}]"] = np.sqrt(arr[:, i])
        return out


def run_mcmc(panel, spec: TvpVarSpec = TvpVarSpec(), prior: PriorSpec = PriorSpec(),
             cfg: McmcConfig = McmcConfig(), rng: Optional[np.random.Generator] = None,
             progress_every: int = 1000) -> PosteriorDraws:
    """Run one Gibbs chain and keep (iterations - burn_in) / thin draws."""
    Y = panel.matrix(spec.variable_order) if hasattr(panel, "matrix") else np.asarray(panel, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    means = None
    if spec.intercept_mode == "constant":
        means = Y.mean(axis=0)
        Y = Y - means
    y, X, x = build_regressors(Y, spec)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    state = initial_state(y, X, x, spec, prior)
    D, Te = cfg.n_keep, y.shape[0]
    out = {
        "beta": np.empty((D, Te, spec.k_beta)), "a": np.empty((D, Te, spec.k_a)),
        "h": np.empty((D, Te, spec.n)), "sig_beta": np.empty((D, spec.k_beta)),
        "sig_a": np.empty((D, spec.k_a)), "sig_h": np.empty((D, spec.n)),
    }
    t0 = time.perf_counter()
    kept = 0
    for it in range(cfg.iterations):
        gibbs_sweep(state, rng, it)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            for key, arr in out.items():
                arr[kept] = getattr(state, key)
            kept += 1
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iteration %d/%d (%.1fs)", it + 1, cfg.iterations, time.perf_counter() - t0)
    wall = time.perf_counter() - t0
    dates = tuple(panel.dates[spec.p:]) if hasattr(panel, "dates") else None
    meta = {"wall_time_s": wall, "spec": asdict(spec), "prior": asdict(prior), "cfg": asdict(cfg)}
    if spec.intercept_mode != "time-varying":
        meta["note"] = (f"intercept_mode={spec.intercept_mode}: beta holds only lag coefficients"
                        + (" (data demeaned before estimation)" if means is not None else ""))
    return PosteriorDraws(spec, prior, cfg, dates=dates, y=y, intercept_means=means, meta=meta, **out)
