"""Linear-Gaussian state-space machinery.

Model, for t = 0..T-1::

    y_t       = Z_t alpha_t + eps_t,      eps_t ~ N(0, H_t)
    alpha_t+1 = T_t alpha_t + eta_t,      eta_t ~ N(0, Q_t)
    alpha_0   ~ N(a0, P0)

The filter, the mean smoother and the Durbin-Koopman (2002) mean-correction
simulation smoother are compiled with numba; random numbers are always drawn
in Python from an explicit ``numpy.random.Generator`` and passed in, so every
draw is reproducible from the seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

LOG_2PI = np.log(2.0 * np.pi)

#: Offset added inside ``log(w**2 + offset)`` for the volatility block.
SV_OFFSET = 1e-6

# Omori, Chib, Shephard & Nakajima (2007) ten-component approximation of the
# log chi-square(1) density: probabilities, means, variances.
OMORI_PROBS = np.array([0.00609, 0.04775, 0.13057, 0.20674, 0.22715,
                        0.18842, 0.12047, 0.05591, 0.01575, 0.00115])
OMORI_MEANS = np.array([1.92677, 1.34744, 0.73504, 0.02266, -0.85173,
                        -1.97278, -3.46788, -5.55246, -8.68384, -14.65000])
OMORI_VARS = np.array([0.11265, 0.17788, 0.26768, 0.40611, 0.62699,
                       0.98583, 1.57469, 2.54498, 4.16591, 7.33342])


class StateSpaceError(ValueError):
    """Raised on dimension mismatches or a singular innovation covariance."""


@dataclass(frozen=True)
class MixtureComponent:
    probability: float
    mean: float
    variance: float


def omori_mixture() -> list[MixtureComponent]:
    return [MixtureComponent(float(p), float(m), float(v))
            for p, m, v in zip(OMORI_PROBS, OMORI_MEANS, OMORI_VARS)]


@dataclass
class LinearGaussianSSM:
    """Time-varying linear-Gaussian model.

    ``Z`` is (T, m, k), ``H`` is (T, m, m), ``Q`` is (T, k, k) and
    ``transition`` is (T, k, k) or ``None`` for random-walk states.
    ``Q[t]`` drives the move from t to t+1, so ``Q[-1]`` is never used.
    """

    Z: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    a0: np.ndarray
    P0: np.ndarray
    transition: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Z = np.ascontiguousarray(self.Z, dtype=float)
        self.H = np.ascontiguousarray(self.H, dtype=float)
        self.Q = np.ascontiguousarray(self.Q, dtype=float)
        self.a0 = np.ascontiguousarray(self.a0, dtype=float)
        self.P0 = np.ascontiguousarray(self.P0, dtype=float)
        if self.transition is not None:
            self.transition = np.ascontiguousarray(self.transition, dtype=float)
        self.validate()

    @property
    def nobs(self) -> int:
        return self.Z.shape[0]

    @property
    def k_states(self) -> int:
        return self.Z.shape[2]

    @property
    def k_endog(self) -> int:
        return self.Z.shape[1]

    def validate(self, tol: float = 1e-8) -> None:
        if self.Z.ndim != 3:
            raise StateSpaceError("Z must be (T, m, k)")
        T, m, k = self.Z.shape
        shapes = {"H": (self.H, (T, m, m)), "Q": (self.Q, (T, k, k)),
                  "a0": (self.a0, (k,)), "P0": (self.P0, (k, k))}
        if self.transition is not None:
            shapes["transition"] = (self.transition, (T, k, k))
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise StateSpaceError(f"{name} has shape {arr.shape}, expected {shape}")
        for name, arr in (("H", self.H), ("Q", self.Q), ("P0", self.P0[None])):
            if not np.allclose(arr, np.swapaxes(arr, -1, -2), atol=tol):
                raise StateSpaceError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(arr).min() < -tol:
                raise StateSpaceError(f"{name} is not positive semi-definite")


def psd_factor(M: np.ndarray) -> np.ndarray:
    """Return F with F F' = M for a (stack of) symmetric PSD matrices."""
    M = np.asarray(M, dtype=float)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(M)
        return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


# ---------------------------------------------------------------------------
# compiled kernels

@numba.njit(cache=True)
def _filter(y, Z, H, Q, a0, P0, Tm, rw):
    T, m, k = Z.shape
    v = np.empty((T, m))
    Finv = np.empty((T, m, m))
    K = np.empty((T, k, m))
    a = a0.copy()
    P = P0.copy()
    loglik = 0.0
    for t in range(T):
        Zt = Z[t]
        PZt = P @ Zt.T
        F = Zt @ PZt + H[t]
        F = 0.5 * (F + F.T)
        L = np.linalg.cholesky(F)
        Linv = np.linalg.inv(L)
        Fi = Linv.T @ Linv
        vt = y[t] - Zt @ a
        u = Linv @ vt
        logdet = 0.0
        for i in range(m):
            logdet += 2.0 * np.log(L[i, i])
        loglik += -0.5 * (m * 1.8378770664093453 + logdet + u @ u)
        if rw:
            Kt = PZt @ Fi
            a = a + Kt @ vt
            P = P - Kt @ PZt.T + Q[t]
        else:
            TPZ = Tm[t] @ PZt
            Kt = TPZ @ Fi
            a = Tm[t] @ a + Kt @ vt
            P = Tm[t] @ P @ Tm[t].T - Kt @ TPZ.T + Q[t]
        P = 0.5 * (P + P.T)
        v[t] = vt
        Finv[t] = Fi
        K[t] = Kt
    return v, Finv, K, loglik


@numba.njit(cache=True)
def _smooth_mean(y, Z, H, Q, a0, P0, Tm, rw):
    T, m, k = Z.shape
    v, Finv, K, _ = _filter(y, Z, H, Q, a0, P0, Tm, rw)
    rs = np.empty((T, k))
    r = np.zeros(k)
    for t in range(T - 1, -1, -1):
        rs[t] = r
        u = Finv[t] @ v[t] - K[t].T @ r
        if rw:
            r = Z[t].T @ u + r
        else:
            r = Z[t].T @ u + Tm[t].T @ r
    alpha = np.empty((T, k))
    alpha[0] = a0 + P0 @ r
    for t in range(T - 1):
        if rw:
            alpha[t + 1] = alpha[t] + Q[t] @ rs[t]
        else:
            alpha[t + 1] = Tm[t] @ alpha[t] + Q[t] @ rs[t]
    return alpha


@numba.njit(cache=True)
def _simulate(Z, Hf, Qf, a0, P0f, Tm, rw, z_state0, z_state, z_obs):
    T, m, k = Z.shape
    alpha = np.empty((T, k))
    yp = np.empty((T, m))
    alpha[0] = a0 + P0f @ z_state0
    for t in range(T):
        yp[t] = Z[t] @ alpha[t] + Hf[t] @ z_obs[t]
        if t < T - 1:
            if rw:
                alpha[t + 1] = alpha[t] + Qf[t] @ z_state[t]
            else:
                alpha[t + 1] = Tm[t] @ alpha[t] + Qf[t] @ z_state[t]
    return alpha, yp


@numba.njit(cache=True)
def _sim_smooth(y, Z, H, Q, Hf, Qf, a0, P0, P0f, Tm, rw, z_state0, z_state, z_obs):
    alpha_p, y_p = _simulate(Z, Hf, Qf, a0, P0f, Tm, rw, z_state0, z_state, z_obs)
    zero = np.zeros(a0.shape[0])
    return alpha_p + _smooth_mean(y - y_p, Z, H, Q, zero, P0, Tm, rw)


@numba.njit(cache=True)
def _sim_smooth_rw_diag(y, Z, H, Hf, qvar, m0, v0, z_state0, z_state, z_obs):
    """Random-walk states with diagonal constant Q and N(m0 1, v0 I) start.

    Same algorithm as ``_sim_smooth`` written with explicit loops; this is the
    sampler's hot path.
    """
    T, m, k = Z.shape
    # column support of each row of Z over all t (Kronecker designs are block sparse)
    lo = np.full(m, k, dtype=np.int64)
    hi = np.zeros(m, dtype=np.int64)
    for t in range(T):
        for l in range(m):
            for j in range(k):
                if Z[t, l, j] != 0.0:
                    if j < lo[l]:
                        lo[l] = j
                    if j + 1 > hi[l]:
                        hi[l] = j + 1
    alpha_p = np.empty((T, k))
    ystar = np.empty((T, m))
    sv0 = np.sqrt(v0)
    for i in range(k):
        alpha_p[0, i] = m0 + sv0 * z_state0[i]
    for t in range(T):
        for l in range(m):
            acc = y[t, l]
            for j in range(lo[l], hi[l]):
                acc -= Z[t, l, j] * alpha_p[t, j]
            for j in range(m):
                acc -= Hf[t, l, j] * z_obs[t, j]
            ystar[t, l] = acc
        if t < T - 1:
            for i in range(k):
                alpha_p[t + 1, i] = alpha_p[t, i] + np.sqrt(qvar[i]) * z_state[t, i]

    v = np.empty((T, m))
    Finv = np.empty((T, m, m))
    K = np.empty((T, k, m))
    a = np.zeros(k)
    P = np.zeros((k, k))
    for i in range(k):
        P[i, i] = v0
    PZt = np.empty((k, m))
    F = np.empty((m, m))
    L = np.zeros((m, m))
    Li = np.zeros((m, m))
    for t in range(T):
        for i in range(k):
            for l in range(m):
                acc = 0.0
                for j in range(lo[l], hi[l]):
                    acc += P[i, j] * Z[t, l, j]
                PZt[i, l] = acc
        for l in range(m):
            for l2 in range(l + 1):
                acc = H[t, l, l2]
                for i in range(lo[l], hi[l]):
                    acc += Z[t, l, i] * PZt[i, l2]
                F[l, l2] = acc
                F[l2, l] = acc
        # Cholesky F = L L'
        for l in range(m):
            for l2 in range(l + 1):
                acc = F[l, l2]
                for j in range(l2):
                    acc -= L[l, j] * L[l2, j]
                if l == l2:
                    if acc <= 0.0:
                        raise np.linalg.LinAlgError("innovation covariance is not positive definite")
                    L[l, l] = np.sqrt(acc)
                else:
                    L[l, l2] = acc / L[l2, l2]
        # Li = L^{-1}
        for l in range(m):
            Li[l, l] = 1.0 / L[l, l]
            for l2 in range(l):
                acc = 0.0
                for j in range(l2, l):
                    acc += L[l, j] * Li[j, l2]
                Li[l, l2] = -acc / L[l, l]
        for l in range(m):
            for l2 in range(m):
                acc = 0.0
                for j in range(max(l, l2), m):
                    acc += Li[j, l] * Li[j, l2]
                Finv[t, l, l2] = acc
        for l in range(m):
            acc = ystar[t, l]
            for j in range(lo[l], hi[l]):
                acc -= Z[t, l, j] * a[j]
            v[t, l] = acc
        for i in range(k):
            for l in range(m):
                acc = 0.0
                for l2 in range(m):
                    acc += PZt[i, l2] * Finv[t, l2, l]
                K[t, i, l] = acc
        for i in range(k):
            acc = 0.0
            for l in range(m):
                acc += K[t, i, l] * v[t, l]
            a[i] += acc
        for i in range(k):
            for j in range(i + 1):
                acc = 0.0
                for l in range(m):
                    acc += K[t, i, l] * PZt[j, l]
                P[i, j] -= acc
                P[j, i] = P[i, j]
            P[i, i] += qvar[i]

    rs = np.empty((T, k))
    r = np.zeros(k)
    u = np.empty(m)
    for t in range(T - 1, -1, -1):
        for i in range(k):
            rs[t, i] = r[i]
        for l in range(m):
            acc = 0.0
            for l2 in range(m):
                acc += Finv[t, l, l2] * v[t, l2]
            for i in range(k):
                acc -= K[t, i, l] * r[i]
            u[l] = acc
        for l in range(m):
            for i in range(lo[l], hi[l]):
                r[i] += Z[t, l, i] * u[l]
    out = np.empty((T, k))
    cur = np.empty(k)
    for i in range(k):
        cur[i] = v0 * r[i]
        out[0, i] = alpha_p[0, i] + cur[i]
    for t in range(T - 1):
        for i in range(k):
            cur[i] += qvar[i] * rs[t, i]
            out[t + 1, i] = alpha_p[t + 1, i] + cur[i]
    return out


@numba.njit(cache=True)
def _mixture_draw(resid, probs, means, variances, u):
    n = resid.shape[0]
    c = probs.shape[0]
    out = np.empty(n, dtype=np.int64)
    logw = np.empty(c)
    for i in range(n):
        mx = -np.inf
        for j in range(c):
            d = resid[i] - means[j]
            logw[j] = np.log(probs[j]) - 0.5 * np.log(variances[j]) - 0.5 * d * d / variances[j]
            if logw[j] > mx:
                mx = logw[j]
        tot = 0.0
        for j in range(c):
            logw[j] = np.exp(logw[j] - mx)
            tot += logw[j]
        target = u[i] * tot
        acc = 0.0
        pick = c - 1
        for j in range(c):
            acc += logw[j]
            if target < acc:
                pick = j
                break
        out[i] = pick
    return out


# ---------------------------------------------------------------------------
# public API

def _unpack(model: LinearGaussianSSM):
    rw = model.transition is None
    Tm = np.zeros((1, 1, 1)) if rw else model.transition
    return Tm, rw


def _check_obs(model: LinearGaussianSSM, obs) -> np.ndarray:
    y = np.ascontiguousarray(obs, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != (model.nobs, model.k_endog):
        raise StateSpaceError(
            f"observations have shape {y.shape}, model expects {(model.nobs, model.k_endog)}")
    return y


def kalman_loglik(model: LinearGaussianSSM, obs) -> float:
    """Exact Gaussian log-likelihood by prediction-error decomposition."""
    y = _check_obs(model, obs)
    Tm, rw = _unpack(model)
    try:
        _, _, _, ll = _filter(y, model.Z, model.H, model.Q, model.a0, model.P0, Tm, rw)
    except np.linalg.LinAlgError as exc:
        raise StateSpaceError("innovation covariance is numerically singular") from exc
    return float(ll)


def smoothed_state(model: LinearGaussianSSM, obs) -> np.ndarray:
    """Posterior mean E[alpha_t | y_0..y_T-1], shape (T, k)."""
    y = _check_obs(model, obs)
    Tm, rw = _unpack(model)
    try:
        return _smooth_mean(y, model.Z, model.H, model.Q, model.a0, model.P0, Tm, rw)
    except np.linalg.LinAlgError as exc:
        raise StateSpaceError("innovation covariance is numerically singular") from exc


def simulation_smoother(model: LinearGaussianSSM, obs, rng: np.random.Generator,
                        Q_factor=None, H_factor=None) -> np.ndarray:
    """Draw the full state path from p(alpha | y), shape (T, k).

    ``Q_factor``/``H_factor`` may be supplied when square roots of ``Q``/``H``
    are already known (diagonal models in the sampler); otherwise they are
    computed here.
    """
    y = _check_obs(model, obs)
    Tm, rw = _unpack(model)
    T, m, k = model.Z.shape
    Qf = psd_factor(model.Q) if Q_factor is None else Q_factor
    Hf = psd_factor(model.H) if H_factor is None else H_factor
    P0f = psd_factor(model.P0)
    z0 = rng.standard_normal(k)
    zs = rng.standard_normal((T, k))
    zo = rng.standard_normal((T, m))
    try:
        return _sim_smooth(y, model.Z, model.H, model.Q, np.ascontiguousarray(Hf),
                           np.ascontiguousarray(Qf), model.a0, model.P0, P0f,
                           Tm, rw, z0, zs, zo)
    except np.linalg.LinAlgError as exc:
        raise StateSpaceError("innovation covariance is numerically singular") from exc


def sv_auxiliary_sample(log_sq_obs, h_path, rng: np.random.Generator,
                        mixture: Optional[list[MixtureComponent]] = None) -> np.ndarray:
    """Draw mixture indicators s_t given log(w_t**2 + offset) and h_t.

    P(s_t = i) is proportional to p_i * N(log_sq_obs_t - h_t; m_i, v_i).
    Returns integer component indices with the same shape as the input.
    """
    x = np.asarray(log_sq_obs, dtype=float)
    resid = (x - np.asarray(h_path, dtype=float)).ravel()
    if mixture is None:
        probs, means, variances = OMORI_PROBS, OMORI_MEANS, OMORI_VARS
    else:
        probs = np.array([c.probability for c in mixture])
        means = np.array([c.mean for c in mixture])
        variances = np.array([c.variance for c in mixture])
    u = rng.random(resid.size)
    return _mixture_draw(resid, probs, means, variances, u).reshape(x.shape)


def mixture_posterior_probs(resid: float, mixture: Optional[list[MixtureComponent]] = None):
    """Component probabilities for one residual (used for inspection and tests)."""
    comps = omori_mixture() if mixture is None else mixture
    p = np.array([c.probability for c in comps])
    m = np.array([c.mean for c in comps])
    v = np.array([c.variance for c in comps])
    logw = np.log(p) - 0.5 * np.log(v) - 0.5 * (resid - m) ** 2 / v
    w = np.exp(logw - logw.max())
    return w / w.sum()
