import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dense_conditional
from tvpsent import tvpvar
from tvpsent.state_space import LinearGaussianSSM
from tvpsent.synthetic import DgpSpec, simulate
from tvpsent.tvpvar import (GibbsState, McmcConfig, McmcError, PriorSpec, TvpVarSpec, a_design,
                            build_A, build_regressors, gamma_posterior, initial_state, residuals, run_mcmc,
                            sample_a, sample_beta, sample_h, sample_hyper, stack_beta, structural_residuals,
                            unit_lower_inverse, unstack_beta)


def make_state(rng, n=2, p=1, Te=4, intercept="none", sig=(0.05, 0.05, 0.05)):
    spec = TvpVarSpec(n, p, tuple(f"y{i}" for i in range(n)), intercept)
    data = rng.standard_normal((Te + p, n))
    y, X, x = build_regressors(data, spec)
    prior = PriorSpec(beta0_var=2.0, a0_var=2.0, h0_var=2.0)
    st_ = initial_state(y, X, x, spec, prior)
    st_.beta = 0.3 * rng.standard_normal((Te, spec.k_beta))
    st_.a = 0.5 * rng.standard_normal((Te, spec.k_a))
    st_.h = 0.3 * rng.standard_normal((Te, n))
    st_.sig_beta = np.full(spec.k_beta, sig[0])
    st_.sig_a = np.full(spec.k_a, sig[1])
    st_.sig_h = np.full(n, sig[2])
    return st_


def rw_model(Z, H, qvar, v0):
    Te, m, k = Z.shape
    return LinearGaussianSSM(Z, H, np.broadcast_to(np.diag(qvar), (Te, k, k)).copy(), np.zeros(k), v0 * np.eye(k))


def check_against_oracle(draws, model, obs):
    mean, cov = dense_conditional(model, obs)
    D = draws.reshape(draws.shape[0], -1)
    se = np.sqrt(np.diag(cov) / D.shape[0])
    z = (D.mean(0) - mean.ravel()) / se
    assert np.all(np.abs(z) < 4.5), z
    np.testing.assert_allclose(D.var(0), np.diag(cov), rtol=0.06)


# --- layout --------------------------------------------------------------------

@pytest.mark.parametrize("mode,width", [("none", 27), ("time-varying", 30)])
def test_regressor_width(mode, width):
    y, X, x = build_regressors(np.random.default_rng(0).standard_normal((20, 3)), TvpVarSpec(3, 3, intercept_mode=mode))
    assert X.shape == (17, 3, width)
    assert y.shape == (17, 3)


def test_regressor_scalar():
    spec = TvpVarSpec(1, 1, ("y",), "none")
    data = np.arange(5.0)
    y, X, _ = build_regressors(data, spec)
    assert X.shape == (4, 1, 1)
    np.testing.assert_array_equal(X[:, 0, 0], [0, 1, 2, 3])
    np.testing.assert_array_equal(y[:, 0], [1, 2, 3, 4])


def test_regressor_row_layout():
    spec = TvpVarSpec(2, 2, ("a", "b"))
    data = np.arange(10.0).reshape(5, 2)
    y, X, x = build_regressors(data, spec)
    # x_t = (1, y_{t-1}, y_{t-2}) at t=2: y_1=(2,3), y_0=(0,1)
    np.testing.assert_array_equal(x[0], [1, 2, 3, 0, 1])
    np.testing.assert_array_equal(X[0, 1, 5:], x[0])
    assert np.all(X[0, 1, :5] == 0)


def test_regressor_errors():
    with pytest.raises(ValueError, match="more than p"):
        build_regressors(np.zeros((3, 3)), TvpVarSpec(3, 3))
    with pytest.raises(ValueError, match="columns"):
        build_regressors(np.zeros((10, 2)), TvpVarSpec(3, 1))


def test_beta_layout_matches_var_mean():
    rng = np.random.default_rng(1)
    spec = TvpVarSpec(3, 2)
    B = rng.standard_normal((2, 3, 3))
    c = rng.standard_normal(3)
    beta = stack_beta(B, spec, c)
    data = rng.standard_normal((6, 3))
    y, X, _ = build_regressors(data, spec)
    t = 2
    expect = c + B[0] @ data[t + 2 - 1] + B[1] @ data[t + 2 - 2]
    np.testing.assert_allclose(X[t] @ beta, expect, atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 4), p=st.integers(1, 4), intercept=st.booleans(), seed=st.integers(0, 1000))
def test_stack_round_trip(n, p, intercept, seed):
    spec = TvpVarSpec(n, p, tuple(range(n)), "time-varying" if intercept else "none")
    beta = np.random.default_rng(seed).standard_normal((5, spec.k_beta))
    c, B = unstack_beta(beta, spec)
    assert B.shape == (5, p, n, n)
    assert np.array_equal(stack_beta(B, spec, c), beta)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 5), seed=st.integers(0, 1000))
def test_unit_lower_inverse(n, seed):
    a = np.random.default_rng(seed).standard_normal((3, n * (n - 1) // 2))
    A = build_A(a, n)
    assert np.all(np.triu(A, 1) == 0) and np.all(np.diagonal(A, axis1=1, axis2=2) == 1)
    Ainv = unit_lower_inverse(A)
    assert np.all(np.diagonal(Ainv, axis1=1, axis2=2) == 1.0)
    np.testing.assert_allclose(A @ Ainv, np.broadcast_to(np.eye(n), A.shape), atol=1e-10)


def test_spec_validation():
    with pytest.raises(ValueError):
        TvpVarSpec(3, 0)
    with pytest.raises(ValueError, match="variable_order"):
        TvpVarSpec(3, 1, ("a", "a", "b"))
    with pytest.raises(ValueError, match="intercept_mode"):
        TvpVarSpec(intercept_mode="maybe")
    with pytest.raises(ValueError, match="positive"):
        PriorSpec(beta_rate=0.0)


def test_mcmc_config():
    assert McmcConfig().n_keep == 10000
    assert McmcConfig(110, 10, 5).n_keep == 20
    for bad in [(100, 100, 1), (100, 10, 0), (100, 10, 7)]:
        with pytest.raises(ValueError):
            McmcConfig(*bad)


def test_prior_defaults_and_mean_variance():
    pr = PriorSpec()
    assert (pr.beta_shape, pr.beta_rate, pr.a_shape, pr.h_shape) == (20.0, 1e-4, 4.0, 4.0)
    assert pr.prior_mean_variance("beta") == pytest.approx(5e-6)
    assert pr.prior_mean_variance("h") == pytest.approx(2.5e-5)


# --- conditional blocks against dense oracles ----------------------------------

def test_sample_beta_matches_dense_conditional():
    rng = np.random.default_rng(2)
    st_ = make_state(rng, n=2, p=1, Te=4)
    Ainv = unit_lower_inverse(build_A(st_.a, 2))
    Hf = Ainv * np.exp(0.5 * st_.h)[:, None, :]
    model = rw_model(st_.X, Hf @ np.swapaxes(Hf, 1, 2), st_.sig_beta, st_.prior.beta0_var)
    draws = np.array([sample_beta(st_, rng) for _ in range(20000)])
    check_against_oracle(draws, model, st_.y)


def test_sample_beta_single_step_conjugate():
    rng = np.random.default_rng(3)
    st_ = make_state(rng, n=2, p=1, Te=1)
    Ainv = unit_lower_inverse(build_A(st_.a, 2))[0]
    Om = Ainv @ np.diag(np.exp(st_.h[0])) @ Ainv.T
    X = st_.X[0]
    P = np.linalg.inv(np.eye(4) / st_.prior.beta0_var + X.T @ np.linalg.solve(Om, X))
    m = P @ X.T @ np.linalg.solve(Om, st_.y[0])
    draws = np.array([sample_beta(st_, rng)[0] for _ in range(20000)])
    assert np.all(np.abs(draws.mean(0) - m) < 4 * np.sqrt(np.diag(P) / 20000))
    np.testing.assert_allclose(np.cov(draws.T), P, atol=0.05 * np.abs(P).max())


def test_sample_a_matches_dense_conditional():
    rng = np.random.default_rng(4)
    st_ = make_state(rng, n=3, p=1, Te=3)
    r = residuals(st_)
    var = np.exp(st_.h[:, 1:])
    model = rw_model(a_design(r), np.stack([np.diag(v) for v in var]), st_.sig_a, st_.prior.a0_var)
    draws = np.array([sample_a(st_, rng) for _ in range(20000)])
    check_against_oracle(draws, model, r[:, 1:])


def test_sample_a_scalar_hand_formula():
    rng = np.random.default_rng(5)
    st_ = make_state(rng, n=2, p=1, Te=1)
    r = residuals(st_)[0]
    s2 = np.exp(st_.h[0, 1])
    # r2 = -a r1 + e, e ~ N(0, s2); a ~ N(0, v0)
    v0 = st_.prior.a0_var
    post_var = 1.0 / (1.0 / v0 + r[0] ** 2 / s2)
    post_mean = post_var * (-r[0] * r[1] / s2)
    draws = np.array([sample_a(st_, rng)[0, 0] for _ in range(40000)])
    assert abs(draws.mean() - post_mean) < 4 * np.sqrt(post_var / 40000)
    assert draws.var() == pytest.approx(post_var, rel=0.03)


def test_sample_h_linearized_conditional():
    # given the indicators, h is linear Gaussian: compare with the dense oracle
    from tvpsent import state_space as ss
    rng = np.random.default_rng(6)
    st_ = make_state(rng, n=2, p=1, Te=4, sig=(0.05, 0.05, 0.2))
    sample_h(st_, np.random.default_rng(0))
    s = st_.s.copy()
    ystar = np.log(structural_residuals(st_) ** 2 + ss.SV_OFFSET)
    obs = ystar - ss.OMORI_MEANS[s]
    Z = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
    H = np.stack([np.diag(v) for v in ss.OMORI_VARS[s]])
    model = rw_model(Z, H, st_.sig_h, st_.prior.h0_var)

    orig = ss.sv_auxiliary_sample
    try:
        tvpvar.ss.sv_auxiliary_sample = lambda *a, **k: s
        draws = np.array([sample_h(st_, rng) for _ in range(20000)])
    finally:
        tvpvar.ss.sv_auxiliary_sample = orig
    check_against_oracle(draws, model, obs)


def test_sample_h_zero_residual_is_finite():
    rng = np.random.default_rng(7)
    st_ = make_state(rng, n=2, p=1, Te=5)
    st_.y = np.einsum("tik,tk->ti", st_.X, st_.beta)  # exact fit: zero residuals
    h = sample_h(st_, rng)
    assert np.all(np.isfinite(h))


def test_doubling_residuals_shifts_h_by_log4():
    rng = np.random.default_rng(8)
    base = make_state(rng, n=2, p=1, Te=200, sig=(1e-4, 1e-4, 1e-3))
    base.a[:] = 0.0
    base.h[:] = 0.0
    base.y = np.einsum("tik,tk->ti", base.X, base.beta) + rng.standard_normal((200, 2))
    means = []
    for scale in (1.0, 2.0):
        st_ = make_state(np.random.default_rng(8), n=2, p=1, Te=200, sig=(1e-4, 1e-4, 1e-3))
        st_.beta, st_.a, st_.h = base.beta, base.a, base.h.copy()
        st_.y = np.einsum("tik,tk->ti", st_.X, st_.beta) + scale * (base.y - np.einsum("tik,tk->ti", base.X, base.beta))
        r = np.random.default_rng(9)
        acc = []
        for it in range(1500):
            st_.h = sample_h(st_, r)
            if it >= 300:
                acc.append(st_.h.mean())
        means.append(np.mean(acc))
    assert means[1] - means[0] == pytest.approx(np.log(4.0), abs=0.1)


def test_gamma_posterior_arithmetic():
    shape, rate = gamma_posterior(20.0, 1e-4, np.zeros((200, 1)))
    assert shape == 119.5 and rate[0] == 1e-4
    assert shape / rate[0] == pytest.approx(1.195e6)


def test_sample_hyper_matches_direct_gamma():
    rng = np.random.default_rng(10)
    st_ = make_state(rng, n=2, p=1, Te=50)
    shape, rate = gamma_posterior(st_.prior.h_shape, st_.prior.h_rate, st_.h)
    prec = np.array([1.0 / sample_hyper(st_, rng)[2] for _ in range(20000)])
    se = np.sqrt(shape) / rate / np.sqrt(20000)
    assert np.all(np.abs(prec.mean(0) - shape / rate) < 3.5 * se)


def test_hyper_concentrates_for_large_shape():
    rng = np.random.default_rng(11)
    st_ = make_state(rng, n=2, p=1, Te=20)
    st_.prior = PriorSpec(beta_shape=1e9, beta_rate=1e9 * 5e-6)
    v = np.array([sample_hyper(st_, rng)[0] for _ in range(200)])
    np.testing.assert_allclose(v, 5e-6, rtol=1e-3)


def test_beta_collapses_to_gls_when_sigma_beta_vanishes():
    rng = np.random.default_rng(12)
    st_ = make_state(rng, n=2, p=1, Te=60, sig=(1e-14, 0.05, 0.05))
    st_.prior = PriorSpec(beta0_var=1e6)
    Ainv = unit_lower_inverse(build_A(st_.a, 2))
    Om = [Ai @ np.diag(np.exp(h)) @ Ai.T for Ai, h in zip(Ainv, st_.h)]
    XtOX = sum(X.T @ np.linalg.solve(O, X) for X, O in zip(st_.X, Om))
    XtOy = sum(X.T @ np.linalg.solve(O, y) for X, O, y in zip(st_.X, Om, st_.y))
    P = np.linalg.inv(XtOX + np.eye(4) / 1e6)
    gls = P @ XtOy
    draws = np.array([sample_beta(st_, rng) for _ in range(4000)])
    assert np.max(np.ptp(draws, axis=1)) < 1e-4
    assert np.all(np.abs(draws[:, 0].mean(0) - gls) < 4 * np.sqrt(np.diag(P) / 4000))


# --- driver --------------------------------------------------------------------

def test_run_mcmc_counts_and_determinism():
    y = np.random.default_rng(13).standard_normal((60, 2))
    spec = TvpVarSpec(2, 1, ("u", "v"))
    cfg = McmcConfig(60, 20, 2, seed=4)
    d1 = run_mcmc(y, spec, PriorSpec(), cfg)
    d2 = run_mcmc(y, spec, PriorSpec(), cfg)
    assert d1.n_draws == 20 and d1.beta.shape == (20, 59, spec.k_beta)
    for fam in ("beta", "a", "h", "sig_beta", "sig_a", "sig_h"):
        assert np.array_equal(getattr(d1, fam), getattr(d2, fam))
    assert np.all(np.isfinite(d1.h))
    assert set(d1.hyper_chains()) == {f"sigma_beta[{i}]" for i in range(1, 7)} | {"sigma_a[1]"} | {
        "sigma_h[1]", "sigma_h[2]"}


def test_constant_intercept_mode_demeans():
    y = 5.0 + np.random.default_rng(14).standard_normal((40, 2))
    d = run_mcmc(y, TvpVarSpec(2, 1, ("u", "v"), "constant"), PriorSpec(), McmcConfig(30, 10, 1))
    assert d.beta.shape[2] == 4
    np.testing.assert_allclose(d.intercept_means, y.mean(0))
    assert "demeaned" in d.meta["note"]


def test_block_failure_reports_iteration_and_block(monkeypatch):
    y = np.random.default_rng(15).standard_normal((40, 2))
    calls = {"n": 0}
    real = tvpvar.sample_a

    def flaky(state, rng):
        calls["n"] += 1
        if calls["n"] == 3:
            raise np.linalg.LinAlgError("boom")
        return real(state, rng)

    monkeypatch.setattr(tvpvar, "sample_a", flaky)
    with pytest.raises(McmcError, match="iteration 2 in block 'a'") as err:
        run_mcmc(y, TvpVarSpec(2, 1, ("u", "v")), PriorSpec(), McmcConfig(10, 2, 1))
    assert err.value.iteration == 2 and err.value.block == "a"


@pytest.fixture(scope="module")
def recovery_run():
    a_true = np.array([-0.5, 0.2, -0.1])
    sim = simulate(DgpSpec(n=3, p=1, T=400, a0=a_true, h0=np.zeros(3), seed=21))
    draws = run_mcmc(sim.y, TvpVarSpec(3, 1), PriorSpec(), McmcConfig(2500, 500, 1, seed=3))
    return sim, draws


def test_a_recovery(recovery_run):
    sim, draws = recovery_run
    a_mean = draws.a.mean(axis=(0, 1))
    a_sd = draws.a.mean(axis=1).std(axis=0)
    assert np.all(np.abs(a_mean - sim.a[0]) < 3 * np.maximum(a_sd, 1e-3))


def test_h_recovery_uniform_in_t(recovery_run):
    sim, draws = recovery_run
    m, s = draws.h.mean(0), draws.h.std(0)
    assert np.all(np.abs(m - sim.h) < 3 * s)
