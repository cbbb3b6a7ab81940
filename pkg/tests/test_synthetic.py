import numpy as np
import pytest

from tvpsent.ingestion import load_comments, load_market, align_panel, filter_comments, load_panel
from tvpsent.sentiment import daily_bullishness
from tvpsent.synthetic import (DgpSpec, SimulationError, prior_draw_states, simulate, spectral_radius,
                               write_synthetic_inputs)
from tvpsent.tvpvar import PriorSpec, TvpVarSpec, stack_beta, unstack_beta


def test_same_seed_identical():
    a, b = simulate(DgpSpec(seed=3)), simulate(DgpSpec(seed=3))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.beta, b.beta)


def test_constant_paths_and_stability():
    sim = simulate(DgpSpec(T=200, seed=1))
    assert np.all(sim.beta == sim.beta[0]) and np.all(sim.h == sim.h[0])
    _, B = unstack_beta(sim.beta[:1], sim.spec)
    assert spectral_radius(B)[0] <= 0.98
    assert sim.y.shape == (200, 3) and sim.beta.shape == (197, sim.spec.k_beta)


def test_random_walk_paths_stay_stable():
    sim = simulate(DgpSpec(T=300, sig_beta=1e-4, sig_a=1e-3, sig_h=1e-3, seed=2))
    _, B = unstack_beta(sim.beta, sim.spec)
    assert np.all(spectral_radius(B) <= 0.98)
    assert np.all(np.diff(sim.h, axis=0) != 0)


def test_ar1_autocorrelation():
    spec = DgpSpec(n=1, p=1, T=10_000, intercept=False, beta0=np.array([0.5]), seed=4)
    y = simulate(spec).y[:, 0]
    d = y - y.mean()
    assert (d[1:] @ d[:-1]) / (d @ d) == pytest.approx(0.5, abs=0.02)


def test_yule_walker_autocovariances():
    B1 = np.array([[0.5, 0.1], [-0.2, 0.3]])
    Sigma = np.eye(2)
    # vec(G0) = (I - B1 kron B1)^{-1} vec(Sigma); G1 = B1 G0
    G0 = np.linalg.solve(np.eye(4) - np.kron(B1, B1), Sigma.ravel()).reshape(2, 2)
    G1 = B1 @ G0
    spec = DgpSpec(n=2, p=1, T=50_000, intercept=False, beta0=stack_beta(B1[None], TvpVarSpec(2, 1, ("a", "b"), "none")),
                   seed=5)
    y = simulate(spec).y
    d = y - y.mean(0)
    np.testing.assert_allclose(d.T @ d / len(d), G0, atol=0.05)
    np.testing.assert_allclose(d[1:].T @ d[:-1] / len(d), G1, atol=0.05)


def test_unstable_beta0_rejected():
    spec = DgpSpec(n=1, p=1, intercept=False, beta0=np.array([1.2]))
    with pytest.raises(SimulationError, match="not stable"):
        simulate(spec)


def test_dgp_validation():
    with pytest.raises(ValueError, match="at least 50"):
        DgpSpec(T=20)


def test_sv_paths_give_heteroskedastic_residuals():
    sim = simulate(DgpSpec(n=1, p=1, T=2000, intercept=False, beta0=np.array([0.0]), sig_h=0.05, seed=6))
    e2 = sim.y[:, 0] ** 2
    d = e2 - e2.mean()
    rho1 = (d[1:] @ d[:-1]) / (d @ d)
    assert rho1 * np.sqrt(len(e2)) > 3.0


def test_prior_draw_shapes():
    out = prior_draw_states(TvpVarSpec(2, 1, ("a", "b")), PriorSpec(), 30, np.random.default_rng(0))
    assert out["beta"].shape == (30, 6) and out["a"].shape == (30, 1) and out["h"].shape == (30, 2)
    assert np.all(out["sig_h"] > 0)


def test_csv_emission_round_trip(tmp_path):
    sim = simulate(DgpSpec(T=120, seed=7))
    paths = write_synthetic_inputs(sim, tmp_path, seed=1)
    recs = filter_comments(load_comments(paths["comments"]))
    panel = align_panel(daily_bullishness(recs), load_market(paths["market"]))
    truth = load_panel(paths["truth_panel"])
    assert panel.dates == truth.dates == tuple(sim.dates)
    np.testing.assert_allclose(panel.rv, truth.rv)
    np.testing.assert_allclose(panel.dturn, sim.y[:, 2], atol=1e-12)
    assert np.max(np.abs(panel.sent - truth.sent)) <= 0.025
    # affine maps keep sent proportional to the simulated series
    assert np.corrcoef(truth.sent, sim.y[:, 0])[0, 1] == pytest.approx(1.0, abs=1e-12)
