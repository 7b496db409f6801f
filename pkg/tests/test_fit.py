import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from msid.fit import (FitOptions, asymptotic_variance_first_order, cost_explicit, cost_ml,
                      fit_first_order, fit_iterative, fit_levy, fit_lmfd_closed_form,
                      interpolation_system, normal_approx_a1, pem_cost_time)
from msid.frf import LsOperator, covariance, ls_estimate
from msid.models import FirstOrderSiso, LmfdStructure, frf_stack
from msid.multisine import ExcitationDesign, FrequencyGrid, amplitude_matrices, random_design
from msid.simulator import NoiseModel, simulate_dataset, steady_state_output

from conftest import random_stable_lmfd

W1 = 1 / math.sqrt(2)
FO = LmfdStructure(1, 1, 1, 0)


def offset_design(N=100):
    return ExcitationDesign(FrequencyGrid([2.0]), [[0.5]], [[[1.0]]], [[[-math.pi / 2]]], math.pi / 10)


# ---- closed form

def test_closed_form_fully_constrained_siso():
    om = np.array([-W1, W1])
    G = FO.stack([1.0, 2.0], om)
    res = fit_lmfd_closed_form(G, om, 1, 0)
    np.testing.assert_allclose(res.theta_hat, [1.0, 2.0], rtol=1e-10)
    assert res.status == "closed_form" and res.kernel_basis.shape == (2, 0)
    assert res.cost < 1e-25


def test_closed_form_matches_first_order_inverse(rng):
    for _ in range(20):
        g = complex(*rng.standard_normal(2))
        w = rng.uniform(0.1, 5)
        res = fit_lmfd_closed_form(np.array([[g.conjugate()], [g]]), [-w, w], 1, 0)
        np.testing.assert_allclose(res.theta_hat, fit_first_order(g, w), rtol=1e-9)


def test_closed_form_overconstrained_raises():
    om = np.array([0.0, -W1, W1])
    with pytest.raises(ValueError, match="fit_iterative"):
        fit_lmfd_closed_form(FO.stack([1.0, 2.0], om), om, 1, 0)


def test_closed_form_rank_deficient():
    # G_hat identically zero makes the D-columns vanish
    om = np.array([-1.0, 1.0])
    G = np.zeros((2, 1), dtype=complex)
    with pytest.raises(np.linalg.LinAlgError, match="rank"):
        fit_lmfd_closed_form(G, om, 1, 0)
    res = fit_lmfd_closed_form(G, om, 1, 0, strict=False)
    assert res.status == "rank_deficient"


def test_underconstrained_kernel_direction():
    g = FirstOrderSiso(1.0, 2.0).frf(W1) + (0.05 - 0.02j)
    res = fit_lmfd_closed_form(np.array([[np.conj(g)], [g]]), [-W1, W1], 1, 1)
    K = res.kernel_basis
    assert K.shape == (3, 1)
    expect = np.array([1 / g.real, -W1 * g.imag / g.real, 1.0])
    cosine = abs(K[:, 0] @ expect) / np.linalg.norm(expect)
    assert cosine == pytest.approx(1.0, abs=1e-12)
    # three unknowns, two real conditions; the formula check needs n_N >= 2M
    assert res.info["kernel_dim"] == 1 and "kernel_dim_formula" not in res.info


def test_kernel_members_interpolate(rng):
    sysm = random_stable_lmfd(rng, 2, 1, 2, 2)
    grid = FrequencyGrid([0.5, 1.2])
    om = np.array([0.0, -0.5, 0.5, -1.2, 1.2])
    G = conj_noise(frf_stack(sysm, grid).matrix, 1, 0.01, rng)
    res = fit_lmfd_closed_form(G, om, 2, 2)
    s = LmfdStructure(2, 1, 2, 2)
    assert res.kernel_basis.shape[1] == s.P - 5
    for _ in range(10):
        Lm = rng.standard_normal((res.kernel_basis.shape[1], 2))
        Theta = res.theta_hat.reshape(s.P, 2, order="F") + res.kernel_basis @ Lm
        fit = s.stack(Theta.reshape(-1, order="F"), om)
        assert np.abs(fit - G).max() < 1e-8 * np.abs(G).max()


def test_closed_form_is_real_min_norm(rng):
    G = rng.standard_normal((3, 1)) + 1j * rng.standard_normal((3, 1))
    G[0] = G[0].real
    G[1] = G[2].conj()
    om = np.array([0.0, -1.0, 1.0])
    res = fit_lmfd_closed_form(G, om, 1, 2)
    assert res.theta_hat.dtype == float
    # orthogonal to the kernel: minimum norm
    assert np.abs(res.kernel_basis.T @ res.theta_hat).max() < 1e-10


def test_interpolation_system_blocks():
    G = np.array([[1.0], [2 - 1j], [2 + 1j]])
    om = np.array([0.0, -1.0, 1.0])
    sys_ = interpolation_system(G, om, 1, 2, 1)
    Om = np.diag(1j * om)
    np.testing.assert_allclose(sys_.J[:, 0], -(Om @ G)[:, 0])
    np.testing.assert_allclose(sys_.J[:, 1], -(Om @ Om @ G)[:, 0])
    np.testing.assert_allclose(sys_.J[:, 2], np.ones(3))
    np.testing.assert_allclose(sys_.J[:, 3], 1j * om)


# ---- first order inverse

def test_first_order_inverse():
    a1, b0 = fit_first_order(FirstOrderSiso(1.0, 2.0).frf(W1), W1)
    assert a1 == pytest.approx(1.0, abs=1e-14) and b0 == pytest.approx(2.0, abs=1e-14)
    assert fit_first_order(3.0 + 0j, 1.0) == (0.0, 3.0)
    g = FirstOrderSiso(0.7, 0.0, 1.3).frf(1.5)
    assert fit_first_order(g, 1.5, zero_at_zero=True) == pytest.approx((0.7, 1.3), rel=1e-12)
    with pytest.raises(ZeroDivisionError):
        fit_first_order(1j, 1.0)


# ---- costs

def _a3_estimate(rng, sysm, n_u=1, n_y=1, N=20, sigma=None):
    h = 2 * math.pi / (N * 0.5)  # two lines at k = 1, 3 cycles per record
    grid = FrequencyGrid([0.5, 1.5])
    d = random_design(grid, max(n_u, 2), n_u, h, seed=int(rng.integers(1 << 30)))
    S = sigma if sigma is not None else np.eye(n_y) * 0.2
    ds = simulate_dataset(sysm, d, NoiseModel(S), N=N, seed=int(rng.integers(1 << 30)))
    return ds, ls_estimate(ds)


def test_cost_ml_zero_and_scaling(rng):
    sysm = random_stable_lmfd(rng, 2, 1, 1, 1)
    ds, est = _a3_estimate(rng, sysm, n_y=2)
    s = sysm.structure
    C = covariance(est)
    assert cost_ml(s.stack(sysm.theta, est.omegas), C, s, sysm.theta, est.omegas) == 0.0
    th = sysm.theta + 0.1 * rng.standard_normal(s.n_theta)
    c1 = cost_ml(est.gms_hat, C, s, th, est.omegas)
    assert c1 > 0
    assert cost_ml(est.gms_hat, 3 * C, s, th, est.omegas) == pytest.approx(c1 / 3, rel=1e-12)


def test_cost_ml_argmin_invariant_under_scaling(rng):
    sysm = FirstOrderSiso(1.0, 2.0).to_lmfd()
    ds, est = _a3_estimate(rng, sysm)
    C = covariance(est)
    grid = [np.array([a, 2.0]) for a in np.linspace(0.5, 1.5, 41)]
    c1 = [cost_ml(est.gms_hat, C, FO, th, est.omegas) for th in grid]
    c2 = [cost_ml(est.gms_hat, 7.5 * C, FO, th, est.omegas) for th in grid]
    assert np.argmin(c1) == np.argmin(c2)


def test_cost_ml_conjugation_invariant(rng):
    sysm = random_stable_lmfd(rng, 1, 2, 1, 1)
    ds, est = _a3_estimate(rng, sysm, n_u=2)
    s = sysm.structure
    th = sysm.theta + 0.1 * rng.standard_normal(s.n_theta)
    C = covariance(est)
    # conjugating everything and swapping each +/- pair back describes the same data
    order = [0, 2, 1, 4, 3]
    rows = np.concatenate([np.arange(b * 2, (b + 1) * 2) for b in order])
    a = cost_ml(est.gms_hat, C, s, th, est.omegas)
    b = cost_ml(est.gms_hat.conj()[rows], C.conj()[np.ix_(rows, rows)], s, th, est.omegas)
    assert isinstance(a, float)
    assert b == pytest.approx(a, rel=1e-10)


def test_cost_explicit_matches_cost_ml(rng):
    worst = 0.0
    for _ in range(10):
        sysm = random_stable_lmfd(rng, 2, 2, 1, 1)
        S = np.array([[0.3, 0.1], [0.1, 0.2]])
        ds, est = _a3_estimate(rng, sysm, n_u=2, n_y=2, sigma=S)
        s = sysm.structure
        th = sysm.theta + 0.2 * rng.standard_normal(s.n_theta)
        a = cost_ml(est.gms_hat, covariance(est), s, th, est.omegas)
        b = cost_explicit(est.gms_hat, amplitude_matrices(ds.design), S, s, th, ds.N, est.omegas)
        worst = max(worst, abs(a - b) / abs(a))
    assert worst < 1e-10


def test_cost_explicit_single_sinusoid():
    N, sigma, alpha = 40, 0.5, 1.3
    d = ExcitationDesign(FrequencyGrid([2.0]), [[0.0]], [[[alpha]]], [[[0.4]]], math.pi / 10)
    om = d.omegas
    G = FO.stack([1.0, 1.0], om) + np.array([[0.1 - 0.2j], [0.1 + 0.2j]])
    c = cost_explicit(G, amplitude_matrices(d), [[sigma**2]], FO, [1.0, 1.0], N, om)
    assert c == pytest.approx(2 * N * alpha**2 / 4 * abs(0.1 + 0.2j) ** 2 / sigma**2, rel=1e-12)


def test_pem_zero_noiseless_and_sufficiency(rng):
    sysm = FirstOrderSiso(1.0, 2.0).to_lmfd()
    d = offset_design()
    ds0 = simulate_dataset(sysm, d, NoiseModel([[1e-30]]), N=20, keep_x=False)
    assert pem_cost_time(ds0, FO, sysm.theta, [[1.0]]) < 1e-20
    ds = simulate_dataset(sysm, d, NoiseModel([[0.25]]), N=20, seed=3)
    est = ls_estimate(ds)
    C = covariance(est)
    for _ in range(20):
        t1, t2 = rng.uniform(0.5, 1.5, 2) * sysm.theta, rng.uniform(0.5, 1.5, 2) * sysm.theta
        dv = pem_cost_time(ds, FO, t1) - pem_cost_time(ds, FO, t2)
        dc = cost_ml(est.gms_hat, C, FO, t1, est.omegas) - cost_ml(est.gms_hat, C, FO, t2, est.omegas)
        assert dv == pytest.approx(dc, rel=1e-8, abs=1e-10)


def test_pem_slice_argmin():
    sysm = FirstOrderSiso(1.0, 2.0).to_lmfd()
    ds = simulate_dataset(sysm, offset_design(), NoiseModel([[0.25]]), N=40, seed=8)
    est = ls_estimate(ds)
    C = covariance(est)
    a = np.linspace(0.5, 1.5, 201)
    v = [pem_cost_time(ds, FO, [x, 2.0]) for x in a]
    c = [cost_ml(est.gms_hat, C, FO, [x, 2.0], est.omegas) for x in a]
    assert np.argmin(v) == np.argmin(c)


# ---- iterative

def test_iterative_stationary_at_truth():
    om = offset_design().omegas
    G = FO.stack([1.0, 2.0], om)
    C = np.eye(3) * 0.01
    res = fit_iterative(G, C, FO, [1.0, 2.0], om, FitOptions(multistart=1))
    assert res.iterations <= 2 and res.cost < 1e-20
    np.testing.assert_allclose(res.theta_hat, [1.0, 2.0])


def test_iterative_recovers_from_offset_start(rng):
    sysm = random_stable_lmfd(rng, 2, 1, 1, 1)
    s = sysm.structure
    om = np.array([0.0, -0.5, 0.5, -1.5, 1.5, -3.0, 3.0])
    G = s.stack(sysm.theta, om)
    res = fit_iterative(G, np.eye(14), s, sysm.theta * 1.05, om, FitOptions(multistart=1))
    np.testing.assert_allclose(res.theta_hat, sysm.theta, rtol=1e-6, atol=1e-8)


def conj_noise(G, n_u, scale, rng):
    """Perturb a stack with noise that keeps the DC block real and +/- blocks conjugate."""
    lines = np.array([G[b * n_u:(b + 1) * n_u].T for b in range(G.shape[0] // n_u)])
    shape = lines.shape[1:]
    lines[0] = lines[0] + scale * rng.standard_normal(shape)
    for b in range(2, lines.shape[0], 2):
        e = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        lines[b] = lines[b] + e
        lines[b - 1] = lines[b].conj()
    return np.transpose(lines, (0, 2, 1)).reshape(G.shape)


def test_iterative_agrees_with_closed_form(rng):
    sysm = random_stable_lmfd(rng, 2, 2, 2, 2)
    grid = FrequencyGrid([0.7, 2.0])
    om = np.array([0.0, -0.7, 0.7, -2.0, 2.0])
    G = conj_noise(frf_stack(sysm, grid).matrix, 2, 0.01, rng)
    res_cf = fit_lmfd_closed_form(G, om, 2, 2)
    assert res_cf.cost < 1e-20
    res_it = fit_iterative(G, np.eye(20), LmfdStructure(2, 2, 2, 2), sysm.theta, om,
                           FitOptions(multistart=1))
    np.testing.assert_allclose(res_it.theta_hat, res_cf.theta_hat, atol=1e-6)


def test_iterative_multistart_deterministic():
    om = offset_design().omegas
    G = FO.stack([1.0, 2.0], om) + np.array([[0.05], [0.02 + 0.03j], [0.02 - 0.03j]])
    opts = FitOptions(multistart=6, seed=4)
    a = fit_iterative(G, np.eye(3), FO, [0.8, 1.7], om, opts)
    b = fit_iterative(G, np.eye(3), FO, [0.8, 1.7], om, FitOptions(multistart=6, seed=4, jobs=3))
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
    assert len(a.info["start_costs"]) == 6
    assert a.cost <= min(c for c in a.info["start_costs"] if c is not None) * (1 + 1e-12)


def test_iterative_box_constraints():
    om = offset_design().omegas
    G = FO.stack([1.0, 2.0], om)
    res = fit_iterative(G, np.eye(3), FO, [0.6, 1.8], om,
                        FitOptions(multistart=1, upper=np.array([0.9, 10.0])))
    assert res.theta_hat[0] <= 0.9


# ---- Levy

def test_levy_fully_constrained_equals_closed_form(rng):
    sysm = random_stable_lmfd(rng, 2, 2, 2, 2)
    grid = FrequencyGrid([0.4, 1.1])
    om = np.array([0.0, -0.4, 0.4, -1.1, 1.1])
    G = conj_noise(frf_stack(sysm, grid).matrix, 2, 0.01, rng)
    cf = fit_lmfd_closed_form(G, om, 2, 2)
    lv = fit_levy(G, om, 2, 2, weights=[np.diag([1.0, 2.0])] * 3)
    np.testing.assert_allclose(lv.theta_hat, cf.theta_hat, atol=1e-8)


def test_levy_noiseless_exact(rng):
    sysm = random_stable_lmfd(rng, 1, 2, 2, 1)
    om = np.array([0.0, -0.3, 0.3, -1.0, 1.0, -2.5, 2.5])
    G = sysm.structure.stack(sysm.theta, om)
    np.testing.assert_allclose(fit_levy(G, om, 2, 1).theta_hat, sysm.theta, rtol=1e-8, atol=1e-10)
    with pytest.raises(ValueError):
        fit_levy(G, om, 2, 1, weights=[np.eye(1)])


def test_levy_not_ml_overconstrained():
    sysm = FirstOrderSiso(1.0, 2.0).to_lmfd()
    d = offset_design()
    N = 60
    op = LsOperator(d, N)
    x = steady_state_output(sysm, d, 0, N=N)[None]
    rng = np.random.default_rng(12)
    strict = 0
    for _ in range(100):
        y = x + 0.5 * rng.standard_normal(x.shape)
        est = op.estimate(y, [[0.25]])
        C = covariance(est)
        lv = fit_levy(est.gms_hat, est.omegas, 1, 0, cov=C)
        it = fit_iterative(est.gms_hat, C, FO, lv.theta_hat, est.omegas, FitOptions(multistart=1))
        assert lv.cost >= it.cost - 1e-12 * lv.cost
        strict += lv.cost > it.cost * (1 + 1e-9)
    assert strict >= 90


# ---- case-study formulas

def test_normal_approx_paper_values():
    r = normal_approx_a1(1.0, 2.0, 0.8, 1.0, W1, 60)
    assert r["mean"] == 1.0
    assert r["variance"] == pytest.approx(2.16 / 60, rel=1e-12)
    assert r["criterion_value"] == pytest.approx(0.8 * math.sqrt(2 / 60) / (4 / 3), rel=1e-12)
    assert not r["valid"]
    assert normal_approx_a1(1.0, 2.0, 0.8, 1.0, W1, 10**6)["valid"]


def test_variance_minimizing_frequency():
    a10, b00, s, al, N = 1.7, 0.9, 0.3, 1.2, 50
    wopt = 1 / (math.sqrt(2) * a10)
    ws = np.linspace(0.2 * wopt, 5 * wopt, 4001)
    v = [normal_approx_a1(a10, b00, s, al, w, N)["variance"] for w in ws]
    assert ws[int(np.argmin(v))] == pytest.approx(wopt, rel=2e-3)
    vopt = normal_approx_a1(a10, b00, s, al, wopt, N)["variance"]
    assert vopt == pytest.approx(27 * s**2 * a10**2 / (2 * N * al**2 * b00**2), rel=1e-12)


def test_asymptotic_variances():
    va, vb = asymptotic_variance_first_order(1.0, 2.0, 0.8, 1.0, W1, 60)
    assert va == pytest.approx(0.036, rel=1e-12)
    assert vb == pytest.approx(0.048, rel=1e-12)
    r1 = asymptotic_variance_first_order(1.0, 2.0, 0.8, 1.0, 1e3, 60)[0]
    r2 = asymptotic_variance_first_order(1.0, 2.0, 0.8, 1.0, 2e3, 60)[0]
    assert r2 / r1 == pytest.approx(16, rel=1e-4)


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.01, 2), st.floats(0.1, 3),
       st.floats(0.05, 10), st.integers(3, 10**5))
def test_asymptotic_variance_matches_normal_approx(a, b, s, al, w, N):
    va, _ = asymptotic_variance_first_order(a, b, s, al, w, N)
    assert va == pytest.approx(normal_approx_a1(a, b, s, al, w, N)["variance"], rel=1e-12)
