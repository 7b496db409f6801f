import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msid.models import FirstOrderSiso, LmfdModel, frf_stack
from msid.multisine import (ExcitationDesign, FrequencyGrid, eval_input, gamma_tilde,
                            phi_vector, random_design)
from msid.simulator import (NoiseModel, load_dataset, save_dataset, simulate_dataset,
                            steady_state_output, true_hms_from_frf, zeta)

from conftest import random_stable_lmfd


def case_design(h=math.pi / 10):
    return ExcitationDesign(FrequencyGrid([2.0]), [[0.5]], [[[1.0]]], [[[-math.pi / 2]]], h)


def fir_output(H, design, i, t, n_u):
    L = H.shape[0] // n_u
    return sum(H[r * n_u:(r + 1) * n_u].T @ eval_input(design, i, t - r * design.h) for r in range(L))


def test_zeta_at_zero_is_real():
    d = ExcitationDesign(FrequencyGrid([1.0, 3.0]), [[0.7]], [[[2.0], [4.0]]], np.zeros((1, 2, 1)), 0.1)
    np.testing.assert_allclose(zeta(d, 0, 0.0), [0.7, 1, 1, 2, 2], atol=0)


def test_zeta_case_study():
    z = zeta(case_design(), 0, 0.0)
    np.testing.assert_allclose(z, [0.5, 0.5 * np.exp(-0.5j * math.pi), 0.5 * np.exp(0.5j * math.pi)],
                               atol=1e-16)


def test_zeta_index_error():
    with pytest.raises(IndexError):
        zeta(case_design(), 1, 0.0)


def test_zeta_reconstructs_input(rng):
    d = random_design(FrequencyGrid([0.3, 1.0, 2.2]), 2, 2, 0.1, seed=4)
    worst = 0.0
    for t in rng.uniform(-50, 50, 100):
        for i in range(2):
            r = np.kron(phi_vector(d.grid, 0.0), np.eye(2)) @ zeta(d, i, t)
            worst = max(worst, np.abs(r - eval_input(d, i, t)).max())
    assert worst < 1e-12


def test_static_gain_dc_only():
    C = np.array([[2.0], [-1.0]])
    d = ExcitationDesign(FrequencyGrid([]), [[1.5]], np.zeros((1, 0, 1)), np.zeros((1, 0, 1)), 0.1)
    x = steady_state_output(LmfdModel(2, 1, (), (C,)), d, 0, N=4)
    np.testing.assert_array_equal(x, np.tile(1.5 * C.T, (4, 1)))
    np.testing.assert_array_equal(true_hms_from_frf(LmfdModel(2, 1, (), (C,)), d.grid, 0.1), C.T)


def test_first_order_closed_form():
    # pure sinusoid: x(kh) = alpha |G| sin(w k h + arg G)
    w, h, alpha = 1 / math.sqrt(2), math.pi * math.sqrt(2) / 10, 1.0
    sysm = FirstOrderSiso(1.0, 2.0)
    d = ExcitationDesign(FrequencyGrid([w]), [[0.0]], [[[alpha]]], [[[-math.pi / 2]]], h)
    x = steady_state_output(sysm, d, 0, N=60)[:, 0]
    g = sysm.frf(w)
    k = np.arange(1, 61)
    np.testing.assert_allclose(x, alpha * abs(g) * np.sin(w * k * h + np.angle(g)), atol=1e-13)


def test_offset_plus_sine_closed_form():
    sysm = FirstOrderSiso(1.0, 1.0)
    d = case_design()
    x = steady_state_output(sysm, d, 0, N=30)[:, 0]
    g = sysm.frf(2.0)
    t = d.h * np.arange(1, 31)
    np.testing.assert_allclose(x, 0.5 + abs(g) * np.sin(2 * t + np.angle(g)), atol=1e-13)


@pytest.mark.parametrize("h,freqs", [(0.1, [1.0, 3.0]), (4 / 7, [math.pi, 5 * math.pi]),
                                     (0.7, [2.0, 9.5, 13.0])])
def test_fir_equivalence(h, freqs):
    rng = np.random.default_rng(11)
    grid = FrequencyGrid(freqs)
    sysm = random_stable_lmfd(rng, 2, 2, 2, 1)
    d = random_design(grid, 2, 2, h, seed=1)
    H = true_hms_from_frf(sysm, grid, h)
    x = np.stack([steady_state_output(sysm, d, i, N=40) for i in range(2)])
    worst = 0.0
    for i in range(2):
        for k in range(40):
            worst = max(worst, np.abs(fir_output(H, d, i, (k + 1) * h, 2) - x[i, k]).max())
    assert worst < 1e-8


def test_fir_round_trip(rng):
    grid = FrequencyGrid([math.pi, 5 * math.pi])
    sysm = random_stable_lmfd(rng, 2, 1, 1, 1)
    H = true_hms_from_frf(sysm, grid, 4 / 7)
    G = np.kron(gamma_tilde(grid, 4 / 7).conj().T, np.eye(1)) @ H
    np.testing.assert_allclose(G, frf_stack(sysm, grid).matrix, atol=1e-10)


def test_fir_singular_gamma():
    with pytest.raises(np.linalg.LinAlgError):
        true_hms_from_frf(FirstOrderSiso(1.0, 1.0), FrequencyGrid([math.pi, 5 * math.pi]), 0.5)


def test_grid_mismatch():
    with pytest.raises(ValueError):
        steady_state_output(FirstOrderSiso(1.0, 1.0), case_design(), 0, grid=FrequencyGrid([3.0]))


def test_tiny_noise_limit():
    d = case_design()
    ds = simulate_dataset(FirstOrderSiso(1.0, 2.0), d, NoiseModel([[1e-30]]), N=50, seed=3)
    np.testing.assert_allclose(ds.y, ds.x, atol=1e-14)


def test_noise_covariance_monte_carlo():
    S = np.array([[1.0, 0.4], [0.4, 0.5]])
    d = ExcitationDesign(FrequencyGrid([1.0]), [[1.0]], [[[1.0]]], [[[0.0]]], 0.1)
    sysm = LmfdModel(2, 1, (), ([[1.0], [2.0]],))
    ds = simulate_dataset(sysm, d, NoiseModel(S), N=100_000, seed=5)
    v = (ds.y - ds.x)[0]
    emp = v.T @ v / v.shape[0]
    assert np.linalg.norm(emp - S) / np.linalg.norm(S) < 0.02


def test_determinism():
    d = random_design(FrequencyGrid([1.0]), 2, 1, 0.2, seed=0)
    a = simulate_dataset(FirstOrderSiso(1.0, 1.0), d, NoiseModel([[0.1]]), N=20, seed=9)
    b = simulate_dataset(FirstOrderSiso(1.0, 1.0), d, NoiseModel([[0.1]]), N=20, seed=9)
    c = simulate_dataset(FirstOrderSiso(1.0, 1.0), d, NoiseModel([[0.1]]), N=20, seed=10)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)
    # experiments use independent streams
    assert not np.array_equal(a.y[0] - a.x[0], a.y[1] - a.x[1])


def test_noise_model_rejects_indefinite():
    with pytest.raises(np.linalg.LinAlgError):
        NoiseModel([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        NoiseModel([[1.0, 0.5], [0.0, 1.0]])


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_outputs_real_and_fir_real(seed):
    rng = np.random.default_rng(seed)
    grid = FrequencyGrid(np.sort(rng.choice(np.arange(1, 30), 2, replace=False)) * 0.1)
    sysm = random_stable_lmfd(rng, 2, 1, 1, 1)
    d = random_design(grid, 1, 1, 0.1, seed=seed)
    # the residue check inside raises on any complex leak
    steady_state_output(sysm, d, 0, N=10)
    assert true_hms_from_frf(sysm, grid, 0.1).dtype == float


def test_save_load_round_trip(tmp_path):
    d = case_design()
    ds = simulate_dataset(FirstOrderSiso(1.0, 2.0), d, NoiseModel([[0.25]]), N=15, seed=1)
    save_dataset(ds, tmp_path)
    assert (tmp_path / "exp_0.csv").read_text().splitlines()[0] == "t,y1"
    back = load_dataset(tmp_path)
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.seed == 1 and back.N == 15
