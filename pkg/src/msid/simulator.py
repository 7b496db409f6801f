"""Exact steady-state sampled responses to multisine designs plus Gaussian noise.

Noise is drawn from a Philox counter-based generator keyed on
``(seed, experiment index)``, so each experiment's noise does not depend on
how many other experiments are generated or in which order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import TrueSystem, frf_stack
from .multisine import (ExcitationDesign, FrequencyGrid, design_from_dict,
                        design_to_dict, gamma_tilde)

__all__ = [
    "NoiseModel", "Dataset", "zeta", "steady_state_output",
    "true_hms_from_frf", "simulate_dataset", "experiment_rng",
    "save_dataset", "load_dataset", "IMAG_TOL",
]

IMAG_TOL = 1e-10


def experiment_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(i)])))


@dataclass(frozen=True)
class NoiseModel:
    sigma: np.ndarray
    seed: int = 0

    def __post_init__(self):
        S = np.atleast_2d(np.array(self.sigma, dtype=float))
        if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("noise covariance must be square and symmetric")
        S.setflags(write=False)
        object.__setattr__(self, "sigma", S)
        # raises LinAlgError if not positive definite
        object.__setattr__(self, "_chol", np.linalg.cholesky(S))

    @property
    def chol(self) -> np.ndarray:
        return self._chol


@dataclass(frozen=True)
class Dataset:
    """Outputs ``y`` of shape (m, N, n_y) sampled at ``t = h, 2h, ..., N h``."""

    design: ExcitationDesign
    N: int
    y: np.ndarray
    x: np.ndarray | None = None
    sigma: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim != 3 or y.shape[:2] != (self.design.m, self.N):
            raise ValueError(f"y must have shape (m={self.design.m}, N={self.N}, n_y), got {y.shape}")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def h(self) -> float:
        return self.design.h

    @property
    def n_y(self) -> int:
        return self.y.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(1, self.N + 1)


def zeta(design: ExcitationDesign, i: int, t) -> np.ndarray:
    """Complex-exponential form of the input; shape (..., n_u * L).

    Block ``b`` is ``conj(c_b exp(i s_b t))`` so that the ``+w`` exponent
    lands next to the ``-w`` entry of ``phi_vector``.
    """
    if not 0 <= i < design.m:
        raise IndexError(f"experiment index {i} out of range for m={design.m}")
    t = np.asarray(t, dtype=float)[..., None, None]
    c = design.phasors()[i]
    z = np.conj(c * np.exp(1j * design.omegas[:, None] * t))
    return z.reshape(*z.shape[:-2], -1)


def _real(a: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    resid = float(np.abs(a.imag).max(initial=0.0))
    if resid > IMAG_TOL * scale:
        raise AssertionError(f"{what} has imaginary residue {resid:.3e}")
    return a.real.copy()


def _system_stack(system, design: ExcitationDesign, grid: FrequencyGrid | None = None):
    if grid is not None and grid != design.grid:
        raise ValueError("system grid does not match the design grid")
    sysobj = system if isinstance(system, TrueSystem) else TrueSystem(system)
    return frf_stack(sysobj, design.grid, design.dc).matrix


def steady_state_output(system, design: ExcitationDesign, i: int,
                        h: float | None = None, N: int = 1,
                        grid: FrequencyGrid | None = None) -> np.ndarray:
    """``x_i(kh) = stack^H zeta_i(kh)`` for ``k = 1..N``; shape (N, n_y)."""
    h = design.h if h is None else h
    G = _system_stack(system, design, grid)
    Z = zeta(design, i, h * np.arange(1, N + 1))
    return _real(Z @ G.conj(), "steady-state output")


def true_hms_from_frf(system, grid: FrequencyGrid, h: float, dc: bool = True) -> np.ndarray:
    """Multisine-equivalent FIR coefficients ``(Gamma^{-H} kron I) stack``."""
    sysobj = system if isinstance(system, TrueSystem) else TrueSystem(system)
    G = frf_stack(sysobj, grid, dc).matrix
    n_u = G.shape[0] // (2 * grid.M + int(dc))
    Gt = gamma_tilde(grid, h, dc)
    s = np.linalg.svd(Gt, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise np.linalg.LinAlgError("Gamma-tilde is singular; lines overlap after sampling")
    H = np.linalg.solve(np.kron(Gt.conj().T, np.eye(n_u)), G)
    return _real(H, "FIR coefficient matrix")


def simulate_dataset(system, design: ExcitationDesign, noise: NoiseModel,
                     h: float | None = None, N: int = 1, seed: int | None = None,
                     keep_x: bool = True) -> Dataset:
    if h is not None and not np.isclose(h, design.h, rtol=1e-15, atol=0):
        raise ValueError("h differs from the design's sampling period")
    seed = noise.seed if seed is None else seed
    G = _system_stack(system, design)
    x = np.stack([_real(zeta(design, i, design.h * np.arange(1, N + 1)) @ G.conj(),
                        "steady-state output") for i in range(design.m)])
    n_y = x.shape[2]
    if noise.sigma.shape[0] != n_y:
        raise ValueError("noise covariance dimension does not match n_y")
    v = np.stack([experiment_rng(seed, i).standard_normal((N, n_y)) for i in range(design.m)])
    y = x + v @ noise.chol.T
    return Dataset(design, N, y, x if keep_x else None, noise.sigma, seed)


def save_dataset(ds: Dataset, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t = ds.times
    for i in range(ds.design.m):
        with open(out / f"exp_{i}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"y{j + 1}" for j in range(ds.n_y)])
            for k in range(ds.N):
                w.writerow([repr(float(t[k]))] + [repr(float(v)) for v in ds.y[i, k]])
    side = {"design": design_to_dict(ds.design), "N": ds.N, "n_y": ds.n_y,
            "m": ds.design.m, "seed": ds.seed,
            "sigma": None if ds.sigma is None else np.asarray(ds.sigma).tolist()}
    (out / "dataset.json").write_text(json.dumps(side, indent=2) + "\n")


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    side = json.loads((path / "dataset.json").read_text())
    design = design_from_dict(side["design"])
    ys = []
    for i in range(design.m):
        arr = np.loadtxt(path / f"exp_{i}.csv", delimiter=",", skiprows=1, ndmin=2)
        ys.append(arr[:, 1:])
    sigma = None if side.get("sigma") is None else np.asarray(side["sigma"], dtype=float)
    return Dataset(design, int(side["N"]), np.stack(ys), None, sigma, side.get("seed"))
