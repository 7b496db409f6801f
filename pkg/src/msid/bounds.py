"""Finite-sample concentration radii for FRF and parameter estimates."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .models import ModelStructure
from .multisine import AmplitudeMatrices

__all__ = [
    "BoundInputs", "BoundReport", "frf_bound", "theta_bound", "frf_mse_bound",
    "gaussian_tail_radius", "bi_lipschitz_check", "min_sigma_min_over_grid",
    "bound_report", "excitation_floor",
]


@dataclass(frozen=True)
class BoundInputs:
    """Everything the radii depend on.

    The DC line counts only when some offset is nonzero; otherwise the stack
    has ``2M`` lines and ``A0`` is left out of the excitation floor.
    """

    sigma: np.ndarray
    A: AmplitudeMatrices
    N: int
    n_y: int
    delta: float
    sigma_min_J0: float | None = None
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", np.atleast_2d(np.asarray(self.sigma, dtype=float)))
        if self.N <= 2 * self.M:
            raise ValueError(f"need N > 2M, got N={self.N}, M={self.M}")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.sigma_min_J0 is not None and not self.sigma_min_J0 > 0:
            raise ValueError("sigma_min_J0 must be positive")
        if self.sigma.shape != (self.n_y, self.n_y):
            raise ValueError("sigma must be n_y x n_y")

    @property
    def M(self) -> int:
        return self.A.M

    @property
    def n_u(self) -> int:
        return self.A.A0.shape[1]

    @property
    def dc(self) -> bool:
        return bool(np.any(self.A.A0 != 0)) or self.M == 0

    @property
    def n_lines(self) -> int:
        return 2 * self.M + int(self.dc)

    @property
    def B(self) -> float:
        return float(np.sqrt(self.n_u * self.n_y * self.n_lines))


def excitation_floor(inputs: BoundInputs) -> float:
    """Smallest eigenvalue of ``A_l^H A_l`` over the excited lines."""
    ls = range(0 if inputs.dc else 1, inputs.M + 1)
    mu = min(float(np.linalg.eigvalsh(inputs.A.gram(l))[0]) for l in ls)
    if mu <= 0:
        raise np.linalg.LinAlgError("an amplitude matrix is rank deficient")
    return mu


def _scale(inputs: BoundInputs) -> float:
    lam = float(np.linalg.eigvalsh(inputs.sigma)[-1])
    return lam / (inputs.N * excitation_floor(inputs))


def gaussian_tail_radius(m: int, delta: float) -> float:
    if m < 1 or not 0 < delta <= 1:
        raise ValueError("need m >= 1 and delta in (0, 1]")
    return float(np.sqrt(2 * np.log(2 / delta)) + np.sqrt(m))


def frf_bound(inputs: BoundInputs) -> float:
    """Frobenius radius for the stacked FRF error at confidence ``1 - delta``."""
    tail = np.sqrt(2 * np.log(2 / inputs.delta)) + inputs.B
    return float(2 * np.sqrt(_scale(inputs)) * tail)


def theta_bound(inputs: BoundInputs) -> float:
    """Parameter radius, valid on the event that the estimate lies in the
    ball where the Jacobian stays within ``(1 - beta) sigma_min`` of ``J(theta_0)``."""
    if inputs.beta is None or inputs.sigma_min_J0 is None:
        raise ValueError("theta_bound needs beta and sigma_min_J0")
    return frf_bound(inputs) / (inputs.beta * inputs.sigma_min_J0)


def frf_mse_bound(inputs: BoundInputs) -> float:
    B = inputs.B
    return float(4 * _scale(inputs) * (B * B + 2 * np.sqrt(2 * np.pi) * B + 4))


def bi_lipschitz_check(structure: ModelStructure, theta0, theta_hat, beta: float,
                       omegas) -> dict:
    J0 = structure.jacobian(theta0, omegas)
    J1 = structure.jacobian(theta_hat, omegas)
    gap = float(np.linalg.norm(J1 - J0, 2))
    smin = float(np.linalg.svd(J0, compute_uv=False)[-1])
    return {"in_ball": bool(gap <= (1 - beta) * smin), "jacobian_gap": gap,
            "sigma_min_J0": smin}


def min_sigma_min_over_grid(structure: ModelStructure, thetas, omegas) -> float:
    """Conservative ``sigma_min`` of the Jacobian over a set of parameter points."""
    return min(float(np.linalg.svd(structure.jacobian(t, omegas), compute_uv=False)[-1])
               for t in thetas)


@dataclass(frozen=True)
class BoundReport:
    frf_radius: float
    theta_radius: float | None
    mse_bound: float
    gaussian_tail_radius: float
    inputs: dict

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(inputs: BoundInputs) -> BoundReport:
    m = inputs.n_u * inputs.n_y * inputs.n_lines
    theta_r = None
    if inputs.beta is not None and inputs.sigma_min_J0 is not None:
        theta_r = theta_bound(inputs)
    echo = {"N": inputs.N, "delta": inputs.delta, "M": inputs.M, "n_u": inputs.n_u,
            "n_y": inputs.n_y, "n_lines": inputs.n_lines, "B": inputs.B,
            "lambda_max_sigma": float(np.linalg.eigvalsh(inputs.sigma)[-1]),
            "excitation_floor": excitation_floor(inputs),
            "beta": inputs.beta, "sigma_min_J0": inputs.sigma_min_J0}
    return BoundReport(frf_bound(inputs), theta_r, frf_mse_bound(inputs),
                       gaussian_tail_radius(m, inputs.delta), echo)
