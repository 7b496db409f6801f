"""Least-squares multisine FIR estimation, FRF interpolation and covariance.

The estimator regresses every sample ``y_i(kh)`` on the exact past input
samples ``u_i(kh - rh)``, ``r = 0..L-1``, computed from the continuous-time
design, so every one of the ``N`` samples is used.  The FIR estimate is then
mapped to the excited lines through the Vandermonde matrix of
:func:`msid.multisine.gamma_tilde`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .multisine import (ExcitationDesign, FrequencyGrid, check_assumption1,
                        check_assumption2, check_assumption3, eval_input,
                        gamma_tilde, line_omegas)
from .simulator import Dataset, zeta

__all__ = [
    "FrfEstimate", "LsOperator", "ls_estimate", "etfe_estimate", "frf_interp",
    "frf_sweep", "covariance", "real_covariance", "line_std",
    "etfe_transforms", "regressor_stack", "zeta_stack", "z_from_regressors", "COND_WARN",
]

COND_WARN = 1e12


def regressor_stack(design: ExcitationDesign, N: int) -> np.ndarray:
    """Real regressors with shape (N, n_u L, m); column i is ``U_i(kh)``."""
    L, h = design.n_lines, design.h
    k = np.arange(1, N + 1)[:, None]
    t = (k - np.arange(L)[None, :]) * h
    U = np.stack([eval_input(design, i, t).reshape(N, L * design.n_u)
                  for i in range(design.m)], axis=-1)
    return U


def zeta_stack(design: ExcitationDesign, N: int) -> np.ndarray:
    """Complex regressors with shape (N, n_u L, m); column i is ``zeta_i(kh)``."""
    t = design.h * np.arange(1, N + 1)
    return np.stack([zeta(design, i, t) for i in range(design.m)], axis=-1)


def z_from_regressors(design: ExcitationDesign, N: int) -> np.ndarray:
    """Normal matrix recovered from the real regressors through Gamma-tilde."""
    U = regressor_stack(design, N)
    R = np.einsum("kpi,kqi->pq", U, U)
    T = np.kron(gamma_tilde(design.grid, design.h, design.dc), np.eye(design.n_u))
    Ti = np.linalg.inv(T)
    return Ti @ R @ Ti.conj().T


def _check_design(design: ExcitationDesign, N: int) -> None:
    if N <= 2 * design.M:
        raise ValueError(f"need N > 2M samples, got N={N}, M={design.M}")
    a1 = check_assumption1(design)
    if not a1.holds:
        raise np.linalg.LinAlgError(
            f"amplitude matrices are rank deficient: min singular values "
            f"{a1.details['min_singular_values']}")
    a2 = check_assumption2(design.grid, design.h)
    if not a2.holds:
        raise np.linalg.LinAlgError(
            f"excited lines overlap after sampling: pairs {a2.details['violating_pairs']}, "
            f"lines {a2.details['violating_lines']}")


@dataclass(frozen=True)
class FrfEstimate:
    """Result of a multisine FRF estimation.

    Attributes
    ----------
    hms_hat : (n_u L, n_y) real FIR coefficient stack.
    gms_hat : (n_u L, n_y) complex stacked FRF at the excited lines.
    z : (n_u L, n_u L) Hermitian normal matrix.
    sigma : noise covariance used for uncertainty, or None.
    """

    hms_hat: np.ndarray
    gms_hat: np.ndarray
    z: np.ndarray
    sigma: np.ndarray | None
    grid: FrequencyGrid
    h: float
    N: int
    m: int
    dc: bool = True

    @property
    def omegas(self) -> np.ndarray:
        return line_omegas(self.grid, self.dc)

    @property
    def n_lines(self) -> int:
        return self.omegas.size

    @property
    def n_u(self) -> int:
        return self.gms_hat.shape[0] // self.n_lines

    @property
    def n_y(self) -> int:
        return self.gms_hat.shape[1]

    def line(self, b: int) -> np.ndarray:
        """``G_hat(i s_b)`` as an (n_y, n_u) matrix."""
        n_u = self.n_u
        return self.gms_hat[b * n_u:(b + 1) * n_u].T

    def lines(self) -> np.ndarray:
        return np.array([self.line(b) for b in range(self.n_lines)])

    def positive_index(self, l: int) -> int:
        """Stack index of the ``+w_l`` line (``l`` is 1-based, 0 for DC)."""
        if l == 0:
            if not self.dc:
                raise ValueError("the DC line is not excited")
            return 0
        return 2 * l - 1 + int(self.dc)


class LsOperator:
    """Precomputed least-squares map from outputs to the FRF stack.

    Depends only on the design and ``N``; apply it to many output records
    of shape (..., m, N, n_y) for Monte Carlo work.
    """

    def __init__(self, design: ExcitationDesign, N: int, check: bool = True):
        if check:
            _check_design(design, N)
        elif N <= 2 * design.M:
            raise ValueError(f"need N > 2M samples, got N={N}, M={design.M}")
        self.design, self.N = design, N
        U = regressor_stack(design, N)
        n, p, m = U.shape
        # rows ordered (experiment, sample); QR keeps the condition number unsquared
        X = np.transpose(U, (2, 0, 1)).reshape(m * n, p)
        Q, Rq = np.linalg.qr(X)
        sv = np.linalg.svd(Rq, compute_uv=False)
        if sv[-1] <= 0:
            raise np.linalg.LinAlgError("normal matrix of the regressors is singular")
        cond = (sv[0] / sv[-1]) ** 2
        if cond > COND_WARN:
            warnings.warn(f"normal matrix condition number {cond:.2e} exceeds {COND_WARN:.0e}")
        self.cond = float(cond)
        # W[p, i, k]: weight of y_i(kh) in row p of the FIR estimate
        self.W = scipy.linalg.solve_triangular(Rq, Q.T).reshape(p, m, n)
        self.gamma = gamma_tilde(design.grid, design.h, design.dc)
        self.T_H = np.kron(self.gamma.conj().T, np.eye(design.n_u))
        Zs = zeta_stack(design, N)
        self.z = np.einsum("kpi,kqi->pq", Zs, Zs.conj())

    def hms(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-3:-1] != (self.design.m, self.N):
            raise ValueError(f"outputs must have shape (..., {self.design.m}, {self.N}, n_y)")
        if not np.all(np.isfinite(y)):
            raise ValueError("output data contain non-finite values")
        return np.einsum("pik,...ikj->...pj", self.W, y)

    def gms(self, y: np.ndarray) -> np.ndarray:
        return self.gms_from_hms(self.hms(y))

    def gms_from_hms(self, H: np.ndarray) -> np.ndarray:
        return np.einsum("pq,...qj->...pj", self.T_H, H)

    def estimate(self, y: np.ndarray, sigma=None) -> FrfEstimate:
        H = self.hms(y)
        d = self.design
        return FrfEstimate(H, self.gms_from_hms(H), self.z,
                           None if sigma is None else np.atleast_2d(np.asarray(sigma, dtype=float)),
                           d.grid, d.h, self.N, d.m, d.dc)


def ls_estimate(dataset: Dataset, sigma=None) -> FrfEstimate:
    """Least-squares estimate from a dataset; ``sigma`` overrides ``dataset.sigma``."""
    sigma = dataset.sigma if sigma is None else sigma
    return LsOperator(dataset.design, dataset.N).estimate(dataset.y, sigma)


def etfe_estimate(dataset: Dataset, sigma=None, tol: float = 1e-9) -> FrfEstimate:
    """Line-by-line ratio of output and input DTFTs (requires whole periods)."""
    d, N = dataset.design, dataset.N
    _check_design(d, N)
    a3 = check_assumption3(d.grid, d.h, N, tol)
    if not a3.holds:
        raise ValueError(f"record does not hold whole periods: {a3.details['fractional_parts']}")
    Ups, Xi = etfe_transforms(dataset)
    G = np.empty((d.n_lines, dataset.n_y, d.n_u), dtype=complex)
    for b in range(d.n_lines):
        s = np.linalg.svd(Xi[b], compute_uv=False)
        if s[-1] <= 1e-10 * s[0]:
            raise np.linalg.LinAlgError(f"input DTFT matrix is rank deficient at line {b}")
        G[b] = Ups[b] @ np.linalg.pinv(Xi[b])
    gms = np.transpose(G, (0, 2, 1)).reshape(d.n_lines * d.n_u, dataset.n_y)
    T = np.kron(gamma_tilde(d.grid, d.h, d.dc).conj().T, np.eye(d.n_u))
    H = np.linalg.solve(T, gms).real
    Zs = zeta_stack(d, N)
    z = np.einsum("kpi,kqi->pq", Zs, Zs.conj())
    sigma = dataset.sigma if sigma is None else sigma
    return FrfEstimate(H, gms, z,
                       None if sigma is None else np.atleast_2d(np.asarray(sigma, dtype=float)),
                       d.grid, d.h, N, d.m, d.dc)


def etfe_transforms(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Output and input DTFT matrices at every line, shapes (L, n_y, m), (L, n_u, m)."""
    d, N = dataset.design, dataset.N
    k = np.arange(1, N + 1)
    u = np.stack([eval_input(d, i, d.h * k) for i in range(d.m)])
    E = np.exp(-1j * np.outer(d.omegas, k * d.h))
    return np.einsum("bk,ikj->bji", E, dataset.y), np.einsum("bk,ika->bai", E, u)


def frf_interp(est: FrfEstimate, omega: float) -> np.ndarray:
    """Continuous-time FRF of the FIR estimate; periodic in ``omega`` with ``2 pi / h``."""
    L = est.n_lines
    Gam = np.exp(-1j * omega * est.h * np.arange(L))
    return est.hms_hat.T @ np.kron(Gam, np.eye(est.n_u)).T


def frf_sweep(est: FrfEstimate, omegas) -> np.ndarray:
    omegas = np.asarray(omegas, dtype=float)
    Gam = np.exp(-1j * np.outer(omegas, est.h * np.arange(est.n_lines)))
    H = est.hms_hat.reshape(est.n_lines, est.n_u, est.n_y)
    return np.einsum("wr,raj->wja", Gam, H)


def covariance(est: FrfEstimate) -> np.ndarray:
    """``Sigma kron Z^{-1}``, the covariance of ``vec(gms_hat)``."""
    if est.sigma is None:
        raise ValueError("estimate carries no noise covariance")
    try:
        c = scipy.linalg.cho_factor(est.z)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("normal matrix Z is not positive definite") from exc
    Zi = scipy.linalg.cho_solve(c, np.eye(est.z.shape[0], dtype=complex))
    Zi = 0.5 * (Zi + Zi.conj().T)
    return np.kron(est.sigma, Zi)


def _conj_permutation(L: int, n_u: int, n_y: int, dc: bool) -> np.ndarray:
    """Index map taking ``vec`` to ``conj(vec)`` by swapping each line pair."""
    lines = np.arange(L)
    start = int(dc)
    lines[start::2], lines[start + 1::2] = lines[start + 1::2].copy(), lines[start::2].copy()
    per = (lines[:, None] * n_u + np.arange(n_u)).ravel()
    return (np.arange(n_y)[:, None] * (L * n_u) + per[None, :]).ravel()


def real_covariance(est: FrfEstimate, C: np.ndarray | None = None) -> np.ndarray:
    """Covariance of ``[Re vec; Im vec]`` of the stacked estimate."""
    C = covariance(est) if C is None else C
    perm = _conj_permutation(est.n_lines, est.n_u, est.n_y, est.dc)
    P = C[:, perm]
    Rr = 0.5 * (C + P).real
    Rq = 0.5 * (C - P).real
    Rqr = 0.5 * (C + P).imag
    Rrq = 0.5 * (P - C).imag
    return np.block([[Rr, Rrq], [Rqr, Rq]])


def line_std(est: FrfEstimate) -> np.ndarray:
    """Standard deviation of every stack entry, shaped like ``gms_hat``."""
    v = np.diag(covariance(est)).real
    return np.sqrt(v).reshape(est.gms_hat.shape, order="F")
