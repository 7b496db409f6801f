"""Parametric fitting from a multisine FRF estimate.

The weighted frequency-domain cost ``vec(E)^H cov^{-1} vec(E)`` with
``E = G_hat - G(theta)`` differs from the time-domain prediction-error cost
only by a constant, so every fitter here works with the small stacked FRF
instead of the raw records.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .models import LmfdStructure, ModelStructure, stack_to_lines
from .multisine import AmplitudeMatrices
from .simulator import Dataset, zeta

__all__ = [
    "FitResult", "FitOptions", "InterpolationSystem", "Whitener", "cost_ml",
    "cost_explicit", "pem_cost_time", "interpolation_system",
    "fit_lmfd_closed_form", "fit_first_order", "fit_iterative", "fit_levy",
    "normal_approx_a1", "asymptotic_variance_first_order", "SVD_RTOL",
]

SVD_RTOL = 1e-12


def _vec(S: np.ndarray) -> np.ndarray:
    return S.reshape(-1, order="F")


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    cost: float
    status: str
    kernel_basis: np.ndarray | None = None
    iterations: int = 0
    gradient_norm: float = float("nan")
    info: dict = field(default_factory=dict)


class Whitener:
    """Applies ``C^{-1}`` with ``cov = C C^H`` (complex Cholesky)."""

    def __init__(self, cov: np.ndarray):
        cov = np.asarray(cov)
        try:
            self.C = scipy.linalg.cholesky(cov, lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("covariance is not positive definite") from exc

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return scipy.linalg.solve_triangular(self.C, r, lower=True)


def cost_ml(gms_hat, cov, structure: ModelStructure, theta, omegas,
            whitener: Whitener | None = None) -> float:
    w = whitener or Whitener(cov)
    r = w(_vec(np.asarray(gms_hat) - structure.stack(theta, omegas)))
    return float(np.vdot(r, r).real)


def cost_explicit(gms_hat, A: AmplitudeMatrices, sigma, structure: ModelStructure,
                  theta, N: int, omegas) -> float:
    """Trace form of the weighted cost, valid when the record holds whole periods."""
    omegas = np.asarray(omegas)
    n_u = structure.n_u
    Et = stack_to_lines(np.asarray(gms_hat) - structure.stack(theta, omegas), n_u)
    Si = np.linalg.inv(np.atleast_2d(sigma))
    dc = bool(np.isclose(omegas[0], 0.0))
    S = np.zeros_like(Si, dtype=complex)
    if dc:
        S += Et[0] @ A.gram(0) @ Et[0].T
    for l in range(1, A.M + 1):
        b = 2 * l - 1 + int(dc)  # +w_l line
        S += 2 * (Et[b] @ A.gram(l).conj() @ Et[b].conj().T).real
    return float(N * np.trace(Si @ S).real)


def pem_cost_time(dataset: Dataset, structure: ModelStructure, theta, sigma=None) -> float:
    """Sum over experiments and samples of the ``Sigma^{-1}``-weighted prediction error."""
    d = dataset.design
    sigma = dataset.sigma if sigma is None else sigma
    Si = np.linalg.inv(np.atleast_2d(sigma))
    G = structure.stack(theta, d.omegas)
    t = dataset.times
    total = 0.0
    for i in range(d.m):
        yhat = (zeta(d, i, t) @ G.conj()).real
        e = dataset.y[i] - yhat
        total += float(np.einsum("kj,jl,kl->", e, Si, e))
    return total


@dataclass(frozen=True)
class InterpolationSystem:
    """``J`` with ``J Theta = G_hat`` expressing ``D(is) G(is) = N(is)`` at every line."""

    J: np.ndarray
    omega_diag: np.ndarray
    n_D: int
    n_N: int


def interpolation_system(gms_hat, omegas, n_u: int, n_D: int, n_N: int) -> InterpolationSystem:
    G = np.asarray(gms_hat)
    L = np.asarray(omegas).size
    Om = np.kron(np.diag(1j * np.asarray(omegas)), np.eye(n_u))
    I_stack = np.tile(np.eye(n_u), (L, 1))
    blocks = []
    OG = G
    for _ in range(n_D):
        OG = Om @ OG
        blocks.append(-OG)
    OI = I_stack.astype(complex)
    for e in range(n_N + 1):
        blocks.append(OI)
        OI = Om @ OI
    return InterpolationSystem(np.hstack(blocks), Om, n_D, n_N)


def _real_stack(A: np.ndarray) -> np.ndarray:
    return np.vstack([A.real, A.imag])


def fit_lmfd_closed_form(gms_hat, omegas, n_D: int, n_N: int, n_u: int | None = None,
                         cov=None, strict: bool = True) -> FitResult:
    """Minimum-norm real LMFD interpolating the estimate at every line.

    Returns the kernel of the real-stacked interpolation matrix in
    ``kernel_basis`` (shape (P, k), acting on ``Theta`` columnwise) so that
    ``Theta_hat + K @ L`` interpolates for every real ``L``.
    """
    G = np.asarray(gms_hat)
    omegas = np.asarray(omegas, dtype=float)
    n_y = G.shape[1]
    n_u = n_u if n_u is not None else G.shape[0] // omegas.size
    n_rows = G.shape[0]
    sys_ = interpolation_system(G, omegas, n_u, n_D, n_N)
    P = sys_.J.shape[1]
    if P < n_rows:
        raise ValueError(
            f"interpolation is overconstrained ({n_rows} conditions, {P} unknowns per output);"
            " use fit_iterative")
    Jr = _real_stack(sys_.J)
    U, s, Vt = np.linalg.svd(Jr)
    rank = int(np.sum(s > SVD_RTOL * s[0])) if s.size and s[0] > 0 else 0
    if rank < n_rows:
        msg = f"interpolation matrix is row-rank deficient: rank {rank} < {n_rows} (gap {n_rows - rank})"
        if strict:
            raise np.linalg.LinAlgError(msg)
    Theta = Vt[:rank].T @ ((U[:, :rank].T @ _real_stack(G)) / s[:rank, None])
    K = Vt[rank:].T
    structure = LmfdStructure(n_y, n_u, n_D, n_N)
    theta = _vec(Theta)
    if cov is not None:
        cost = cost_ml(G, cov, structure, theta, omegas)
    else:
        cost = float(np.sum(np.abs(G - structure.stack(theta, omegas)) ** 2))
    status = "closed_form" if rank == n_rows else "rank_deficient"
    info = {"rank": rank, "kernel_dim": K.shape[1]}
    if n_N >= 2 * (omegas.size // 2):
        info["kernel_dim_formula"] = P - n_rows
    return FitResult(theta, cost, status, K, info=info)


def fit_first_order(g_hat: complex, omega: float, zero_at_zero: bool = False):
    """Invert ``b0/(a1 s + 1)`` (or ``b1 s/(a1 s + 1)``) from one line.

    Returns ``(a1, b0)``, or ``(a1, b1)`` when ``zero_at_zero`` is set.
    """
    re, im = float(np.real(g_hat)), float(np.imag(g_hat))
    mag2 = re * re + im * im
    if zero_at_zero:
        if im == 0:
            raise ZeroDivisionError("imaginary part of the FRF estimate vanishes")
        return re / (omega * im), mag2 / (omega * im)
    if re == 0:
        raise ZeroDivisionError("real part of the FRF estimate vanishes")
    return -im / (omega * re), mag2 / re


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    rtol: float = 1e-12
    gtol: float = 1e-10
    lam0: float = 1e-3
    lam_max: float = 1e16
    multistart: int = 8
    perturbation: float = 0.1
    seed: int = 0
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    jobs: int = 1


def _lm(resid, jac, theta0, opts: FitOptions, project):
    """Levenberg-Marquardt on a real residual; returns (theta, cost, it, gnorm, status)."""
    theta = project(np.asarray(theta0, dtype=float))
    r = resid(theta)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise FloatingPointError("cost is not finite at the initial point")
    lam = opts.lam0
    gnorm = np.inf
    for it in range(opts.max_iter):
        Jm = jac(theta)
        g = Jm.T @ r
        gnorm = float(np.linalg.norm(g))
        if gnorm < opts.gtol:
            return theta, cost, it, gnorm, "converged"
        A = Jm.T @ Jm
        dA = np.diag(A).copy()
        dA = np.maximum(dA, 1e-12 * max(dA.max(), 1e-300))
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(dA), -g)
            except np.linalg.LinAlgError:
                if lam >= opts.lam_max:
                    raise
                lam *= 10
                continue
            cand = project(theta + step)
            try:
                rc = resid(cand)
                cc = float(rc @ rc)
            except (np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError):
                cc = np.inf
            if np.isfinite(cc) and cc < cost:
                lam = max(lam / 10, 1e-15)
                break
            lam *= 10
            if lam > opts.lam_max:
                # no decrease possible along any damped direction
                return theta, cost, it + 1, gnorm, "converged"
        done = abs(cost - cc) <= opts.rtol * max(cost, 1e-300)
        theta, r, cost = cand, rc, cc
        if done:
            return theta, cost, it + 1, gnorm, "converged"
    return theta, cost, opts.max_iter, gnorm, "max_iter"


def fit_iterative(gms_hat, cov, structure: ModelStructure, theta_init, omegas,
                  options: FitOptions | None = None) -> FitResult:
    """Minimize the weighted FRF cost with damped Gauss-Newton and multistart.

    Start 0 is ``theta_init``; the remaining ``multistart - 1`` starts are
    seeded Gaussian perturbations with relative scale ``perturbation``.
    """
    opts = options or FitOptions()
    omegas = np.asarray(omegas, dtype=float)
    G = np.asarray(gms_hat)
    W = Whitener(cov)
    target = W(_vec(G))

    def resid(th):
        r = target - W(structure.vec(th, omegas))
        return np.concatenate([r.real, r.imag])

    def jac(th):
        Jw = -W(structure.jacobian(th, omegas))
        return np.vstack([Jw.real, Jw.imag])

    lo = -np.inf if opts.lower is None else np.asarray(opts.lower, dtype=float)
    hi = np.inf if opts.upper is None else np.asarray(opts.upper, dtype=float)

    def project(th):
        return np.clip(th, lo, hi)

    theta_init = np.asarray(theta_init, dtype=float)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([opts.seed, 0x5EED])))
    starts = [theta_init]
    for _ in range(max(opts.multistart, 1) - 1):
        scale = opts.perturbation * np.maximum(np.abs(theta_init), 1.0)
        starts.append(theta_init + scale * rng.standard_normal(theta_init.size))

    def run(th0):
        try:
            return _lm(resid, jac, th0, opts, project)
        except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError) as exc:
            return exc

    if opts.jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(opts.jobs) as ex:
            outs = list(ex.map(run, starts))
    else:
        outs = [run(s) for s in starts]
    ok = [(k, o) for k, o in enumerate(outs) if not isinstance(o, Exception)]
    if not ok:
        raise outs[0]
    best_cost = min(o[1] for _, o in ok)
    tied = [(k, o) for k, o in ok if o[1] <= best_cost * (1 + 1e-12) + 1e-300]
    k, (theta, cost, it, gnorm, status) = min(
        tied, key=lambda ko: (float(np.linalg.norm(ko[1][0])), ko[0]))
    info = {"start_index": k, "start_costs": [o[1] if not isinstance(o, Exception) else None
                                               for o in outs]}
    return FitResult(theta, cost, status, None, it, gnorm, info)


def fit_levy(gms_hat, omegas, n_D: int, n_N: int, weights=None, n_u: int | None = None,
             cov=None) -> FitResult:
    """Linearized fit minimizing ``sum ||D(is) G_hat(is) - N(is)||_W^2``.

    ``weights`` is a list of real SPD ``n_y x n_y`` matrices, one per
    nonnegative excited frequency (DC first when excited); both lines of a
    conjugate pair share a weight.  Identity weights by default.
    """
    G = np.asarray(gms_hat)
    omegas = np.asarray(omegas, dtype=float)
    n_y = G.shape[1]
    L = omegas.size
    n_u = n_u if n_u is not None else G.shape[0] // L
    dc = L % 2 == 1
    n_freq = L // 2 + int(dc)
    if weights is None:
        weights = [np.eye(n_y)] * n_freq
    if len(weights) != n_freq:
        raise ValueError(f"expected {n_freq} weight matrices, got {len(weights)}")
    sys_ = interpolation_system(G, omegas, n_u, n_D, n_N)
    P = sys_.J.shape[1]
    rows, rhs = [], []
    for b in range(L):
        f = 0 if (dc and b == 0) else (b - int(dc)) // 2 + int(dc)
        C = np.linalg.cholesky(np.atleast_2d(weights[f]))
        Jb = sys_.J[b * n_u:(b + 1) * n_u]
        rows.append(np.kron(C.T, Jb))
        rhs.append(_vec(G[b * n_u:(b + 1) * n_u] @ C))
    A = np.vstack(rows)
    y = np.concatenate(rhs)
    Ar, yr = _real_stack(A), np.concatenate([y.real, y.imag])
    sol, _, rank, _ = np.linalg.lstsq(Ar, yr, rcond=None)
    if rank < P * n_y:
        raise np.linalg.LinAlgError(f"Levy least-squares system is rank deficient ({rank} < {P * n_y})")
    structure = LmfdStructure(n_y, n_u, n_D, n_N)
    res = Ar @ sol - yr
    levy_cost = float(res @ res)
    cost = cost_ml(G, cov, structure, sol, omegas) if cov is not None else levy_cost
    return FitResult(sol, cost, "closed_form", info={"levy_cost": levy_cost})


def normal_approx_a1(a10: float, b00: float, sigma: float, alpha1: float,
                     omega1: float, N: int) -> dict:
    """Normal approximation of the time-constant estimate and its validity test."""
    var = 2 * sigma**2 * (1 + a10**2 * omega1**2) ** 3 / (N * alpha1**2 * omega1**2 * b00**2)
    re_g0 = b00 / (1 + a10**2 * omega1**2)
    crit = sigma * np.sqrt(2 / N) / (alpha1 * abs(re_g0))
    return {"mean": a10, "variance": var, "criterion_value": float(crit),
            "valid": bool(crit <= 0.1)}


def asymptotic_variance_first_order(a10: float, b00: float, sigma: float, alpha1: float,
                                    omega1: float, N: int) -> tuple[float, float]:
    w2 = (a10 * omega1) ** 2 + 1
    var_a1 = 2 * sigma**2 * w2**3 / (N * alpha1**2 * b00**2 * omega1**2)
    var_b0 = 2 * sigma**2 * w2**2 / (N * alpha1**2)
    return var_a1, var_b0
