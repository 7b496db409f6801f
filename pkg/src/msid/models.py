"""Continuous-time parametric model structures and their frequency responses.

A stacked FRF matrix holds one ``n_u x n_y`` block ``G(i s_b)^T`` per excited
line ``s_b`` (see :func:`msid.multisine.line_omegas`).  Its ``vec`` is taken
column-major, so entry ``G(i s_b)[j, a]`` sits at ``j * n_u * L + b * n_u + a``.

LMFD parameters follow the same convention: with
``Theta = [D_1, ..., D_nD, N_0, ..., N_nN]^T`` of shape ``(P, n_y)``,
``theta = vec(Theta)`` so ``theta[j * P + r] == Theta[r, j]``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .multisine import FrequencyGrid, line_omegas

__all__ = [
    "LmfdModel", "FirstOrderSiso", "ModalModel", "FrfStack", "TrueSystem",
    "ModelStructure", "LmfdStructure", "ModalStructure", "frf_lmfd",
    "frf_stack", "frf_modal", "jacobian_lmfd", "lines_to_stack",
    "stack_to_lines", "rhp_poles", "model_from_dict", "model_to_dict",
]


def lines_to_stack(G: np.ndarray) -> np.ndarray:
    """(L, n_y, n_u) per-line responses -> (L n_u, n_y) stacked matrix."""
    L, n_y, n_u = G.shape
    return np.transpose(G, (0, 2, 1)).reshape(L * n_u, n_y)


def stack_to_lines(S: np.ndarray, n_u: int) -> np.ndarray:
    """Inverse of :func:`lines_to_stack`; works on leading batch axes too."""
    *batch, rows, n_y = S.shape
    L = rows // n_u
    return np.swapaxes(S.reshape(*batch, L, n_u, n_y), -1, -2)


def _frozen_list(mats, shape) -> tuple:
    out = []
    for M in mats:
        a = np.array(M, dtype=float).reshape(shape)
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


@dataclass(frozen=True)
class LmfdModel:
    """``G(p) = D(p)^{-1} N(p)`` with ``D(p) = I + D_1 p + ... + D_nD p^nD``.

    ``D`` holds ``D_1..D_nD`` (``D_0 = I`` is implied) and ``N`` holds
    ``N_0..N_nN``.
    """

    n_y: int
    n_u: int
    D: tuple
    N: tuple

    def __post_init__(self):
        if len(self.N) == 0:
            raise ValueError("an LMFD needs at least N_0")
        object.__setattr__(self, "D", _frozen_list(self.D, (self.n_y, self.n_y)))
        object.__setattr__(self, "N", _frozen_list(self.N, (self.n_y, self.n_u)))

    @property
    def n_D(self) -> int:
        return len(self.D)

    @property
    def n_N(self) -> int:
        return len(self.N) - 1

    @property
    def structure(self) -> "LmfdStructure":
        return LmfdStructure(self.n_y, self.n_u, self.n_D, self.n_N)

    @property
    def Theta(self) -> np.ndarray:
        blocks = [d.T for d in self.D] + [n.T for n in self.N]
        return np.vstack(blocks)

    @property
    def theta(self) -> np.ndarray:
        return self.Theta.reshape(-1, order="F")

    @classmethod
    def from_theta(cls, theta, n_y, n_u, n_D, n_N) -> "LmfdModel":
        s = LmfdStructure(n_y, n_u, n_D, n_N)
        return s.model(theta)

    def D_at(self, s: complex) -> np.ndarray:
        out = np.eye(self.n_y, dtype=complex)
        for d, Dd in enumerate(self.D, start=1):
            out = out + Dd * s**d
        return out

    def N_at(self, s: complex) -> np.ndarray:
        return sum(Ne * s**e for e, Ne in enumerate(self.N)).astype(complex)

    def frf(self, omega: float) -> np.ndarray:
        return frf_lmfd(self, omega)


def frf_lmfd(model: LmfdModel, omega: float) -> np.ndarray:
    s = 1j * float(omega)
    D = model.D_at(s)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(D, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError(f"D(i*omega) not usable at omega={omega}") from exc
    if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * max(1.0, np.abs(D).max())):
        raise np.linalg.LinAlgError(f"D(i*omega) is singular at omega={omega}")
    return scipy.linalg.lu_solve(lu, model.N_at(s))


@dataclass(frozen=True)
class FirstOrderSiso:
    """``(b0 + b1 p) / (a1 p + 1)``; ``b1 = None`` for the strictly proper form."""

    a1: float
    b0: float
    b1: float | None = None

    def to_lmfd(self) -> LmfdModel:
        N = [[[self.b0]]] + ([[[self.b1]]] if self.b1 is not None else [])
        return LmfdModel(1, 1, ([[self.a1]],), tuple(N))

    @property
    def theta(self) -> np.ndarray:
        return self.to_lmfd().theta

    @property
    def stable(self) -> bool:
        return self.a1 > 0

    def frf(self, omega: float) -> complex:
        s = 1j * omega
        return (self.b0 + (self.b1 or 0.0) * s) / (self.a1 * s + 1)


@dataclass(frozen=True)
class ModalModel:
    """Sum of second-order terms ``phi_l phi_r^T / (a2 p^2 + a1 p + 1)``.

    ``phi_l`` is (n, n_y), ``phi_r`` is (n, n_u), ``a1`` and ``a2`` are (n,).
    A vanishing ``a2`` turns a term into a first-order one.
    """

    phi_l: np.ndarray
    phi_r: np.ndarray
    a1: np.ndarray
    a2: np.ndarray

    def __post_init__(self):
        for name in ("phi_l", "phi_r"):
            a = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        for name in ("a1", "a2"):
            a = np.atleast_1d(np.array(getattr(self, name), dtype=float))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        n = self.a1.size
        if not (self.phi_l.shape[0] == self.phi_r.shape[0] == self.a2.size == n):
            raise ValueError("modal term counts do not match")
        if np.any(self.a1 < 0) or np.any(self.a2 < 0):
            raise ValueError("modal coefficients a1, a2 must be nonnegative")

    @property
    def n_y(self) -> int:
        return self.phi_l.shape[1]

    @property
    def n_u(self) -> int:
        return self.phi_r.shape[1]

    def frf(self, omega: float) -> np.ndarray:
        return frf_modal(self, omega)


def frf_modal(model: ModalModel, omega: float) -> np.ndarray:
    den = -model.a2 * omega**2 + 1j * model.a1 * omega + 1
    if np.any(np.abs(den) < 1e-14):
        raise ZeroDivisionError(f"modal denominator vanishes at omega={omega}")
    return np.einsum("k,ki,kj->ij", 1.0 / den, model.phi_l, model.phi_r)


@dataclass(frozen=True)
class FrfStack:
    matrix: np.ndarray
    grid: FrequencyGrid
    dc: bool = True

    @property
    def omegas(self) -> np.ndarray:
        return line_omegas(self.grid, self.dc)

    def block(self, b: int) -> np.ndarray:
        """``G(i s_b)`` as an (n_y, n_u) matrix."""
        n_u = self.matrix.shape[0] // self.omegas.size
        return self.matrix[b * n_u:(b + 1) * n_u].T


def _frf_fn(model) -> Callable[[float], np.ndarray]:
    if isinstance(model, LmfdModel):
        return lambda w: frf_lmfd(model, w)
    if isinstance(model, ModalModel):
        return lambda w: frf_modal(model, w)
    if isinstance(model, FirstOrderSiso):
        return lambda w: np.array([[model.frf(w)]])
    if isinstance(model, TrueSystem):
        return model.frf
    raise TypeError(f"unsupported model type {type(model).__name__}")


def frf_stack(model, grid: FrequencyGrid, dc: bool = True) -> FrfStack:
    f = _frf_fn(model)
    G = np.array([np.atleast_2d(f(w)) for w in line_omegas(grid, dc)], dtype=complex)
    return FrfStack(lines_to_stack(G), grid, dc)


@dataclass(frozen=True)
class TrueSystem:
    """FRF oracle of the true system.

    Either wraps a model (``LmfdModel``, ``ModalModel``, ``FirstOrderSiso``)
    or a table ``{omega: G}`` of responses at nonnegative frequencies; negative
    frequencies are served by conjugation.
    """

    source: object

    def frf(self, omega: float) -> np.ndarray:
        if isinstance(self.source, dict):
            key = abs(float(omega))
            for w, G in self.source.items():
                if abs(float(w) - key) <= 1e-12 * max(1.0, key):
                    G = np.atleast_2d(np.asarray(G, dtype=complex))
                    return G if omega >= 0 else G.conj()
            raise KeyError(f"no tabulated response at omega={omega}")
        return np.atleast_2d(_frf_fn(self.source)(omega))

    def lines(self, omegas: Sequence[float]) -> np.ndarray:
        return np.array([self.frf(w) for w in omegas])


def jacobian_lmfd(model: LmfdModel, grid: FrequencyGrid | np.ndarray,
                  dc: bool = True) -> np.ndarray:
    """Analytic ``d vec(stack) / d theta^T`` of shape (n_y n_u L, n_theta).

    ``grid`` may also be an array of signed line frequencies.
    """
    omegas = line_omegas(grid, dc) if isinstance(grid, FrequencyGrid) else np.asarray(grid)
    n_y, n_u, n_D, n_N = model.n_y, model.n_u, model.n_D, model.n_N
    L = omegas.size
    s = 1j * omegas
    Dinv = np.empty((L, n_y, n_y), dtype=complex)
    G = np.empty((L, n_y, n_u), dtype=complex)
    eye = np.eye(n_y)
    for b, w in enumerate(omegas):
        D = model.D_at(s[b])
        try:
            Dinv[b] = np.linalg.solve(D, eye)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"D(i*omega) is singular at omega={w}") from exc
        G[b] = Dinv[b] @ model.N_at(s[b])
    P = n_D * n_y + (n_N + 1) * n_u
    J = np.zeros((n_y, L, n_u, n_y, P), dtype=complex)
    if n_D:
        sp = s[:, None] ** np.arange(1, n_D + 1)
        JD = -np.einsum("bd,bJj,bca->Jbajdc", sp, Dinv, G)
        J[..., : n_D * n_y] = JD.reshape(n_y, L, n_u, n_y, n_D * n_y)
    sp = s[:, None] ** np.arange(n_N + 1)
    JN = np.einsum("be,bJj,aA->JbajeA", sp, Dinv, np.eye(n_u))
    J[..., n_D * n_y:] = JN.reshape(n_y, L, n_u, n_y, (n_N + 1) * n_u)
    return J.reshape(n_y * L * n_u, n_y * P)


class ModelStructure:
    """Parametric structure ``theta -> G(., theta)``.

    Subclasses implement :meth:`lines`; the Jacobian defaults to central
    finite differences with relative step ``1e-6``.
    """

    n_y: int
    n_u: int
    n_theta: int

    def lines(self, theta, omegas) -> np.ndarray:
        """Responses at ``omegas`` as an (L, n_y, n_u) array."""
        raise NotImplementedError

    def stack(self, theta, omegas) -> np.ndarray:
        return lines_to_stack(self.lines(theta, omegas))

    def vec(self, theta, omegas) -> np.ndarray:
        return self.stack(theta, omegas).reshape(-1, order="F")

    def jacobian(self, theta, omegas) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        cols = []
        for q in range(theta.size):
            step = 1e-6 * max(1.0, abs(theta[q]))
            tp, tm = theta.copy(), theta.copy()
            tp[q] += step
            tm[q] -= step
            cols.append((self.vec(tp, omegas) - self.vec(tm, omegas)) / (2 * step))
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class LmfdStructure(ModelStructure):
    n_y: int
    n_u: int
    n_D: int
    n_N: int

    @property
    def P(self) -> int:
        return self.n_D * self.n_y + (self.n_N + 1) * self.n_u

    @property
    def n_theta(self) -> int:
        return self.n_y * self.P

    def model(self, theta) -> LmfdModel:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_theta:
            raise ValueError(f"expected {self.n_theta} parameters, got {theta.size}")
        Theta = theta.reshape(self.P, self.n_y, order="F")
        ny, nu = self.n_y, self.n_u
        D = [Theta[d * ny:(d + 1) * ny].T for d in range(self.n_D)]
        off = self.n_D * ny
        N = [Theta[off + e * nu: off + (e + 1) * nu].T for e in range(self.n_N + 1)]
        return LmfdModel(ny, nu, tuple(D), tuple(N))

    def lines(self, theta, omegas) -> np.ndarray:
        m = self.model(theta)
        return np.array([frf_lmfd(m, w) for w in np.asarray(omegas)])

    def jacobian(self, theta, omegas) -> np.ndarray:
        return jacobian_lmfd(self.model(theta), np.asarray(omegas))


@dataclass(frozen=True)
class ModalStructure(ModelStructure):
    """Parameters per term: ``phi_l`` (n_y), ``phi_r`` (n_u), ``a1``, ``a2``."""

    n_y: int
    n_u: int
    n_terms: int

    @property
    def n_theta(self) -> int:
        return self.n_terms * (self.n_y + self.n_u + 2)

    def model(self, theta) -> ModalModel:
        t = np.asarray(theta, dtype=float).reshape(self.n_terms, -1)
        ny, nu = self.n_y, self.n_u
        return ModalModel(t[:, :ny], t[:, ny:ny + nu], t[:, ny + nu], t[:, ny + nu + 1])

    def lines(self, theta, omegas) -> np.ndarray:
        m = self.model(theta)
        return np.array([frf_modal(m, w) for w in np.asarray(omegas)])


def rhp_poles(model: LmfdModel, tol: float = 0.0) -> np.ndarray:
    """Roots of ``det D(p)`` with real part above ``tol``.

    Uses the block companion pencil of the matrix polynomial; infinite
    eigenvalues (singular leading coefficient) are discarded.
    """
    n, ny = model.n_D, model.n_y
    if n == 0:
        return np.array([], dtype=complex)
    coeffs = [np.eye(ny)] + list(model.D)
    A = np.zeros((n * ny, n * ny))
    B = np.eye(n * ny)
    A[:-ny, ny:] = np.eye((n - 1) * ny)
    for k in range(n):
        A[-ny:, k * ny:(k + 1) * ny] = -coeffs[k]
    B[-ny:, -ny:] = coeffs[n]
    ev = scipy.linalg.eigvals(A, B)
    ev = ev[np.isfinite(ev)]
    return ev[ev.real > tol]


def model_from_dict(d: dict) -> LmfdModel:
    n_y, n_u = int(d["n_y"]), int(d["n_u"])
    return LmfdModel(n_y, n_u, tuple(d.get("D", [])), tuple(d["N"]))


def model_to_dict(model: LmfdModel) -> dict:
    return {"n_y": model.n_y, "n_u": model.n_u,
            "D": [D.tolist() for D in model.D],
            "N": [N.tolist() for N in model.N]}
