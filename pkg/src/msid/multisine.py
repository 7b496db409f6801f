"""Multisine excitation designs and the experimental-condition checks.

Every complex quantity in the package is stacked over the excited lines in the
fixed order ``(0, -w_1, +w_1, ..., -w_M, +w_M)``.  When all offsets of a
design are zero the DC line is not excited and is dropped from the stack, so
the number of lines is ``2M + 1`` or ``2M``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "FrequencyGrid", "ExcitationDesign", "AmplitudeMatrices",
    "AssumptionReport", "line_omegas", "eval_input", "phi_vector",
    "gamma_tilde", "amplitude_matrices", "check_assumption1",
    "check_assumption2", "check_assumption2_exact", "check_assumption3",
    "check_assumption3_exact", "mutual_coherence", "random_design",
    "design_from_dict", "design_to_dict",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly ascending positive angular frequencies (rad/s)."""

    frequencies: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.frequencies, dtype=float)).ravel()
        if w.size and (np.any(~np.isfinite(w)) or np.any(w <= 0)):
            raise ValueError("frequencies must be finite and strictly positive")
        if np.any(np.diff(w) <= 0):
            raise ValueError("frequencies must be strictly ascending")
        object.__setattr__(self, "frequencies", _frozen(w))

    @property
    def M(self) -> int:
        return int(self.frequencies.size)

    def __eq__(self, other):
        return (isinstance(other, FrequencyGrid)
                and self.frequencies.shape == other.frequencies.shape
                and np.array_equal(self.frequencies, other.frequencies))

    def __hash__(self):
        return hash(self.frequencies.tobytes())


def line_omegas(grid: FrequencyGrid, dc: bool = True) -> np.ndarray:
    """Signed angular frequency of every stacked line, e.g. ``[0, -w1, w1]``."""
    w = grid.frequencies
    signed = np.empty(2 * w.size)
    signed[0::2] = -w
    signed[1::2] = w
    return np.concatenate([[0.0], signed]) if dc else signed


@dataclass(frozen=True)
class ExcitationDesign:
    """Complete description of ``m`` multisine experiments.

    Shapes: ``offsets`` (m, n_u), ``amplitudes`` and ``phases`` (m, M, n_u).
    """

    grid: FrequencyGrid
    offsets: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    h: float

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        m, n_u = off.shape
        M = self.grid.M
        amp = np.asarray(self.amplitudes, dtype=float).reshape(m, M, n_u)
        ph = np.asarray(self.phases, dtype=float).reshape(m, M, n_u)
        if m < n_u:
            raise ValueError(f"need m >= n_u experiments, got m={m}, n_u={n_u}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError("sampling period h must be positive")
        for name, a in (("offsets", off), ("amplitudes", amp), ("phases", ph)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "offsets", _frozen(off))
        object.__setattr__(self, "amplitudes", _frozen(amp))
        object.__setattr__(self, "phases", _frozen(ph))
        object.__setattr__(self, "h", float(self.h))

    @property
    def m(self) -> int:
        return self.offsets.shape[0]

    @property
    def n_u(self) -> int:
        return self.offsets.shape[1]

    @property
    def M(self) -> int:
        return self.grid.M

    @property
    def dc(self) -> bool:
        """Whether the DC line is excited (some offset is nonzero)."""
        return bool(np.any(self.offsets != 0)) or self.M == 0

    @property
    def omegas(self) -> np.ndarray:
        return line_omegas(self.grid, self.dc)

    @property
    def n_lines(self) -> int:
        return 2 * self.M + int(self.dc)

    def phasors(self) -> np.ndarray:
        """Complex line amplitudes ``c`` with ``u_i(t) = sum_b c_ib exp(i s_b t)``.

        Shape (m, n_lines, n_u).
        """
        half = 0.5 * self.amplitudes * np.exp(1j * self.phases)
        c = np.empty((self.m, 2 * self.M, self.n_u), dtype=complex)
        c[:, 0::2] = np.conj(half)
        c[:, 1::2] = half
        if self.dc:
            c = np.concatenate([self.offsets[:, None, :].astype(complex), c], axis=1)
        return c


@dataclass(frozen=True)
class AmplitudeMatrices:
    """``A0`` real (m, n_u) and ``A[l-1]`` complex (m, n_u) for l = 1..M."""

    A0: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A0", _frozen(self.A0))
        object.__setattr__(self, "A", _frozen(self.A, complex))

    @property
    def M(self) -> int:
        return self.A.shape[0]

    def get(self, l: int) -> np.ndarray:
        return self.A0 if l == 0 else self.A[l - 1]

    def gram(self, l: int) -> np.ndarray:
        """``A_l^H A_l``; for l = 0 this is ``A0^T A0``."""
        a = self.get(l)
        return a.conj().T @ a


@dataclass
class AssumptionReport:
    holds: bool
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.holds


def eval_input(design: ExcitationDesign, i: int, t) -> np.ndarray:
    """Input of experiment ``i`` (0-based) at time(s) ``t``; shape (..., n_u)."""
    if not 0 <= i < design.m:
        raise IndexError(f"experiment index {i} out of range for m={design.m}")
    t = np.asarray(t, dtype=float)[..., None, None]
    w = design.grid.frequencies[:, None]
    u = design.offsets[i] + np.sum(
        design.amplitudes[i] * np.cos(w * t + design.phases[i]), axis=-2)
    return u


def phi_vector(grid: FrequencyGrid, tau, dc: bool = True) -> np.ndarray:
    """``[1, e^{-i w1 tau}, e^{i w1 tau}, ...]``; broadcasts over ``tau``."""
    tau = np.asarray(tau, dtype=float)[..., None]
    return np.exp(1j * line_omegas(grid, dc) * tau)


def gamma_tilde(grid: FrequencyGrid, h: float, dc: bool = True) -> np.ndarray:
    """Vandermonde matrix whose row k is ``phi_vector(grid, k h)``."""
    L = 2 * grid.M + int(dc)
    return phi_vector(grid, h * np.arange(L), dc)


def amplitude_matrices(design: ExcitationDesign) -> AmplitudeMatrices:
    A = 0.5 * design.amplitudes * np.exp(1j * design.phases)
    return AmplitudeMatrices(design.offsets, np.moveaxis(A, 1, 0))


def check_assumption1(design: ExcitationDesign, tol: float = 1e-10) -> AssumptionReport:
    """Full column rank of every amplitude matrix (relative SVD tolerance).

    If every offset is zero the DC line is simply not excited: the rank
    failure of ``A0`` is reported but does not make the check fail.
    """
    am = amplitude_matrices(design)
    smin, ok = [], []
    for l in range(design.M + 1):
        s = np.linalg.svd(am.get(l), compute_uv=False)
        smin.append(float(s[-1]))
        ok.append(bool(s[0] > 0 and s[-1] > tol * s[0]))
    dc_excited = bool(np.any(design.offsets != 0))
    relevant = ok if (dc_excited or design.M == 0) else ok[1:]
    details = {"min_singular_values": smin, "full_rank": ok,
               "dc_excited": dc_excited}
    if not dc_excited and design.M > 0:
        details["note"] = "all offsets are zero; DC line excluded from estimation"
    return AssumptionReport(all(relevant), details)


def check_assumption2(grid: FrequencyGrid, h: float, tol: float = 1e-9) -> AssumptionReport:
    """No two excited lines coincide after sampling with period ``h``."""
    w = grid.frequencies
    pairs, lines = [], []
    for a in range(w.size):
        if abs(np.exp(2j * w[a] * h) - 1) <= tol:
            lines.append(float(w[a]))
        for b in range(a):
            for sign, label in ((+1, "+"), (-1, "-")):
                if abs(np.exp(1j * (w[a] + sign * w[b]) * h) - 1) <= tol:
                    pairs.append((float(w[a]), float(w[b]), label))
    return AssumptionReport(not pairs and not lines,
                            {"violating_pairs": pairs, "violating_lines": lines})


def _is_int(x: Fraction) -> bool:
    return x.denominator == 1


def check_assumption2_exact(ratios: Sequence) -> AssumptionReport:
    """Exact version of the overlap check given ``r_l = w_l h / pi`` as rationals."""
    r = [Fraction(x) for x in ratios]
    pairs, lines = [], []
    for a in range(len(r)):
        if _is_int(r[a]):
            lines.append(str(r[a]))
        for b in range(a):
            for v, label in ((r[a] + r[b], "+"), (r[a] - r[b], "-")):
                if _is_int(v / 2):
                    pairs.append((str(r[a]), str(r[b]), label))
    return AssumptionReport(not pairs and not lines,
                            {"violating_pairs": pairs, "violating_lines": lines})


def check_assumption3(grid: FrequencyGrid, h: float, N: int,
                      tol: float = 1e-9) -> AssumptionReport:
    """The record holds an integer number of periods of every line."""
    if N < 1:
        raise ValueError("N must be >= 1")
    cycles = N * h * grid.frequencies / (2 * np.pi)
    frac = np.abs(cycles - np.round(cycles))
    return AssumptionReport(bool(np.all(frac <= tol)),
                            {"cycles": cycles.tolist(), "fractional_parts": frac.tolist()})


def check_assumption3_exact(ratios: Sequence, N: int) -> AssumptionReport:
    r = [Fraction(x) for x in ratios]
    cycles = [N * x / 2 for x in r]
    return AssumptionReport(all(_is_int(c) for c in cycles),
                            {"cycles": [str(c) for c in cycles]})


def mutual_coherence(A: AmplitudeMatrices | np.ndarray, l: int | None = None) -> float:
    """Largest normalized inner product between distinct columns of ``A_l``."""
    a = A.get(l) if isinstance(A, AmplitudeMatrices) else np.asarray(A)
    norms = np.linalg.norm(a, axis=0)
    if np.any(norms == 0):
        raise ValueError("amplitude matrix has a zero column")
    if a.shape[1] < 2:
        return 0.0
    g = np.abs(a.conj().T @ a) / np.outer(norms, norms)
    np.fill_diagonal(g, 0.0)
    return float(min(g.max(), 1.0))


def random_design(grid: FrequencyGrid, m: int, n_u: int, h: float,
                  scale: float = 1.0, seed=None) -> ExcitationDesign:
    """Design meeting the sufficient conditions for input independence.

    Offsets are Gaussian and redrawn until full column rank, amplitudes are
    uniform in ``[0.5, 1.5] * scale`` and phases uniform on ``[0, 2 pi)``.
    """
    if m < n_u:
        raise ValueError("need m >= n_u")
    rng = np.random.default_rng(seed)
    while True:
        off = scale * rng.standard_normal((m, n_u))
        if np.linalg.matrix_rank(off) == n_u:
            break
    amp = scale * rng.uniform(0.5, 1.5, (m, grid.M, n_u))
    ph = rng.uniform(0.0, 2 * np.pi, (m, grid.M, n_u))
    return ExcitationDesign(grid, off, amp, ph, h)


def design_from_dict(d: dict) -> ExcitationDesign:
    """Build a design from its JSON document form."""
    grid = FrequencyGrid(np.asarray(d.get("frequencies_rad_s", []), dtype=float))
    exps = d["experiments"]
    M = grid.M
    n_u = len(exps[0]["offset"])
    off = [e["offset"] for e in exps]
    if M:
        amp = [e["amplitudes"] for e in exps]
        ph = [e.get("phases", np.zeros((M, n_u)).tolist()) for e in exps]
    else:
        amp = np.zeros((len(exps), 0, n_u))
        ph = np.zeros((len(exps), 0, n_u))
    return ExcitationDesign(grid, off, amp, ph, float(d["h"]))


def design_to_dict(design: ExcitationDesign) -> dict:
    return {
        "frequencies_rad_s": design.grid.frequencies.tolist(),
        "h": design.h,
        "experiments": [
            {"offset": design.offsets[i].tolist(),
             "amplitudes": design.amplitudes[i].tolist(),
             "phases": design.phases[i].tolist()}
            for i in range(design.m)
        ],
    }


def exact_ratios(d: dict, design: ExcitationDesign) -> list[Fraction]:
    """``w_l h / pi`` as rationals, from the document or recovered from floats."""
    if "omega_h_over_pi" in d:
        return [Fraction(str(x)) for x in d["omega_h_over_pi"]]
    warnings.warn("no 'omega_h_over_pi' in design; recovering rationals from floats")
    return [Fraction(float(x)).limit_denominator(10**6)
            for x in design.grid.frequencies * design.h / np.pi]
