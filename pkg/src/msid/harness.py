"""Monte Carlo drivers for the first-order case study and FRF statistics.

Every run draws its noise from its own Philox stream keyed on
``(seed, crc32(scenario), N, run)``, and every per-run computation is done on
that run alone, so outputs are byte-identical for any ``jobs`` setting.
"""
from __future__ import annotations

import csv
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import BoundInputs, bi_lipschitz_check, frf_bound, frf_mse_bound, theta_bound
from .fit import FitOptions, fit_first_order, fit_iterative, normal_approx_a1
from .frf import LsOperator, covariance, real_covariance
from .io import InputError, read_json, validate, write_json
from .models import LmfdModel, LmfdStructure, frf_stack, model_from_dict
from .multisine import (ExcitationDesign, amplitude_matrices, check_assumption3,
                        design_from_dict)
from .simulator import zeta

__all__ = [
    "ExperimentConfig", "load_config", "run_seed", "mc_histogram_a1",
    "mc_bounds_sweep", "mc_frf_statistics", "histogram_edges", "run_scenario",
]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    design: ExcitationDesign
    system: LmfdModel
    sigma: np.ndarray
    N: tuple
    runs: int
    seed: int = 0
    delta: float = 0.1
    beta: float = 0.8
    out: Path = Path(".")
    jobs: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("run count must be >= 1")


def load_config(source, seed: int | None = None, full: bool = False, out=".",
                jobs: int = 1, runs: int | None = None) -> ExperimentConfig:
    """Build a config from a JSON file path or an already parsed dict.

    Seed precedence: explicit argument, then ``MSID_SEED``, then the
    config's ``seed`` key, then 0.
    """
    if isinstance(source, dict):
        doc = source
        validate(doc, "config", "<config>")
    else:
        doc = read_json(source, "config")
    if seed is None:
        env = os.environ.get("MSID_SEED")
        if env is not None:
            try:
                seed = int(env)
            except ValueError:
                raise InputError(f"MSID_SEED is not an integer: {env!r}") from None
        else:
            seed = int(doc.get("seed", 0))
    try:
        design = design_from_dict(doc["design"])
    except (ValueError, KeyError, IndexError) as exc:
        raise InputError(f"$.design: {exc}") from None
    try:
        system = model_from_dict(doc["system"])
    except (ValueError, KeyError) as exc:
        raise InputError(f"$.system: {exc}") from None
    n = runs if runs is not None else (doc.get("runs_full", doc["runs"]) if full else doc["runs"])
    opts = {k: doc[k] for k in ("histogram", "fit") if k in doc}
    return ExperimentConfig(doc["scenario"], design, system,
                            np.atleast_2d(np.asarray(doc["sigma"], dtype=float)),
                            tuple(sorted(int(x) for x in doc["N"])), int(n), int(seed),
                            float(doc.get("delta", 0.1)), float(doc.get("beta", 0.8)),
                            Path(out), int(jobs), opts)


def run_seed(seed: int, scenario: str, N: int, run: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(scenario.encode()), int(N), int(run)])


def _rng(cfg: ExperimentConfig, N: int, run: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(run_seed(cfg.seed, cfg.scenario, N, run)))


def _parallel(fn, n: int, jobs: int) -> list:
    if jobs <= 1 or n < 2:
        return [fn(r) for r in range(n)]
    chunks = np.array_split(np.arange(n), min(jobs * 4, n))

    def work(idx):
        return [fn(int(r)) for r in idx]

    with ThreadPoolExecutor(jobs) as ex:
        parts = list(ex.map(work, chunks))
    return [x for p in parts for x in p]


def _noiseless(cfg: ExperimentConfig, N: int) -> np.ndarray:
    d = cfg.design
    G = frf_stack(cfg.system, d.grid, d.dc).matrix
    t = d.h * np.arange(1, N + 1)
    return np.stack([(zeta(d, i, t) @ G.conj()).real for i in range(d.m)])


def _check_a3(cfg: ExperimentConfig, N: int) -> None:
    rep = check_assumption3(cfg.design.grid, cfg.design.h, N)
    if not rep.holds:
        raise ValueError(f"N={N} does not hold whole periods of every line: "
                         f"{rep.details['cycles']}")


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def histogram_edges(x: np.ndarray, fallback_bins: int = 80, max_bins: int = 2000) -> np.ndarray:
    """Freedman-Diaconis edges, or ``fallback_bins`` equal bins when the rule
    degenerates (zero spread) or asks for more than ``max_bins`` bins."""
    x = np.sort(np.asarray(x, dtype=float))
    q75, q25 = np.percentile(x, [75, 25])
    span = x[-1] - x[0]
    if q75 > q25 and span > 0:
        width = 2 * (q75 - q25) / np.cbrt(x.size)
        nb = int(np.ceil(span / width))
        if 1 <= nb <= max_bins:
            return np.histogram_bin_edges(x, bins="fd")
    if span == 0:
        return np.linspace(x[0] - 0.5, x[0] + 0.5, fallback_bins + 1)
    return np.linspace(x[0], x[-1], fallback_bins + 1)


def _first_order_truth(cfg: ExperimentConfig) -> tuple[float, float]:
    m = cfg.system
    if (m.n_y, m.n_u, m.n_D, m.n_N) != (1, 1, 1, 0):
        raise ValueError("scenario requires a first-order SISO system b0 / (a1 p + 1)")
    return float(m.D[0][0, 0]), float(m.N[0][0, 0])


def mc_histogram_a1(cfg: ExperimentConfig) -> dict:
    """Distribution of the closed-form time-constant estimate from one sinusoid."""
    d = cfg.design
    if cfg.scenario != "fig2" or d.M != 1 or d.dc or d.m != 1 or d.n_u != 1:
        raise ValueError("fig2 needs a single-experiment, single-sinusoid design without offset")
    a10, b00 = _first_order_truth(cfg)
    sig = float(np.sqrt(cfg.sigma[0, 0]))
    omega = float(d.grid.frequencies[0])
    alpha = float(d.amplitudes[0, 0, 0])
    hopt = cfg.options.get("histogram", {})
    rows = []
    for N in cfg.N:
        _check_a3(cfg, N)
        op = LsOperator(d, N)
        x = _noiseless(cfg, N)
        b = 1  # +omega line when DC is not excited

        def one(r, N=N, op=op, x=x):
            y = x + sig * _rng(cfg, N, r).standard_normal(x.shape)
            g = op.gms(y)[b, 0]
            return fit_first_order(g, omega)[0]

        a1 = np.array(_parallel(one, cfg.runs, cfg.jobs))
        edges = histogram_edges(a1, hopt.get("fallback_bins", 80), hopt.get("max_bins", 2000))
        counts, _ = np.histogram(a1, edges)
        dens = counts / (a1.size * np.diff(edges))
        na = normal_approx_a1(a10, b00, sig, alpha, omega, N)
        centers = 0.5 * (edges[:-1] + edges[1:])
        pdf = np.exp(-0.5 * (centers - na["mean"]) ** 2 / na["variance"]) / np.sqrt(2 * np.pi * na["variance"])
        hist_name, over_name = f"hist_a1_N{N}.csv", f"overlay_a1_N{N}.csv"
        _write_csv(cfg.out / hist_name, ["bin_left", "bin_right", "count", "density"],
                   [(float(edges[k]), float(edges[k + 1]), int(counts[k]), float(dens[k]))
                    for k in range(counts.size)])
        _write_csv(cfg.out / over_name, ["a1", "normal_density", "empirical_density"],
                   [(float(centers[k]), float(pdf[k]), float(dens[k])) for k in range(counts.size)])
        rows.append({"N": N, "runs": cfg.runs, "mean_a1": float(a1.mean()),
                     "std_a1": float(a1.std(ddof=1)),
                     "predicted_std_a1": float(np.sqrt(na["variance"])),
                     "criterion_value": na["criterion_value"],
                     "normal_approx_valid": na["valid"], "bins": int(counts.size),
                     "histogram_file": hist_name, "overlay_file": over_name})
    summary = {"scenario": "fig2", "seed": cfg.seed, "runs": cfg.runs, "rows": rows}
    write_json(cfg.out / "summary_fig2.json", summary, "fig2_summary")
    return summary


FIG3_COLUMNS = [
    "N", "runs", "empirical_quantile_90_frf", "empirical_quantile_90_theta",
    "theoretical_frf_bound", "theoretical_theta_bound", "mean_a1", "std_a1",
    "mean_b0", "std_b0", "conditioning_event_frequency", "frf_violation_rate",
    "mse_empirical", "mse_bound",
]


def mc_bounds_sweep(cfg: ExperimentConfig) -> dict:
    """Empirical versus theoretical 90% radii over the configured sample sizes.

    The fit starts from ``theta_0`` scaled by ``1 + p * z`` with ``z``
    standard normal drawn from the run's stream and ``p`` the configured
    ``init_perturbation`` (0.1 by default).
    """
    d = cfg.design
    fopt = cfg.options.get("fit", {})
    m = cfg.system
    structure = LmfdStructure(m.n_y, m.n_u, fopt.get("n_D", m.n_D), fopt.get("n_N", m.n_N))
    theta0 = m.theta
    if theta0.size != structure.n_theta:
        raise ValueError("true system does not belong to the fitted structure")
    pert = float(fopt.get("init_perturbation", 0.1))
    opts = FitOptions(multistart=int(fopt.get("multistart", 1)))
    omegas = d.omegas
    G0 = structure.stack(theta0, omegas)
    A = amplitude_matrices(d)
    chol = np.linalg.cholesky(cfg.sigma)
    J0 = structure.jacobian(theta0, omegas)
    smin = float(np.linalg.svd(J0, compute_uv=False)[-1])
    rows = []
    for N in cfg.N:
        _check_a3(cfg, N)
        op = LsOperator(d, N)
        x = _noiseless(cfg, N)
        est0 = op.estimate(x, cfg.sigma)
        cov = covariance(est0)

        def one(r, N=N, op=op, x=x, cov=cov):
            rng = _rng(cfg, N, r)
            y = x + rng.standard_normal(x.shape) @ chol.T
            G = op.gms(y)
            init = theta0 * (1 + pert * rng.standard_normal(theta0.size))
            res = fit_iterative(G, cov, structure, init, omegas, opts)
            Gt = structure.stack(res.theta_hat, omegas)
            bl = bi_lipschitz_check(structure, theta0, res.theta_hat, cfg.beta, omegas)
            return (float(np.linalg.norm(Gt - G0)), float(np.linalg.norm(res.theta_hat - theta0)),
                    bl["in_ball"], res.theta_hat)

        out = _parallel(one, cfg.runs, cfg.jobs)
        e_frf = np.array([o[0] for o in out])
        e_th = np.array([o[1] for o in out])
        ball = np.array([o[2] for o in out])
        th = np.array([o[3] for o in out])
        bi = BoundInputs(cfg.sigma, A, N, m.n_y, cfg.delta, smin, cfg.beta)
        fb = frf_bound(bi)
        rows.append({
            "N": N, "runs": cfg.runs,
            "empirical_quantile_90_frf": float(np.quantile(np.sort(e_frf), 0.9)),
            "empirical_quantile_90_theta": float(np.quantile(np.sort(e_th[ball]), 0.9)) if ball.any() else None,
            "theoretical_frf_bound": fb, "theoretical_theta_bound": theta_bound(bi),
            "mean_a1": float(th[:, 0].mean()), "std_a1": float(th[:, 0].std(ddof=1)),
            "mean_b0": float(th[:, 1].mean()), "std_b0": float(th[:, 1].std(ddof=1)),
            "conditioning_event_frequency": float(ball.mean()),
            "frf_violation_rate": float(np.mean(e_frf > fb)),
            "mse_empirical": float(np.mean(e_frf**2)), "mse_bound": frf_mse_bound(bi),
        })
    _write_csv(cfg.out / "mc_bounds_fig3.csv", FIG3_COLUMNS,
               [["" if row[c] is None else row[c] for c in FIG3_COLUMNS] for row in rows])
    summary = {"scenario": "fig3", "seed": cfg.seed, "runs": cfg.runs, "delta": cfg.delta,
               "beta": cfg.beta, "rows": rows, "summary_file": "mc_bounds_fig3.csv"}
    write_json(cfg.out / "summary_fig3.json", summary, "fig3_summary")
    return summary


def mc_frf_statistics(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Empirical bias and covariance of the stacked estimate versus theory."""
    d = cfg.design
    N = cfg.N[0]
    op = LsOperator(d, N)
    x = _noiseless(cfg, N)
    chol = np.linalg.cholesky(cfg.sigma)
    est0 = op.estimate(x, cfg.sigma)
    G0 = est0.gms_hat
    C = covariance(est0)

    def one(r):
        y = x + _rng(cfg, N, r).standard_normal(x.shape) @ chol.T
        return op.gms(y).reshape(-1, order="F")

    V = np.array(_parallel(one, cfg.runs, cfg.jobs))
    R = V.shape[0]
    v0 = G0.reshape(-1, order="F")
    mean = V.mean(axis=0)
    D = V - mean
    C_emp = D.T @ D.conj() / (R - 1)
    # standardized bias per real coordinate
    Rc = real_covariance(est0, C)
    sd = np.sqrt(np.maximum(np.diag(Rc), 0.0))
    bias = np.concatenate([(mean - v0).real, (mean - v0).imag])
    keep = sd > 1e-12 * max(sd.max(), 1e-300)
    std_bias = np.abs(bias[keep]) / (sd[keep] / np.sqrt(R))
    cov_err = float(np.linalg.norm(C_emp - C) / np.linalg.norm(C))
    # cross-covariance between distinct nonnegative lines in real coordinates
    L, n_u, n_y = est0.n_lines, est0.n_u, est0.n_y
    dc = int(d.dc)
    line_of = np.tile(np.repeat(np.arange(L), n_u), n_y)
    freq = np.array([0 if (dc and b == 0) else (b - dc) // 2 + 1 for b in range(L)])
    positive = np.array([bool(dc and b == 0) or (b - dc) % 2 == 1 for b in range(L)])
    sel = np.flatnonzero(positive[line_of])
    X = np.concatenate([V[:, sel].real, V[:, sel].imag], axis=1)
    f = np.tile(freq[line_of][sel], 2)
    Xc = X - X.mean(axis=0)
    Ce = Xc.T @ Xc / (R - 1)
    var = np.diag(Ce)
    worst = 0.0
    for p in range(X.shape[1]):
        for q in range(p + 1, X.shape[1]):
            if f[p] != f[q] and var[p] > 0 and var[q] > 0:
                worst = max(worst, abs(Ce[p, q]) / np.sqrt(var[p] * var[q] / R))
    Z = est0.z
    blk = np.repeat(np.arange(L), n_u)
    off = blk[:, None] != blk[None, :]
    z_off = float(np.abs(Z[off]).max() / np.abs(Z).max()) if off.any() else 0.0
    summary = {"scenario": "frf-stats", "seed": cfg.seed, "runs": R, "N": N,
               "max_standardized_bias": float(std_bias.max()),
               "covariance_relative_error": cov_err,
               "max_cross_line_standardized_covariance": float(worst),
               "z_offdiag_relative": z_off,
               "a3_holds": check_assumption3(d.grid, d.h, N).holds}
    if write:
        write_json(cfg.out / "summary_frf_stats.json", summary, "frf_stats_summary")
    return summary


def run_scenario(cfg: ExperimentConfig) -> dict:
    if cfg.scenario == "fig2":
        return mc_histogram_a1(cfg)
    if cfg.scenario == "fig3":
        return mc_bounds_sweep(cfg)
    if cfg.scenario == "frf-stats":
        return mc_frf_statistics(cfg)
    raise ValueError(f"unknown scenario {cfg.scenario!r}")
