"""Command-line entry point ``msid``.

Exit codes: 0 success, 1 validation failure (an assumption check fails or
the data cannot support the requested estimate), 2 usage error, missing file
or malformed input.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .fit import FitOptions, fit_iterative, fit_levy, fit_lmfd_closed_form
from .frf import FrfEstimate, covariance, etfe_estimate, frf_sweep, line_std, ls_estimate
from .harness import load_config, run_scenario
from .io import InputError, config_path, read_json, write_json
from .models import LmfdStructure, model_from_dict, model_to_dict, rhp_poles
from .multisine import (FrequencyGrid, amplitude_matrices, check_assumption1,
                        check_assumption2, check_assumption2_exact, check_assumption3,
                        check_assumption3_exact, design_from_dict, exact_ratios)
from .simulator import NoiseModel, load_dataset, save_dataset, simulate_dataset

__all__ = ["main", "build_parser"]


class ValidationFailure(Exception):
    """The inputs are well formed but fail a required check (exit code 1)."""


def _read_design(path):
    doc = read_json(path, "design")
    try:
        return doc, design_from_dict(doc)
    except (ValueError, IndexError, KeyError) as exc:
        raise InputError(f"{path}: $.experiments: {exc}") from None


def _read_sigma(path) -> np.ndarray:
    doc = read_json(path, "sigma")
    if isinstance(doc, dict):
        doc = doc["sigma"]
    return np.atleast_2d(np.asarray(doc, dtype=float))


def _read_model(path):
    doc = read_json(path, "model")
    try:
        return model_from_dict(doc)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _pi_multiple(w: float) -> str:
    return f"{w:.6g} rad/s ({w / np.pi:.6g} pi)"


def cmd_design_check(args) -> int:
    doc, design = _read_design(args.design)
    a1 = check_assumption1(design, args.rank_tol)
    grid, h = design.grid, design.h
    if args.exact:
        ratios = exact_ratios(doc, design)
        a2 = check_assumption2_exact(ratios)
        a3 = check_assumption3_exact(ratios, args.N) if args.N else None
    else:
        a2 = check_assumption2(grid, h, args.tol)
        a3 = check_assumption3(grid, h, args.N, args.tol) if args.N else None
    print(f"assumption 1 (full column rank of amplitude matrices): {'holds' if a1 else 'FAILS'}")
    for l, (s, ok) in enumerate(zip(a1.details["min_singular_values"], a1.details["full_rank"])):
        print(f"  A_{l}: min singular value {s:.6g}{'' if ok else '  (rank deficient)'}")
    if "note" in a1.details:
        print(f"  note: {a1.details['note']}")
    print(f"assumption 2 (no overlapping lines after sampling): {'holds' if a2 else 'FAILS'}")
    for wa, wb, kind in a2.details["violating_pairs"]:
        if args.exact:
            print(f"  violating pair ({wa} pi/h, {wb} pi/h), combination '{kind}'")
        else:
            print(f"  violating pair ({_pi_multiple(wa)}, {_pi_multiple(wb)}), combination '{kind}'")
    for w in a2.details["violating_lines"]:
        print(f"  violating line {w if args.exact else _pi_multiple(w)}")
    if a3 is None:
        print("assumption 3 (whole periods in the record): not checked (no --N)")
    else:
        print(f"assumption 3 (whole periods in N={args.N} samples): {'holds' if a3 else 'FAILS'}")
        print(f"  periods per line: {a3.details['cycles']}")
    holds = bool(a1) and bool(a2) and (a3 is None or bool(a3))
    if args.json:
        report = {"holds": holds, "assumption1": a1.details | {"holds": a1.holds},
                  "assumption2": a2.details | {"holds": a2.holds},
                  "assumption3": None if a3 is None else a3.details | {"holds": a3.holds}}
        write_json(args.json, report, "design_check")
    return 0 if holds else 1


def cmd_simulate(args) -> int:
    _, design = _read_design(args.design)
    system = _read_model(args.system)
    sigma = _read_sigma(args.sigma)
    if system.n_u != design.n_u or sigma.shape[0] != system.n_y:
        raise InputError("system, design and sigma dimensions do not match")
    try:
        noise = NoiseModel(sigma, args.seed)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise InputError(f"{args.sigma}: {exc}") from None
    ds = simulate_dataset(system, design, noise, N=args.N, seed=args.seed)
    save_dataset(ds, Path(args.out))
    print(f"wrote {design.m} experiment(s) x {args.N} samples to {args.out}")
    return 0


def _frf_doc(est: FrfEstimate, method: str) -> dict:
    std = None if est.sigma is None else line_std(est).tolist()
    return {"method": method, "n_y": est.n_y, "n_u": est.n_u, "m": est.m, "N": est.N,
            "h": est.h, "dc": est.dc, "frequencies_rad_s": est.grid.frequencies.tolist(),
            "omegas": est.omegas.tolist(),
            "gms_re": est.gms_hat.real.tolist(), "gms_im": est.gms_hat.imag.tolist(),
            "hms": est.hms_hat.tolist(), "z_re": est.z.real.tolist(), "z_im": est.z.imag.tolist(),
            "sigma": None if est.sigma is None else est.sigma.tolist(), "line_std": std}


def _frf_from_doc(doc: dict) -> FrfEstimate:
    return FrfEstimate(np.asarray(doc["hms"]),
                       np.asarray(doc["gms_re"]) + 1j * np.asarray(doc["gms_im"]),
                       np.asarray(doc["z_re"]) + 1j * np.asarray(doc["z_im"]),
                       None if doc["sigma"] is None else np.asarray(doc["sigma"]),
                       FrequencyGrid(doc["frequencies_rad_s"]), doc["h"], doc["N"], doc["m"],
                       doc["dc"])


def cmd_estimate_frf(args) -> int:
    data = Path(args.data)
    if not (data / "dataset.json").exists():
        raise InputError(f"no dataset.json in {data}")
    read_json(data / "dataset.json", "dataset")
    try:
        ds = load_dataset(data)
    except (OSError, ValueError) as exc:
        raise InputError(f"{data}: {exc}") from None
    sigma = _read_sigma(args.sigma) if args.sigma else None
    try:
        est = (etfe_estimate if args.method == "etfe" else ls_estimate)(ds, sigma)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ValidationFailure(str(exc)) from None
    write_json(args.out, _frf_doc(est, args.method), "frf")
    if args.sweep:
        lo, hi, n = float(args.sweep[0]), float(args.sweep[1]), int(float(args.sweep[2]))
        w = np.linspace(lo, hi, n)
        G = frf_sweep(est, w)
        out = Path(args.sweep_out or Path(args.out).with_suffix(".sweep.csv"))
        idx = [(j, a) for j in range(est.n_y) for a in range(est.n_u)]
        with open(out, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["omega"] + [f"re_{j + 1}{a + 1}" for j, a in idx]
                        + [f"im_{j + 1}{a + 1}" for j, a in idx])
            for k in range(w.size):
                wr.writerow([repr(float(w[k]))] + [repr(float(G[k, j, a].real)) for j, a in idx]
                            + [repr(float(G[k, j, a].imag)) for j, a in idx])
    print(f"estimated {est.n_lines} line(s) from {est.m} experiment(s) of {est.N} samples")
    return 0


def cmd_fit(args) -> int:
    doc = read_json(args.frf, "frf")
    est = _frf_from_doc(doc)
    structure = LmfdStructure(est.n_y, est.n_u, args.nd, args.nn)
    cov = covariance(est) if est.sigma is not None else None
    try:
        if args.method == "closed":
            res = fit_lmfd_closed_form(est.gms_hat, est.omegas, args.nd, args.nn, est.n_u, cov)
        elif args.method == "levy":
            res = fit_levy(est.gms_hat, est.omegas, args.nd, args.nn, n_u=est.n_u, cov=cov)
        else:
            if cov is None:
                raise ValidationFailure("iterative fitting needs a noise covariance in the FRF file")
            if args.init:
                init = _read_model(args.init)
                if (init.n_D, init.n_N) != (args.nd, args.nn):
                    raise InputError(f"{args.init}: degrees do not match --nd/--nn")
                theta0 = init.theta
            else:
                theta0 = fit_levy(est.gms_hat, est.omegas, args.nd, args.nn, n_u=est.n_u).theta_hat
            res = fit_iterative(est.gms_hat, cov, structure, theta0, est.omegas,
                                FitOptions(multistart=args.multistart, seed=args.seed))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ValidationFailure(str(exc)) from None
    model = structure.model(res.theta_hat)
    poles = rhp_poles(model)
    out = {"structure": "lmfd", "method": args.method, "n_y": est.n_y, "n_u": est.n_u,
           "n_D": args.nd, "n_N": args.nn, "theta": res.theta_hat.tolist(),
           "cost": max(float(res.cost), 0.0), "status": res.status,
           "kernel_basis": None if res.kernel_basis is None else res.kernel_basis.tolist(),
           "iterations": int(res.iterations),
           "gradient_norm": None if not np.isfinite(res.gradient_norm) else float(res.gradient_norm),
           "model": model_to_dict(model), "rhp_poles": [[p.real, p.imag] for p in poles]}
    write_json(args.out, out, "fit")
    print(f"fit status {res.status}, cost {res.cost:.6g}")
    if poles.size:
        print(f"warning: fitted model has {poles.size} right-half-plane pole(s)")
    return 0


def cmd_bounds(args) -> int:
    _, design = _read_design(args.design)
    sigma = _read_sigma(args.sigma)
    A = amplitude_matrices(design)
    smin = None
    if args.theta0:
        model = _read_model(args.theta0)
        st = model.structure
        smin = float(np.linalg.svd(st.jacobian(model.theta, design.omegas), compute_uv=False)[-1])
    if (args.theta0 is None) != (args.beta is None):
        raise InputError("--theta0 and --beta must be given together")
    try:
        inputs = bnd.BoundInputs(sigma, A, args.N, sigma.shape[0], args.delta, smin, args.beta)
        rep = bnd.bound_report(inputs)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ValidationFailure(str(exc)) from None
    write_json(args.out, rep.to_dict(), "bounds")
    print(f"FRF radius {rep.frf_radius:.6g}" +
          ("" if rep.theta_radius is None else f", parameter radius {rep.theta_radius:.6g}"))
    return 0


def cmd_montecarlo(args) -> int:
    cfg_file = args.config or config_path(args.scenario.replace("-", "_"))
    cfg = load_config(cfg_file, seed=args.seed, full=args.full, out=args.out, jobs=args.jobs,
                      runs=args.runs)
    if cfg.scenario != args.scenario:
        raise InputError(f"{cfg_file}: $.scenario: config is for {cfg.scenario!r}, "
                         f"not {args.scenario!r}")
    try:
        run_scenario(cfg)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ValidationFailure(str(exc)) from None
    print(f"scenario {cfg.scenario}: {cfg.runs} runs per N, seed {cfg.seed}, outputs in {cfg.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("design-check", help="check the three experimental conditions of a design")
    q.add_argument("design")
    q.add_argument("--N", type=int, help="record length for the whole-period check")
    q.add_argument("--tol", type=float, default=1e-9, help="unit-circle tolerance")
    q.add_argument("--rank-tol", type=float, default=1e-10, help="relative rank tolerance")
    q.add_argument("--exact", action="store_true",
                   help="exact rational checks using omega_h_over_pi from the design")
    q.add_argument("--json", help="also write the report as JSON")
    q.set_defaults(func=cmd_design_check)

    q = sub.add_parser("simulate", help="simulate noisy steady-state records")
    q.add_argument("--design", required=True)
    q.add_argument("--system", required=True)
    q.add_argument("--sigma", required=True)
    q.add_argument("--N", type=int, required=True)
    q.add_argument("--seed", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("estimate-frf", help="least-squares FRF estimate from a dataset")
    q.add_argument("--data", required=True)
    q.add_argument("--sigma")
    q.add_argument("--out", required=True)
    q.add_argument("--method", choices=["ls", "etfe"], default="ls")
    q.add_argument("--sweep", nargs=3, metavar=("W_MIN", "W_MAX", "COUNT"))
    q.add_argument("--sweep-out")
    q.set_defaults(func=cmd_estimate_frf)

    q = sub.add_parser("fit", help="fit a parametric model to an FRF estimate")
    q.add_argument("--frf", required=True)
    q.add_argument("--structure", choices=["lmfd"], default="lmfd")
    q.add_argument("--nd", type=int, required=True)
    q.add_argument("--nn", type=int, required=True)
    q.add_argument("--method", choices=["closed", "iter", "levy"], default="closed")
    q.add_argument("--init", help="model JSON used as the starting point (iter)")
    q.add_argument("--multistart", type=int, default=8)
    q.add_argument("--seed", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_fit)

    q = sub.add_parser("bounds", help="finite-sample concentration radii")
    q.add_argument("--design", required=True)
    q.add_argument("--sigma", required=True)
    q.add_argument("--N", type=int, required=True)
    q.add_argument("--delta", type=float, default=0.1)
    q.add_argument("--theta0", help="true model JSON, enables the parameter radius")
    q.add_argument("--beta", type=float)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_bounds)

    q = sub.add_parser("montecarlo", help="run a Monte Carlo scenario")
    q.add_argument("--scenario", choices=["fig2", "fig3", "frf-stats"], required=True)
    q.add_argument("--config", help="scenario config (defaults to the packaged one)")
    q.add_argument("--seed", type=int)
    q.add_argument("--jobs", type=int, default=1)
    q.add_argument("--full", action="store_true", help="paper-scale run counts")
    q.add_argument("--runs", type=int, help="override the run count")
    q.add_argument("--out", default=".")
    q.set_defaults(func=cmd_montecarlo)
    return p


def _resolve_seed(args) -> None:
    if getattr(args, "seed", "absent") is None and args.command != "montecarlo":
        env = os.environ.get("MSID_SEED")
        if env is not None:
            try:
                args.seed = int(env)
            except ValueError:
                raise InputError(f"MSID_SEED is not an integer: {env!r}") from None
        else:
            args.seed = 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        _resolve_seed(args)
        return args.func(args)
    except InputError as exc:
        print(f"msid: error: {exc}", file=sys.stderr)
        return 2
    except ValidationFailure as exc:
        print(f"msid: validation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
