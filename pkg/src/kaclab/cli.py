"""Command-line experiment runner.

Every subcommand writes ``<out>/<name>.csv`` plus a ``<name>.json`` sidecar
holding the resolved config, seed, package versions and wall time. Exit
status is 0 when every asserted check passes, 3 when a check fails and 2 for
malformed input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dsmc import fit_relaxation_rate, init_gauss, init_sphere, read_checkpoint, run, write_checkpoint
from .estimators import (GaussianReference, SphereMarginalReference, relative_entropy_histogram,
                         relative_entropy_knn)
from .gaussian import GaussianMixture, check_ou_identities
from .model import CollisionMeasure, derive_params, local_perturbation_rates
from .series import SeriesConfig, verify_bounds
from .spherical import sigma_check
from .sumrule import brute_force_K, closed_form_Ck, decay_bound_gauss, decay_bound_sphere

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
OUT_ENV = "KACLAB_OUT"


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def parse_grid(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def parse_nu(spec) -> CollisionMeasure:
    """``uniform``, ``atoms:th1,th2[:w1,w2]``, inline JSON, or a JSON file path."""
    if isinstance(spec, dict):
        return CollisionMeasure.from_json(spec)
    spec = str(spec).strip()
    if spec == "uniform":
        return CollisionMeasure.uniform()
    if spec.startswith("atoms:"):
        parts = spec.split(":")
        angles = [float(eval_angle(a)) for a in parts[1].split(",")]
        weights = [float(w) for w in parts[2].split(",")] if len(parts) > 2 else None
        return CollisionMeasure.atoms(angles, weights)
    if spec.startswith("{"):
        return CollisionMeasure.from_json(spec)
    return CollisionMeasure.from_json(Path(spec).read_text())


def eval_angle(text: str) -> float:
    """Float, optionally written with ``pi`` (e.g. ``pi/3``, ``-pi/2``)."""
    t = text.strip().replace(" ", "")
    if "pi" not in t:
        return float(t)
    sign = -1.0 if t.startswith("-") else 1.0
    t = t.lstrip("+-")
    num, _, den = t.partition("/")
    coef = num.replace("*", "").replace("pi", "") or "1"
    return sign * float(coef) * math.pi / (float(den) if den else 1.0)


def build_params(args):
    nu = parse_nu(args.nu)
    if args.local_lambda is not None:
        rates = local_perturbation_rates(args.local_lambda, args.M, args.N)
    else:
        rates = (args.lambda_s, args.lambda_r, args.mu)
    return derive_params(args.M, args.N, *rates, nu=nu)


def build_f0(args, M):
    if getattr(args, "f0", None):
        return GaussianMixture.from_json(Path(args.f0).read_text())
    return GaussianMixture.scaled_standard(args.f0_a, M)


# -- subcommands ------------------------------------------------------------


def cmd_sumrule(args):
    params = build_params(args)
    rows, ok = [], True
    for k in range(args.kmax + 1):
        c = closed_form_Ck(params, k)
        if args.brute_force:
            K = brute_force_K(params, k, budget=args.budget, workers=args.workers)
            diag = np.diag(K)
            off = K - np.diag(diag)
            err = float(np.max(np.abs(K - c * np.eye(params.M))))
            rows.append([k, c, float(diag.max()), float(np.max(np.abs(off))), err])
            ok &= err < args.tol
        else:
            rows.append([k, c, "nan", "nan", "nan"])
    header = ["k", "closed_form", "brute_force_maxdiag", "brute_force_maxoffdiag", "abs_error"]
    return header, rows, ok, {}


def cmd_series(args):
    params = build_params(args)
    f0 = build_f0(args, params.M)
    cfg = SeriesConfig(t=0.0, k_max=args.kmax, tail_epsilon=args.tail, mode=args.mode,
                       histories=args.histories, seed=args.seed)
    rep = verify_bounds(params, f0, cfg, parse_grid(args.t_grid))
    rows = []
    for s_row, i_row in zip(rep["entropy"].rows, rep["information"].rows):
        rows.append([s_row.t, s_row.value, i_row.value, s_row.factor, s_row.bound, i_row.bound,
                     s_row.covered_mass, s_row.components])
    ok = rep["entropy"].passed and rep["information"].passed
    header = ["t", "S", "I", "bound_factor", "S_bound", "I_bound", "covered_mass", "components"]
    return header, rows, ok, {}


def _sphere_tilt(c):
    return lambda v: np.exp(-0.5 * c * np.einsum("ni,ni->n", v, v))


def cmd_dsmc(args):
    params = build_params(args)
    grid = parse_grid(args.t_grid)
    if args.geometry == "gauss":
        ens = init_gauss(params, build_f0(args, params.M), args.replicas, args.seed)
    else:
        ens = init_sphere(params, _sphere_tilt(args.tilt), 1.0, args.replicas, args.seed)
    marg0 = ens.states[:, : params.M].copy()
    obs = run(ens, params, grid, keep_marginals=args.checkpoint, workers=args.workers)
    rows = [[t, m, s, obs.replicas] for t, m, s in zip(grid, obs.system_energy_mean, obs.system_energy_stderr)]
    extra, ok = {}, True
    if args.checkpoint:
        out = Path(args.out)
        files = []
        snaps = [(0.0, marg0)] + sorted(obs.marginals.items())
        for idx, (t, samples) in enumerate(snaps):
            path = out / f"{args.name or 'dsmc'}_t{idx:03d}.bin"
            write_checkpoint(path, samples, t, args.seed, params, args.geometry)
            files.append(path.name)
        extra["checkpoints"] = files
    if args.check_rate:
        fit = fit_relaxation_rate(obs)
        z = (fit.rate - params.relaxation_rate) / fit.stderr
        extra["rate_fit"] = {"rate": fit.rate, "stderr": fit.stderr, "expected": params.relaxation_rate, "z": z}
        ok = abs(z) <= 3.0
    return ["t", "mean", "stderr", "n"], rows, ok, extra


def cmd_entropy(args):
    rows = []
    for p in args.input:
        samples, meta = read_checkpoint(p)
        M = samples.shape[1]
        if args.reference == "gauss":
            ref = GaussianReference(M)
        else:
            ref = SphereMarginalReference(meta["params"]["M"], meta["params"]["N"])
        if args.method == "knn":
            est = relative_entropy_knn(samples, ref, k=args.k)
        else:
            est = relative_entropy_histogram(samples, ref)
        rows.append([meta["time"], est.value, est.stderr, est.method, est.n])
    return ["t", "S_hat", "stderr", "method", "n"], rows, True, {}


def cmd_ou_check(args):
    if args.mixture:
        mix = GaussianMixture.from_json(Path(args.mixture).read_text())
    else:
        mix = GaussianMixture.scaled_standard(args.a)
    grid = np.linspace(0.0, args.smax, args.points)
    rep = check_ou_identities(mix, grid, tol=args.tol)
    rows = [[r.s, r.S, r.I, r.contractivity_slack, r.dS_ds, r.derivative_error, r.integral_error, r.lsi_slack]
            for r in rep.rows]
    header = ["s", "S", "I", "contractivity_slack", "dS_ds", "derivative_error", "integral_error", "lsi_slack"]
    extra = {"contractivity": rep.contractivity_ok, "derivative": rep.derivative_ok,
             "integral": rep.integral_ok, "log_sobolev": rep.lsi_ok}
    return header, rows, rep.passed, extra


def cmd_sigma_check(args):
    rep = sigma_check(args.trials, args.seed, tuple(args.M_list), tuple(args.N_list))
    keys = ["trial", "M", "N", "lhs", "sigma2", "slack", "scale", "passed"]
    rows = [[r[k] for k in keys] for r in rep.rows]
    return keys, rows, rep.violations == 0, {"violations": rep.violations}


def cmd_bounds(args):
    params = build_params(args)
    rows = [[t, decay_bound_gauss(params, t), decay_bound_sphere(params, t)] for t in parse_grid(args.t_grid)]
    return ["t", "gauss_factor", "sphere_factor"], rows, True, {}


# -- parser -----------------------------------------------------------------


def _model_args(p):
    p.add_argument("--M", type=int, default=1)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--lambda-s", type=float, default=0.0)
    p.add_argument("--lambda-r", type=float, default=0.0)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--local-lambda", type=float, default=None,
                   help="use the equal-pair-rate choice with this lambda (overrides rates)")
    p.add_argument("--nu", default="uniform", help="uniform | atoms:th1,th2[:w1,w2] | JSON")


def _common_args(p):
    p.add_argument("--config", help="JSON file of option values; flags override it")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./kaclab-out)")
    p.add_argument("--name", default=None, help="artifact basename (default: subcommand)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kaclab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sumrule", help="closed-form vs brute-force sum rule")
    _model_args(p)
    p.add_argument("--kmax", type=int, default=4)
    p.add_argument("--brute-force", action="store_true")
    p.add_argument("--budget", type=float, default=1e8)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_sumrule)

    p = sub.add_parser("series", help="collision-history series and decay bounds")
    _model_args(p)
    p.add_argument("--f0-a", type=float, default=2.0, help="f0 variance in units of 1/(2 pi)")
    p.add_argument("--f0", default=None, help="f0 Gaussian mixture JSON file")
    p.add_argument("--t-grid", default="0,0.25,0.5,1,2")
    p.add_argument("--mode", choices=["enumerate", "sample"], default="enumerate")
    p.add_argument("--histories", type=int, default=20000)
    p.add_argument("--tail", type=float, default=1e-10)
    p.add_argument("--kmax", type=int, default=None)
    p.set_defaults(func=cmd_series)

    p = sub.add_parser("dsmc", help="jump-chain particle simulation")
    _model_args(p)
    p.add_argument("--geometry", choices=["gauss", "sphere"], default="gauss")
    p.add_argument("--replicas", type=int, default=10000)
    p.add_argument("--t-grid", default="0.5,1,2")
    p.add_argument("--f0-a", type=float, default=2.0)
    p.add_argument("--f0", default=None)
    p.add_argument("--tilt", type=float, default=1.0, help="sphere start g(v) = exp(-tilt |v|^2 / 2)")
    p.add_argument("--checkpoint", action="store_true", help="write system samples at t=0 and grid times")
    p.add_argument("--check-rate", action="store_true", help="assert the fitted energy relaxation rate")
    p.set_defaults(func=cmd_dsmc)

    p = sub.add_parser("entropy", help="relative entropy of dsmc checkpoints")
    p.add_argument("input", nargs="+", help="checkpoint .bin files")
    p.add_argument("--reference", choices=["gauss", "sphere"], default="gauss")
    p.add_argument("--method", choices=["knn", "histogram"], default="knn")
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("ou-check", help="Ornstein-Uhlenbeck entropy/information identities")
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--mixture", default=None)
    p.add_argument("--smax", type=float, default=6.0)
    p.add_argument("--points", type=int, default=13)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_ou_check)

    p = sub.add_parser("sigma-check", help="randomised spherical inequality trials")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--M-list", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--N-list", type=int, nargs="+", default=[2, 3, 8])
    p.set_defaults(func=cmd_sigma_check)

    p = sub.add_parser("bounds", help="tabulate the Gaussian and spherical decay factors")
    _model_args(p)
    p.add_argument("--t-grid", default="0,0.5,1,2,4")
    p.set_defaults(func=cmd_bounds)

    for name, sp in sub.choices.items():
        _common_args(sp)
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    sub.set_defaults(**doc)
    return parser.parse_args(argv)


def _jsonable(ns) -> dict:
    out = {}
    for k, v in vars(ns).items():
        if k == "func":
            continue
        out[k] = v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"kaclab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out is None:
        args.out = os.environ.get(OUT_ENV, "kaclab-out")
    name = args.name or args.command
    start = time.time()
    try:
        header, rows, ok, extra = args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"kaclab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(csv_text(header, rows))
    sidecar = {
        "command": args.command,
        "config": _jsonable(args),
        "seed": args.seed,
        "passed": bool(ok),
        "versions": {"kaclab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "wall_time_s": time.time() - start,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **extra,
    }
    (out / f"{name}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str))
    status = "PASS" if ok else "FAIL"
    print(f"{name}: {status} ({len(rows)} rows -> {out / (name + '.csv')})")
    return EXIT_OK if ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
