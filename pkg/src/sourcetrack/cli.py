"""Command-line interface.

Commands communicate only through files (records, path CSVs, metrics), so
each stage can be scripted and re-run independently. Exit codes: 0 success,
2 usage error, 1 runtime failure. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import adsm as adsm_mod
from . import bayes, experiments
from .core import SamplingGrid, read_config
from .forward import add_noise, read_record, simulate_record, write_record

OUT_ENV_VAR = "SOURCETRACK_OUT"

_FMT = "%.17g"


def _default_threads() -> int:
    return os.cpu_count() or 1


def _resolve_out(args, parser) -> Path:
    out = args.out or os.environ.get(OUT_ENV_VAR)
    if not out:
        parser.error(f"--out is required (or set {OUT_ENV_VAR})")
    return Path(out)


def _grid_from_args(args) -> SamplingGrid:
    lo, hi = args.domain
    return SamplingGrid((lo, lo, lo), (hi, hi, hi), args.grid)


def _add_out(parser):
    parser.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")


def _add_grid(parser, default_n=41):
    parser.add_argument("--grid", type=int, default=default_n, help="lattice points per axis")
    parser.add_argument(
        "--domain", type=float, nargs=2, default=(-5.0, 5.0), metavar=("LO", "HI"),
        help="cubic sampling box bounds",
    )


def _add_threads(parser):
    parser.add_argument(
        "--threads", type=int, default=_default_threads(),
        help="worker threads for the lattice sweep",
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_simulate(args, parser) -> int:
    out = _resolve_out(args, parser)
    if args.config:
        config = read_config(args.config)
        record = add_noise(simulate_record(config, model=args.model), config.noise_level, config.seed)
    else:
        scenario = experiments.build_scenario(
            args.scenario, geometry=args.geometry, noise_level=args.noise, seed=args.seed
        )
        config = scenario.config
        record = add_noise(simulate_record(config, model=args.model), args.noise, args.seed)
    meta_path, csv_path = write_record(record, out)
    print(f"wrote {meta_path} and {csv_path}", file=sys.stderr)
    return 0


def _cmd_adsm(args, parser) -> int:
    out = _resolve_out(args, parser)
    record = read_record(args.record)
    grid = _grid_from_args(args)
    coarse = adsm_mod.run_adsm(
        record, grid, m=args.peaks, r_min=args.rmin, floor=args.floor, threads=args.threads
    )
    out.mkdir(parents=True, exist_ok=True)
    dest = out / "path_adsm.csv"
    adsm_mod.write_coarse_path(coarse, dest)
    print(f"wrote {dest}", file=sys.stderr)
    return 0


def _cmd_invert(args, parser) -> int:
    out = _resolve_out(args, parser)
    if args.prior == "uniform":
        args.prior = "uniform-box"
    if args.prior == "normal" and not args.coarse:
        parser.error("--coarse is required with the normal prior")
    record = read_record(args.record)
    noise_model = bayes.NoiseModel(w_mean=args.w_mean, w_var=args.w_var)
    if args.prior == "normal":
        coarse_pts = experiments.read_path_csv(args.coarse)
        coarse = adsm_mod.CoarsePath(coarse_pts, np.zeros(coarse_pts.shape[:2]))
        refined, chains = bayes.run_adsm_mcmc(
            record,
            coarse,
            prior_sigma2=args.prior_sigma2,
            k_samples=args.k,
            beta=args.beta,
            sigma_prop=args.sigma_prop,
            noise=noise_model,
            master_seed=args.seed,
            corrected=args.corrected,
        )
    else:
        lo, hi = args.domain
        refined, chains = bayes.run_uniform_mcmc(
            record,
            (lo, lo, lo),
            (hi, hi, hi),
            k_samples=args.k,
            sigma_prop=args.sigma_prop,
            noise=noise_model,
            master_seed=args.seed,
        )
    out.mkdir(parents=True, exist_ok=True)
    dest = out / "path_mcmc.csv"
    bayes.write_refined_path(refined, dest)
    if args.dump_chains:
        chains_dir = out / "chains"
        chains_dir.mkdir(exist_ok=True)
        for s, source_chains in enumerate(chains):
            prefix = "" if s == 0 else f"source{s + 1}_"
            for j, chain in enumerate(source_chains, start=1):
                bayes.write_chain_csv(chain, chains_dir / f"{prefix}period_{j}.csv")
    print(f"wrote {dest}", file=sys.stderr)
    return 0


def _cmd_pipeline(args, parser) -> int:
    out = _resolve_out(args, parser)
    if args.prior == "uniform":
        args.prior = "uniform-box"
    shared = dict(
        geometry=args.geometry,
        noise_level=args.noise,
        seed=args.seed,
        grid_n=args.grid,
        model=args.model,
        k_samples=args.k,
        beta=args.beta,
        sigma_prop=args.sigma_prop,
        prior_family=args.prior,
        corrected=args.corrected,
        dump_chains=args.dump_chains,
        threads=args.threads,
    )
    if args.repeat > 1:
        grid_n = shared.pop("grid_n")
        geometry = shared.pop("geometry")
        noise = shared.pop("noise_level")
        seed = shared.pop("seed")
        results = experiments.run_repeated(
            args.scenario, out, args.repeat, geometry=geometry,
            noise_level=noise, seed=seed, grid_n=grid_n, **shared,
        )
        print(f"wrote {len(results)} repetitions to {out}", file=sys.stderr)
    else:
        result = experiments.run_pipeline(args.scenario, out, **shared)
        print(f"wrote {len(result.files)} files to {result.out_dir}", file=sys.stderr)
    return 0


def _cmd_metrics(args, parser) -> int:
    points = experiments.read_path_csv(args.path)
    scenario = experiments.build_scenario(args.scenario)
    for s, pm in enumerate(experiments.path_error(points, scenario), start=1):
        print(f"source{s}.mean_error = {_FMT % pm.mean_error}")
        print(f"source{s}.max_error = {_FMT % pm.max_error}")
        print(f"source{s}.rmse = {_FMT % pm.rmse}")
    return 0


def _cmd_export_slices(args, parser) -> int:
    out = _resolve_out(args, parser)
    record = read_record(args.record)
    grid = _grid_from_args(args)
    field = adsm_mod.sweep(record, grid, args.period, floor=args.floor, threads=args.threads)
    indices = range(grid.n_per_axis) if args.all_planes else [args.z_index]
    out.mkdir(parents=True, exist_ok=True)
    for z_index in indices:
        dest = out / f"indicator_j{args.period}_z{z_index}.csv"
        adsm_mod.write_slice_csv(field, z_index, dest)
        print(f"wrote {dest}", file=sys.stderr)
    return 0


def _cmd_bench(args, parser) -> int:
    scenario = experiments.build_scenario(
        args.scenario, geometry=args.geometry, noise_level=args.noise, seed=args.seed,
        grid_n=args.grid,
    )
    config = scenario.config
    record = add_noise(simulate_record(config), config.noise_level, config.seed)
    start = time.perf_counter()
    adsm_mod.sweep(record, config.grid, 1, threads=args.threads)
    elapsed = time.perf_counter() - start
    n_points = config.grid.n_points
    print(
        f"sweep: grid {args.grid}^3 = {n_points} points, geometry {args.geometry}, "
        f"threads {args.threads}: {elapsed:.2f} s ({n_points / elapsed:.0f} points/s)"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sourcetrack",
        description="Reconstruct moving acoustic point-source trajectories "
        "from sparse sensor recordings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a sensor record and write it to disk")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="built-in scenario id (ex1, ex2, ex3, static-debug)")
    src.add_argument("--config", help="scenario config file")
    p.add_argument("--geometry", default="S1", choices=("S1", "S2", "S3"))
    p.add_argument("--noise", type=float, default=0.0, help="relative noise level")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--model", default="quasistatic", choices=("quasistatic", "lw"))
    _add_out(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("adsm", help="coarse localization: per-period indicator sweep")
    p.add_argument("--record", required=True, help="directory holding record.meta/record.csv")
    _add_grid(p)
    p.add_argument("--peaks", type=int, default=1, help="peaks (sources) per period")
    p.add_argument("--rmin", type=float, default=1.0, help="minimum peak separation")
    p.add_argument("--floor", type=float, default=adsm_mod.DEFAULT_FLOOR)
    _add_threads(p)
    _add_out(p)
    p.set_defaults(func=_cmd_adsm)

    p = sub.add_parser("invert", help="Bayesian refinement of a coarse path")
    p.add_argument("--record", required=True)
    p.add_argument("--coarse", help="coarse path CSV (required for the normal prior)")
    p.add_argument("--k", type=int, default=5000, help="chain length per period")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--sigma-prop", type=float, default=0.1)
    p.add_argument("--prior", default="normal", choices=("normal", "uniform", "uniform-box"))
    p.add_argument("--prior-sigma2", type=float, default=0.2)
    p.add_argument("--w-mean", type=float, default=1e-4)
    p.add_argument("--w-var", type=float, default=1e-3)
    p.add_argument("--domain", type=float, nargs=2, default=(-5.0, 5.0),
                   metavar=("LO", "HI"), help="uniform prior box bounds")
    p.add_argument("--seed", type=int, default=7, help="master seed for chain streams")
    p.add_argument("--corrected", action="store_true",
                   help="apply the proposal-density correction to the acceptance")
    p.add_argument("--dump-chains", action="store_true")
    _add_out(p)
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("pipeline", help="simulate + adsm + invert + metrics in one run")
    p.add_argument("--scenario", required=True)
    p.add_argument("--geometry", default="S1", choices=("S1", "S2", "S3"))
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--grid", type=int, default=41)
    p.add_argument("--model", default="quasistatic", choices=("quasistatic", "lw"))
    p.add_argument("--k", type=int, default=None, help="chain length (default 5000)")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--sigma-prop", type=float, default=None)
    p.add_argument("--prior", default=None, choices=("normal", "uniform", "uniform-box"))
    p.add_argument("--corrected", action="store_true")
    p.add_argument("--dump-chains", action="store_true")
    p.add_argument("--repeat", type=int, default=1,
                   help="independent noise realizations (mean/std summary)")
    _add_threads(p)
    _add_out(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("metrics", help="score a path CSV against a scenario's true path")
    p.add_argument("--path", required=True, help="path_adsm.csv or path_mcmc.csv")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("export-slices", help="write indicator cross-sections for one period")
    p.add_argument("--record", required=True)
    _add_grid(p)
    p.add_argument("--period", type=int, default=1)
    p.add_argument("--z-index", type=int, default=None)
    p.add_argument("--all", dest="all_planes", action="store_true",
                   help="export every z plane")
    p.add_argument("--floor", type=float, default=adsm_mod.DEFAULT_FLOOR)
    _add_threads(p)
    _add_out(p)
    p.set_defaults(func=_cmd_export_slices)

    p = sub.add_parser("bench", help="time one full-resolution indicator sweep")
    p.add_argument("--scenario", default="ex1")
    p.add_argument("--geometry", default="S1", choices=("S1", "S2", "S3"))
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=7)
    _add_threads(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def dispatch(argv) -> int:
    """Parse and run; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "export-slices" and not args.all_planes and args.z_index is None:
        print("error: one of --z-index or --all is required", file=sys.stderr)
        return 2
    try:
        return args.func(args, parser)
    except SystemExit as exc:  # parser.error inside a command
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
