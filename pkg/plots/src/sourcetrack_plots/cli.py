"""One script per figure kind; each reads pipeline artifacts and writes an
image. Malformed inputs exit nonzero with a file:line message."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FigureSpec, render
from .reading import ContractError


def _run(build_spec, argv):
    try:
        spec = build_spec(argv)
        out = render(spec)
    except (ContractError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}", file=sys.stderr)
    return 0


def _path3d_spec(argv):
    parser = argparse.ArgumentParser(
        prog="stplot-path3d",
        description="3-D exact-versus-reconstructed paths from a run directory.",
    )
    parser.add_argument("--in", dest="run_dir", required=True, help="pipeline run directory")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--uniform", help="optional uniform-prior path_mcmc.csv to overlay")
    args = parser.parse_args(argv)
    run_dir = Path(args.run_dir)
    inputs = {}
    if (run_dir / "path_true.csv").is_file():
        inputs["true"] = run_dir / "path_true.csv"
    for extra in sorted(run_dir.glob("path_true_s*.csv")):
        inputs[extra.stem.replace("path_", "")] = extra
    for role, name in (("adsm", "path_adsm.csv"), ("mcmc", "path_mcmc.csv")):
        if (run_dir / name).is_file():
            inputs[role] = run_dir / name
    if args.uniform:
        inputs["uniform"] = Path(args.uniform)
    return FigureSpec(kind="path3d", inputs=inputs, out_path=Path(args.out))


def _slice_spec(argv):
    parser = argparse.ArgumentParser(
        prog="stplot-slice",
        description="Heatmap of one exported indicator cross-section.",
    )
    parser.add_argument("--in", dest="slice_csv", required=True, help="indicator_j*_z*.csv file")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    return FigureSpec(
        kind="indicator-slice",
        inputs={"slice": Path(args.slice_csv)},
        out_path=Path(args.out),
    )


def _chains_spec(argv):
    parser = argparse.ArgumentParser(
        prog="stplot-chains",
        description="Per-coordinate histograms of one period's chain samples.",
    )
    parser.add_argument("--in", dest="run_dir", required=True, help="pipeline run directory")
    parser.add_argument("--out", required=True)
    parser.add_argument("--period", type=int, default=1)
    parser.add_argument("--source", type=int, default=1)
    args = parser.parse_args(argv)
    run_dir = Path(args.run_dir)
    prefix = "" if args.source == 1 else f"source{args.source}_"
    inputs = {"chain": run_dir / "chains" / f"{prefix}period_{args.period}.csv"}
    true_name = "path_true.csv" if args.source == 1 else f"path_true_s{args.source}.csv"
    if (run_dir / true_name).is_file():
        inputs["true"] = run_dir / true_name
    return FigureSpec(
        kind="chain-histogram",
        inputs=inputs,
        out_path=Path(args.out),
        period=args.period,
    )


def main_path3d():
    sys.exit(_run(_path3d_spec, sys.argv[1:]))


def main_slice():
    sys.exit(_run(_slice_spec, sys.argv[1:]))


def main_chains():
    sys.exit(_run(_chains_spec, sys.argv[1:]))
