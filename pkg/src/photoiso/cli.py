"""Command-line entry point: ``photoiso {eigen,propagate,sweep,nnsd,tree}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, parse_time


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must look like LO:HI, got {text!r}") from None
    if not hi > lo:
        raise argparse.ArgumentTypeError("band upper edge must exceed the lower edge")
    return lo, hi


def _time(text: str) -> float:
    try:
        return parse_time(text, "--t-record")
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _root(text: str):
    if text == "brightest":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("root must be 'brightest' or a state index") from None


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, type=Path, help="YAML run configuration")
    shared.add_argument("--out", type=Path, help="output directory (default: outputs.directory)")
    shared.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    shared.add_argument("--force", action="store_true", help="recompute even if outputs are current")
    shared.add_argument("--mode", choices=("secular", "nonsecular", "hybrid"), help="override the propagation mode")
    shared.add_argument("--t-record", type=_time, help="QY recording time, e.g. '10 ns'")
    shared.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="photoiso", description="Open-system photoisomerization model runs.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("eigen", parents=[shared], help="diagonalize and write the eigensystem")
    sub.add_parser("propagate", parents=[shared], help="single run: trajectory and QY")
    sub.add_parser("sweep", parents=[shared], help="parameter sweep table")
    nn = sub.add_parser("nnsd", parents=[shared], help="level-spacing statistics")
    nn.add_argument("--band", type=_band, action="append", help="energy band LO:HI in eV (repeatable)")
    nn.add_argument("--k", type=int, help="local mean spacing half-width")
    nn.add_argument("--sector", choices=("even", "odd", "merged"), default="even")
    tr = sub.add_parser("tree", parents=[shared], help="relaxation tree (DOT and JSON)")
    tr.add_argument("--root", type=_root, default="brightest")
    tr.add_argument("--degree", type=int)
    tr.add_argument("--compare", type=Path, help="second config to overlay")
    return p


def _configure(args) -> RunConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.t_record is not None:
        changes["t_record"] = args.t_record
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _configure(args)
    except (ConfigError, OSError) as exc:
        print(f"photoiso: config error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.outputs.directory)

    # imported lazily so that `eigen` never loads the propagation stack
    try:
        if args.command == "eigen":
            from .output import run_eigen

            res = run_eigen(cfg, out, force=args.force)
            msg = f"{res.manifest.get('n_states')} states"
        elif args.command == "propagate":
            from . import runner

            res = runner.run_single(cfg, out, force=args.force)
            msg = f"QY({cfg.t_record:g} ps) = {res.data['qy']:.6f}"
        elif args.command == "sweep":
            from . import runner

            res = runner.run_sweep(cfg, out, threads=args.threads, force=args.force)
            msg = f"{res.manifest.get('n_points')} points, {res.manifest.get('n_failed')} failed"
        elif args.command == "nnsd":
            from . import runner

            res = runner.run_nnsd(cfg, out, bands=args.band, k=args.k, sector=args.sector, force=args.force)
            msg = "; ".join(
                f"[{r.band[0]:g},{r.band[1]:g}) n={r.n_levels} KS_W={r.ks_wigner:.4f} KS_P={r.ks_poisson:.4f}"
                for r in res.data.get("reports", [])
            ) or "up to date"
        else:
            from . import runner

            other = load_config(args.compare) if args.compare else None
            res = runner.run_tree(cfg, out, root=args.root, degree=args.degree, compare=other, force=args.force)
            msg = f"{res.manifest.get('n_nodes')} nodes"
    except ConfigError as exc:
        print(f"photoiso: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"photoiso: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    state = "up to date" if res.skipped else "done"
    print(f"{args.command}: {state} -> {out} ({msg})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
