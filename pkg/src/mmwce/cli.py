"""Command-line entry point: ``mmwce sweep | bounds | design-search``.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .codebook import DesignSearchError, save_design, search_optimal_design
from .harness import ConfigError, emit_bounds, emit_csv, load_config, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _csv_list(text):
    return tuple(s for s in text.replace(",", " ").split())


def _float_list(text):
    try:
        return tuple(float(s) for s in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}")


def _grid_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--snr-db", type=_float_list, help="comma-separated E_T/N0 grid in dB ('inf' = noiseless)")
    p.add_argument("--out", help="output CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmwce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="Monte Carlo sweep over E_T/N0")
    _grid_flags(sw)
    sw.add_argument("--algo", type=_csv_list, help="comma-separated algorithms (fce, race, baseline, exhaustive)")
    sw.add_argument("--trials", type=int)
    sw.add_argument("--seed", type=int)
    sw.add_argument("--workers", type=int)

    bd = sub.add_parser("bounds", help="analytical curves on the sweep grid")
    _grid_flags(bd)

    ds = sub.add_parser("design-search", help="exhaustive search for a max-min-distance design")
    ds.add_argument("--m", type=int, required=True)
    ds.add_argument("--kt", type=int, required=True)
    ds.add_argument("--kr", type=int, required=True)
    ds.add_argument("--wt", type=int, required=True)
    ds.add_argument("--wr", type=int, required=True)
    ds.add_argument("--cap", type=int, default=10**7, help="enumeration budget")
    ds.add_argument("--out", required=True)
    return parser


def _sweep(args):
    cfg = load_config(args.config, algorithms=args.algo, snr_db=args.snr_db, trials=args.trials,
                      seed=args.seed, workers=args.workers, out=args.out)
    if cfg.out is None:
        raise ConfigError("no output path: pass --out or set out in the config file")
    result = run_sweep(cfg)
    emit_csv(result, cfg.out)
    print(f"wrote {len(result.rows)} rows to {cfg.out}")


def _bounds(args):
    cfg = load_config(args.config, snr_db=args.snr_db, out=args.out)
    if cfg.out is None:
        raise ConfigError("no output path: pass --out or set out in the config file")
    emit_bounds(cfg, cfg.out)
    print(f"wrote bounds to {cfg.out}")


def _design_search(args):
    B_T, B_R, d = search_optimal_design(args.m, args.kt, args.kr, args.wt, args.wr, cap=args.cap)
    save_design(args.out, B_T, B_R, W_T=args.wt, W_R=args.wr, d_min=d)
    print(f"d_min = {d:.12g}; design written to {args.out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"sweep": _sweep, "bounds": _bounds, "design-search": _design_search}[args.command]
    try:
        handler(args)
    except (ConfigError, DesignSearchError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
