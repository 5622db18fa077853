"""Command-line front end for sweep campaigns."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .harness import SweepSpec, dump_scenario, emit_csv, emit_plot, run_sweep
from .scenario import SystemConfig, load_config

SEED_ENV = "CFMIMO_SEED"


def _float_list(text: str):
    return tuple(float(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfmimo",
        description="Monte Carlo sweeps of uplink cell-free massive MIMO detectors "
        "(BER, sum spectral efficiency, iteration counts vs pilot-to-user ratio).",
    )
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key-value YAML file with SystemConfig fields")
    parser.add_argument("--ratios", type=_float_list, default=(1 / 3, 0.5, 2 / 3, 5 / 6, 1.0),
                        help="comma-separated pilot-to-user ratios (tau/K)")
    parser.add_argument("--snr-db", type=_float_list, default=(25.0,),
                        help="comma-separated SNR points in dB")
    parser.add_argument("--trials", type=int, default=200, help="Monte Carlo trials per grid cell")
    parser.add_argument("--drops", type=int, default=50, help="independent scenario redraws")
    parser.add_argument("--detectors", default="mrc,mmse,sic,ep",
                        help="comma-separated subset of mrc,mmse,sic,ep,ml")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (overridden by ${SEED_ENV} if set)")
    parser.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    parser.add_argument("--plot", action="store_true", help="render SVG figures next to the CSV")
    parser.add_argument("--dump-scenario", action="store_true",
                        help="also write drop-0 geometry and beta matrices as CSV")
    parser.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    parser.add_argument("--pilot-mode", choices=("balanced", "iid"), default="balanced",
                        help="pilot assignment mode")
    parser.add_argument("--resample-drops", action="store_true",
                        help="redraw the scenario every trial instead of per drop")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    config = load_config(args.config) if args.config else SystemConfig()
    seed = args.seed
    if os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    if seed is not None:
        config = replace(config, seed=seed)

    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / "sweep.csv"
    spec = SweepSpec(
        config=config,
        ratios=tuple(args.ratios),
        snrs_db=tuple(args.snr_db),
        detectors=tuple(d.strip() for d in args.detectors.split(",") if d.strip()),
        trials=args.trials,
        drops=args.drops,
        resample_drop_per_trial=args.resample_drops,
        pilot_mode=args.pilot_mode,
        output_path=str(csv_path),
    )

    if args.dump_scenario:
        for path in dump_scenario(config, args.out):
            print(f"wrote {path}")

    result = run_sweep(spec, workers=args.workers)
    emit_csv(result, csv_path)
    print(f"wrote {csv_path}")
    if args.plot:
        for path in emit_plot(result, args.out):
            print(f"wrote {path}")

    aborted = {k: v for k, v in result.failures.items() if v}
    if aborted:
        print(f"aborted trials: {aborted}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
