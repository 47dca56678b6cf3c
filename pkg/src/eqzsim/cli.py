"""Command-line entry point: ``eqzsim <subcommand> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import harness


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=None, help="master seed, overrides the config value")
    p.add_argument("--workers", type=int, default=1, help="worker processes for Monte-Carlo chunks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqzsim", description="EqzNet / LMMSE / BCJR equalization experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("train", help="train every EqzNet in the config at every Eb/N0 point"))
    _common(sub.add_parser("sweep", help="Monte-Carlo BER sweep"))
    _common(sub.add_parser("calibrate-window", help="pick the sliding BCJR window and the frame geometry"))
    p = sub.add_parser("gain-table", help="dB gain over the reference equalizer at a target BER")
    _common(p)
    p.add_argument("--sweep", default=None, help="sweep CSV to read (default: run the sweep now)")
    _common(sub.add_parser("llr-hist", help="LLR histograms of each equalizer"))
    return parser


def _run(args) -> list:
    config = harness.load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.workers < 1:
        raise harness.ConfigError(f"--workers must be >= 1, got {args.workers}")
    outputs = []
    if args.command == "train":
        outputs = harness.run_training(config, out)
        outputs += [p.with_suffix(".loss.csv") for p in outputs]
    elif args.command == "sweep":
        records = harness.run_sweep(config, args.workers, progress=_report)
        outputs = [harness.write_sweep_csv(records, out / "sweep.csv")]
        flagged = [r for r in records if r.max_bits_reached]
        if flagged:
            lines = [f"{r.equalizer} {r.ebn0_db:g} dB: {r.errors} errors in {r.bits} bits" for r in flagged]
            (out / "max_bits_reached.txt").write_text("\n".join(lines) + "\n")
            outputs.append(out / "max_bits_reached.txt")
    elif args.command == "calibrate-window":
        (n1, n2), result = harness.run_calibration(config, out)
        print(f"window {result.window} (N1={n1}, N2={n2}), aligned={result.aligned}")
        outputs = [out / "calibration.csv", out / "geometry.yaml"]
    elif args.command == "gain-table":
        if args.sweep:
            records = harness.read_sweep_csv(args.sweep)
        else:
            records = harness.run_sweep(config, args.workers, progress=_report)
            outputs.append(harness.write_sweep_csv(records, out / "sweep.csv"))
        harness.emit_gain_table(records, config, out / "gain_table.csv")
        outputs.append(out / "gain_table.csv")
    elif args.command == "llr-hist":
        harness.emit_llr_histogram(config, out / "llr_histogram.csv")
        outputs = [out / "llr_histogram.csv"]
    harness.write_manifest(out, " ".join([args.command] + sys.argv[2:]), config, config.seed, args.workers, outputs)
    return outputs


def _report(rec):
    print(f"{rec.equalizer:>18s} {rec.ebn0_db:6.2f} dB  BER {rec.ber:.3e}  ({rec.errors}/{rec.bits})", flush=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            _run(args)
    except harness.ConfigError as exc:
        print(f"eqzsim: config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"eqzsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
