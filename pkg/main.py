#!/usr/bin/env python3
"""
SqzLab command line

Subcommands are pure pipelines over files: budget, chain, synth, fit, snr,
profile and validate. Exit codes: 0 success, 2 input/config error,
3 model singularity, 4 analysis failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from shared.config import (
    APP_TITLE,
    DEFAULT_CONFIG_PATH,
    DURATION_S,
    FIT_BAND_HZ,
    FLOOR_BAND_HZ,
    LOG_FORMAT,
    LOG_LEVEL,
    SAMPLE_RATE_HZ,
    SEGMENT_LENGTH,
    VERSION,
)
from tools.exceptions import SqzLabError
from tools.file_utils import start_manifest, write_manifest
from tools.params import load_config
from tools import pipeline

def _pair(text: str) -> Tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got '{text}'")
    return a, b


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _sig3(value) -> str:
    return "n/a" if value is None else f"{value:.3g}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqzlab", description=APP_TITLE)
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default from LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", type=Path, default=DEFAULT_CONFIG_PATH,
                       help="physics config JSON (default from SQZLAB_CONFIG)")
        return p

    p = with_config(sub.add_parser("budget", help="noise budget CSV and summary"))
    p.add_argument("--fmin", type=float)
    p.add_argument("--fmax", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--scale", choices=["log", "linear"])
    p.add_argument("--squeezing", type=_on_off, default=False, metavar="on|off")
    p.add_argument("--r-eff", type=float, help="override the chain-derived squeeze factor")
    p.add_argument("--out", type=Path, required=True)

    p = with_config(sub.add_parser("chain", help="efficiency chain report"))
    p.add_argument("--preset", default="injection", help="chain preset, e.g. injection or monitor")
    p.add_argument("--direction", choices=["forward", "inverse"])
    p.add_argument("--measured-db", type=float, help="measured level for the inverse report")
    p.add_argument("--report", type=Path)

    p = with_config(sub.add_parser("synth", help="synthetic time series and its spectrum"))
    p.add_argument("--rate", type=float, default=SAMPLE_RATE_HZ)
    p.add_argument("--duration", type=float, default=DURATION_S)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--line", type=_pair, metavar="F0,AMP")
    p.add_argument("--band", type=_pair, metavar="FMIN,FMAX")
    p.add_argument("--squeezing", type=_on_off, default=False, metavar="on|off")
    p.add_argument("--r-eff", type=float)
    p.add_argument("--segment", type=int, default=SEGMENT_LENGTH)
    p.add_argument("--out", type=Path, required=True, help="time-series path; the spectrum is written as .csv")

    for name, help_text in (("fit", "fit model parameters to spectra"), ("profile", "objective along one parameter")):
        p = with_config(sub.add_parser(name, help=help_text))
        p.add_argument("--spectrum", type=Path, required=True, help="unsqueezed spectrum CSV")
        p.add_argument("--spectrum-sqz", type=Path, help="squeezing-on spectrum CSV")
        p.add_argument("--free", required=True, help="e.g. P,phi or P=0.01:0.2,r_eff")
        p.add_argument("--init", type=_init_values, default={}, metavar="NAME=VALUE,...")
        p.add_argument("--band", type=_pair, default=FIT_BAND_HZ, metavar="FMIN,FMAX")
        p.add_argument("--mask", type=_floats, default=[], metavar="F0,...", help="extra line frequencies to mask")
        p.add_argument("--r-eff", type=float, help="fixed squeeze factor for the squeezing-on spectrum")
        p.add_argument("--out", type=Path, required=name == "profile")
    p.add_argument("--parameter", required=True)
    p.add_argument("--grid", type=_floats, required=True, metavar="V1,V2,...")
    p.add_argument("--mode", choices=["reoptimize", "hold"], default="reoptimize")

    p = sub.add_parser("snr", help="compare the calibration line in two spectra")
    p.add_argument("--spectrum-a", type=Path, required=True)
    p.add_argument("--spectrum-b", type=Path, required=True)
    p.add_argument("--f0", type=float, required=True)
    p.add_argument("--floor-band", type=_pair, default=FLOOR_BAND_HZ, metavar="FMIN,FMAX")
    p.add_argument("--out", type=Path)

    with_config(sub.add_parser("validate", help="check a config and list every violation"))
    return parser


def _init_values(text: str) -> dict:
    values = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        name, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got '{item}'")
        try:
            values[name.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"'{value}' is not a number")
    return values


def _print_budget(summary: dict):
    print(f"✅ floor {_sig3(summary['floor_m_per_sqrthz'])} m/√Hz "
          f"(squeezing {'on' if summary['squeezing'] else 'off'}, r_eff {_sig3(summary['r_eff'])})")
    print(f"   floor ratio {_sig3(summary['floor_ratio'])}, crossover {_sig3(summary['crossover_hz'])} Hz")
    gain = summary["snr_gain"]
    print(f"   SNR gain {_sig3(gain['snr_ratio'])}, detection-rate gain {_sig3(gain['rate_gain'])}")
    if summary.get("within_calibration") is False:
        print(f"⚠️  floor differs from the measured {_sig3(summary['reference_floor_m_per_sqrthz'])} m/√Hz "
              "by more than the calibration uncertainty")


def _print_chain(summary: dict):
    for row in summary["stages"]:
        print(f"   {row['name']:<24} eta {row['eta']:.4f}  cumulative {row['cumulative_eta']:.4f}  "
              f"{row['cumulative_db']:.3g} dB")
    label = "detected" if summary["direction"] == "forward" else "inferred source"
    print(f"✅ {label} {_sig3(summary['detected_db'])} dB from {_sig3(summary['input_db'])} dB "
          f"(eta {_sig3(summary['composite_eta'])}, r_eff {_sig3(summary['r_eff'])})")
    if summary.get("residual_db") is not None:
        print(f"⚠️  residual vs quoted {_sig3(summary['reference_db'])} dB: {summary['residual_db']:+.3g} dB")
    for note in summary["notes"]:
        print(f"   note: {note}")


def _print_synth(summary: dict):
    print(f"✅ {summary['n_samples']} samples (seed {summary['seed']}), "
          f"{summary['n_averages']} averages at {_sig3(summary['resolution_hz'])} Hz")
    print(f"   floor-band median {_sig3(summary['floor_band_median'])} m/√Hz -> {summary['spectrum']}")


def _print_snr(summary: dict):
    print(f"✅ SNR ratio {_sig3(summary['snr_ratio'])}, amplitude ratio {_sig3(summary['amplitude_ratio'])}, "
          f"floor ratio {_sig3(summary['floor_ratio'])}")
    print(f"   implied r_eff {_sig3(summary['implied_r_eff'])}, detection-rate gain {_sig3(summary['rate_gain'])}")


def _print_fit(summary: dict):
    status = "✅" if summary["converged"] else "⚠️ "
    print(f"{status} fit {'converged' if summary['converged'] else 'stopped'} after {summary['n_evals']} evaluations, "
          f"residual rms {_sig3(summary['residual_rms'])}")
    for name, est in summary["estimates"].items():
        print(f"   {name} = {_sig3(est['value'])} ± {_sig3(est['uncertainty'])} {est['unit']}".rstrip())


def run(args: argparse.Namespace, argv: List[str]) -> int:
    if args.command == "validate":
        violations = pipeline.run_validate(args.config)
        if violations:
            print(f"❌ {args.config}: {len(violations)} violation(s)")
            for v in violations:
                print(f"   - {v}")
            return 2
        print(f"✅ {args.config} is valid")
        return 0

    config_path: Optional[Path] = getattr(args, "config", None)
    seed = getattr(args, "seed", None)
    manifest = start_manifest(config_path, [seed] if seed is not None else [], argv)
    config = load_config(config_path) if config_path is not None else None

    if args.command == "budget":
        result = pipeline.run_budget(config, args.out, args.squeezing, args.fmin, args.fmax, args.points,
                                     args.scale, args.r_eff)
        _print_budget(result.summary)
    elif args.command == "chain":
        result = pipeline.run_chain(config, args.preset, args.report, args.direction, args.measured_db)
        _print_chain(result.summary)
    elif args.command == "synth":
        result = pipeline.run_synth(config, args.out, args.seed, args.squeezing, args.rate, args.duration,
                                    args.line, args.band, args.r_eff, args.segment)
        _print_synth(result.summary)
    elif args.command in ("fit", "profile"):
        problem = pipeline.build_problem(config, args.spectrum, args.free, args.spectrum_sqz, args.mask,
                                         args.band, args.init, args.r_eff)
        if args.command == "fit":
            result = pipeline.run_fit(problem, args.out)
            _print_fit(result.summary)
        else:
            result = pipeline.run_profile(problem, args.parameter, np.array(args.grid), args.mode, args.out)
            print(f"✅ profile of {result.summary['parameter']} ({result.summary['mode']}): "
                  f"minimum at {_sig3(result.summary['argmin'])}, span {_sig3(result.summary['objective_span'])}")
    else:
        result = pipeline.run_snr(args.spectrum_a, args.spectrum_b, args.f0, args.floor_band, args.out)
        _print_snr(result.summary)

    if result.artifacts:
        write_manifest(manifest, result.artifacts)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)
    try:
        return run(args, ["sqzlab"] + argv)
    except SqzLabError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
