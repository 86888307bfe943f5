"""Command-line experiment runner.

Each subcommand reproduces one desk-scale study as a CSV file: the
convergence traces of both position optimizers, or a sweep over one
system parameter with the requested scheme matrix.  Progress goes to
stderr; the output file carries only CSV.

Configuration precedence: built-in defaults < --config JSON file <
command-line flags.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .channel import ScenarioConfig
from .experiments import (
    ALL_SCHEMES,
    SchemeId,
    SweepSpec,
    run_convergence_study,
    run_sweep,
    watts_to_dbm,
)
from .optimizer import DescentConfig

SWEEP_COMMANDS = {
    # subcommand -> (sweep parameter, default values)
    "sweep-rate": ("rate", (1.0, 2.0, 3.0, 4.0, 5.0)),
    "sweep-users": ("users", (2, 4, 6, 8, 10, 12, 14, 16)),
    "sweep-paths": ("paths", (2, 4, 6, 8, 10, 12)),
    "sweep-aoas": ("aoa_pool", (8, 12, 16, 20, 24, 28)),
    "sweep-region": ("region", (0.1, 0.5, 1.0, 2.0, 4.0)),
    "sweep-aod-error": ("aod_error", (0.0, 0.5, 1.0, 1.5, 2.0)),
    "sweep-prm-error": ("prm_error", (0.0, 0.05, 0.1, 0.15, 0.2)),
}

# (flag, config attribute, type, help)
SCENARIO_FLAGS = [
    ("--n1", "n1", int, "horizontal BS array size"),
    ("--n2", "n2", int, "vertical BS array size"),
    ("--users", "num_users", int, "number of users K"),
    ("--paths", "num_paths", int, "channel paths per user L"),
    ("--aoas", "aoa_pool_size", int, "shared AoA pool size S"),
    ("--wavelength", "wavelength", float, "carrier wavelength in meters"),
    ("--c0-db", "c0_db", float, "average channel gain at 1 m reference, dB"),
    ("--alpha", "alpha", float, "path-loss exponent"),
    ("--noise-dbm", "noise_dbm", float, "noise power in dBm"),
    ("--region", "region_size_wavelengths", float, "moving-region side J in wavelengths"),
    ("--rate", "rate_bps_hz", float, "per-user rate requirement, bps/Hz"),
    ("--distance-min", "distance_min", float, "minimum user distance, m"),
    ("--distance-max", "distance_max", float, "maximum user distance, m"),
    ("--bs-pitch", "bs_pitch_wavelengths", float, "BS antenna pitch in wavelengths"),
    ("--bs-plane", "bs_plane", str, "coordinate plane of the BS array (xz, yz, xy)"),
]

DESCENT_FLAGS = [
    ("--t-max", "t_max", int, "maximum outer gradient-descent iterations"),
    ("--tau0", "tau0", float, "initial step size for gradient descent"),
    ("--kappa", "kappa", float, "backtracking shrink factor"),
    ("--xi", "xi", float, "Armijo sufficient-decrease control"),
    ("--epsilon", "epsilon", float, "termination decrement threshold, watts"),
    ("--fd-delta", "fd_delta", float, "finite-difference step, meters"),
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_csv(header: list[str], rows: list[list], path: str | None) -> None:
    """Write rows as comma-separated LF-terminated lines (17 significant
    digits for floats, so a round-trip parse is exact)."""
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    text = "\n".join(lines) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ma-uplink",
        description="Movable-antenna multiuser uplink power-minimization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    scenario_defaults = ScenarioConfig()
    descent_defaults = DescentConfig()

    def add_common(p):
        # None defaults so a --config file can fill any unset value; the
        # real fallbacks are applied in _merge_config.
        p.add_argument("--trials", type=int, default=None,
                       help="Monte Carlo trials per point (default 200)")
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel worker processes (default: available parallelism)")
        p.add_argument("--config", default=None, help="JSON file with flag overrides")
        p.add_argument("--schemes", default=None,
                       help="comma list of schemes, e.g. MA-ZF,FPA-MMSE (default: all six)")
        for flag, attr, typ, help_text in SCENARIO_FLAGS:
            p.add_argument(flag, dest=attr, type=typ, default=None,
                           help=f"{help_text} (default {getattr(scenario_defaults, attr)})")
        for flag, attr, typ, help_text in DESCENT_FLAGS:
            p.add_argument(flag, dest=attr, type=typ, default=None,
                           help=f"{help_text} (default {getattr(descent_defaults, attr)})")

    conv = sub.add_parser("convergence", help="per-iteration traces of both MA algorithms")
    add_common(conv)

    for command, (param, values) in SWEEP_COMMANDS.items():
        p = sub.add_parser(command, help=f"sweep over {param}")
        add_common(p)
        p.add_argument("--values", default=None,
                       help=f"comma list of sweep values (default {','.join(map(str, values))})")
    return parser


def _merge_config(args: argparse.Namespace) -> None:
    """Apply JSON config-file values where no flag was given, then the
    built-in fallbacks for the run-control options."""
    if args.config is not None:
        with open(args.config) as fh:
            overrides = json.load(fh)
        known = {attr for _, attr, _, _ in SCENARIO_FLAGS + DESCENT_FLAGS}
        known |= {"trials", "seed", "jobs", "schemes", "values", "out"}
        for key, value in overrides.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if getattr(args, key, None) is None:
                setattr(args, key, value)
    if args.trials is None:
        args.trials = 200
    if args.seed is None:
        args.seed = 0
    if args.jobs is None:
        args.jobs = os.cpu_count() or 1


def _configs_from_args(args) -> tuple[ScenarioConfig, DescentConfig]:
    scen = {attr: getattr(args, attr) for _, attr, _, _ in SCENARIO_FLAGS
            if getattr(args, attr) is not None}
    desc = {attr: getattr(args, attr) for _, attr, _, _ in DESCENT_FLAGS
            if getattr(args, attr) is not None}
    return ScenarioConfig(**scen), DescentConfig(**desc)


def _parse_schemes(text: str | None) -> tuple[SchemeId, ...]:
    if text is None:
        return ALL_SCHEMES
    return tuple(SchemeId.parse(part) for part in text.split(",") if part)


def _parse_values(text: str | None, defaults, parameter: str):
    if text is None:
        return defaults
    caster = int if parameter in ("users", "paths", "aoa_pool") else float
    return tuple(caster(part) for part in text.split(",") if part)


def _progress(label):
    def report(done, total):
        if sys.stderr.isatty() or done == total or done % 10 == 0:
            print(f"{label}: {done}/{total} trials", file=sys.stderr, flush=True)

    return report


def _run_sweep_command(args, parameter: str, default_values) -> int:
    base, cfg = _configs_from_args(args)
    values = _parse_values(getattr(args, "values", None), default_values, parameter)
    if parameter == "users":
        limit = base.n1 * base.n2
        if any(v > limit for v in values):
            raise ValueError(f"K <= N required (N = {limit})")
    spec = SweepSpec(
        parameter=parameter,
        values=values,
        base=base,
        trials=args.trials,
        schemes=_parse_schemes(args.schemes),
        seed=args.seed,
    )
    rows = run_sweep(spec, cfg, jobs=args.jobs, progress=_progress(parameter))
    header = ["sweep_param", "sweep_value", "scheme", "trials", "failures",
              "mean_power_dbm", "mean_power_w"]
    table = [
        [r.sweep_param, r.sweep_value, str(r.scheme), r.trials, r.failures,
         r.mean_power_dbm, r.mean_power_w]
        for r in rows
    ]
    emit_csv(header, table, args.out)
    return 0


def _run_convergence(args) -> int:
    base, cfg = _configs_from_args(args)
    traces = run_convergence_study(
        base, cfg, args.trials, args.seed, jobs=args.jobs,
        progress=_progress("convergence"),
    )
    header = ["iteration", "ma_zf_total_dbm", "ma_mmse_total_dbm",
              "mmse_signal_db", "mmse_interference_db"]
    width = max(len(v) for v in traces.values())

    def at(arr, i):
        return arr[min(i, len(arr) - 1)]

    table = []
    for i in range(width):
        table.append([
            i,
            watts_to_dbm(at(traces["zf_total_w"], i)),
            watts_to_dbm(at(traces["mmse_total_w"], i)),
            10.0 * math.log10(at(traces["mmse_signal"], i)),
            10.0 * math.log10(at(traces["mmse_interference"], i)),
        ])
    emit_csv(header, table, args.out)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config(args)
        if args.command == "convergence":
            return _run_convergence(args)
        parameter, defaults = SWEEP_COMMANDS[args.command]
        return _run_sweep_command(args, parameter, defaults)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
