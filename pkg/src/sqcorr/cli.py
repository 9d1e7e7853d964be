"""Command-line front end.

Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 data-format error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

from . import io as sio
from .detection import simulate_record
from .estimators import (
    EstimationError,
    compute_stats,
    squeezing_covariance,
    squeezing_homodyne,
    squeezing_lo_free,
)
from .experiments import (
    DEFAULT_PHASES,
    DEFAULT_TRANSMISSIONS,
    SweepSpec,
    Swept,
    run_attenuation_sweep,
    run_comparison,
    nominal_calibration,
    run_phase_sweep,
    snl_calibration_campaign,
)
from .gaussian import attenuated_inputs

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4

SEED_ENV = "SQCORR_SEED"


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _float_list(text):
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _scenario(args):
    """Config file + env seed + CLI overrides (CLI wins over env over file)."""
    entries = {}
    if args.config:
        try:
            entries = sio.load_config(args.config)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc}")
    overrides = dict(args.set or [])
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None and env_seed.strip():
        overrides.setdefault("digitizer.seed", env_seed.strip())
    if args.seed is not None:
        overrides["digitizer.seed"] = str(args.seed)
    if getattr(args, "samples", None) is not None:
        overrides["digitizer.n_samples"] = str(args.samples)
    return sio.build_scenario(entries, overrides)


def _add_scenario_args(p):
    p.add_argument("config", nargs="?", help="key=value scenario file")
    p.add_argument("--set", action="append", type=_override, metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help=f"master seed (overrides ${SEED_ENV} and the config)")
    p.add_argument("--samples", type=int, help="samples per run")
    p.add_argument("--workers", type=int, default=1)


def cmd_simulate(args):
    sc = _scenario(args)
    rec = simulate_record(sc, workers=args.workers)
    try:
        size = sio.write_record(args.out, rec)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}")
    print(f"n={rec.n} seed={rec.seed_used} bytes={size} out={args.out}")
    return EXIT_OK


def _lo_power(args, rec):
    if args.lo_power is not None:
        return args.lo_power
    if rec.scenario is not None:
        sc = rec.scenario
        return attenuated_inputs(sc.state, sc.lo, sc.loss).amplitude_sq
    raise CliError(EXIT_USAGE, "--lo-power is required for records without a simulated sidecar")


def cmd_estimate(args):
    if args.method and not args.snl:
        raise CliError(EXIT_USAGE, f"--method {args.method} needs a shot-noise calibration (--snl)")
    try:
        rec = sio.read_record(args.record)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.record}: {exc}")
    st = compute_stats(rec)
    fields = {
        "n": st.n, "mean1": st.mean1, "mean2": st.mean2, "var1": st.var1, "var2": st.var2,
        "var_diff": st.var_diff, "var_diff_se": st.se_var_diff, "cov": st.cov, "cov_se": st.se_cov,
    }
    if args.snl:
        try:
            snl = sio.read_calibration(args.snl)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {args.snl}: {exc}")
        power = _lo_power(args, rec)
        method = args.method or "cov"
        if method == "hd":
            est = squeezing_homodyne(st.var_diff, snl, power, st.se_var_diff)
        elif method == "cov":
            est = squeezing_covariance(st.cov, snl, power, st.se_cov)
        else:
            est = squeezing_lo_free(st.cov, snl.snl_at(power), st.se_cov)
        fields.update(method=method, lo_power=power, snl=snl.snl_at(power),
                      s=est.s, s_se=est.se, s_db=est.s_db, s_db_se=est.se_db)
    if args.csv:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(fields.keys())
        w.writerow(v if isinstance(v, str) else (str(v) if isinstance(v, int) else sio.fmt17(v))
                   for v in fields.values())
    else:
        for k, v in fields.items():
            if isinstance(v, float):
                v = "nan" if math.isnan(v) else f"{v:.10g}"
            print(f"{k} = {v}")
    return EXIT_OK


def cmd_calibrate(args):
    if len(args.powers) < 2:
        raise CliError(EXIT_USAGE, "--powers needs at least 2 LO powers")
    sc = _scenario(args)
    powers = sorted(args.powers)
    cal = snl_calibration_campaign(sc, powers, workers=args.workers)
    try:
        sio.write_calibration(args.out, cal)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}")
    print(f"slope={cal.slope:.10g} slope_se={cal.slope_se:.3g} en_total={cal.en_total:.10g} out={args.out}")
    return EXIT_OK


def cmd_sweep(args):
    sc = _scenario(args)
    kind = Swept.parse(args.sweep)
    values = args.values
    if values is None:
        if kind is Swept.LO_PHASE:
            values = DEFAULT_PHASES
        elif kind is Swept.TRANSMISSION:
            values = DEFAULT_TRANSMISSIONS
        else:
            values = [sc.lo.amplitude_sq * t for t in DEFAULT_TRANSMISSIONS]
    snl = None
    if args.snl:
        try:
            snl = sio.read_calibration(args.snl)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {args.snl}: {exc}")
    spec = SweepSpec(sc, kind, values, seeds_per_point=args.seeds)
    if kind is Swept.LO_PHASE:
        res = run_phase_sweep(spec, snl, workers=args.workers)
    elif kind is Swept.TRANSMISSION:
        res = run_attenuation_sweep(spec, snl, workers=args.workers)
    else:
        res = run_comparison(spec, snl or nominal_calibration(sc), workers=args.workers).sweep
    try:
        sio.write_sweep(args.out, res)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}")
    msg = f"rows={len(res.rows)} seed={spec.seed} out={args.out}"
    if kind is Swept.TRANSMISSION:
        msg += (f" exponent={res.fit.exponent:.4f}" if res.fit else " exponent=refused")
    print(msg)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sqcorr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a two-channel record")
    _add_scenario_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="statistics and squeezing estimate for a record")
    p.add_argument("record")
    p.add_argument("--snl", help="calibration file from `sqcorr calibrate`")
    p.add_argument("--method", choices=("hd", "cov", "lofree"))
    p.add_argument("--lo-power", type=float, help="LO power at the beamsplitter (default: from sidecar)")
    p.add_argument("--csv", action="store_true", help="print one CSV row instead of text")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", help="shot-noise calibration campaign")
    _add_scenario_args(p)
    p.add_argument("--powers", type=_float_list, required=True, help="comma-separated LO powers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="phase, attenuation or LO-power sweep")
    _add_scenario_args(p)
    p.add_argument("--sweep", required=True, choices=("phase", "attenuation", "power"))
    p.add_argument("--values", type=_float_list, help="comma-separated swept values")
    p.add_argument("--seeds", type=int, default=1, help="repetitions per point")
    p.add_argument("--snl", help="calibration file (default: exact calibration for the detectors)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"sqcorr: error: {exc}", file=sys.stderr)
        return exc.code
    except sio.ConfigError as exc:
        print(f"sqcorr: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except sio.RecordFormatError as exc:
        print(f"sqcorr: bad data file: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (EstimationError, ValueError) as exc:
        print(f"sqcorr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sqcorr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
