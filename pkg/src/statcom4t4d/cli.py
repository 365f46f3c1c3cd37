"""Command-line interface.

Exit codes:
  0  success
  1  validation finished with failed expectations
  2  usage error (bad arguments, missing config file)
  3  configuration error (schema or value violation)
  4  numerical divergence (a snapshot is written to the output directory)
  5  analysis error (malformed record, unknown channel, bad window)
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import yaml

from . import scenario
from .config import ScenarioConfig
from .analysis import integer_cycles
from .control import io_envelope
from .errors import (ChannelNotFoundError, ConfigError, DivergenceError, RecordParseError,
                     WindowError)
from .record import TimeSeriesRecord

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DIVERGENCE = 4
EXIT_ANALYSIS = 5

OUTDIR_ENV = "STATCOM4T4D_OUTDIR"
SCHEMA_HINT = ("a config is a YAML mapping with sections grid, modules, controller, "
               "modulation, sim, events and seed; run `list-goldens` for ready-made ones")

log = logging.getLogger("statcom4t4d")


def default_metrics(duration: float, f0: float, fs: float) -> dict:
    """Metric spec used by `run` and by `analyze` when no spec is given.

    Windows cover the last whole-sample cycle count of at least ten cycles,
    or the longest such count that fits a shorter record.
    """
    cycles = integer_cycles(fs, f0, 10)
    while cycles > 1 and cycles / f0 > duration + 1e-9:
        cycles = _shorter(cycles, fs, f0)
    return {
        "current_thd_h50": {"kind": "thd", "channel": "i_o", "cycles": cycles,
                            "harmonics": 50, "min_cycles": 1},
        "current_thd_full": {"kind": "thd", "channel": "i_o", "cycles": cycles,
                             "harmonics": None, "min_cycles": 1},
        "voltage_thd_full": {"kind": "thd_full_band", "channel": "v_arm",
                             "power_channel": "v_arm_sq", "cycles": cycles, "min_cycles": 1},
        "current_amplitude": {"kind": "amplitude", "channel": "i_o", "cycles": cycles},
        "current_phase_deg": {"kind": "phase", "channel": "i_o", "reference": "v_g",
                              "cycles": cycles},
        "vsm_mean": {"kind": "mean", "channel": "vsm_mean", "cycles": cycles},
        "vsm_spread": {"kind": "spread", "cycles": cycles},
        "a_hat_mean": {"kind": "mean", "channel": "a_hat", "cycles": cycles},
        "eps_mean": {"kind": "mean", "channel": "eps", "cycles": cycles},
        "level_count": {"kind": "level_count", "cycles": cycles},
    }


def _shorter(cycles: int, fs: float, f0: float) -> int:
    for k in range(cycles - 1, 0, -1):
        n = k * fs / f0
        if abs(n - round(n)) <= 1e-6 * n:
            return k
    return 1


def compute_metrics(record: TimeSeriesRecord, spec: dict, f0: float) -> dict:
    return {name: float(scenario.evaluate_metric(record, m, f0)) for name, m in spec.items()}


def dump_summary(metrics: dict) -> str:
    return yaml.safe_dump(metrics, sort_keys=False)


def _outdir(args) -> Path:
    d = Path(args.outdir or os.environ.get(OUTDIR_ENV) or "out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_config(args) -> ScenarioConfig:
    cfg = scenario.resolve_config(args.config)
    return cfg.with_overrides(args.set) if args.set else cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    (out / "config.yaml").write_text(cfg.to_yaml())
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", scenario.SaturationWarning)
            record = scenario.run(cfg)
    except DivergenceError as exc:
        (out / "snapshot.yaml").write_text(yaml.safe_dump(exc.snapshot, sort_keys=False))
        print(f"error: {exc}; snapshot written to {out / 'snapshot.yaml'}", file=sys.stderr)
        return EXIT_DIVERGENCE
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    record.to_csv(out / "record.csv")
    spec = default_metrics(cfg.sim.duration, cfg.grid.freq, record.sample_rate)
    (out / "metrics-spec.yaml").write_text(yaml.safe_dump(spec, sort_keys=False))
    (out / "metrics.yaml").write_text(dump_summary(compute_metrics(record, spec, cfg.grid.freq)))
    meta = {k: v for k, v in record.meta.items()}
    (out / "run-info.yaml").write_text(yaml.safe_dump(meta, sort_keys=False))
    log.info("energy residual %.3g of throughput, %d complementarity violations",
             meta["energy_residual_rel"], meta["complementarity_violations"])
    print(f"wrote {out / 'record.csv'}, {out / 'metrics.yaml'} and {out / 'run-info.yaml'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    record = TimeSeriesRecord.from_csv(args.record)
    if args.spec:
        spec = yaml.safe_load(Path(args.spec).read_text())
        if not isinstance(spec, dict):
            raise ConfigError("metric spec must be a mapping of name -> metric", "spec")
    else:
        duration = float(record.t[-1] - record.t[0]) + 1.0 / record.sample_rate
        spec = default_metrics(duration, args.f0, record.sample_rate)
    for item in args.metric or ():
        name, _, body = item.partition("=")
        spec[name] = yaml.safe_load(body)
    text = dump_summary(compute_metrics(record, spec, args.f0))
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_envelope(args) -> int:
    cfg = _load_config(args)
    grid = scenario.grid_params(cfg)
    v_sm_max = args.v_sm_max or cfg.modules.v_sm_max
    if v_sm_max is None:
        raise ConfigError("no v_sm_max in config; pass --v-sm-max", "modules.v_sm_max")
    v_g_max = args.v_g_max if args.v_g_max is not None else cfg.grid.v_amp
    a_m = args.a_m if args.a_m is not None else cfg.controller.a_m_target
    ns = range(args.n_min, args.n_max + 1) if args.n_min is not None else [cfg.modules.n]
    print(f"{'N':>3} {'A_m*':>6} {'V_sm,max':>10} {'V_g,max':>10} {'L_g':>10} {'I_max':>12}")
    for n in ns:
        i_max = io_envelope(a_m, n, v_sm_max, v_g_max, grid)
        print(f"{n:>3} {a_m:>6.3f} {v_sm_max:>10.1f} {v_g_max:>10.1f} {grid.l_g:>10.4g} "
              f"{max(i_max, 0.0):>12.2f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    names = args.names or list(scenario.GOLDEN_NAMES)
    goldens = [scenario.load_golden(n) for n in names]
    report = scenario.validate(goldens, workers=args.workers)
    print(report.table())
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_list(args) -> int:
    for name in scenario.GOLDEN_NAMES:
        g = scenario.load_golden(name)
        print(f"{name:<14} {g.config.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="statcom4t4d", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write record + metrics")
    r.add_argument("config", help="YAML path or golden name")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted-path override, e.g. sim.duration=0.2 (repeatable)")
    r.add_argument("-o", "--outdir", help=f"output directory (default ${OUTDIR_ENV} or ./out)")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="compute metrics from a record CSV")
    a.add_argument("record")
    a.add_argument("--spec", help="YAML mapping of metric name -> metric definition")
    a.add_argument("--metric", action="append", metavar="NAME=YAML",
                   help="extra metric, e.g. 'thd={kind: thd, channel: i_o, cycles: 10}'")
    a.add_argument("--f0", type=float, default=60.0, help="fundamental frequency (Hz)")
    a.add_argument("--output", help="write the summary here instead of stdout")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("envelope", help="tabulate the deliverable current bound")
    e.add_argument("config", nargs="?", default="sim-steady")
    e.add_argument("--set", action="append", metavar="KEY=VALUE")
    e.add_argument("--n-min", type=int)
    e.add_argument("--n-max", type=int)
    e.add_argument("--v-sm-max", type=float)
    e.add_argument("--v-g-max", type=float)
    e.add_argument("--a-m", type=float)
    e.set_defaults(func=cmd_envelope)

    v = sub.add_parser("validate", help="run golden scenarios and check expectations")
    v.add_argument("names", nargs="*")
    v.add_argument("--workers", type=int, default=1)
    v.set_defaults(func=cmd_validate)

    ls = sub.add_parser("list-goldens", help="list the golden scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    if getattr(args, "n_min", None) is not None and args.n_max is None:
        args.n_max = args.n_min
    try:
        return args.func(args)
    except ConfigError as exc:
        if str(exc).startswith("config file not found") or str(exc).startswith("config not found"):
            print(f"usage error: {exc}\nhint: {SCHEMA_HINT}", file=sys.stderr)
            return EXIT_USAGE
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RecordParseError, ChannelNotFoundError, WindowError, FileNotFoundError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
