"""Command line entry point: ``vssapsa {run,compare,calibrate,export,selftest}``."""
import argparse
import json
import logging
import sys
from dataclasses import replace

from .harness import (VSS_ALGORITHMS, ConfigError, ExperimentConfig, calibrate,
                      compare, emit_csv, figure_config, run_monte_carlo)
from .signals import export_scenario, synthesize_scenario

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2

log = logging.getLogger("vssapsa")


def _fatal_divergence(traces):
    # APA is expected to blow up under impulsive noise; its column is flagged
    bad = [name for name, t in traces
           if t.diverged and t.config.algorithm != "apa_fixed"]
    for name in bad:
        log.error("%s diverged", name)
    return bool(bad)


def _overrides(args):
    out = {}
    if args.runs is not None:
        out["monte_carlo_runs"] = args.runs
    if args.samples is not None:
        out["n_samples"] = args.samples
    return out


def cmd_run(args):
    cfg = ExperimentConfig.load(args.config)
    cfg = replace(cfg, **_overrides(args))
    t = run_monte_carlo(cfg)
    traces = [(cfg.label(), t)]
    emit_csv(traces, args.out)
    print(f"{cfg.label()}: steady state {t.steady_state_db():.2f} dB -> {args.out}")
    return EXIT_DIVERGED if _fatal_divergence(traces) else EXIT_OK


def cmd_compare(args):
    traces = compare(args.figure, **_overrides(args))
    emit_csv(traces, args.out)
    for name, t in traces:
        flag = " (diverged)" if t.diverged else ""
        print(f"{name:12s} steady state {t.steady_state_db():8.2f} dB{flag}")
    print(f"wrote {args.out}")
    return EXIT_DIVERGED if _fatal_divergence(traces) else EXIT_OK


def cmd_calibrate(args):
    base = figure_config(1, **_overrides(args))
    result = calibrate(args.algorithm, base)
    print(f"reference APA(0.1) crosses -20 dB at {result.reference_crossing}; "
          f"limit {result.limit:g}")
    for r in result.rows:
        cross = "never" if r.crossing is None else r.crossing
        print(f"alpha {r.alpha:<7g} mu_max {r.mu_max:<5g} "
              f"steady state {r.steady_state_db:8.2f} dB  crossing {cross}")
    if result.best is None:
        print("no admissible grid point")
        return EXIT_ERROR
    print("best:", json.dumps(result.params()))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result.params(), fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def cmd_export(args):
    cfg = ExperimentConfig.load(args.config)
    sc = synthesize_scenario(cfg, args.run)
    print(export_scenario(sc, cfg, args.dir, args.run))
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest
    return EXIT_OK if run_selftest(args.seed) else EXIT_ERROR


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vssapsa",
        description="Variable step-size affine projection sign algorithm experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def sizes(p):
        p.add_argument("--runs", type=int, help="Monte Carlo runs (overrides config)")
        p.add_argument("--samples", type=int, help="samples per run (overrides config)")

    p = sub.add_parser("run", help="single experiment from a JSON config")
    p.add_argument("--config", required=True, help="JSON file of ExperimentConfig fields")
    p.add_argument("--out", required=True, help="CSV output path")
    sizes(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="all algorithms on a preset scenario")
    p.add_argument("--figure", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    sizes(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="grid-search VSS parameters on scenario 1")
    p.add_argument("--algorithm", choices=VSS_ALGORITHMS, required=True)
    p.add_argument("--out", help="write the chosen parameters as JSON")
    sizes(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("export", help="write a scenario's raw signals")
    p.add_argument("--config", required=True)
    p.add_argument("--dir", required=True)
    p.add_argument("--run", type=int, default=0)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("selftest", help="oracle and property checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
