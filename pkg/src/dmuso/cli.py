"""dmuso command line: validate scenarios, run simulations, build plot data.

Exit codes: 0 success, 1 domain error, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import harness
from .errors import ConfigParseError, DmusoError, ScenarioError
from .model import load_scenario, validate_scenario

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
LONG_TTIS = 10000
FIG_FILES = ("fig2a.csv", "fig2b.csv", "fig3.csv", "fig4.csv")


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def cmd_validate(args) -> int:
    try:
        config = load_scenario(args.config)
        validate_scenario(config)
    except ConfigParseError as exc:
        _err(f"cannot parse {args.config}: {exc}")
        return EXIT_USAGE
    except ScenarioError as exc:
        for v in exc.violations:
            print(v)
        return EXIT_DOMAIN
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    t_max = LONG_TTIS if args.long else args.tti
    if t_max < 1:
        _err("--tti must be >= 1")
        return EXIT_USAGE
    try:
        config = load_scenario(args.config)
        metrics = harness.run(config, t_max=t_max, seed=args.seed)
        harness.write_outputs(metrics, args.out)
    except ConfigParseError as exc:
        _err(f"cannot parse {args.config}: {exc}")
        return EXIT_USAGE
    except ScenarioError as exc:
        for v in exc.violations:
            _err(str(v))
        return EXIT_DOMAIN
    except (DmusoError, OSError) as exc:
        _err(str(exc))
        return EXIT_DOMAIN
    for sid, row in harness.summary(metrics).items():
        print(f"{sid}: S={row['S']} delta={row['delta']} l_hat={row['l_hat']} "
              f"weighted_mean={row['weighted_mean_mbps']:.3f} Mbps "
              f"thr_delta={row['thr_delta_mbps']:.3f} Mbps beta={row['beta']:.6g}")
    return EXIT_OK


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report_tables(out_dir):
    """Plot-data tables (header, rows) keyed by file name, plus the summary."""
    out = Path(out_dir)
    with open(out / "summary.json") as fh:
        summary = json.load(fh)
    per_tti = _read_rows(out / "metrics_per_tti.csv")
    pareto = _read_rows(out / "pareto_trace.csv")
    snr = _read_rows(out / "snr_curve.csv")
    tables = {
        # interference function against the optimum bandwidth per service
        "fig2a.csv": (["slice", "service", "b_star_hz", "log1p_sinr", "verdict"],
                      [[p["service"].split(":")[0], p["service"], p["b_star_hz"],
                        p["log1p_sinr"], p["verdict"]] for p in pareto]),
        # learned radio allocation against the slice budget
        "fig2b.csv": (["slice", "t", "sum_r", "r_max"],
                      [[r["slice"], r["t"], r["sum_r"], summary[r["slice"]]["r_max"]]
                       for r in per_tti]),
        "fig3.csv": (["slice", "S", "weighted_mean_mbps", "unweighted_mean_mbps", "ttis"],
                     [[sid, g["S"], g["weighted_mean_mbps"], g["unweighted_mean_mbps"], g["ttis"]]
                      for sid, row in summary.items() for g in row["throughput_by_S"]]),
        "fig4.csv": (["slice", "bin_db", "thr_mbps", "mean_r"],
                     [[r["slice"], r["bin_db"], r["thr_mbps"], r["mean_r"]] for r in snr]),
    }
    return tables, summary


def cmd_report(args) -> int:
    out = Path(args.out)
    missing = [n for n in harness.OUTPUT_FILES if not (out / n).is_file()]
    if missing:
        _err(f"missing run artifacts in {out}: {', '.join(missing)}")
        return EXIT_DOMAIN
    try:
        tables, summary = report_tables(out)
        figs = out / "figs"
        figs.mkdir(exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=figs))
        try:
            for name, (header, rows) in tables.items():
                with open(staging / name, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(header)
                    w.writerows(rows)
            for name in FIG_FILES:
                os.replace(staging / name, figs / name)
        finally:
            shutil.rmtree(staging, ignore_errors=True)
    except (OSError, KeyError, ValueError) as exc:
        _err(f"cannot build report from {out}: {exc}")
        return EXIT_DOMAIN
    print(f"{'slice':<8}{'S':>6}{'delta':>7}{'weighted Mbps':>16}{'Thr(delta) Mbps':>18}")
    for sid, row in summary.items():
        print(f"{sid:<8}{row['S']:>6}{row['delta']:>7}{row['weighted_mean_mbps']:>16.3f}"
              f"{row['thr_delta_mbps']:>18.3f}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dmuso", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate a scenario and write results")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--tti", type=int, default=1000)
    r.add_argument("--long", action="store_true", help=f"run {LONG_TTIS} TTIs")
    r.add_argument("--out", default="./out")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarise a run and write figs/*.csv")
    rep.add_argument("--out", default="./out")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
