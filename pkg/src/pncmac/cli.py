"""Command-line interface: single scenarios and figure campaigns.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .campaign import campaign_groups, dataset_csv, group_for, run_campaign
from .config import ConfigError, load_config
from .runner import run_scenario, run_single, rows_to_csv
from .topology import TopologyError


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key] = value
    return out


def cmd_run(args) -> int:
    config = load_config(args.config, _parse_overrides(args.override))
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    if args.trace:
        for seed in config.seeds:
            result = run_single(config, seed)
            trace_path = os.path.join(out_dir, f"{config.scenario_id}.seed{seed}.trace")
            with open(trace_path, "w") as fh:
                fh.write("\n".join(result.trace_lines()) + "\n")
    rows = run_scenario(config)
    csv_path = os.path.join(out_dir, f"{config.scenario_id}.csv")
    with open(csv_path, "w") as fh:
        fh.write(rows_to_csv(rows))
    cfg_path = os.path.join(out_dir, f"{config.scenario_id}.config.yaml")
    with open(cfg_path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
    print(csv_path)
    return 0


def cmd_campaign(args) -> int:
    from .plots import render_figure

    group = group_for(args.name)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    result = run_campaign(group, desk=args.desk_scale, workers=args.workers)
    for fig, rows, ylabel in (
            (group.throughput_fig, result.throughput_rows, "throughput (bits/s)"),
            (group.delay_fig, result.delay_rows, "mean end-to-end delay (s)")):
        csv_path = os.path.join(out_dir, f"{fig}.csv")
        with open(csv_path, "w") as fh:
            fh.write(dataset_csv(rows))
        print(csv_path)
        if not args.no_plot:
            png_path = os.path.join(out_dir, f"{fig}.png")
            render_figure(rows, group.xlabel, ylabel, fig, png_path)
            print(png_path)
    for failure in result.failures:
        print(f"point failed: {failure}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pncmac",
        description="Discrete-event simulator of a relay-initiated MAC with "
                    "physical-layer network coding, plus CNC and DCF baselines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario over its seeds")
    p_run.add_argument("config", help="scenario YAML file")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted-key override, e.g. phy.cca_sensitivity_dbm=-95")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--trace", action="store_true",
                       help="also write a frame trace per seed")
    p_run.set_defaults(fn=cmd_run)

    names = sorted(campaign_groups())
    figs = sorted(f for g in campaign_groups().values()
                  for f in (g.throughput_fig, g.delay_fig))
    p_camp = sub.add_parser("campaign",
                            help="run a figure-reproduction sweep")
    p_camp.add_argument("name", help=f"one of {', '.join(figs + names)}")
    p_camp.add_argument("--desk-scale", action="store_true",
                        help="10 s x 3 seeds instead of 50 s x 10 seeds")
    p_camp.add_argument("--out", default="out", help="output directory")
    p_camp.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: cpu count)")
    p_camp.add_argument("--no-plot", action="store_true",
                        help="emit datasets only, skip figure rendering")
    p_camp.set_defaults(fn=cmd_campaign)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigError, TopologyError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
