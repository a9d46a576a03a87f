"""Command-line entry point: `heraldsim <scenario> [options]`."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError
from .harness import SCENARIOS, parse_config, resolution_report, run_scenario


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="heraldsim",
        description="Simulate beamsplitter-heralded entanglement of two "
                    "cavity-coupled quantum-dot spins.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", type=Path, help="flat key=value configuration file")
    ap.add_argument("--seed", type=int, help="master seed override")
    ap.add_argument("--out", type=Path, help="output directory override")
    ap.add_argument("--n-traj", type=int, help="trajectory count override")
    ap.add_argument("--emit", choices=("csv", "json", "both"),
                    help="output format override")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg, _ = parse_config(text)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    cfg.scenario = args.scenario
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.out is not None:
        cfg.output_dir = str(args.out)
    if args.n_traj is not None:
        cfg.n_traj = args.n_traj
    if args.emit is not None:
        cfg.emit = args.emit

    for line in resolution_report(cfg):
        print(line)
    return run_scenario(cfg)


if __name__ == "__main__":
    sys.exit(main())
