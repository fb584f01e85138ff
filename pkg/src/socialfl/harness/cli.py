"""Command-line entry point: ``socialfl <experiment> [--config F] [--out D] [--seed N]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from socialfl.harness.config import ConfigError, ExperimentConfig, load_config
from socialfl.harness import experiments

log = logging.getLogger("socialfl")

COMMANDS = ("coalition", "consensus", "provenance", "pipeline", "all")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socialfl", description="SocialFL simulator experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--no-figures", action="store_true", help="write CSVs only")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig(master_seed=0)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        config = config.with_seed(args.seed)
    return config


def run(command: str, config: ExperimentConfig, out: Path, figures: bool = True) -> list[Path]:
    written: list[Path] = []
    if command in ("coalition", "all"):
        res = experiments.run_coalition_experiment(config, out)
        log.info("coalition: %d iterations, payoff %.4f vs %.4f", res.trace.iterations, res.final_avg_payoff, res.noncoop_avg_payoff)
        written += res.paths
        if figures:
            from socialfl.harness.plots import plot_coalition

            written.append(plot_coalition(out / "coalition.csv"))
    if command in ("consensus", "all"):
        res = experiments.run_consensus_experiment(config, out)
        log.info("consensus: %d violations, %d empty blocks", res.safety_violations, res.empty_blocks)
        written += res.paths
        if figures:
            from socialfl.harness.plots import plot_reputation

            byz = {n.id for n in res.state.nodes if n.byzantine}
            written.append(plot_reputation(res.reputation_history, byz, out / "reputation.png"))
    if command in ("provenance", "all"):
        res = experiments.run_provenance_experiment(config, out)
        written += res.paths
        if figures:
            from socialfl.harness.plots import plot_provenance

            written.append(plot_provenance(out / "provenance.csv"))
    if command in ("pipeline", "all"):
        res = experiments.run_full_pipeline(config, out / "pipeline" if command == "all" else out)
        log.info("pipeline: chain height %d, verdict %s", res.state.tip.height, res.verdict)
        written += res.paths
    return written


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = resolve_config(args)
        out = args.out or Path(config.output_dir)
        for path in run(args.command, config, out, figures=not args.no_figures):
            print(path)
    except Exception as exc:  # typed message, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
