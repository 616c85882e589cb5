"""``evodialog`` command: run one agent variant over a list of seeds."""

from __future__ import annotations

import argparse
import logging
import sys

from .dialogue import load_schema
from .experiment import AGENTS, ConfigError, ExperimentConfig, load_config, run_experiment


def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evodialog", description=__doc__)
    p.add_argument("--config", help="flat key = value experiment file")
    p.add_argument("--schema", help="shipped schema name or path to a schema .ini")
    p.add_argument("--agent", choices=AGENTS)
    p.add_argument("--epsilon", type=float, help="exploration rate of the dqn variant")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", type=_seeds, help="comma-separated, e.g. 0,1,2,3,4")
    p.add_argument("--pop-evo", type=int, dest="pop_evo")
    p.add_argument("--pop-drl", type=int, dest="pop_drl")
    p.add_argument("--mut-strength", type=float, dest="mut_strength")
    p.add_argument("--no-eii", action="store_true", help="same as --agent erl")
    p.add_argument("--out", help="output directory (default: results)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        k: getattr(args, k)
        for k in ("schema", "agent", "epsilon", "epochs", "seeds", "pop_evo", "pop_drl", "mut_strength", "out")
    }
    if args.no_eii:
        if args.agent not in (None, "erl"):
            raise ConfigError("--no-eii conflicts with --agent " + args.agent)
        overrides["agent"] = "erl"
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig().updated(**overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        load_schema(cfg.schema)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"evodialog: error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_experiment(cfg)
    except OSError as exc:
        print(f"evodialog: error: {exc}", file=sys.stderr)
        return 1
    last = result.mean[-1]
    print(
        f"{cfg.label} on {cfg.schema}: epoch {last.epoch} success {last.success_rate:.3f} "
        f"reward {last.avg_reward:.2f} turns {last.avg_turns:.2f} -> {result.directory}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
