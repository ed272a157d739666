import argparse, sys
from pathlib import Path
from typing import Optional, Sequence

from decorators import logger, set_log_level
from module.config_module import ConfigError, Settings, apply_overrides, parse_config, spec_from_mapping
from module.experiment_module import cmd_analyze, cmd_simulate, cmd_sweep
from module.schema_json import ExperimentSpec
from module.validation_module import CORRUPTIBLE, run_validation, write_report

EXIT_OK, EXIT_VALIDATION_FAILED, EXIT_ERROR = 0, 1, 2

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfwpt",
        description="Cell-free massive MIMO wireless power transfer: simulation, closed forms and energy-state chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="master seed, overrides system.seed")
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--workers", type=int, help="worker processes")

    for name, text in (("simulate", "run every sweep point and emit CSV/JSON"),
                       ("sweep", "simulate, then summarize trends across the sweep")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--intervals", type=int, help="coherence intervals per deployment")
        p.add_argument("--topologies", type=int, help="independent deployments per sweep point")
        p.add_argument("--topology-file", type=Path, help="reload a stored topology.json bit-exactly")

    p = sub.add_parser("validate", parents=[common], help="closed forms against sampling oracles")
    p.add_argument("--corrupt-term", choices=CORRUPTIBLE, help="negative control: inflate one analytical term")

    p = sub.add_parser("analyze", parents=[common], help="recompute Gamma/Markov layers from stored samples")
    p.add_argument("--run-dir", type=Path, required=True, help="run directory or a root holding several")
    return parser

def load_spec(args: argparse.Namespace) -> ExperimentSpec:
    settings = Settings()
    set_log_level(settings.log_level)
    if args.config is not None:
        spec = parse_config(args.config, settings)
    else:
        spec = spec_from_mapping({"workers": settings.workers, "out_dir": settings.out_dir}, source="<defaults>")
    return apply_overrides(
        spec,
        seed=args.seed,
        out_dir=args.out,
        workers=args.workers,
        intervals=getattr(args, "intervals", None),
        topologies=getattr(args, "topologies", None),
    )

def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args)
        if args.command == "simulate":
            cmd_simulate(spec, args.topology_file)
        elif args.command == "sweep":
            cmd_sweep(spec, args.topology_file)
        elif args.command == "analyze":
            cmd_analyze(args.run_dir, spec)
        else:
            rows = run_validation(spec.oracle, corrupt=args.corrupt_term)
            write_report(rows, spec.out_dir)
            failed = sum(not r.passed for r in rows)
            if failed:
                logger.error(f"validation: {failed}/{len(rows)} rows failed")
                return EXIT_VALIDATION_FAILED
            logger.info(f"validation: all {len(rows)} rows passed")
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_ERROR
    except (OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    except RuntimeError as e:
        logger.exception(f"{args.command} failed: {e}")
        return EXIT_ERROR
    return EXIT_OK

if __name__ == "__main__":
    sys.exit(main())
