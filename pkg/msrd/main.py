"""msrd command line entry point"""
import argparse
import os
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from msrd.config import settings
from msrd.routers import EXIT_RUNTIME, EXIT_VALIDATION, CommandContext
from msrd.routers import checks, limit, lln, network, simulate
from msrd.schemas.run import RunConfig, SchedulePair
from msrd.services.documents import ConfigSyntaxError, load_config_file, load_network_file
from msrd.services.grid import GridMismatchError
from msrd.services.model import NetworkValidationError
from msrd.services.run_logger import run_logger

ROUTERS = (network.router, simulate.router, limit.router, checks.router, lln.router)

# flag destination -> RunConfig field
OVERRIDES = {
    "seed": "seed",
    "out": "output_dir",
    "workers": "workers",
    "format": "formats",
    "n_sites": "n_sites",
    "mu": "mu",
    "t_end": "t_end",
    "dt": "dt",
    "epsilon0": "epsilon0",
    "replicas": "replicas",
    "martingale_replicas": "martingale_replicas",
    "n_ref": "n_ref",
    "max_events": "max_events",
    "sample_points": "sample_points",
    "schedule": "schedule",
}


def parse_schedule(text: str) -> List[SchedulePair]:
    """'8:32,16:64' -> [(8, 32), (16, 64)]"""
    pairs = []
    for item in text.split(","):
        try:
            n_sites, mu = item.split(":")
            pairs.append(SchedulePair(n_sites=int(n_sites), mu=float(mu)))
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad schedule entry {item!r}: expected N:mu") from e
    return pairs


def common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="Run document (JSON); bundled reference network if omitted")
    parser.add_argument("--seed", type=int, help="Master seed (overrides MSRD_SEED and the config)")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--workers", type=int, help="Worker processes for ensembles")
    parser.add_argument("--plot-data", action="store_true", help="Also write tidy CSV for plotting")
    parser.add_argument("--format", choices=["csv", "json", "both"], help="Artifact formats")
    parser.add_argument("--n-sites", type=int, help="Number of sites N")
    parser.add_argument("--mu", type=float, help="Population scale")
    parser.add_argument("--t-end", type=float, help="Horizon T")
    parser.add_argument("--dt", type=float, help="Initial limit-solver step")
    parser.add_argument("--epsilon0", type=float, help="Truncation radius")
    parser.add_argument("--replicas", type=int, help="Replicas per sweep pair")
    parser.add_argument("--martingale-replicas", type=int, help="Replicas for the martingale suite")
    parser.add_argument("--n-ref", type=int, help="Reference resolution of the refined limit")
    parser.add_argument("--max-events", type=int, help="Event cap per trajectory")
    parser.add_argument("--sample-points", type=int, help="Points of the output time grid")
    parser.add_argument("--schedule", type=parse_schedule, help="Sweep schedule as N:mu,N:mu,...")
    parser.add_argument("--track-martingales", action="store_true", help="Accumulate compensated statistics")
    parser.add_argument("--record-events", action="store_true", help="Keep and export every event")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Multiscale spatial reaction-diffusion simulator and limit checks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    subparsers = parser.add_subparsers(title="commands", dest="command")
    parents = [common_parser()]
    for router in ROUTERS:
        router.mount(subparsers, parents)
    return parser


def resolve_config(config: RunConfig, args: argparse.Namespace, environ=None) -> RunConfig:
    """
    Apply overrides in order: config document, then MSRD_SEED, then flags.
    """
    environ = os.environ if environ is None else environ
    data: Dict[str, Any] = config.model_dump()
    if environ.get("MSRD_SEED"):
        data["seed"] = int(environ["MSRD_SEED"])
    for flag, name in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    for flag in ("plot_data", "track_martingales", "record_events"):
        if getattr(args, flag, False):
            data[flag] = True
    return RunConfig.model_validate(data)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "handler", None) is None:
        parser.print_help()
        return EXIT_VALIDATION

    try:
        if args.config:
            config, spec = load_config_file(args.config)
        else:
            config, spec = RunConfig(), load_network_file()
        config = resolve_config(config, args)
    except ConfigSyntaxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NetworkValidationError as e:
        for violation in e.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as e:
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    run_logger.info("Command started", context={"command": args.command, "seed": config.seed})
    context = CommandContext(args=args, config=config, spec=spec)
    try:
        return args.handler(context)
    except (NetworkValidationError, GridMismatchError, ValidationError, ValueError) as e:
        run_logger.error("Command rejected its input", error=e, context={"command": args.command})
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        run_logger.error("Command failed", error=e, context={"command": args.command})
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
