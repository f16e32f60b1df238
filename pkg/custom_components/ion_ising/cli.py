"""Command line surface: python -m custom_components.ion_ising <command> [options]."""

from __future__ import annotations

import argparse
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import colorlog
from homeassistant.exceptions import HomeAssistantError

from custom_components.ion_ising import commands, prepare_data
from custom_components.ion_ising.const import (
    EXIT_ACCEPTANCE_ERROR,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_ERROR,
    EXIT_OK,
    SERVICES,
)
from custom_components.ion_ising.helpers import _LOGGER, AcceptanceError, ConfigError, NumericalError

LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"


def setup_logging(verbose: bool) -> None:
    """Attach a coloured stream handler to the package logger."""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
    package_logger = logging.getLogger("custom_components.ion_ising")
    package_logger.handlers = [handler]
    package_logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per pipeline."""
    parser = argparse.ArgumentParser(prog="ion_ising", description="Trapped-ion transverse-field Ising simulator")
    parser.add_argument("command", choices=SERVICES, help="Pipeline to run.")
    parser.add_argument("-c", "--config", help="YAML run configuration.")
    parser.add_argument("--n-ions", type=int, help="Chain length (trap.n_ions and every N list).")
    parser.add_argument("--n-traj", type=int, help="Trajectories per ensemble.")
    parser.add_argument("--seed", type=int, help="Base seed of all random streams.")
    parser.add_argument("--workers", type=int, help="Process pool size.")
    parser.add_argument("--output-dir", help="Directory for output files.")
    parser.add_argument("--histogram", help="Histogram CSV for the fit command.")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override any configuration value; may be repeated.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    return parser


def collect_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Merge dedicated flags and --set overrides; dedicated flags win."""
    overrides: dict[str, Any] = {}
    for override in args.overrides:
        path, value = prepare_data.parse_override(override)
        overrides[".".join(path)] = value
    if args.n_ions is not None:
        overrides["trap.n_ions"] = args.n_ions
        for section in ("sweep", "dicke", "bench"):
            overrides[f"{section}.n_ions"] = [args.n_ions]
    if args.n_traj is not None:
        overrides["ensemble.n_traj"] = args.n_traj
    if args.seed is not None:
        overrides["ensemble.seed"] = args.seed
    if args.workers is not None:
        overrides["ensemble.workers"] = args.workers
    if args.output_dir is not None:
        overrides["outputs.directory"] = args.output_dir
    if args.histogram is not None:
        overrides["detection.histogram_file"] = str(Path(args.histogram))
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    """
    Run one command and map errors to exit codes.

    Returns
    -------
        int: 0 on success, 1 for configuration errors, 2 for numerical failures,
        3 when a reference comparison fails.

    """
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        config = prepare_data.load_run_config(args.config, collect_overrides(args))
        _LOGGER.info("Running command %s", args.command)
        commands.COMMANDS[args.command](config)
    except AcceptanceError:
        return EXIT_ACCEPTANCE_ERROR
    except NumericalError:
        return EXIT_NUMERICAL_ERROR
    except ConfigError:
        return EXIT_CONFIG_ERROR
    except HomeAssistantError as err:
        # YAML loader errors
        _LOGGER.error("%s", err)
        return EXIT_CONFIG_ERROR
    return EXIT_OK
