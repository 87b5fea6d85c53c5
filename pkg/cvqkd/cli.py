"""
Command-line interface.

Usage:
    cvqkd --version
    cvqkd keyrate --config link.ini
    cvqkd sweep --out-csv sweep.csv --plot sweep.svg --threads auto
    cvqkd tolerance --config link.ini --out-json tolerance.json
    cvqkd compare --out-csv compare.csv
    cvqkd optimize --out-csv optimum.csv
    cvqkd mc --seed 7 --out-csv samples.csv --out-json report.json

Exit codes: 0 success, 1 library error or failed validation, 2 invalid
configuration, 3 unphysical state, 4 at least one grid cell failed.
"""

import argparse
import json
import logging
import os
import sys
from typing import Callable, Dict, List, Optional

from .analysis import (
    SweepGrid,
    SweepResult,
    compare_point_to_point,
    keyrate_grid,
    optimum_grid,
    tolerance_grid,
)
from .config import (
    COMMANDS,
    CompareBlock,
    GridBlock,
    McBlock,
    RunConfig,
    check_output_paths,
    describe,
    load_config,
)
from .errors import (
    ArgumentError,
    ConfigError,
    CVQKDError,
    DomainError,
    UnphysicalStateError,
)
from .keyrate import KeyRateReport, secret_key_rate
from .montecarlo import ValidationReport, ValidationTolerances, simulate, validate_dataset
from .plotting import write_plot
from .utils import build_metadata
from .versions import OUTPUT_SCHEMA_VERSION, PACKAGE_VERSION

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_UNPHYSICAL = 3
EXIT_CELL_FAILURE = 4

LOG_LEVEL_ENV = "CVQKD_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"

COMMAND_HELP = {
    "keyrate": "Key rate of a single link",
    "sweep": "Key rate over distance and number of ONUs",
    "tolerance": "Tolerable excess noise over distance and number of ONUs",
    "compare": "Downstream key rate against the point-to-point link",
    "optimize": "Optimal modulation variance over distance and number of ONUs",
    "mc": "Monte Carlo validation of the covariance model",
}


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging on standard error; ``CVQKD_LOG_LEVEL`` is the fallback."""
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level {name!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _grid(config: RunConfig) -> SweepGrid:
    block = config.block
    assert isinstance(block, GridBlock)
    return SweepGrid(block.distances_km, block.onu_counts, config.params)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.info("Wrote %s", path)


def _emit(result: SweepResult, config: RunConfig) -> int:
    """Write or print the result; the CSV goes to standard output without --out-csv."""
    output = config.output
    if output.csv:
        result.write(csv_path=output.csv)
    else:
        sys.stdout.write(result.to_csv_text())
    if output.json:
        result.write(json_path=output.json, config=config.to_dict())
    if output.plot:
        write_plot(result, output.plot)

    failed = result.failed_cells
    if failed:
        logger.error("%d of %d cells failed", len(failed), len(result.rows))
        return EXIT_CELL_FAILURE
    return EXIT_OK


def _report_lines(report: KeyRateReport) -> List[str]:
    return [
        f"T_tot: {report.totals.T_tot:.12g}",
        f"epsilon_tot [SNU]: {report.totals.epsilon_tot:.12g}",
        f"mutual_information [bits/symbol]: {report.mutual_information_bits:.12g}",
        f"holevo_bound [bits/symbol]: {report.holevo_bits:.12g}",
        f"key_rate [bits/symbol]: {report.key_rate_bits:.12g}",
        f"key_rate_clamped [bits/symbol]: {report.key_rate_clamped:.12g}",
        "nus_joint: " + " ".join(f"{nu:.12g}" for nu in report.nus_joint),
        "nus_conditional: " + " ".join(f"{nu:.12g}" for nu in report.nus_conditional),
    ]


def cmd_keyrate(config: RunConfig) -> int:
    report = secret_key_rate(config.params)
    for line in _report_lines(report):
        print(line)

    if config.output.json:
        document = {
            "metadata": build_metadata("keyrate", config.params.to_dict(), {}),
            "report": report.to_dict(),
            "config": config.to_dict(),
        }
        _write_text(config.output.json, json.dumps(document, indent=2) + "\n")
    if config.output.csv or config.output.plot:
        logger.warning("keyrate writes no CSV or plot; use sweep for tabular output")
    return EXIT_OK


def cmd_sweep(config: RunConfig) -> int:
    return _emit(keyrate_grid(_grid(config), threads=config.threads), config)


def cmd_tolerance(config: RunConfig) -> int:
    block = config.block
    assert isinstance(block, GridBlock)
    result = tolerance_grid(_grid(config), eps_max=block.eps_max, threads=config.threads)
    return _emit(result, config)


def cmd_compare(config: RunConfig) -> int:
    block = config.block
    assert isinstance(block, CompareBlock)
    parts = [
        compare_point_to_point(loss, block.onu_counts, config.params)
        for loss in block.fiber_loss_db
    ]
    return _emit(SweepResult.concat(parts), config)


def cmd_optimize(config: RunConfig) -> int:
    block = config.block
    assert isinstance(block, GridBlock)
    result = optimum_grid(_grid(config), bracket=block.bracket, threads=config.threads)
    return _emit(result, config)


def _validation_lines(report: ValidationReport) -> List[str]:
    lines = [f"samples: {report.n_samples}", f"seed: {report.seed}"]
    for check in report.moments + report.estimates:
        status = "ok" if check.passed else "FAIL"
        lines.append(
            f"{check.name}: {check.sampled:.12g} expected {check.expected:.12g} "
            f"z {check.z_score:.3g} {status}"
        )
    status = "ok" if report.key_rate_passed else "FAIL"
    lines.append(
        f"key_rate [bits/symbol]: {report.key_rate_estimated:.12g} "
        f"expected {report.key_rate_true:.12g} se {report.key_rate_se:.3g} {status}"
    )
    lines.append(f"passed: {'true' if report.passed else 'false'}")
    return lines


def cmd_mc(config: RunConfig) -> int:
    block = config.block
    assert isinstance(block, McBlock)
    tolerances = ValidationTolerances(
        moment_sigmas=block.moment_sigmas,
        estimate_sigmas=block.estimate_sigmas,
        key_rate_bits=block.key_rate_bits,
        key_rate_sigmas=block.key_rate_sigmas,
    )
    dataset = simulate(config.params, block.n_samples, config.seed, threads=config.threads)
    report = validate_dataset(dataset, tolerances)

    for line in _validation_lines(report):
        print(line)
    if config.output.csv:
        dataset.write_csv(config.output.csv)
    if config.output.json:
        _write_text(config.output.json, report.to_json_text(config.to_dict()))
    if config.output.plot:
        logger.warning("mc produces no plot; ignoring --plot")

    if not report.passed:
        logger.error("Validation failed: %s", ", ".join(report.failures))
        return EXIT_ERROR
    return EXIT_OK


HANDLERS: Dict[str, Callable[[RunConfig], int]] = {
    "keyrate": cmd_keyrate,
    "sweep": cmd_sweep,
    "tolerance": cmd_tolerance,
    "compare": cmd_compare,
    "optimize": cmd_optimize,
    "mc": cmd_mc,
}


def run(config: RunConfig) -> int:
    """Run one configured command and map failures to exit codes."""
    logger.info("Running %s", config.command)
    for line in describe(config):
        logger.debug(line)
    try:
        code = HANDLERS[config.command](config)
    except UnphysicalStateError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNPHYSICAL
    except (ConfigError, DomainError, ArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CVQKDError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: cannot write output: {e}", file=sys.stderr)
        return EXIT_ERROR
    logger.info("Finished %s with exit code %d", config.command, code)
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config or JSON output of a run")
    common.add_argument("--out-csv", metavar="PATH", help="Write the CSV result here")
    common.add_argument("--out-json", metavar="PATH", help="Write the JSON result here")
    common.add_argument("--plot", metavar="PATH", help="Write a figure here (e.g. .svg)")
    common.add_argument("--seed", type=int, help="Unsigned 64-bit seed for mc")
    common.add_argument("--threads", metavar="N", help="Worker count or 'auto'")
    common.add_argument("--log-level", metavar="LEVEL", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(
        prog="cvqkd",
        description="CV-QKD downstream access network key-rate simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  cvqkd keyrate                               Key rate at the default link
  cvqkd sweep --out-csv sweep.csv --plot sweep.svg
  cvqkd compare --config link.ini             Compare against point-to-point
  cvqkd mc --seed 7 --out-json report.json    Monte Carlo validation
        """,
    )
    parser.add_argument("--version", action="store_true", help="Show version information")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        subparsers.add_parser(name, parents=[common], help=COMMAND_HELP[name])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.version:
        print(f"cvqkd version {PACKAGE_VERSION}")
        print(f"Output schema version: {OUTPUT_SCHEMA_VERSION}")
        return EXIT_OK

    if not args.command:
        parser.print_help()
        return EXIT_OK

    try:
        setup_logging(args.log_level)
        config = load_config(args.config, args.command).with_overrides(
            csv=args.out_csv,
            json=args.out_json,
            plot=args.plot,
            seed=args.seed,
            threads=args.threads,
        )
        check_output_paths(config, args.config)
    except (ConfigError, DomainError, ArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)
