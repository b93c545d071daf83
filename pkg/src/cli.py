"""
Command Line Interface for the Graphon Chaos Laboratory

Runs experiment configs, validates them, summarizes record files and runs
the default suite. Exit codes: 0 success, 2 gate failure, 1 error,
130 interrupted.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional

try:
    from .run_analysis import main as run_default_suite
    from .harness import load_experiment_config, records_gates, run_experiment, summarize_records, validate_config
    from .logger_config import add_file_handler, logger
    from .persistence import LabStore
    from .config import config
except ImportError:
    import sys
    sys.path.insert(0, str(Path(__file__).parent))
    from run_analysis import main as run_default_suite
    from harness import load_experiment_config, records_gates, run_experiment, summarize_records, validate_config
    from logger_config import add_file_handler, logger
    from persistence import LabStore
    from config import config


EXIT_OK = 0
EXIT_ERROR = 1
EXIT_GATE_FAILED = 2


def cmd_run(args: argparse.Namespace) -> int:
    """Run one experiment config."""
    try:
        if args.log_file:
            add_file_handler(Path(args.log_file))
        cfg = load_experiment_config(args.config)
        result = run_experiment(cfg, args.output)
        print(result.report)
        return EXIT_OK if result.passed else EXIT_GATE_FAILED
    except Exception as e:
        logger.error(f"Error running experiment: {e}", exc_info=True)
        return EXIT_ERROR


def cmd_validate(args: argparse.Namespace) -> int:
    """Check a config file without running it."""
    try:
        problems = validate_config(args.config)
        if problems:
            print(f"{args.config}: {len(problems)} problem(s)")
            for p in problems:
                print(f"  - {p}")
            return EXIT_ERROR
        print(f"{args.config}: OK")
        return EXIT_OK
    except Exception as e:
        logger.error(f"Error validating config: {e}", exc_info=True)
        return EXIT_ERROR


def cmd_report(args: argparse.Namespace) -> int:
    """Summarize a records file."""
    try:
        print(summarize_records(args.records))
        gates = records_gates(LabStore().load_records(args.records))
        return EXIT_OK if all(g.passed for g in gates) else EXIT_GATE_FAILED
    except Exception as e:
        logger.error(f"Error summarizing records: {e}", exc_info=True)
        return EXIT_ERROR


def cmd_suite(args: argparse.Namespace) -> int:
    """Run the default experiment suite."""
    try:
        logger.info("Running default suite")
        skip = ["stability_thm24_torus_L4.json"] if args.quick else []
        results = run_default_suite(skip=skip, output_dir=args.output)
        return EXIT_OK if all(r.passed for r in results) else EXIT_GATE_FAILED
    except Exception as e:
        logger.error(f"Error running suite: {e}", exc_info=True)
        return EXIT_ERROR


def create_parser() -> argparse.ArgumentParser:
    """Create and configure argument parser."""
    parser = argparse.ArgumentParser(
        description="Graphon Chaos Laboratory - CLI",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Run one experiment
  graphon-lab run configs/scaling_oracle.json

  # Check a config without running it
  graphon-lab validate configs/stability_thm24_torus_L4.json

  # Summarize a records file
  graphon-lab report outputs/records/scaling_oracle.csv

  # Run the default suite, skipping the PDE sweep
  graphon-lab suite --quick

Environment:
  GRAPHON_LAB_THREADS     worker count for experiment points
  GRAPHON_LAB_LOG_LEVEL   DEBUG, INFO, WARNING or ERROR
        """
    )

    parser.add_argument(
        '--version',
        action='version',
        version=f'graphon-chaos-lab {config.VERSION}'
    )

    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Enable verbose logging'
    )

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    run_parser = subparsers.add_parser('run', help='Run an experiment config')
    run_parser.add_argument('config', help='Path to the experiment JSON config')
    run_parser.add_argument('--output', '-o', help='Records directory (overrides the config)')
    run_parser.add_argument('--log-file', help='Also write the log to this file')
    run_parser.set_defaults(func=cmd_run)

    validate_parser = subparsers.add_parser('validate', help='Validate an experiment config')
    validate_parser.add_argument('config', help='Path to the experiment JSON config')
    validate_parser.set_defaults(func=cmd_validate)

    report_parser = subparsers.add_parser('report', help='Summarize a records file')
    report_parser.add_argument('records', help='Records CSV or JSON Lines file')
    report_parser.set_defaults(func=cmd_report)

    suite_parser = subparsers.add_parser('suite', help='Run the default experiment suite')
    suite_parser.add_argument('--output', '-o', help='Records directory')
    suite_parser.add_argument(
        '--quick',
        action='store_true',
        help='Skip the torus PDE stability sweep'
    )
    suite_parser.set_defaults(func=cmd_suite)

    return parser


def main(args: Optional[list] = None) -> int:
    """
    Main entry point for CLI.

    Args:
        args: Optional command line arguments (for testing)

    Returns:
        Exit code (0 success, 2 gate failure, 1 error, 130 interrupted)
    """
    import logging

    parser = create_parser()
    parsed_args = parser.parse_args(args)

    if parsed_args.verbose:
        logger.setLevel(logging.DEBUG)
        for handler in logger.handlers:
            handler.setLevel(logging.DEBUG)

    if not parsed_args.command:
        parser.print_help()
        return EXIT_ERROR

    try:
        return parsed_args.func(parsed_args)
    except KeyboardInterrupt:
        logger.info("Operation cancelled by user")
        return 130
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
