"""
Main execution script for the Graphon Chaos Laboratory

This script runs the default experiment suite:
1. Closed-form and estimator validation
2. Operator and hierarchy checks
3. Scaling of subset entropy in N and k
4. Stability sweeps in the graphon perturbation
5. Combined report
"""

import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

# Add src directory to path
sys.path.insert(0, os.path.dirname(__file__))

try:
    from .analysis import RecordAnalyzer
    from .config import config
    from .harness import ExperimentResult, load_experiment_config, run_experiment
    from .logger_config import logger
    from .persistence import LabStore
except ImportError:
    from analysis import RecordAnalyzer
    from config import config
    from harness import ExperimentResult, load_experiment_config, run_experiment
    from logger_config import logger
    from persistence import LabStore


# Bundled configs in the order the suite runs them, grouped by step
DEFAULT_SUITE = [
    ("Estimator Validation", ["estimator_validation.json"]),
    ("Operator and Hierarchy Checks", ["operator_checks.json"]),
    ("Scaling in N and k", ["scaling_oracle.json", "scaling_k.json"]),
    ("Stability Sweeps", ["stability_thm23_oracle.json", "stability_thm24_oracle.json",
                          "stability_thm24_torus_L4.json"]),
]


def _banner(text: str) -> None:
    logger.info(text)
    print(text)
    print("-" * 80)


def main(skip: Optional[Sequence[str]] = None, output_dir: Optional[Path] = None) -> List[ExperimentResult]:
    """
    Run the default suite.

    Args:
        skip: Config file names to leave out (e.g. the slow torus sweep)
        output_dir: Records directory (default: RECORDS_DIR)

    Returns:
        One ExperimentResult per experiment run
    """
    skip = set(skip or [])
    store = LabStore(config)
    out = Path(output_dir) if output_dir else config.RECORDS_DIR

    logger.info("=" * 80)
    logger.info("GRAPHON CHAOS LABORATORY: DEFAULT SUITE")
    logger.info("=" * 80)
    print("=" * 80)
    print("GRAPHON CHAOS LABORATORY: DEFAULT SUITE")
    print("=" * 80)
    print()

    results: List[ExperimentResult] = []
    for step, (title, names) in enumerate(DEFAULT_SUITE, start=1):
        _banner(f"STEP {step}: {title}")
        for name in names:
            if name in skip:
                print(f"[SKIP] {name}")
                continue
            cfg = load_experiment_config(config.get_config_path(name), store)
            result = run_experiment(cfg, out, store)
            results.append(result)
            status = "OK" if result.passed else "GATE FAILED"
            print(f"[{status}] {cfg.label}: {len(result.records)} records, "
                  f"{sum(g.passed for g in result.gates)}/{len(result.gates)} gates passed")
        print()

    step = len(DEFAULT_SUITE) + 1
    _banner(f"STEP {step}: Combined Report")
    analyzer = RecordAnalyzer(config)
    sections = [r.report for r in results]
    report_path = store.save_report("\n\n".join(sections), out / config.REPORT_FILE)
    failed = [g for r in results for g in r.gates if not g.passed]
    for g in failed:
        print(f"[FAIL] {g.name}: {g.value:.4g} (target {g.target})")
    gate_table = analyzer.gates_to_frame([g for r in results for g in r.gates])
    gate_table.to_csv(out / "gates.csv", index=False)
    print(f"[OK] Report saved to: {report_path}")
    print()

    logger.info("=" * 80)
    logger.info("SUITE COMPLETE!")
    logger.info("=" * 80)
    print("=" * 80)
    print("SUITE COMPLETE!" if not failed else f"SUITE COMPLETE WITH {len(failed)} FAILED GATES")
    print("=" * 80)
    print()
    print("Output files:")
    for r in results:
        if r.records_path:
            print(f"  - Records: {r.records_path}")
    print(f"  - Gates: {out / 'gates.csv'}")
    print(f"  - Report: {report_path}")
    print()
    return results


if __name__ == "__main__":
    suite = main()
    sys.exit(0 if all(r.passed for r in suite) else 2)
