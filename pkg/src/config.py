"""
Configuration Management for the Graphon Chaos Laboratory

Centralized numerical defaults and output locations for the entire project.
Science parameters of a single study live in its JSON experiment config;
this module only holds tolerances, caps and paths shared by every study.
"""

import os
from pathlib import Path
from dataclasses import dataclass


@dataclass
class LabConfig:
    """Project configuration settings."""

    # Project metadata
    PROJECT_NAME: str = "Graphon Chaos Laboratory"
    VERSION: str = "1.0.0"
    RECORD_SCHEMA_VERSION: int = 1

    # Paths
    PROJECT_ROOT: Path = Path(__file__).parent.parent
    CONFIGS_DIR: Path = PROJECT_ROOT / "configs"
    OUTPUT_DIR: Path = PROJECT_ROOT / "outputs"
    RECORDS_DIR: Path = OUTPUT_DIR / "records"
    REPORTS_DIR: Path = OUTPUT_DIR / "reports"
    SNAPSHOTS_DIR: Path = OUTPUT_DIR / "snapshots"

    # graphon_core
    RESOLUTION_CAP: int = 4096
    CUT_NORM_EXACT_MAX_BLOCKS: int = 22
    EXPM_TOLERANCE: float = 1e-10
    ROW_SUM_TOLERANCE: float = 1e-12
    SYMMETRY_TOLERANCE: float = 1e-12

    # gaussian_oracle
    CONDITION_GUARD: float = 1e12
    DETERMINISTIC_VARIANCE: float = 1e-8
    DEFAULT_DT: float = 1e-3

    # simulate
    DIVERGENCE_BOUND: float = 1e6
    MAX_STEPS: int = 10_000_000
    MIN_PROJECTION_REPLICAS: int = 100
    DEFAULT_REPLICAS: int = 10_000

    # density_pde
    DENSITY_FLOOR: float = 1e-300
    MASS_TOLERANCE: float = 1e-10
    MIN_GRID_CELLS: int = 64
    MAX_GRID_CELLS: int = 4096
    MIN_KDE_SAMPLES: int = 100
    HESSIAN_RELATIVE_FLOOR: float = 1e-3

    # hierarchy
    HIERARCHY_MAX_N: int = 20
    COMPARISON_FLAG_FACTOR: float = 10.0

    # harness
    R2_GATE: float = 0.98
    THREADS_ENV_VAR: str = "GRAPHON_LAB_THREADS"
    RECORDS_FILE: str = "records.csv"
    RECORDS_JSONL_FILE: str = "records.jsonl"
    REPORT_FILE: str = "report.txt"

    def __post_init__(self):
        """Initialize derived values after dataclass initialization."""
        self._create_directories()

    def _create_directories(self):
        """Create necessary directories if they don't exist."""
        for directory in [self.RECORDS_DIR, self.REPORTS_DIR, self.SNAPSHOTS_DIR]:
            directory.mkdir(parents=True, exist_ok=True)

    @property
    def threads(self) -> int:
        """Worker count for experiment points (environment override only)."""
        raw = os.environ.get(self.THREADS_ENV_VAR, "1")
        try:
            return max(1, int(raw))
        except ValueError:
            return 1

    def get_report_path(self, filename: str) -> Path:
        """Get full path to report file."""
        return self.REPORTS_DIR / filename

    def get_snapshot_path(self, filename: str) -> Path:
        """Get full path to a binary/CSV snapshot file."""
        return self.SNAPSHOTS_DIR / filename

    def get_config_path(self, filename: str) -> Path:
        """Get full path to a bundled experiment config."""
        return self.CONFIGS_DIR / filename


# Global configuration instance
config = LabConfig()
