"""
Persistence for the Graphon Chaos Laboratory

Reads experiment configs and graphon files, writes experiment records (CSV
with a JSON Lines mirror), text reports, and binary/CSV snapshots of particle
ensembles and grid densities.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

try:
    from .config import config
    from .density_pde import DensityGrid, TorusGrid1D
    from .errors import ConfigError
    from .graphon_core import Graphon
    from .logger_config import logger
    from .simulate import EnsembleState
except ImportError:
    import sys
    sys.path.insert(0, str(Path(__file__).parent))
    from config import config
    from density_pde import DensityGrid, TorusGrid1D
    from errors import ConfigError
    from graphon_core import Graphon
    from logger_config import logger
    from simulate import EnsembleState


PathLike = Union[str, Path]

# Parameter columns in sort priority; rows are ordered by whichever are present
PARAMETER_COLUMNS = ["experiment", "check", "regime", "N", "k", "eps", "block", "n", "t", "case"]


class LabStore:
    """
    File I/O for configs, records, reports and snapshots.

    All writers create parent directories and log the path written; all
    readers log and re-raise on failure.
    """

    def __init__(self, config_instance=None):
        """
        Initialize the store.

        Args:
            config_instance: Optional custom configuration instance.
                           If None, uses global config.
        """
        self.config = config_instance or config

    # ------------------------------------------------------------------ configs and graphons

    def load_json(self, path: PathLike) -> Dict[str, Any]:
        """Read a JSON object from disk."""
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
        except FileNotFoundError:
            logger.error(f"Config file not found: {path}")
            raise
        except json.JSONDecodeError as e:
            logger.error(f"Invalid JSON in {path}: {e}")
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return payload

    def load_graphon(self, path: PathLike) -> Graphon:
        """Load and validate a graphon file {"m": int, "values": [[...]]}."""
        return Graphon.from_dict(self.load_json(path))

    def save_graphon(self, g: Graphon, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(g.to_dict(), f, indent=2)
        logger.info(f"Graphon saved to: {path}")
        return path

    # ------------------------------------------------------------------ records

    @staticmethod
    def sort_records(df: pd.DataFrame) -> pd.DataFrame:
        """Order rows by the parameter tuple so output files are order-stable."""
        keys = [c for c in PARAMETER_COLUMNS if c in df.columns]
        if not keys:
            return df.reset_index(drop=True)
        return df.sort_values(keys, kind="mergesort", na_position="first").reset_index(drop=True)

    def save_records(
        self,
        records: Union[pd.DataFrame, List[Dict[str, Any]]],
        output_dir: Optional[PathLike] = None,
        stem: Optional[str] = None
    ) -> Path:
        """
        Write records as CSV plus a JSON Lines mirror.

        Args:
            records: DataFrame or list of row dicts
            output_dir: Target directory (default: RECORDS_DIR)
            stem: File name stem (default: records)

        Returns:
            Path of the CSV file
        """
        try:
            df = records if isinstance(records, pd.DataFrame) else pd.DataFrame(records)
            df = self.sort_records(df)
            out = Path(output_dir) if output_dir else self.config.RECORDS_DIR
            out.mkdir(parents=True, exist_ok=True)
            csv_name = f"{stem}.csv" if stem else self.config.RECORDS_FILE
            jsonl_name = f"{stem}.jsonl" if stem else self.config.RECORDS_JSONL_FILE
            csv_path = out / csv_name
            df.to_csv(csv_path, index=False, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
            df.to_json(out / jsonl_name, orient="records", lines=True, double_precision=15)
            logger.info(f"Saved {len(df)} records to: {csv_path}")
            return csv_path
        except Exception as e:
            logger.error(f"Error saving records: {e}", exc_info=True)
            raise

    def load_records(self, path: PathLike) -> pd.DataFrame:
        """Read a records file (CSV or JSON Lines)."""
        path = Path(path)
        try:
            if path.suffix == ".jsonl":
                return pd.read_json(path, orient="records", lines=True)
            return pd.read_csv(path)
        except FileNotFoundError:
            logger.error(f"Records file not found: {path}")
            raise
        except Exception as e:
            logger.error(f"Error reading records from {path}: {e}", exc_info=True)
            raise

    def save_report(self, text: str, path: Optional[PathLike] = None) -> Path:
        path = Path(path) if path else self.config.get_report_path(self.config.REPORT_FILE)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info(f"Report saved to: {path}")
        return path

    # ------------------------------------------------------------------ snapshots

    def save_snapshot(self, state: EnsembleState, path: PathLike) -> Path:
        """
        Binary ensemble snapshot.

        Layout (little-endian): int64 M, N, d; float64 t; then M·N·d float64
        positions in (replica, particle, coordinate) order.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(np.array([state.M, state.N, state.d], dtype="<i8").tobytes())
            f.write(np.array([state.t], dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(state.positions, dtype="<f8").tobytes())
        logger.debug(f"Snapshot ({state.M}×{state.N}×{state.d}) written to {path}")
        return path

    def load_snapshot(self, path: PathLike, domain: str = "euclidean", period: float = 1.0) -> EnsembleState:
        raw = Path(path).read_bytes()
        M, N, d = np.frombuffer(raw, dtype="<i8", count=3)
        t = float(np.frombuffer(raw, dtype="<f8", count=1, offset=24)[0])
        positions = np.frombuffer(raw, dtype="<f8", offset=32)
        if positions.size != M * N * d:
            raise ValueError(f"{path}: expected {M * N * d} positions, found {positions.size}")
        return EnsembleState(positions.reshape(int(M), int(N), int(d)), t, domain, period)

    def save_density_csv(self, p: DensityGrid, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({"x": p.grid.centres, "value": p.values}).to_csv(path, index=False)
        return path

    def save_density_binary(self, p: DensityGrid, path: PathLike) -> Path:
        """Layout (little-endian): int64 n; float64 L, t; then n float64 values."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(np.array([p.grid.n], dtype="<i8").tobytes())
            f.write(np.array([p.grid.L, p.t], dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
        return path

    def load_density_binary(self, path: PathLike) -> DensityGrid:
        raw = Path(path).read_bytes()
        n = int(np.frombuffer(raw, dtype="<i8", count=1)[0])
        L, t = np.frombuffer(raw, dtype="<f8", count=2, offset=8)
        values = np.frombuffer(raw, dtype="<f8", offset=24)
        if values.size != n:
            raise ValueError(f"{path}: expected {n} values, found {values.size}")
        return DensityGrid(TorusGrid1D(n, float(L)), values, float(t))

    def save_density_snapshots(self, densities: Sequence[DensityGrid], stem: str,
                               output_dir: Optional[PathLike] = None) -> List[Path]:
        """One CSV and one binary file per block density."""
        out = Path(output_dir) if output_dir else self.config.SNAPSHOTS_DIR
        paths = []
        for i, p in enumerate(densities):
            paths.append(self.save_density_csv(p, out / f"{stem}_block{i}.csv"))
            paths.append(self.save_density_binary(p, out / f"{stem}_block{i}.bin"))
        logger.info(f"Wrote {len(densities)} density snapshots to {out}")
        return paths
