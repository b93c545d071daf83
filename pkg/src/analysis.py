"""
Record Analysis for the Graphon Chaos Laboratory

Log-log slope fits, acceptance gates and the plain-text report built from
experiment records.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

try:
    from .config import config
    from .logger_config import logger
except ImportError:
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent))
    from config import config
    from logger_config import logger


# Measured column and abscissa for the slope gate of each experiment kind
SLOPE_TARGETS = {
    "scaling_thm22": ("total", "N"),
    "stability_thm23": ("sup_H", "eps"),
    "stability_thm24": ("sup_total", "eps"),
}

DEFAULT_WINDOWS = {
    "scaling_thm22": (-2.3, -1.7),
    "stability_thm23": (1.7, 2.3),
    "stability_thm24": (1.7, 2.3),
}


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    points: int


@dataclass
class GateResult:
    """One acceptance gate evaluated on a record table."""

    name: str
    passed: bool
    value: float
    target: str
    detail: str = ""


class RecordAnalyzer:
    """
    Fits scaling exponents and evaluates acceptance gates on experiment records.

    Gates are on exponents, ratios and envelopes only; the existential
    constants of the bounds are reported, never asserted.
    """

    def __init__(self, config_instance=None):
        """
        Initialize the analyzer.

        Args:
            config_instance: Optional custom configuration instance.
        """
        self.config = config_instance or config

    def fit_loglog_slope(self, x: Sequence[float], y: Sequence[float]) -> SlopeFit:
        """
        Ordinary least squares of log y on log x.

        Points with nonpositive x or y are dropped (they carry no exponent
        information, e.g. the ε = 0 row of a stability sweep).

        Raises:
            ValueError: If fewer than two usable points remain
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
        if keep.sum() < 2:
            raise ValueError("slope fit needs at least two positive points")
        X = np.log(x[keep]).reshape(-1, 1)
        Y = np.log(y[keep])
        model = LinearRegression()
        model.fit(X, Y)
        r2 = float(r2_score(Y, model.predict(X))) if keep.sum() > 2 else 1.0
        return SlopeFit(float(model.coef_[0]), float(model.intercept_), r2, int(keep.sum()))

    def envelope_constant(self, measured: Sequence[float], envelope: Sequence[float]) -> float:
        """Smallest M with measured ≤ M·envelope on every row (rows with zero envelope skipped)."""
        measured = np.asarray(measured, dtype=float)
        envelope = np.asarray(envelope, dtype=float)
        keep = envelope > 0
        if not keep.any():
            return 0.0
        return float(np.max(measured[keep] / envelope[keep]))

    # ------------------------------------------------------------------ gates

    def _slope_gates(self, df: pd.DataFrame, kind: str, gates: Dict[str, Any]) -> List[GateResult]:
        column, abscissa = SLOPE_TARGETS[kind]
        window = gates.get("slope_window", DEFAULT_WINDOWS[kind])
        if window is None:
            return []
        lo, hi = window
        r2_gate = gates.get("r2", self.config.R2_GATE)
        group_key = "k" if kind == "scaling_thm22" else None
        groups = df.groupby(group_key) if group_key else [(None, df)]
        results = []
        for key, part in groups:
            if part[abscissa].nunique() < 3:
                continue
            if (part[column] > 0).sum() < 2:
                logger.warning(f"{kind}: {column} vanishes, no exponent to fit")
                continue
            fit = self.fit_loglog_slope(part[abscissa], part[column])
            label = f"{kind} slope of {column} vs {abscissa}" + (f" (k={int(key)})" if key is not None else "")
            passed = lo <= fit.slope <= hi and fit.r2 >= r2_gate
            results.append(GateResult(label, bool(passed), fit.slope,
                                      f"[{lo}, {hi}], R² ≥ {r2_gate}", f"R²={fit.r2:.4f}, points={fit.points}"))
        return results

    def _envelope_gate(self, df: pd.DataFrame, gates: Dict[str, Any]) -> List[GateResult]:
        factor = gates.get("ratio_factor")
        if factor is None:
            return []
        results = []
        for N, part in df.groupby("N"):
            if part["k"].nunique() < 2:
                continue
            ratio = part["total"] / part["envelope"]
            ratio = ratio[ratio > 0]
            if ratio.empty:
                continue
            spread = float(ratio.max() / ratio.min())
            results.append(GateResult(f"scaling_thm22 uniform constant in k (N={int(N)})", spread < factor,
                                      spread, f"< {factor}", "max/min of (H+I)/(k²/N²)"))
        return results

    def _refinement_gate(self, df: pd.DataFrame, gates: Dict[str, Any]) -> List[GateResult]:
        tol = gates.get("refinement_tolerance")
        if tol is None or "refinement_delta" not in df.columns:
            return []
        delta = df["refinement_delta"].dropna()
        if delta.empty:
            return []
        worst = float(delta.max())
        return [GateResult("grid refinement change", worst <= tol, worst, f"≤ {tol}", "relative change when n doubles")]

    def _flag_gate(self, df: pd.DataFrame, kind: str) -> List[GateResult]:
        if "passed" not in df.columns:
            return []
        failed = df[~df["passed"].astype(bool)]
        detail = ", ".join(str(x) for x in failed.get("check", pd.Series(dtype=str)).unique()[:5])
        return [GateResult(f"{kind} checks", failed.empty, float(len(failed)), "0 failures", detail)]

    def evaluate_gates(self, df: pd.DataFrame, kind: str, gates: Optional[Dict[str, Any]] = None) -> List[GateResult]:
        """
        Evaluate the acceptance gates that apply to one experiment's records.

        Args:
            df: Record table of a single experiment kind
            kind: Experiment kind
            gates: Gate settings from the experiment config (slope_window,
                r2, ratio_factor, refinement_tolerance)
        """
        gates = gates or {}
        results: List[GateResult] = []
        if kind in SLOPE_TARGETS:
            results += self._slope_gates(df, kind, gates)
        if kind == "scaling_thm22":
            results += self._envelope_gate(df, gates)
        if kind == "stability_thm24":
            results += self._refinement_gate(df, gates)
        if kind in ("estimator_validation", "operator_checks"):
            results += self._flag_gate(df, kind)
        for r in results:
            (logger.info if r.passed else logger.warning)(
                f"Gate {'PASS' if r.passed else 'FAIL'}: {r.name} = {r.value:.4g} (target {r.target})"
            )
        return results

    # ------------------------------------------------------------------ reporting

    def create_report(self, df: pd.DataFrame, gates: Sequence[GateResult], title: str = "") -> str:
        """Plain-text summary of one record table and its gates."""
        report = []
        report.append("=" * 80)
        report.append(f"GRAPHON CHAOS LABORATORY REPORT{': ' + title if title else ''}")
        report.append("=" * 80)
        report.append("")
        kinds = sorted(df["experiment"].unique()) if "experiment" in df.columns else []
        report.append(f"Records: {len(df)}    Experiments: {', '.join(kinds) if kinds else 'n/a'}")
        if "seed" in df.columns:
            report.append(f"Seeds: {', '.join(str(s) for s in sorted(df['seed'].unique()))}")
        if "regime" in df.columns:
            labels = sorted(str(x) for x in df["regime"].dropna().unique())
            report.append(f"Regimes: {', '.join(labels)}")
            if "oracle" in labels:
                report.append("  (oracle regime: unbounded linear kernel, outside the bounded-drift hypotheses)")
        if "quantity" in df.columns and (df["quantity"] == "marginal proxy").any():
            report.append("  (marginal proxy: time-marginal entropy, a lower bound on the pathwise entropy)")
        report.append("")

        for kind in kinds:
            part = df[df["experiment"] == kind]
            report.append(kind.upper())
            report.append("-" * 80)
            if kind in SLOPE_TARGETS:
                column, abscissa = SLOPE_TARGETS[kind]
                if kind == "scaling_thm22":
                    for k, sub in part.groupby("k"):
                        if sub["N"].nunique() >= 2 and (sub[column] > 0).sum() >= 2:
                            fit = self.fit_loglog_slope(sub["N"], sub[column])
                            report.append(f"k={int(k):<4d} slope vs N: {fit.slope:8.4f}   R²={fit.r2:.4f}")
                    report.append(f"Envelope constant max (H+I)/(k²/N²): "
                                  f"{self.envelope_constant(part['total'], part['envelope']):.4g}")
                elif (part[column] > 0).sum() >= 2:
                    fit = self.fit_loglog_slope(part[abscissa], part[column])
                    report.append(f"slope of {column} vs ε: {fit.slope:8.4f}   R²={fit.r2:.4f}")
                    report.append(f"Fitted M with {column} ≤ M·d²: "
                                  f"{self.envelope_constant(part[column], part['d_squared']):.4g}")
            elif "passed" in part.columns:
                report.append(f"{int(part['passed'].astype(bool).sum())}/{len(part)} checks passed")
            report.append("")

        report.append("GATES")
        report.append("-" * 80)
        if not gates:
            report.append("(no gates apply)")
        for g in gates:
            report.append(f"[{'PASS' if g.passed else 'FAIL'}] {g.name}: {g.value:.4g} (target {g.target}) {g.detail}")
        report.append("")
        report.append("=" * 80)
        report.append(f"Report generated on: {pd.Timestamp.now().strftime('%Y-%m-%d %H:%M:%S')}")
        report.append("=" * 80)
        return "\n".join(report)

    @staticmethod
    def gates_to_frame(gates: Sequence[GateResult]) -> pd.DataFrame:
        return pd.DataFrame([asdict(g) for g in gates], columns=["name", "passed", "value", "target", "detail"])
