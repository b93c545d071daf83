"""
Tests for experiment configs, drivers, gates and the command line.
"""

import json
import sys
from pathlib import Path

import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from cli import EXIT_ERROR, EXIT_OK, create_parser, main
from config import config
from errors import ConfigError
from harness import (EXPERIMENT_KINDS, ExperimentConfig, build_graphon, build_perturbation,
                     load_experiment_config, records_gates, run_experiment, summarize_records,
                     validate_config)
from persistence import LabStore


CONFIGS_DIR = Path(__file__).parent.parent / "configs"

SMALL_SCALING = {
    "kind": "scaling_thm22",
    "name": "scaling_small",
    "graphon": {"type": "constant", "value": 1.0},
    "kernel": {"kind": "linear_difference", "rate": 1.0},
    "N_list": [32, 64, 128, 256],
    "k_list": [2],
    "T": 1.0,
    "method": "expm",
    "gates": {"slope_window": [-2.3, -1.7], "r2": 0.98},
}


def _write(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestExperimentConfig:
    """Parsing and validation of experiment configs."""

    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({"kind": "operator_checks"})
        assert cfg.label == "operator_checks"
        assert cfg.regime == "oracle"
        assert cfg.to_dict()["kind"] == "operator_checks"

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"kind": "scaling_thm22", "colour": "red"})

    def test_missing_kind(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"T": 1.0})

    def test_collects_problems(self):
        """Every violated precondition is reported."""
        cfg = ExperimentConfig(kind="scaling_thm22", dt=2.0, n=100, method="euler",
                               gates={"slope": [1, 2]})
        problems = cfg.problems()
        assert any("dt" in p for p in problems)
        assert any("power of two" in p for p in problems)
        assert any("method" in p for p in problems)
        assert any("gate" in p for p in problems)

    def test_regime_needs_matching_kernel(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"kind": "scaling_thm22", "regime": "oracle",
                                        "kernel": {"kind": "sine_torus", "amplitude": 0.3}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"kind": "scaling_thm22", "regime": "torus"})

    def test_stability_needs_perturbation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"kind": "stability_thm23"})

    def test_build_graphon(self):
        assert build_graphon({"m": 2, "values": [[1.0, 0.0], [0.0, 1.0]]}).m == 2
        assert build_graphon({"type": "constant", "value": 0.5, "m": 3}).values[0, 0] == 0.5
        product = build_graphon({"type": "function", "name": "product", "m": 4})
        assert product.values[3, 3] == pytest.approx(0.875 ** 2)
        with pytest.raises(ConfigError):
            build_graphon({"type": "function", "name": "unknown"})
        with pytest.raises(ConfigError):
            build_perturbation({"m": 3, "values": [[0.0, 1.0], [1.0, 0.0]]})

    @pytest.mark.parametrize("path", sorted(CONFIGS_DIR.glob("*.json")), ids=lambda p: p.stem)
    def test_bundled_configs_are_valid(self, path):
        assert validate_config(path) == []
        cfg = load_experiment_config(path)
        assert cfg.kind in EXPERIMENT_KINDS

    def test_validate_reports_problems(self, tmp_path):
        path = _write(tmp_path / "bad.json", {"kind": "scaling_thm22", "extra": 1, "T": -1.0})
        problems = validate_config(path)
        assert any("extra" in p for p in problems)
        assert any("positive" in p for p in problems)
        assert validate_config(tmp_path / "absent.json")


class TestDrivers:
    """Experiment drivers on small configurations."""

    def test_scaling_oracle(self):
        """Subset information decays like N⁻² for the uniform graphon."""
        result = run_experiment(ExperimentConfig.from_dict(SMALL_SCALING), write=False)
        df = result.records
        assert df["N"].tolist() == [32, 64, 128, 256]
        assert (df["total"] > 0).all()
        assert (df["bound"] > 0).all()
        assert df["fisher_available"].all()
        assert {"experiment", "regime", "seed", "schema_version", "config", "wall_clock"} <= set(df.columns)
        assert result.passed

    def test_scaling_k_too_large_is_skipped(self):
        cfg = ExperimentConfig.from_dict({**SMALL_SCALING, "N_list": [4], "k_list": [2, 8], "gates": {}})
        result = run_experiment(cfg, write=False)
        assert result.records["k"].tolist() == [2]

    @pytest.mark.parametrize("name", ["stability_thm23_oracle.json", "stability_thm24_oracle.json"])
    def test_stability_oracle_bundled(self, name):
        """Bundled oracle sweeps show the quadratic dependence on ε."""
        cfg = load_experiment_config(CONFIGS_DIR / name)
        result = run_experiment(cfg, write=False)
        df = result.records
        assert len(df) == len(cfg.eps_list)
        assert df.loc[df["eps"] == 0.0, "sup_H"].iloc[0] == pytest.approx(0.0, abs=1e-14)
        assert (df["cut_norm"] <= df["d"] + 1e-12).all()
        assert result.passed

    def test_operator_checks(self):
        cfg = ExperimentConfig.from_dict({
            "kind": "operator_checks",
            "graphon": {"type": "function", "name": "product", "m": 16},
            "N_list": [32, 64],
            "k_list": [2, 4],
            "options": {"checks": ["exponential_identity", "hierarchy_closed_form", "uniform_bound",
                                   "graphon_envelope", "cut_norm"], "cut_trials": 3},
        })
        result = run_experiment(cfg, write=False)
        assert set(result.records["check"]) == {"exponential_identity", "hierarchy_closed_form",
                                                "uniform_bound", "graphon_envelope", "cut_norm"}
        assert result.records["passed"].all()
        assert result.passed

    def test_unknown_check(self):
        cfg = ExperimentConfig.from_dict({"kind": "operator_checks", "options": {"checks": ["nope"]}})
        with pytest.raises(ConfigError):
            run_experiment(cfg, write=False)

    def test_estimator_validation_subset(self):
        cfg = ExperimentConfig.from_dict({
            "kind": "estimator_validation",
            "options": {"checks": ["gaussian_quadrature", "marginalization", "weak_order"],
                        "pairs": 3, "marginalization_trials": 5},
        })
        result = run_experiment(cfg, write=False)
        assert "weak_order_slope" in set(result.records["check"])
        assert result.passed

    def test_fp_solver_checks(self):
        """Heat decay, positivity at the explicit bound and stationarity of the sampled Gibbs density."""
        cfg = ExperimentConfig.from_dict({"kind": "estimator_validation", "options": {"checks": ["fp_solver"]}})
        df = run_experiment(cfg, write=False).records
        gibbs = df[df["check"] == "fp_gibbs_stationarity"]
        assert set(gibbs["case"]) == {"explicit", "implicit"}
        assert (gibbs["tolerance"] == 1e-6).all()
        assert {"fp_mass", "fp_positivity", "fp_heat_decay"} <= set(df["check"])
        assert df["passed"].all()

    def test_writes_records_and_report(self, tmp_path):
        cfg = ExperimentConfig.from_dict({**SMALL_SCALING, "N_list": [16, 32, 64]})
        result = run_experiment(cfg, tmp_path)
        assert result.records_path == tmp_path / "scaling_small.csv"
        assert (tmp_path / "scaling_small.jsonl").exists()
        assert result.report_path.read_text(encoding="utf-8") == result.report
        stored = LabStore().load_records(result.records_path)
        assert [g.passed for g in records_gates(stored)] == [g.passed for g in result.gates]
        assert "SCALING_THM22" in summarize_records(result.records_path)


@pytest.mark.slow
class TestTorusDrivers:
    """Torus regime on coarse settings."""

    def test_scaling_torus(self):
        cfg = ExperimentConfig.from_dict({
            "kind": "scaling_thm22",
            "regime": "torus",
            "graphon": {"type": "constant", "value": 1.0},
            "kernel": {"kind": "sine_torus", "amplitude": 0.3, "frequency": 1, "period": 1.0},
            "N_list": [4, 8],
            "k_list": [1],
            "T": 0.1,
            "dt": 0.01,
            "M": 2000,
            "n": 64,
            "gates": {"slope_window": None},
        })
        df = run_experiment(cfg, write=False).records
        assert len(df) == 2
        assert (df["H"] >= 0).all()
        assert df["I"].isna().all()
        assert not df["fisher_available"].any()

    def test_stability_torus(self):
        cfg = ExperimentConfig.from_dict({
            "kind": "stability_thm24",
            "regime": "torus",
            "graphon": {"m": 2, "values": [[0.6, 0.4], [0.4, 0.6]]},
            "perturbation": {"m": 2, "values": [[0.5, -0.5], [-0.5, 0.5]]},
            "kernel": {"kind": "sine_torus", "amplitude": 0.3, "frequency": 1, "period": 4.0},
            "eps_list": [0.0, 0.1, 0.2],
            "T": 0.1,
            "dt": 0.01,
            "n": 128,
            "init": {"means": [1.0, 3.0], "var": 0.05},
            "gates": {"slope_window": None},
        })
        df = run_experiment(cfg, write=False).records
        assert (df["quantity"] == "marginal proxy").all()
        assert df.loc[df["eps"] == 0.0, "sup_total"].iloc[0] == pytest.approx(0.0, abs=1e-14)
        assert (df["max_log_hessian"] > 0).all()


class TestCLI:
    """Command line entry points."""

    def test_parser(self):
        parser = create_parser()
        args = parser.parse_args(["suite", "--quick"])
        assert args.command == "suite"
        assert args.quick

    def test_no_command(self):
        assert main([]) == EXIT_ERROR

    def test_validate(self, tmp_path):
        assert main(["validate", str(CONFIGS_DIR / "scaling_oracle.json")]) == EXIT_OK
        bad = _write(tmp_path / "bad.json", {"kind": "unknown"})
        assert main(["validate", str(bad)]) == EXIT_ERROR

    def test_run_and_report(self, tmp_path, capsys):
        out = tmp_path / "out"
        path = _write(tmp_path / "cfg.json", {**SMALL_SCALING, "N_list": [16, 32, 64], "gates": {"slope_window": None},
                                              "output": str(out)})
        assert main(["run", str(path)]) == EXIT_OK
        assert (out / "scaling_small.csv").exists()
        assert main(["report", str(out / "scaling_small.csv")]) == EXIT_OK
        assert "GRAPHON CHAOS LABORATORY REPORT" in capsys.readouterr().out

    def test_run_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.json")]) == EXIT_ERROR

    def test_version(self, capsys):
        with pytest.raises(SystemExit):
            main(["--version"])
        assert config.VERSION in capsys.readouterr().out
