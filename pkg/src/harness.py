"""
Experiment Harness for the Graphon Chaos Laboratory

Experiment configs, the five experiment drivers, gate evaluation and the
glue to persistence. Every driver turns an ExperimentConfig into a list of
record dicts; run_experiment writes them, evaluates the gates and builds
the report.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

try:
    from .analysis import GateResult, RecordAnalyzer
    from .config import config
    from .density_pde import (SCHEMES, DensityGrid, TorusGrid1D, stability_bound,
                              density_from_function, entropy_grid, fisher_grid, fp_step,
                              hessian_log_sup, kde_density, solve_coupled_block_fp, tv_grid,
                              uniform_density, wrapped_gaussian_density)
    from .drift import DriftKernel, kernel_from_spec, linear_kernel, sine_kernel
    from .errors import ConfigError, RegimeError
    from .gaussian_oracle import (METHODS, GaussianLaw, JointGaussianState, averaged_subset_info,
                                  evolve_graphon_gaussian, evolve_interacting_gaussian,
                                  evolve_projection_gaussian, quadrature_entropy, quadrature_fisher,
                                  quadrature_tv, relative_entropy_gaussian, relative_fisher_gaussian,
                                  subset_info)
    from .graphon_core import (Graphon, GridFunction, InteractionMatrix, StepKernel,
                               common_resolution, cut_norm_exact, cut_norm_lower_bound,
                               delta_n, dist_sup_l1, graphon_difference, graphon_from_function,
                               interaction_from_graphon, kernel_exponential_apply,
                               kernel_growth_constant, perturb_graphon, sample_bernoulli_matrix)
    from .hierarchy import (SubsetFunction, comparison_check, graphon_envelope_check,
                            solve_hierarchy_ode, thm22_bound)
    from .logger_config import logger
    from .persistence import LabStore
    from .simulate import (SimConfig, density_ensemble, euler_covariance_recursion,
                           point_ensemble, simulate_graphon_mfv, simulate_particle_system)
except ImportError:
    import sys
    sys.path.insert(0, str(Path(__file__).parent))
    from analysis import GateResult, RecordAnalyzer
    from config import config
    from density_pde import (SCHEMES, DensityGrid, TorusGrid1D, stability_bound,
                             density_from_function, entropy_grid, fisher_grid, fp_step,
                             hessian_log_sup, kde_density, solve_coupled_block_fp, tv_grid,
                             uniform_density, wrapped_gaussian_density)
    from drift import DriftKernel, kernel_from_spec, linear_kernel, sine_kernel
    from errors import ConfigError, RegimeError
    from gaussian_oracle import (METHODS, GaussianLaw, JointGaussianState, averaged_subset_info,
                                 evolve_graphon_gaussian, evolve_interacting_gaussian,
                                 evolve_projection_gaussian, quadrature_entropy, quadrature_fisher,
                                 quadrature_tv, relative_entropy_gaussian, relative_fisher_gaussian,
                                 subset_info)
    from graphon_core import (Graphon, GridFunction, InteractionMatrix, StepKernel,
                              common_resolution, cut_norm_exact, cut_norm_lower_bound,
                              delta_n, dist_sup_l1, graphon_difference, graphon_from_function,
                              interaction_from_graphon, kernel_exponential_apply,
                              kernel_growth_constant, perturb_graphon, sample_bernoulli_matrix)
    from hierarchy import (SubsetFunction, comparison_check, graphon_envelope_check,
                           solve_hierarchy_ode, thm22_bound)
    from logger_config import logger
    from persistence import LabStore
    from simulate import (SimConfig, density_ensemble, euler_covariance_recursion,
                          point_ensemble, simulate_graphon_mfv, simulate_particle_system)


EXPERIMENT_KINDS = (
    "scaling_thm22",
    "stability_thm23",
    "stability_thm24",
    "estimator_validation",
    "operator_checks",
)
REGIMES = ("oracle", "torus")
INTERACTIONS = ("deterministic", "bernoulli")
GATE_KEYS = ("slope_window", "r2", "ratio_factor", "refinement_tolerance")

# PDE diffusion matching particles driven by unit Brownian motion
PARTICLE_DIFFUSION = 0.5

NAMED_GRAPHONS: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "product": lambda u, v: u * v,
    "min": np.minimum,
    "one_minus_max": lambda u, v: 1.0 - np.maximum(u, v),
    "exponential": lambda u, v: np.exp(-np.abs(u - v)),
}

VALIDATION_CHECKS = (
    "gaussian_quadrature",
    "pinsker",
    "marginalization",
    "kde_vs_pde",
    "simulation_vs_oracle",
    "weak_order",
    "fp_solver",
)
OPERATOR_CHECKS = (
    "exponential_identity",
    "positivity",
    "hierarchy_closed_form",
    "uniform_bound",
    "comparison_principle",
    "hierarchy_ratio",
    "graphon_envelope",
    "cut_norm",
)


# ---------------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    """
    One experiment as read from its JSON config.

    Science parameters only; tolerances and output locations shared by every
    study live in LabConfig. Kind-specific extras (trial counts, refinement,
    check selection) go in `options`.
    """

    kind: str
    name: str = ""
    regime: str = "oracle"
    graphon: Dict[str, Any] = field(default_factory=lambda: {"type": "constant", "value": 1.0})
    perturbation: Optional[Dict[str, Any]] = None
    kernel: Dict[str, Any] = field(default_factory=lambda: {"kind": "linear_difference", "rate": 1.0})
    N_list: List[int] = field(default_factory=lambda: [32, 64, 128, 256, 512])
    k_list: List[int] = field(default_factory=lambda: [2])
    eps_list: List[float] = field(default_factory=lambda: [0.0, 0.02, 0.04, 0.08, 0.16, 0.32])
    T: float = 1.0
    dt: float = 1e-3
    M: int = 10_000
    n: int = 1024
    seed: int = 0
    output: Optional[str] = None
    init: Dict[str, Any] = field(default_factory=lambda: {"mean": 0.0, "var": 1.0})
    method: str = "expm"
    scheme: str = "implicit"
    diffusion: float = 1.0
    interaction: str = "deterministic"
    alpha: float = 1.0
    gates: Dict[str, Any] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build and validate a config.

        Raises:
            ConfigError: On unknown keys, missing kind or any invalid field
        """
        unknown = sorted(set(payload) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "kind" not in payload:
            raise ConfigError("config needs an experiment 'kind'")
        try:
            cfg = cls(**payload)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        problems = cfg.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def label(self) -> str:
        return self.name or self.kind

    def problems(self) -> List[str]:
        """Every violated precondition, as readable messages (empty when valid)."""
        issues: List[str] = []
        if self.kind not in EXPERIMENT_KINDS:
            issues.append(f"kind must be one of {EXPERIMENT_KINDS}, got '{self.kind}'")
        if self.regime not in REGIMES:
            issues.append(f"regime must be one of {REGIMES}, got '{self.regime}'")
        if self.T <= 0 or self.dt <= 0:
            issues.append("T and dt must be positive")
        elif self.dt > self.T:
            issues.append("dt must not exceed T")
        if self.M < 2:
            issues.append("M must be at least 2")
        n = int(self.n)
        if n < config.MIN_GRID_CELLS or n > config.MAX_GRID_CELLS or n & (n - 1):
            issues.append(f"n must be a power of two in [{config.MIN_GRID_CELLS}, {config.MAX_GRID_CELLS}]")
        if self.method not in METHODS:
            issues.append(f"method must be one of {METHODS}")
        if self.scheme not in SCHEMES:
            issues.append(f"scheme must be one of {SCHEMES}")
        if self.diffusion <= 0:
            issues.append("diffusion must be positive")
        if self.interaction not in INTERACTIONS:
            issues.append(f"interaction must be one of {INTERACTIONS}")

        if self.kind == "scaling_thm22":
            if not self.N_list or any(int(N) < 1 for N in self.N_list):
                issues.append("N_list must be a nonempty list of positive integers")
            if not self.k_list or any(int(k) < 1 for k in self.k_list):
                issues.append("k_list must be a nonempty list of positive integers")
        if self.kind in ("stability_thm23", "stability_thm24"):
            if not self.eps_list or any(e < 0 for e in self.eps_list):
                issues.append("eps_list must be a nonempty list of nonnegative numbers")
            if self.perturbation is None:
                issues.append("stability sweeps need a 'perturbation' kernel")

        unknown_gates = sorted(set(self.gates) - set(GATE_KEYS))
        if unknown_gates:
            issues.append(f"unknown gate keys: {', '.join(unknown_gates)}")
        window = self.gates.get("slope_window")
        if window is not None and (len(window) != 2 or window[0] > window[1]):
            issues.append("slope_window must be [low, high] or null")

        try:
            build_graphon(self.graphon)
            if self.perturbation is not None:
                build_perturbation(self.perturbation)
            k = kernel_from_spec(self.kernel)
        except (ValueError, KeyError, TypeError) as e:
            issues.append(f"graphon/kernel spec: {e}")
            return issues
        if self.kind in ("scaling_thm22", "stability_thm23", "stability_thm24"):
            if self.regime == "oracle" and not k.is_oracle_regime:
                issues.append("oracle regime needs the linear_difference kernel")
            if self.regime == "torus" and k.domain != "torus":
                issues.append("torus regime needs a torus kernel")
        return issues


def build_graphon(spec: Dict[str, Any]) -> Graphon:
    """
    Graphon from its config form.

    Examples:
        {"m": 2, "values": [[0.6, 0.4], [0.4, 0.6]]}
        {"type": "constant", "value": 1.0, "m": 1}
        {"type": "function", "name": "product", "m": 64}
    """
    kind = spec.get("type", "step")
    if kind == "step":
        return Graphon.from_dict(spec)
    if kind == "constant":
        return Graphon.constant(float(spec.get("value", 1.0)), int(spec.get("m", 1)))
    if kind == "function":
        name = spec.get("name")
        if name not in NAMED_GRAPHONS:
            raise ConfigError(f"unknown graphon function '{name}', expected one of {sorted(NAMED_GRAPHONS)}")
        return graphon_from_function(NAMED_GRAPHONS[name], int(spec.get("m", 64)))
    raise ConfigError(f"unknown graphon type '{kind}'")


def build_perturbation(spec: Dict[str, Any]) -> StepKernel:
    """Signed perturbation Δ from {"m": int, "values": [[...]]}."""
    delta = StepKernel(spec["values"])
    if "m" in spec and int(spec["m"]) != delta.m:
        raise ConfigError(f"declared m={spec['m']} but perturbation is {delta.m}×{delta.m}")
    return delta


def load_experiment_config(path: Union[str, Path], store: Optional[LabStore] = None) -> ExperimentConfig:
    store = store or LabStore()
    return ExperimentConfig.from_dict(store.load_json(path))


def validate_config(path: Union[str, Path]) -> List[str]:
    """
    Check a config file without running it.

    Returns:
        Readable problems; empty when the config is valid
    """
    try:
        payload = LabStore().load_json(path)
    except (OSError, ConfigError) as e:
        return [str(e)]
    issues = []
    unknown = sorted(set(payload) - {f.name for f in fields(ExperimentConfig)})
    if unknown:
        issues.append(f"unknown config keys: {', '.join(unknown)}")
    if "kind" not in payload:
        return issues + ["config needs an experiment 'kind'"]
    known = {k: v for k, v in payload.items() if k not in unknown}
    try:
        cfg = ExperimentConfig(**known)
    except TypeError as e:
        return issues + [str(e)]
    return issues + cfg.problems()


# ---------------------------------------------------------------------- shared helpers

def _base_record(cfg: ExperimentConfig) -> Dict[str, Any]:
    return {
        "experiment": cfg.kind,
        "regime": cfg.regime,
        "seed": cfg.seed,
        "schema_version": config.RECORD_SCHEMA_VERSION,
        "T": cfg.T,
        "dt": cfg.dt,
        "kernel": cfg.kernel.get("kind"),
        "config": json.dumps(cfg.to_dict(), sort_keys=True),
    }


def _run_points(cfg: ExperimentConfig, func: Callable[[Any], List[Dict[str, Any]]],
                points: Sequence[Any], desc: str) -> List[Dict[str, Any]]:
    """
    Evaluate independent experiment points, in parallel when GRAPHON_LAB_THREADS > 1.

    Each row gets the base record fields and the wall-clock time of its point.
    Results come back in point order whatever the worker count.
    """
    base = _base_record(cfg)

    def timed(point):
        start = time.perf_counter()
        rows = func(point)
        elapsed = time.perf_counter() - start
        return [{**base, **row, "wall_clock": elapsed} for row in rows]

    threads = config.threads
    if threads > 1 and len(points) > 1:
        logger.info(f"{desc}: {len(points)} points on {threads} threads")
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(tqdm(pool.map(timed, points), total=len(points), desc=desc))
    else:
        results = [timed(p) for p in tqdm(points, desc=desc)]
    return [row for rows in results for row in rows]


def _interaction(cfg: ExperimentConfig, g: Graphon, N: int) -> InteractionMatrix:
    if cfg.interaction == "bernoulli":
        return sample_bernoulli_matrix(g, N, cfg.seed)
    return interaction_from_graphon(g, N)


def _init_means(cfg: ExperimentConfig, count: int, default: float) -> List[float]:
    means = cfg.init.get("means", [cfg.init.get("mean", default)])
    if len(means) not in (1, count):
        raise ConfigError(f"init has {len(means)} means for {count} blocks")
    return [float(means[i % len(means)]) for i in range(count)]


def _oracle_laws(cfg: ExperimentConfig, count: int, dim: int) -> List[GaussianLaw]:
    """Initial Gaussian laws, one per particle or block."""
    means = _init_means(cfg, count, 0.0)
    if cfg.init.get("deterministic", False):
        return [GaussianLaw.point(np.full(dim, m)) for m in means]
    var = float(cfg.init.get("var", 1.0))
    return [GaussianLaw(np.full(dim, m), var * np.eye(dim)) for m in means]


def _torus_densities(cfg: ExperimentConfig, grid: TorusGrid1D, count: int) -> List[DensityGrid]:
    """Initial torus densities: wrapped Gaussians, or uniform when init.uniform is set."""
    if cfg.init.get("uniform", False):
        return [uniform_density(grid)] * count
    means = _init_means(cfg, count, 0.5 * grid.L)
    var = float(cfg.init.get("var", 0.05))
    return [wrapped_gaussian_density(grid, m, var) for m in means]


def _check_regime(cfg: ExperimentConfig, k: DriftKernel) -> None:
    if cfg.regime == "oracle" and not k.is_oracle_regime:
        raise RegimeError("oracle regime needs the linear_difference kernel")
    if cfg.regime == "torus" and k.domain != "torus":
        raise RegimeError("torus regime needs a torus kernel")
    if cfg.regime == "oracle":
        logger.warning("Oracle regime: unbounded linear kernel, outside the bounded-drift hypotheses")


def _check_row(check: str, case: Any, value: float, reference: float, tolerance: float,
               passed: Optional[bool] = None, **extra) -> Dict[str, Any]:
    error = abs(value - reference)
    if passed is None:
        passed = error <= tolerance
    return {"check": check, "case": str(case), "value": float(value), "reference": float(reference),
            "error": float(error), "tolerance": float(tolerance), "passed": bool(passed), **extra}


def _random_law(rng: np.random.Generator, dim: int) -> GaussianLaw:
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    cov = q @ np.diag(rng.uniform(0.5, 2.0, dim)) @ q.T
    return GaussianLaw(rng.uniform(-1.0, 1.0, dim), 0.5 * (cov + cov.T))


def _random_density(rng: np.random.Generator, grid: TorusGrid1D, modes: int = 4) -> DensityGrid:
    amp = rng.normal(scale=0.5, size=modes)
    phase = rng.uniform(0.0, 2.0 * np.pi, modes)
    freq = np.arange(1, modes + 1)

    def log_profile(x):
        return np.sum(amp[:, None] * np.cos(2.0 * np.pi * freq[:, None] * x[None] / grid.L + phase[:, None]), axis=0)

    return density_from_function(grid, lambda x: np.exp(log_profile(x)))


# ---------------------------------------------------------------------- scaling

def _scaling_oracle_point(cfg: ExperimentConfig, g: Graphon, k: DriftKernel, N: int) -> List[Dict[str, Any]]:
    xi = _interaction(cfg, g, N)
    laws = _oracle_laws(cfg, N, k.dim)
    joint = evolve_interacting_gaussian(xi, k.rate, JointGaussianState.from_marginals(laws),
                                        cfg.T, cfg.dt, cfg.method)
    projection = evolve_projection_gaussian(xi, k.rate, laws, cfg.T, cfg.dt, cfg.method)
    rows = []
    for size in cfg.k_list:
        if size > N:
            logger.warning(f"k={size} exceeds N={N}, skipped")
            continue
        v = range(size)
        H, I = subset_info(joint, projection, v)
        row = {"N": N, "k": size, "H": H, "I": I, "total": cfg.alpha * H + I,
               "bound": thm22_bound(xi, v), "envelope": size ** 2 / N ** 2,
               "delta_N": delta_n(xi, v), "fisher_available": True, "quantity": "subset law"}
        if cfg.options.get("averaged", False):
            stats = averaged_subset_info(joint, projection, size,
                                         cfg.options.get("max_subsets", 64), cfg.seed)
            row.update(mean_H=stats["mean_H"], max_H=stats["max_H"],
                       mean_I=stats["mean_I"], max_I=stats["max_I"])
        logger.debug(f"N={N}, k={size}: H={H:.3e}, I={I:.3e}")
        rows.append(row)
    return rows


def _scaling_torus_point(cfg: ExperimentConfig, g: Graphon, k: DriftKernel, N: int) -> List[Dict[str, Any]]:
    """
    One-particle marginal of the interacting system (KDE of the simulated
    ensemble) against the projection marginal (node-level PDE).
    """
    grid = TorusGrid1D(cfg.n, k.period)
    xi = _interaction(cfg, g, N)
    densities = _torus_densities(cfg, grid, N)
    sim = SimConfig(cfg.dt, cfg.T, cfg.seed)
    particles = simulate_particle_system(xi, k, density_ensemble(densities, cfg.M, cfg.seed), sim)
    if cfg.options.get("snapshots", False):
        LabStore().save_snapshot(particles, config.get_snapshot_path(f"{cfg.label}_N{N}.bin"))
    # one PDE block per node: g_ij / m = ξ_ij with m = N
    nodes = Graphon(np.clip(xi.xi * N, 0.0, 1.0))
    laws = solve_coupled_block_fp(nodes, k, densities, cfg.T, cfg.dt, cfg.scheme, PARTICLE_DIFFUSION)
    rows = []
    for size in cfg.k_list:
        if size != 1:
            logger.warning(f"torus regime estimates one-particle marginals only; k={size} skipped")
            continue
        estimate = kde_density(particles.particle(0)[:, 0], grid)
        H = entropy_grid(estimate, laws[0])
        rows.append({"N": N, "k": 1, "H": H, "I": float("nan"), "total": cfg.alpha * H,
                     "bound": thm22_bound(xi, [0]), "envelope": 1.0 / N ** 2,
                     "delta_N": delta_n(xi, [0]), "tv": tv_grid(estimate, laws[0]),
                     "fisher_available": False, "quantity": "marginal (KDE vs PDE)", "n": cfg.n, "M": cfg.M})
    return rows


def run_scaling_thm22(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """
    Subset entropy and Fisher information between the interacting system and
    its independent projection, for every (N, k).

    Oracle regime: closed-form Gaussian laws. Torus regime: one-particle
    entropy from a KDE of simulated particles against the projection PDE,
    Fisher information marked unavailable.
    """
    g = build_graphon(cfg.graphon)
    k = kernel_from_spec(cfg.kernel)
    _check_regime(cfg, k)
    point = _scaling_oracle_point if cfg.regime == "oracle" else _scaling_torus_point
    logger.info(f"Scaling sweep ({cfg.regime}): N={list(cfg.N_list)}, k={list(cfg.k_list)}")
    return _run_points(cfg, lambda N: point(cfg, g, k, int(N)), list(cfg.N_list), "scaling")


# ---------------------------------------------------------------------- stability

def _refined_base(cfg: ExperimentConfig):
    g1 = build_graphon(cfg.graphon)
    delta = build_perturbation(cfg.perturbation)
    m = common_resolution(g1.m, delta.m)
    return g1.refine(m), delta, m // g1.m


def _cut_norm(kernel: StepKernel, seed: int, iterations: int) -> float:
    if kernel.m <= config.CUT_NORM_EXACT_MAX_BLOCKS:
        return cut_norm_exact(kernel)
    return cut_norm_lower_bound(kernel, iterations, seed)


def _stability_sweep(cfg: ExperimentConfig, with_fisher: bool) -> List[Dict[str, Any]]:
    base, delta, factor = _refined_base(cfg)
    k = kernel_from_spec(cfg.kernel)
    _check_regime(cfg, k)
    coarse = base.m // factor
    iterations = int(cfg.options.get("cut_iterations", 32))

    if cfg.regime == "oracle":
        laws = _oracle_laws(cfg, coarse, k.dim)
        init = [laws[i // factor] for i in range(base.m)]
        reference = evolve_graphon_gaussian(base, k.rate, init, cfg.T, cfg.dt, cfg.method)

        def measure(g2: Graphon, eps: float):
            solved = evolve_graphon_gaussian(g2, k.rate, init, cfg.T, cfg.dt, cfg.method)
            H = np.array([relative_entropy_gaussian(p, q) for p, q in zip(solved, reference)])
            I = (np.array([relative_fisher_gaussian(p, q) for p, q in zip(solved, reference)])
                 if with_fisher else np.zeros_like(H))
            return H, I, {"quantity": "marginal"}

        refined = None
    else:
        logger.warning("Torus PDE regime: time-marginal entropy reported as a marginal proxy")
        grids = [TorusGrid1D(cfg.n, k.period)]
        if cfg.options.get("refine", False):
            grids.append(grids[0].refine())
        inits, references = [], []
        for grid in grids:
            dens = _torus_densities(cfg, grid, coarse)
            inits.append([dens[i // factor] for i in range(base.m)])
            references.append(solve_coupled_block_fp(base, k, inits[-1], cfg.T, cfg.dt,
                                                     cfg.scheme, cfg.diffusion))

        def solve_on(level: int, g2: Graphon):
            solved = solve_coupled_block_fp(g2, k, inits[level], cfg.T, cfg.dt, cfg.scheme, cfg.diffusion)
            H = np.array([entropy_grid(p, q) for p, q in zip(solved, references[level])])
            I = (np.array([fisher_grid(p, q) for p, q in zip(solved, references[level])])
                 if with_fisher else np.zeros_like(H))
            return solved, H, I

        def measure(g2: Graphon, eps: float):
            solved, H, I = solve_on(0, g2)
            extra = {"quantity": "marginal proxy", "n": cfg.n,
                     "max_log_hessian": max(hessian_log_sup(p) for p in solved)}
            if cfg.options.get("snapshots", False):
                LabStore().save_density_snapshots(solved, f"{cfg.label}_eps{eps:g}")
            return H, I, extra

        refined = (lambda g2: solve_on(1, g2)[1:]) if len(grids) > 1 else None

    def point(eps: float) -> List[Dict[str, Any]]:
        g2 = perturb_graphon(base, delta, eps)
        H, I, extra = measure(g2, eps)
        d = dist_sup_l1(base, g2)
        total = cfg.alpha * H + I
        worst = int(np.argmax(total))
        row = {"eps": eps, "d": d, "d_squared": d * d,
               "cut_norm": _cut_norm(graphon_difference(g2, base), cfg.seed, iterations),
               "sup_H": float(H.max()), "sup_I": float(I.max()) if with_fisher else float("nan"),
               "sup_total": float(total.max()), "block": worst, **extra}
        if refined is not None:
            H2, I2 = refined(g2)
            fine = float((cfg.alpha * H2 + I2).max()) if with_fisher else float(H2.max())
            coarse_value = row["sup_total"] if with_fisher else row["sup_H"]
            row["refinement_delta"] = abs(fine - coarse_value) / fine if fine > 0 else float("nan")
        logger.debug(f"eps={eps}: sup H={row['sup_H']:.3e}, d={d:.3e}")
        return [row]

    logger.info(f"Stability sweep ({cfg.regime}, m={base.m}): eps={list(cfg.eps_list)}")
    return _run_points(cfg, point, [float(e) for e in cfg.eps_list], cfg.kind)


def run_stability_thm23(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """sup over blocks of H(P_T^{u, G₂} | P_T^{u, G₁}) against d(G₁, G₂)² along the ε sweep."""
    return _stability_sweep(cfg, with_fisher=False)


def run_stability_thm24(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """As run_stability_thm23 with αH + I in place of H."""
    return _stability_sweep(cfg, with_fisher=True)


# ---------------------------------------------------------------------- estimator validation

def _validate_gaussian_quadrature(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    pairs = int(cfg.options.get("pairs", 50))
    tol = float(cfg.options.get("quadrature_tolerance", 1e-6))
    rows = []
    for dim in (1, 2):
        for i in range(pairs):
            rng = np.random.default_rng([cfg.seed, dim, i])
            p, q = _random_law(rng, dim), _random_law(rng, dim)
            for name, closed, quad in (("entropy", relative_entropy_gaussian, quadrature_entropy),
                                       ("fisher", relative_fisher_gaussian, quadrature_fisher)):
                value, reference = quad(p, q), closed(p, q)
                rel = abs(value - reference) / max(abs(reference), 1e-12)
                rows.append(_check_row(f"gaussian_{name}_quadrature", f"d{dim}-{i:03d}",
                                       value, reference, tol, rel <= tol, dim=dim))
    return rows


def _validate_pinsker(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    trials = int(cfg.options.get("pinsker_trials", 100))
    rows = []
    grid = TorusGrid1D(256)
    for i in range(trials):
        rng = np.random.default_rng([cfg.seed, 7, i])
        p, q = _random_law(rng, 1), _random_law(rng, 1)
        tv, H = quadrature_tv(p, q), relative_entropy_gaussian(p, q)
        rows.append(_check_row("pinsker_gaussian", f"{i:03d}", tv, math.sqrt(H / 2.0), 0.0,
                               tv <= math.sqrt(H / 2.0) + 1e-9 and H >= 0))
        a, b = _random_density(rng, grid), _random_density(rng, grid)
        tv, H, I = tv_grid(a, b), entropy_grid(a, b), fisher_grid(a, b)
        rows.append(_check_row("pinsker_grid", f"{i:03d}", tv, math.sqrt(H / 2.0), 0.0,
                               tv <= math.sqrt(H / 2.0) + 1e-12 and H >= 0 and I >= 0))
    return rows


def _validate_marginalization(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """H^v ≤ H^{v∪{k}} and I^v ≤ I^{v∪{k}} against product references."""
    trials = int(cfg.options.get("marginalization_trials", 50))
    N = 4
    rows = []
    for i in range(trials):
        rng = np.random.default_rng([cfg.seed, 11, i])
        A = rng.normal(size=(N, N))
        joint = JointGaussianState(N, 1, rng.uniform(-1.0, 1.0, N), A @ A.T + 0.5 * np.eye(N))
        marginals = [_random_law(rng, 1) for _ in range(N)]
        order = rng.permutation(N)
        size = int(rng.integers(1, N))
        v, extra = sorted(order[:size].tolist()), int(order[size])
        H_v, I_v = subset_info(joint, marginals, v)
        H_w, I_w = subset_info(joint, marginals, v + [extra])
        case = f"{i:03d}"
        rows.append(_check_row("marginalization_entropy", case, H_v, H_w, 0.0, H_v <= H_w + 1e-12))
        rows.append(_check_row("marginalization_fisher", case, I_v, I_w, 0.0, I_v <= I_w + 1e-12))
    return rows


def _validation_torus_kernel(cfg: ExperimentConfig) -> DriftKernel:
    k = kernel_from_spec(cfg.kernel)
    return k if k.domain == "torus" else sine_kernel(0.3, 1, 1.0)


def _validate_kde_vs_pde(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Graphon McKean-Vlasov particles (KDE) against the block PDE."""
    k = _validation_torus_kernel(cfg)
    tol = float(cfg.options.get("kde_tv_tolerance", 0.05))
    T = float(cfg.options.get("kde_T", 0.2))
    grid = TorusGrid1D(cfg.n, k.period)
    g = build_graphon(cfg.graphon)
    if g.m > 8:
        logger.warning(f"KDE check on {g.m} blocks; using the first block only")
    init = [wrapped_gaussian_density(grid, (i + 0.5) * grid.L / g.m, float(cfg.init.get("var", 0.05)))
            for i in range(g.m)]
    clouds = simulate_graphon_mfv(g, k, init, SimConfig(cfg.dt, T, cfg.seed), M=cfg.M)
    laws = solve_coupled_block_fp(g, k, init, T, cfg.dt, "implicit", PARTICLE_DIFFUSION)
    rows = []
    for block in range(min(g.m, 8)):
        estimate = kde_density(clouds[block].particle(0)[:, 0], grid)
        tv = tv_grid(estimate, laws[block])
        rows.append(_check_row("kde_vs_pde", f"block{block}", tv, 0.0, tol, block=block, M=cfg.M))
    uniform = kde_density(np.random.default_rng(cfg.seed).random(cfg.M) * grid.L, grid)
    rows.append(_check_row("kde_uniform", "uniform", tv_grid(uniform, uniform_density(grid)), 0.0, tol, M=cfg.M))
    return rows


def _pair_system():
    return InteractionMatrix(np.array([[0.0, 0.5], [0.5, 0.0]])), linear_kernel(1.0)


def _difference_variance(cov: np.ndarray) -> float:
    return float(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1])


def _validate_simulation_vs_oracle(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Var(X₁ − X₂) at T = 1 for two linearly coupled particles started at 0."""
    xi, k = _pair_system()
    M = int(cfg.options.get("sim_replicas", cfg.M))
    sim = simulate_particle_system(xi, k, point_ensemble(M, 2), SimConfig(cfg.dt, 1.0, cfg.seed))
    diff = sim.positions[:, 0, 0] - sim.positions[:, 1, 0]
    sample = float(np.var(diff, ddof=1))
    exact = -math.expm1(-2.0)
    se = exact * math.sqrt(2.0 / (M - 1))
    oracle = evolve_interacting_gaussian(xi, 1.0, JointGaussianState.deterministic(2), 1.0, method="expm")
    return [
        _check_row("simulation_vs_oracle", "var_x1_minus_x2", sample, exact, 3.0 * se, M=M),
        _check_row("oracle_closed_form", "var_x1_minus_x2", _difference_variance(oracle.cov), exact, 1e-6),
    ]


def _validate_weak_order(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Weak error of the Euler chain for Var(X₁ − X₂)(1), from its exact law."""
    xi, _ = _pair_system()
    dts = [float(h) for h in cfg.options.get("weak_order_dts", [0.004, 0.002, 0.001])]
    init = JointGaussianState.deterministic(2)
    exact = _difference_variance(evolve_interacting_gaussian(xi, 1.0, init, 1.0, method="expm").cov)
    errors = []
    rows = []
    for h in dts:
        chain = euler_covariance_recursion(xi, 1.0, init, SimConfig(h, 1.0, cfg.seed))
        err = abs(_difference_variance(chain.cov) - exact)
        errors.append(err)
        rows.append(_check_row("weak_order_error", f"dt={h:g}", err, 0.0, float("nan"), True, step=h))
    fit = RecordAnalyzer().fit_loglog_slope(dts, errors)
    rows.append(_check_row("weak_order_slope", "fit", fit.slope, 1.0, 0.3, r2=fit.r2))
    return rows


def _gibbs_drift_rate(p: DensityGrid, force: np.ndarray, scheme: str, t_end: float, dt: float) -> float:
    """L¹ distance travelled per unit time by a density started at p."""
    steps = int(math.ceil(t_end / dt - 1e-9))
    evolved = p
    for _ in range(steps):
        evolved = fp_step(evolved, force, t_end / steps, scheme)
    return float(p.grid.h * np.abs(evolved.values - p.values).sum()) / t_end


def _validate_fp_solver(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Mass and positivity at the explicit bound, heat-mode decay and Gibbs stationarity."""
    rows = []
    rng = np.random.default_rng([cfg.seed, 13])
    grid = TorusGrid1D(256)
    p = _random_density(rng, grid)
    drift = rng.normal(size=grid.n)
    dt = stability_bound(grid, drift)
    worst = 0.0
    for _ in range(20):
        p = fp_step(p, drift, dt, "explicit")
        worst = max(worst, abs(p.mass - 1.0))
    rows.append(_check_row("fp_mass", "explicit", worst, 0.0, 1e-10))

    coarse = TorusGrid1D(64)
    steep = 40.0 * np.sin(2.0 * np.pi * coarse.centres)
    q = wrapped_gaussian_density(coarse, 0.3, 0.01)
    for _ in range(50):
        q = fp_step(q, steep, stability_bound(coarse, steep), "explicit")
    rows.append(_check_row("fp_positivity", "explicit_bound", float(q.values.min()), 0.0, 0.0,
                           q.values.min() >= 0.0 and abs(q.mass - 1.0) <= 1e-10))

    fine = TorusGrid1D(1024)
    zero = np.zeros(fine.n)
    heat = density_from_function(fine, lambda x: 1.0 + np.cos(2.0 * np.pi * x))
    t_end = 0.01
    steps = int(math.ceil(t_end / stability_bound(fine, zero)))
    for _ in range(steps):
        heat = fp_step(heat, zero, t_end / steps, "explicit")
    mode = 2.0 * fine.h * float(np.sum(heat.values * np.cos(2.0 * np.pi * fine.centres)))
    expected = math.exp(-4.0 * math.pi ** 2 * t_end)
    rows.append(_check_row("fp_heat_decay", "mode1", mode, expected, 1e-3 * expected, n=fine.n))

    # U = −A cos 2πx, Gibbs density ∝ e^{A cos 2πx}
    A = 0.5
    force = -2.0 * np.pi * A * np.sin(2.0 * np.pi * fine.centres)
    gibbs = density_from_function(fine, lambda x: np.exp(A * np.cos(2.0 * np.pi * x)))
    for scheme, step in (("implicit", 1e-3), ("explicit", stability_bound(fine, force))):
        rate = _gibbs_drift_rate(gibbs, force, scheme, t_end, step)
        rows.append(_check_row("fp_gibbs_stationarity", scheme, rate, 0.0, 1e-6, n=fine.n))
    return rows


VALIDATORS: Dict[str, Callable[[ExperimentConfig], List[Dict[str, Any]]]] = {
    "gaussian_quadrature": _validate_gaussian_quadrature,
    "pinsker": _validate_pinsker,
    "marginalization": _validate_marginalization,
    "kde_vs_pde": _validate_kde_vs_pde,
    "simulation_vs_oracle": _validate_simulation_vs_oracle,
    "weak_order": _validate_weak_order,
    "fp_solver": _validate_fp_solver,
}


def _selected(cfg: ExperimentConfig, available: Sequence[str]) -> List[str]:
    chosen = list(cfg.options.get("checks", available))
    unknown = [c for c in chosen if c not in available]
    if unknown:
        raise ConfigError(f"unknown checks {unknown}, expected a subset of {list(available)}")
    return chosen


def run_estimator_validation(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Agreement tables between law representations that overlap."""
    checks = _selected(cfg, VALIDATION_CHECKS)
    logger.info(f"Estimator validation: {', '.join(checks)}")
    return _run_points(cfg, lambda name: VALIDATORS[name](cfg), checks, "validation")


# ---------------------------------------------------------------------- operator checks

def _operator_exponential_identity(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    rows = []
    for m in (1, 4):
        g = Graphon.constant(1.0, m)
        for t in cfg.options.get("t_list", [0.1, 1.0, 5.0]):
            out = kernel_exponential_apply(g, GridFunction.constant(m), float(t)).samples
            rows.append(_check_row("exponential_identity", f"m={m},t={t}", float(np.abs(out - math.exp(t)).max()),
                                   0.0, 1e-9))
    return rows


def _operator_positivity(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    trials = int(cfg.options.get("trials", 100))
    t_list = [float(t) for t in cfg.options.get("t_list", [0.1, 1.0, 5.0])]
    rows = []
    for i in range(trials):
        rng = np.random.default_rng([cfg.seed, 17, i])
        m = int(rng.integers(2, 9))
        upper = np.triu(rng.random((m, m)))
        g = Graphon(upper + np.triu(upper, 1).T)
        t = t_list[i % len(t_list)]
        out = kernel_exponential_apply(g, GridFunction(rng.random(m)), t).samples
        rows.append(_check_row("positivity", f"{i:03d}", float(out.min()), 0.0, 0.0, bool(out.min() >= 0.0)))
        ones = kernel_exponential_apply(g, GridFunction.constant(m), t).samples
        envelope = math.exp(kernel_growth_constant(g) * t)
        rows.append(_check_row("growth_envelope", f"{i:03d}", float(ones.max()), envelope, 0.0,
                               bool(ones.max() <= envelope * (1.0 + 1e-9))))
    return rows


def _operator_hierarchy_closed_form(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """N = 2, ξ ≡ ½, z₀ = 0, c = 1: z_{1,2}(t) = 2t and z_{1}(t) = 2t − 7/2 + (7/2)e^{−t/2}."""
    rows = []
    for t in (0.5, 1.0, 2.0):
        z = solve_hierarchy_ode(InteractionMatrix.uniform(2), SubsetFunction.zeros(2), 1.0, t)
        rows.append(_check_row("hierarchy_closed_form", f"full,t={t}", z[[0, 1]], 2.0 * t, 1e-8))
        rows.append(_check_row("hierarchy_closed_form", f"single,t={t}", z[[0]],
                               2.0 * t - 3.5 + 3.5 * math.exp(-t / 2.0), 1e-8))
    return rows


def _operator_uniform_bound(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    rows = []
    for N in (4, 6, 8):
        xi = InteractionMatrix.uniform(N)
        for k in range(1, N + 1):
            expected = (k / N + 1.0) * (3 * k ** 2 + k) / N ** 2
            rows.append(_check_row("uniform_bound", f"N={N},k={k}", thm22_bound(xi, range(k)),
                                   expected, 1e-12 * expected, N=N, k=k))
    return rows


def _operator_comparison_principle(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Ordered initial data stay ordered; nonnegative data stay nonnegative."""
    trials = int(cfg.options.get("hierarchy_trials", 100))
    rows = []
    for i in range(trials):
        rng = np.random.default_rng([cfg.seed, 19, i])
        N = int(rng.integers(2, 7))
        raw = rng.random((N, N))
        xi = InteractionMatrix(raw / raw.sum(axis=1, keepdims=True) * rng.uniform(0.2, 1.0))
        z0 = rng.random(1 << N)
        w0 = z0 + rng.random(1 << N)
        c = float(rng.uniform(0.0, 2.0))
        z = solve_hierarchy_ode(xi, SubsetFunction(N, z0), c, cfg.T, 1e-2).values
        w = solve_hierarchy_ode(xi, SubsetFunction(N, w0), c, cfg.T, 1e-2).values
        gap = float((w - z).min())
        rows.append(_check_row("comparison_principle", f"{i:03d}", gap, 0.0, 0.0, gap >= -1e-12, N=N))
        rows.append(_check_row("hierarchy_positivity", f"{i:03d}", float(z.min()), 0.0, 0.0,
                               bool(z.min() >= -1e-12), N=N))
    return rows


def _operator_hierarchy_ratio(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    sizes = [int(N) for N in cfg.options.get("hierarchy_N", [4, 6, 8, 10])]
    table = comparison_check([InteractionMatrix.uniform(N) for N in sizes], cfg.T)
    return [{"check": "hierarchy_ratio", "case": f"N={int(r.N)},k={int(r.k)}", "N": int(r.N), "k": int(r.k),
             "value": float(r.ratio), "reference": float(r.bound), "z_value": float(r.z_value),
             "passed": not bool(r.flagged)} for r in table.itertuples()]


def _operator_graphon_envelope(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    g = build_graphon(cfg.graphon)
    factor = float(cfg.options.get("envelope_factor", 8.0))
    table = graphon_envelope_check(g, cfg.N_list, cfg.k_list)
    return [_check_row("graphon_envelope", f"N={int(r.N)},k={int(r.k)}", float(r.ratio), 0.0, factor,
                       float(r.ratio) <= factor, N=int(r.N), k=int(r.k), bound=float(r.bound),
                       envelope=float(r.envelope)) for r in table.itertuples()]


def _operator_cut_norm(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Exact cut norm against the heuristic lower bound and the sup-L1 distance."""
    trials = int(cfg.options.get("cut_trials", 20))
    rows = []
    for i in range(trials):
        rng = np.random.default_rng([cfg.seed, 23, i])
        m = int(rng.integers(2, 11))
        kernel = StepKernel(rng.uniform(-1.0, 1.0, (m, m)))
        exact = cut_norm_exact(kernel)
        lower = cut_norm_lower_bound(kernel, 16, cfg.seed)
        sup_l1 = dist_sup_l1(kernel, StepKernel(np.zeros((m, m))))
        rows.append(_check_row("cut_norm", f"{i:03d}", lower, exact, 0.0,
                               lower <= exact + 1e-12 and exact <= sup_l1 + 1e-12, m=m))
    return rows


OPERATOR_RUNNERS: Dict[str, Callable[[ExperimentConfig], List[Dict[str, Any]]]] = {
    "exponential_identity": _operator_exponential_identity,
    "positivity": _operator_positivity,
    "hierarchy_closed_form": _operator_hierarchy_closed_form,
    "uniform_bound": _operator_uniform_bound,
    "comparison_principle": _operator_comparison_principle,
    "hierarchy_ratio": _operator_hierarchy_ratio,
    "graphon_envelope": _operator_graphon_envelope,
    "cut_norm": _operator_cut_norm,
}


def run_operator_checks(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Positivity and growth of e^{t𝒜}, and the comparison principle of the subset hierarchy."""
    checks = _selected(cfg, OPERATOR_CHECKS)
    logger.info(f"Operator checks: {', '.join(checks)}")
    return _run_points(cfg, lambda name: OPERATOR_RUNNERS[name](cfg), checks, "operators")


# ---------------------------------------------------------------------- dispatch

RUNNERS: Dict[str, Callable[[ExperimentConfig], List[Dict[str, Any]]]] = {
    "scaling_thm22": run_scaling_thm22,
    "stability_thm23": run_stability_thm23,
    "stability_thm24": run_stability_thm24,
    "estimator_validation": run_estimator_validation,
    "operator_checks": run_operator_checks,
}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: pd.DataFrame
    gates: List[GateResult]
    records_path: Optional[Path] = None
    report_path: Optional[Path] = None
    report: str = ""

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)


def run_experiment(
    cfg: ExperimentConfig,
    output_dir: Optional[Union[str, Path]] = None,
    store: Optional[LabStore] = None,
    write: bool = True
) -> ExperimentResult:
    """
    Run one experiment, evaluate its gates and write records plus report.

    Args:
        cfg: Validated experiment config
        output_dir: Records directory (default: cfg.output, then RECORDS_DIR)
        store: Persistence backend
        write: Skip all file output when False

    Returns:
        ExperimentResult; result.passed is False when any gate failed
    """
    store = store or LabStore()
    analyzer = RecordAnalyzer()
    logger.info(f"Running experiment '{cfg.label}' ({cfg.kind}, {cfg.regime} regime)")
    start = time.perf_counter()
    rows = RUNNERS[cfg.kind](cfg)
    records = store.sort_records(pd.DataFrame(rows))
    gates = analyzer.evaluate_gates(records, cfg.kind, cfg.gates)
    report = analyzer.create_report(records, gates, cfg.label)
    result = ExperimentResult(cfg, records, gates, report=report)
    if write:
        out = Path(output_dir or cfg.output or config.RECORDS_DIR)
        result.records_path = store.save_records(records, out, cfg.label)
        result.report_path = store.save_report(report, out / f"{cfg.label}_report.txt")
    logger.info(f"Experiment '{cfg.label}' finished in {time.perf_counter() - start:.1f}s: "
                f"{sum(g.passed for g in gates)}/{len(gates)} gates passed")
    return result


def records_gates(df: pd.DataFrame) -> List[GateResult]:
    """Gates for a stored record table, using the gate settings saved with each experiment."""
    analyzer = RecordAnalyzer()
    gates: List[GateResult] = []
    for kind in sorted(df["experiment"].unique()):
        part = df[df["experiment"] == kind]
        settings = {}
        if "config" in part.columns:
            settings = json.loads(part["config"].iloc[0]).get("gates", {})
        gates += analyzer.evaluate_gates(part, kind, settings)
    return gates


def summarize_records(path: Union[str, Path]) -> str:
    """Text report (slopes, R², envelope constants, gate status) for a records file."""
    df = LabStore().load_records(path)
    return RecordAnalyzer().create_report(df, records_gates(df), Path(path).stem)
