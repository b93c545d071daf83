"""
Particle Simulation

Euler-Maruyama simulation of the interacting particle system, of its
independent projection and of the block-reduced graphon mean-field system,
over M Monte Carlo replicas at once.

Brownian increments are counter-based: replicas are grouped in blocks of
REPLICA_BLOCK, and the increments of block b at step s come from a Philox
stream keyed by the seed with counter (0, s, b, 0), laid out in (particle,
coordinate, replica) order. An increment is therefore fixed by (seed, replica,
particle, coordinate, step) and the dimension d alone: extending M or N keeps
the paths already drawn. The particle system and its projection run with the
same seed share their Brownian paths, and the result does not depend on how
the work is split.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

try:
    from .config import config
    from .density_pde import DensityGrid
    from .drift import DriftKernel
    from .errors import (DimensionMismatchError, DomainMismatchError, SimulationDivergenceError,
                         TooFewSamplesError)
    from .gaussian_oracle import GaussianLaw, JointGaussianState, drift_matrix
    from .graphon_core import Graphon, InteractionMatrix
    from .logger_config import logger
except ImportError:
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent))
    from config import config
    from density_pde import DensityGrid
    from drift import DriftKernel
    from errors import (DimensionMismatchError, DomainMismatchError, SimulationDivergenceError,
                        TooFewSamplesError)
    from gaussian_oracle import GaussianLaw, JointGaussianState, drift_matrix
    from graphon_core import Graphon, InteractionMatrix
    from logger_config import logger


NOISE_LANE = 0
INIT_LANE = 1
REPLICA_BLOCK = 1024


def philox_generator(seed: int, lane: int, step: int, block: int = 0) -> np.random.Generator:
    """Counter-based stream for (seed, lane, step, replica block)."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[lane, step, block, 0]))


def replica_normals(seed: int, lane: int, step: int, M: int, N: int, d: int = 1) -> np.ndarray:
    """
    Standard normals of shape (M, N, d) addressed per replica.

    Block b draws an (N, d, REPLICA_BLOCK) array, so entry (r, i, c) sits at
    offset (i·d + c)·REPLICA_BLOCK + (r mod REPLICA_BLOCK) of its stream
    whatever M and N are.
    """
    blocks = [philox_generator(seed, lane, step, b).standard_normal((N, d, REPLICA_BLOCK))
              for b in range(-(-M // REPLICA_BLOCK))]
    z = np.concatenate(blocks, axis=2)[:, :, :M]
    return np.ascontiguousarray(np.transpose(z, (2, 0, 1)))


def wrap_torus(x: np.ndarray, period: float) -> np.ndarray:
    """Positions reduced into [0, period)."""
    x = np.mod(x, period)
    # mod can round up to the period itself
    x[x >= period] = 0.0
    return x


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """
    M replicas of N particles in dimension d.

    Attributes:
        positions: Array of shape (M, N, d); wrapped into [0, L) on the torus
        t: Time
        domain: "torus" or "euclidean"
        period: L on the torus
    """

    positions: np.ndarray
    t: float = 0.0
    domain: str = "euclidean"
    period: float = 1.0

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        if positions.ndim != 3:
            raise DimensionMismatchError(f"positions must have shape (M, N, d), got {positions.shape}")
        if self.domain not in ("torus", "euclidean"):
            raise ValueError(f"unknown domain '{self.domain}'")
        if not np.all(np.isfinite(positions)):
            raise SimulationDivergenceError("non-finite positions")
        if self.domain == "torus":
            positions = wrap_torus(positions, self.period)
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def N(self) -> int:
        return self.positions.shape[1]

    @property
    def d(self) -> int:
        return self.positions.shape[2]

    def particle(self, i: int) -> np.ndarray:
        """Cross-replica samples of particle i, shape (M, d)."""
        return self.positions[:, i, :]

    def select(self, indices: Sequence[int]) -> "EnsembleState":
        return EnsembleState(self.positions[:, list(indices), :], self.t, self.domain, self.period)


@dataclass(frozen=True)
class SimConfig:
    """Time stepping of one simulation run."""

    dt: float
    T: float
    seed: int = 0
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.dt > self.T * (1.0 + 1e-12):
            raise ValueError("dt must not exceed T")
        if self.scheme != "euler_maruyama":
            raise ValueError(f"unsupported scheme '{self.scheme}'")
        if self.steps > config.MAX_STEPS:
            raise ValueError(f"{self.steps} steps exceed the cap of {config.MAX_STEPS}")

    @property
    def steps(self) -> int:
        return max(1, int(math.ceil(self.T / self.dt - 1e-9)))

    @property
    def step_size(self) -> float:
        return self.T / self.steps


# ---------------------------------------------------------------------- initial ensembles

def point_ensemble(M: int, N: int, point: float = 0.0, d: int = 1,
                   domain: str = "euclidean", period: float = 1.0) -> EnsembleState:
    return EnsembleState(np.full((M, N, d), float(point)), 0.0, domain, period)


def gaussian_ensemble(laws: Sequence[GaussianLaw], M: int, seed: int) -> EnsembleState:
    """Independent particles, particle i drawn from laws[i]."""
    d = laws[0].dim
    if any(q.dim != d for q in laws):
        raise DimensionMismatchError("all laws must share a dimension")
    z = replica_normals(seed, INIT_LANE, 0, M, len(laws), d)
    chol = np.stack([np.linalg.cholesky(q.cov) for q in laws])
    means = np.stack([q.mean for q in laws])
    return EnsembleState(means[None] + np.einsum("nij,mnj->mni", chol, z))


def joint_gaussian_ensemble(joint: JointGaussianState, M: int, seed: int) -> EnsembleState:
    """Replicas drawn from a correlated joint Gaussian law."""
    z = replica_normals(seed, INIT_LANE, 0, M, joint.N * joint.d)[..., 0]
    x = joint.mean[None] + z @ np.linalg.cholesky(joint.cov).T
    return EnsembleState(x.reshape(M, joint.N, joint.d))


def density_ensemble(densities: Sequence[DensityGrid], M: int, seed: int) -> EnsembleState:
    """Torus samples: a cell drawn with probability h·p_i, then a uniform offset inside it."""
    grid = densities[0].grid
    rng = philox_generator(seed, INIT_LANE, 0)
    columns = []
    for p in densities:
        weights = p.values * grid.h
        cells = rng.choice(grid.n, size=M, p=weights / weights.sum())
        columns.append((cells + rng.random(M)) * grid.h)
    return EnsembleState(np.stack(columns, axis=1)[..., None], 0.0, "torus", grid.L)


def uniform_torus_ensemble(M: int, N: int, period: float, seed: int) -> EnsembleState:
    rng = philox_generator(seed, INIT_LANE, 0)
    return EnsembleState(rng.random((M, N, 1)) * period, 0.0, "torus", period)


# ---------------------------------------------------------------------- Euler-Maruyama

def _check_domains(k: DriftKernel, init: EnsembleState) -> None:
    if k.domain != init.domain:
        raise DomainMismatchError(f"kernel lives on the {k.domain} domain, ensemble on the {init.domain} domain")
    if k.dim != init.d:
        raise DimensionMismatchError(f"kernel dimension {k.dim} differs from ensemble dimension {init.d}")
    if init.domain == "torus" and abs(k.period - init.period) > 1e-12:
        raise DomainMismatchError(f"kernel period {k.period} differs from ensemble period {init.period}")


def _guard(x: np.ndarray, domain: str, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise SimulationDivergenceError(f"non-finite positions at step {step}")
    if domain == "euclidean" and np.abs(x).max() > config.DIVERGENCE_BOUND:
        raise SimulationDivergenceError(
            f"positions exceed {config.DIVERGENCE_BOUND:.0e} at step {step}"
        )


def _euler_maruyama(drift_fn, init: EnsembleState, cfg: SimConfig, label: str,
                    progress: bool) -> EnsembleState:
    h = cfg.step_size
    sqrt_h = math.sqrt(h)
    x = init.positions.copy()
    shape = x.shape
    for step in tqdm(range(cfg.steps), desc=label, disable=not progress, leave=False):
        noise = replica_normals(cfg.seed, NOISE_LANE, step, *shape)
        x = x + drift_fn(x) * h + sqrt_h * noise
        if init.domain == "torus":
            x = wrap_torus(x, init.period)
        _guard(x, init.domain, step)
    return EnsembleState(x, init.t + cfg.T, init.domain, init.period)


def simulate_particle_system(
    xi: InteractionMatrix,
    k: DriftKernel,
    init: EnsembleState,
    cfg: SimConfig,
    progress: bool = False
) -> EnsembleState:
    """
    X^i ← X^i + Σ_j ξ_ij b(X^i, X^j) dt + √dt ζ in every replica.

    Args:
        xi: Interaction matrix (N×N)
        k: Drift kernel on the ensemble's domain
        init: Initial ensemble (M replicas of N particles)
        cfg: Step size, horizon and seed

    Returns:
        Ensemble at time init.t + cfg.T
    """
    _check_domains(k, init)
    if xi.N != init.N:
        raise DimensionMismatchError(f"interaction matrix has N={xi.N}, ensemble N={init.N}")
    weights = xi.xi
    logger.debug(f"Particle system: M={init.M}, N={init.N}, steps={cfg.steps}, kernel={k.kind}")
    return _euler_maruyama(lambda x: k.interaction_drift(x, weights), init, cfg,
                           "particle system", progress)


def simulate_independent_projection(
    xi: InteractionMatrix,
    k: DriftKernel,
    init: EnsembleState,
    cfg: SimConfig,
    progress: bool = False
) -> EnsembleState:
    """
    Y^i ← Y^i + Σ_j ξ_ij ⟨b(Y^i, ·), Q^j⟩ dt + √dt ζ.

    The drift is evaluated at Y^i itself, so the projection is autonomous.
    The law Q^j is replaced by the cloud of node j across replicas; every
    replica reads the same clouds from the previous step.
    """
    _check_domains(k, init)
    if xi.N != init.N:
        raise DimensionMismatchError(f"interaction matrix has N={xi.N}, ensemble N={init.N}")
    if init.M < config.MIN_PROJECTION_REPLICAS:
        raise TooFewSamplesError(
            f"projection needs at least {config.MIN_PROJECTION_REPLICAS} replicas, got {init.M}"
        )
    weights = xi.xi
    logger.debug(f"Independent projection: M={init.M}, N={init.N}, steps={cfg.steps}")
    return _euler_maruyama(lambda x: k.weighted_mean_field(x, x, weights), init, cfg,
                           "projection", progress)


def simulate_graphon_mfv(
    g: Graphon,
    k: DriftKernel,
    init_per_block: Sequence[Union[DensityGrid, GaussianLaw]],
    cfg: SimConfig,
    M: Optional[int] = None,
    progress: bool = False
) -> List[EnsembleState]:
    """
    McKean-Vlasov particle approximation of the block-reduced graphon system.

    Cloud i moves with drift Σ_j (g_ij/m)(1/M) Σ_r b(x, X_j^(r)), which is the
    independent projection driven by ξ = G/m with one node per block.

    Returns:
        One ensemble of shape (M, 1, d) per block
    """
    M = config.DEFAULT_REPLICAS if M is None else M
    if len(init_per_block) != g.m:
        raise DimensionMismatchError(f"{len(init_per_block)} initial laws for {g.m} blocks")
    if all(isinstance(p, DensityGrid) for p in init_per_block):
        init = density_ensemble(init_per_block, M, cfg.seed)
    elif all(isinstance(p, GaussianLaw) for p in init_per_block):
        init = gaussian_ensemble(init_per_block, M, cfg.seed)
        if k.domain == "torus":
            init = EnsembleState(init.positions, 0.0, "torus", k.period)
    else:
        raise TypeError("initial laws must all be DensityGrid or all GaussianLaw")
    final = simulate_independent_projection(InteractionMatrix(g.values / g.m), k, init, cfg, progress)
    return [final.select([i]) for i in range(g.m)]


def empirical_moments(e: EnsembleState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cross-replica sample moments.

    Returns:
        (means (N, d), per-particle covariances (N, d, d), joint covariance (N·d, N·d))
    """
    if e.M < 2:
        raise TooFewSamplesError("moments need at least two replicas")
    flat = e.positions.reshape(e.M, e.N * e.d)
    joint = np.atleast_2d(np.cov(flat, rowvar=False, ddof=1))
    means = e.positions.mean(axis=0)
    blocks = np.stack([joint[i * e.d:(i + 1) * e.d, i * e.d:(i + 1) * e.d] for i in range(e.N)])
    return means, blocks, joint


def euler_covariance_recursion(
    xi: InteractionMatrix,
    rate: float,
    init: JointGaussianState,
    cfg: SimConfig
) -> JointGaussianState:
    """
    Exact law of the Euler-Maruyama chain under the linear kernel.

    m ← (I + hD) m and Σ ← (I + hD) Σ (I + hD)ᵀ + h I, the discrete-time
    counterpart of the Lyapunov flow; comparing it with the continuous law
    isolates the time-discretisation bias.
    """
    if xi.N != init.N:
        raise DimensionMismatchError(f"interaction matrix has N={xi.N}, initial law N={init.N}")
    h = cfg.step_size
    n = init.N * init.d
    A = np.eye(n) + h * np.kron(drift_matrix(xi, rate), np.eye(init.d))
    mean, cov = init.mean.copy(), init.cov.copy()
    for _ in range(cfg.steps):
        mean = A @ mean
        cov = A @ cov @ A.T + h * np.eye(n)
    return JointGaussianState(init.N, init.d, mean, 0.5 * (cov + cov.T), init.t + cfg.T)
