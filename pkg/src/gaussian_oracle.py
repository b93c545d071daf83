"""
Gaussian Oracle

Exact law evolution for the linear kernel β(r) = −a·r and closed-form relative
entropy / relative Fisher information between Gaussians. This is the
independent reference every other estimator in the laboratory is checked
against, so numerical problems raise instead of degrading quietly.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve, expm
from scipy.stats import multivariate_normal

try:
    from .config import config
    from .errors import (DimensionMismatchError, EmptySubsetError, IllConditionedError,
                         NotPositiveDefiniteError)
    from .graphon_core import Graphon, InteractionMatrix
    from .logger_config import logger
except ImportError:
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent))
    from config import config
    from errors import (DimensionMismatchError, EmptySubsetError, IllConditionedError,
                        NotPositiveDefiniteError)
    from graphon_core import Graphon, InteractionMatrix
    from logger_config import logger


METHODS = ("rk4", "expm")


def _check_spd(cov: np.ndarray, what: str) -> None:
    scale = max(1.0, float(np.abs(cov).max()))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=config.SYMMETRY_TOLERANCE * scale):
        raise NotPositiveDefiniteError(f"{what} covariance is not symmetric")
    try:
        cho_factor(cov, lower=True)
    except LinAlgError as e:
        raise NotPositiveDefiniteError(f"{what} covariance is not positive definite") from e


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """N(mean, cov) on ℝ^dim."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.array(self.mean, dtype=float))
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionMismatchError(f"mean {mean.shape} and cov {cov.shape} do not match")
        _check_spd(cov, "law")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def standard(cls, dim: int = 1) -> "GaussianLaw":
        return cls(np.zeros(dim), np.eye(dim))

    @classmethod
    def point(cls, x, variance: Optional[float] = None) -> "GaussianLaw":
        """Regularised Dirac mass at x (covariance DETERMINISTIC_VARIANCE·I)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        variance = config.DETERMINISTIC_VARIANCE if variance is None else variance
        return cls(x, variance * np.eye(x.size))

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return multivariate_normal(self.mean, self.cov).logpdf(x)


@dataclass(frozen=True, eq=False)
class JointGaussianState:
    """Joint law of N particles with d coordinates each, at time t."""

    N: int
    d: int
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        law = GaussianLaw(self.mean, self.cov)
        if law.dim != self.N * self.d:
            raise DimensionMismatchError(f"joint law has dim {law.dim}, expected N·d = {self.N * self.d}")
        object.__setattr__(self, "mean", law.mean)
        object.__setattr__(self, "cov", law.cov)

    @classmethod
    def from_marginals(cls, marginals: Sequence[GaussianLaw], t: float = 0.0) -> "JointGaussianState":
        """Product law of independent coordinates."""
        law = product_law(marginals)
        return cls(len(marginals), marginals[0].dim, law.mean, law.cov, t)

    @classmethod
    def deterministic(cls, N: int, d: int = 1, point: float = 0.0) -> "JointGaussianState":
        return cls.from_marginals([GaussianLaw.point(np.full(d, point)) for _ in range(N)])

    @classmethod
    def standard(cls, N: int, d: int = 1) -> "JointGaussianState":
        return cls(N, d, np.zeros(N * d), np.eye(N * d))

    def coordinates(self, v: Iterable[int]) -> np.ndarray:
        idx = _subset_indices(v, self.N)
        return (idx[:, None] * self.d + np.arange(self.d)[None, :]).ravel()

    def marginals(self) -> List[GaussianLaw]:
        return [marginal_subset(self, [i]) for i in range(self.N)]


def _subset_indices(v: Iterable[int], N: int) -> np.ndarray:
    idx = np.unique(np.asarray(list(v), dtype=int))
    if idx.size == 0:
        raise EmptySubsetError("subset must be nonempty")
    if idx.min() < 0 or idx.max() >= N:
        raise IndexError(f"subset indices must lie in 0..{N - 1}")
    return idx


def product_law(marginals: Sequence[GaussianLaw]) -> GaussianLaw:
    """Block-diagonal product of independent Gaussian laws."""
    if not marginals:
        raise EmptySubsetError("product of zero laws")
    return GaussianLaw(np.concatenate([q.mean for q in marginals]),
                       block_diag(*[q.cov for q in marginals]))


def drift_matrix(xi: InteractionMatrix, rate: float) -> np.ndarray:
    """
    D = a·(ξ − diag(ξ·1)) acting on particle means.

    The self term ξ_ii·β(X_i − X_i) vanishes, so the diagonal only carries
    the off-diagonal mass −a·Σ_{j≠i} ξ_ij; means of the interacting system
    and of its independent projection both solve ṁ = D m.
    """
    return rate * (xi.xi - np.diag(xi.row_sums()))


def _steps(T: float, dt: float) -> Tuple[int, float]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be nonnegative")
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return n, T / n


def _rk4(f, y0: np.ndarray, T: float, dt: float) -> np.ndarray:
    n, h = _steps(T, dt)
    y = y0.copy()
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _lyapunov_flow(D: np.ndarray, mean: np.ndarray, cov: np.ndarray, T: float, dt: float,
                   method: str) -> Tuple[np.ndarray, np.ndarray]:
    """Solve ṁ = Dm, Σ̇ = DΣ + ΣDᵀ + I on [0, T]."""
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}', expected one of {METHODS}")
    n = D.shape[0]
    if T == 0:
        return mean.copy(), cov.copy()
    if method == "expm":
        # Van Loan: exp([[−D, I], [0, Dᵀ]]·T) holds e^{DT} and the forcing Gramian
        block = np.zeros((2 * n, 2 * n))
        block[:n, :n] = -D
        block[:n, n:] = np.eye(n)
        block[n:, n:] = D.T
        F = expm(block * T)
        phi = F[n:, n:].T
        gram = phi @ F[:n, n:]
        new_cov = phi @ cov @ phi.T + gram
        new_mean = phi @ mean
    else:
        eye = np.eye(n)
        new_mean = _rk4(lambda m: D @ m, mean, T, dt)
        new_cov = _rk4(lambda S: D @ S + S @ D.T + eye, cov, T, dt)
    return new_mean, 0.5 * (new_cov + new_cov.T)


def evolve_interacting_gaussian(
    xi: InteractionMatrix,
    rate: float,
    init: JointGaussianState,
    T: float,
    dt: Optional[float] = None,
    method: str = "rk4"
) -> JointGaussianState:
    """
    Law at time T of dX^i = Σ_j ξ_ij·(−a)(X^i − X^j) dt + dB^i from a Gaussian start.

    Args:
        xi: Interaction matrix (N×N)
        rate: a > 0
        init: Joint Gaussian initial law
        T: Final time
        dt: RK4 step (default DEFAULT_DT)
        method: "rk4" or "expm" (exact block exponential)

    Returns:
        JointGaussianState at time init.t + T
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if xi.N != init.N:
        raise DimensionMismatchError(f"interaction matrix has N={xi.N}, initial law N={init.N}")
    dt = config.DEFAULT_DT if dt is None else dt
    D = np.kron(drift_matrix(xi, rate), np.eye(init.d))
    mean, cov = _lyapunov_flow(D, init.mean, init.cov, T, dt, method)
    logger.debug(f"Evolved interacting Gaussian N={init.N}, d={init.d}, T={T}, method={method}")
    return JointGaussianState(init.N, init.d, mean, cov, init.t + T)


def evolve_projection_gaussian(
    xi: InteractionMatrix,
    rate: float,
    init_marginals: Sequence[GaussianLaw],
    T: float,
    dt: Optional[float] = None,
    method: str = "rk4"
) -> List[GaussianLaw]:
    """
    Marginal laws at time T of the independent projection.

    dY^i = −a Σ_j ξ_ij (Y^i − m_j(t)) dt + dB^i: means follow the interacting
    mean ODE, covariances follow Σ̇_i = −2a(Σ_j ξ_ij)Σ_i + I independently.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if len(init_marginals) != xi.N:
        raise DimensionMismatchError(f"{len(init_marginals)} marginals for N={xi.N}")
    dt = config.DEFAULT_DT if dt is None else dt
    d = init_marginals[0].dim
    if any(q.dim != d for q in init_marginals):
        raise DimensionMismatchError("all marginals must share a dimension")
    D0 = drift_matrix(xi, rate)
    means0 = np.stack([q.mean for q in init_marginals])
    if T == 0:
        means = means0
    elif method == "expm":
        means = expm(D0 * T) @ means0
    elif method == "rk4":
        means = _rk4(lambda m: D0 @ m, means0, T, dt)
    else:
        raise ValueError(f"unknown method '{method}', expected one of {METHODS}")
    out = []
    for i, q in enumerate(init_marginals):
        lam = 2.0 * rate * xi.row_sums()[i]
        if lam > 0:
            decay = math.exp(-lam * T)
            cov = decay * q.cov + (-math.expm1(-lam * T) / lam) * np.eye(d)
        else:
            cov = q.cov + T * np.eye(d)
        out.append(GaussianLaw(means[i], cov))
    return out


def projection_stationary_variance(xi: InteractionMatrix, rate: float) -> np.ndarray:
    """Long-time variance 1/(2a·Σ_j ξ_ij) of each projection coordinate (inf without interaction)."""
    lam = 2.0 * rate * xi.row_sums()
    with np.errstate(divide="ignore"):
        return np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), np.inf)


def evolve_graphon_gaussian(
    g: Graphon,
    rate: float,
    init_per_block: Sequence[GaussianLaw],
    T: float,
    dt: Optional[float] = None,
    method: str = "rk4"
) -> List[GaussianLaw]:
    """
    Block laws of the graphon mean-field system under the linear kernel.

    The block-reduced system with m blocks is exactly the independent
    projection driven by ξ = G/m (each block is one node of weight 1/m).
    """
    if len(init_per_block) != g.m:
        raise DimensionMismatchError(f"{len(init_per_block)} initial laws for {g.m} blocks")
    return evolve_projection_gaussian(InteractionMatrix(g.values / g.m), rate, init_per_block, T, dt, method)


def marginal_subset(joint: JointGaussianState, v: Iterable[int]) -> GaussianLaw:
    """Law of the particles in v (0-based indices)."""
    coords = joint.coordinates(v)
    return GaussianLaw(joint.mean[coords], joint.cov[np.ix_(coords, coords)])


def _guarded_cholesky(cov: np.ndarray, what: str):
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 0:
        raise NotPositiveDefiniteError(f"{what} covariance is not positive definite")
    cond = eig[-1] / eig[0]
    if cond > config.CONDITION_GUARD:
        raise IllConditionedError(f"{what} covariance condition number {cond:.3e} exceeds guard")
    return cho_factor(cov, lower=True)


def _check_dims(p: GaussianLaw, q: GaussianLaw) -> None:
    if p.dim != q.dim:
        raise DimensionMismatchError(f"laws have dimensions {p.dim} and {q.dim}")


def relative_entropy_gaussian(p: GaussianLaw, q: GaussianLaw) -> float:
    """H(p|q) = ½[tr(Σq⁻¹Σp) − d + (mq−mp)ᵀΣq⁻¹(mq−mp) + log(det Σq / det Σp)]."""
    _check_dims(p, q)
    cq = _guarded_cholesky(q.cov, "reference")
    cp = _guarded_cholesky(p.cov, "target")
    diff = q.mean - p.mean
    trace = np.trace(cho_solve(cq, p.cov))
    maha = float(diff @ cho_solve(cq, diff))
    logdet = 2.0 * (np.log(np.diag(cq[0])).sum() - np.log(np.diag(cp[0])).sum())
    return max(0.5 * (trace - p.dim + maha + logdet), 0.0)


def relative_fisher_gaussian(p: GaussianLaw, q: GaussianLaw) -> float:
    """
    I(p|q) = E_p‖∇log(p/q)‖² = tr(AΣpAᵀ) + ‖c‖².

    With A = Σq⁻¹ − Σp⁻¹ and c = Σq⁻¹(mp − mq), ∇log(p/q)(x) = A(x − mp) + c.
    """
    _check_dims(p, q)
    cq = _guarded_cholesky(q.cov, "reference")
    cp = _guarded_cholesky(p.cov, "target")
    eye = np.eye(p.dim)
    A = cho_solve(cq, eye) - cho_solve(cp, eye)
    c = cho_solve(cq, p.mean - q.mean)
    return max(float(np.trace(A @ p.cov @ A.T) + c @ c), 0.0)


def subset_info(
    joint: JointGaussianState,
    marginals: Sequence[GaussianLaw],
    v: Iterable[int]
) -> Tuple[float, float]:
    """(H, I) between P^v (interacting marginal) and Q^v (product of projection marginals)."""
    if len(marginals) != joint.N:
        raise DimensionMismatchError(f"{len(marginals)} marginals for N={joint.N}")
    idx = _subset_indices(v, joint.N)
    p = marginal_subset(joint, idx)
    q = product_law([marginals[i] for i in idx])
    return relative_entropy_gaussian(p, q), relative_fisher_gaussian(p, q)


def averaged_subset_info(
    joint: JointGaussianState,
    marginals: Sequence[GaussianLaw],
    k: int,
    max_subsets: Optional[int] = 256,
    seed: int = 0
) -> Dict[str, float]:
    """
    Average and maximum of H^v and I^v over subsets of size k.

    All C(N, k) subsets are used when there are at most max_subsets of them,
    otherwise max_subsets subsets are drawn uniformly from the seeded stream.
    """
    N = joint.N
    if not 1 <= k <= N:
        raise ValueError(f"k must lie in 1..{N}")
    total = math.comb(N, k)
    if max_subsets is None or total <= max_subsets:
        subsets = list(itertools.combinations(range(N), k))
    else:
        rng = np.random.default_rng(seed)
        subsets = [tuple(sorted(rng.choice(N, size=k, replace=False))) for _ in range(max_subsets)]
    values = np.array([subset_info(joint, marginals, v) for v in subsets])
    return {
        "k": k,
        "subsets": len(subsets),
        "mean_H": float(values[:, 0].mean()),
        "max_H": float(values[:, 0].max()),
        "mean_I": float(values[:, 1].mean()),
        "max_I": float(values[:, 1].max()),
    }


def conditional_gaussian(
    joint: JointGaussianState,
    v: Iterable[int],
    k: int,
    x_v
) -> GaussianLaw:
    """Law of particle k given the particles in v sit at x_v (Schur complement)."""
    idx_v = _subset_indices(v, joint.N)
    if k in set(idx_v.tolist()):
        raise ValueError(f"index {k} is already in the conditioning set")
    cv = joint.coordinates(idx_v)
    ck = joint.coordinates([k])
    x_v = np.asarray(x_v, dtype=float).ravel()
    if x_v.size != cv.size:
        raise DimensionMismatchError(f"x_v has {x_v.size} entries, expected {cv.size}")
    S_vv = joint.cov[np.ix_(cv, cv)]
    S_kv = joint.cov[np.ix_(ck, cv)]
    try:
        fac = cho_factor(S_vv, lower=True)
    except LinAlgError as e:
        raise NotPositiveDefiniteError("singular conditioning block") from e
    mean = joint.mean[ck] + S_kv @ cho_solve(fac, x_v - joint.mean[cv])
    cov = joint.cov[np.ix_(ck, ck)] - S_kv @ cho_solve(fac, S_kv.T)
    return GaussianLaw(mean, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------- quadrature cross-checks

def _quadrature_grid(p: GaussianLaw, q: GaussianLaw, points: int, width: float):
    if p.dim not in (1, 2):
        raise DimensionMismatchError("quadrature cross-checks support dimensions 1 and 2")
    spread = math.sqrt(max(np.linalg.eigvalsh(p.cov)[-1], np.linalg.eigvalsh(q.cov)[-1]))
    centre = 0.5 * (p.mean + q.mean)
    half = width * spread + 0.5 * np.abs(p.mean - q.mean).max()
    axes = [np.linspace(c - half, c + half, points) for c in centre]
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.stack([m.ravel() for m in mesh], axis=-1)
    cell = np.prod([a[1] - a[0] for a in axes])
    return x, cell


def quadrature_entropy(p: GaussianLaw, q: GaussianLaw, points: Optional[int] = None,
                       width: float = 12.0) -> float:
    """Tensor-grid quadrature of ∫ p log(p/q) (dim 1 or 2)."""
    _check_dims(p, q)
    points = points or (8001 if p.dim == 1 else 801)
    x, cell = _quadrature_grid(p, q, points, width)
    lp, lq = p.logpdf(x), q.logpdf(x)
    return float(np.sum(np.exp(lp) * (lp - lq)) * cell)


def quadrature_fisher(p: GaussianLaw, q: GaussianLaw, points: Optional[int] = None,
                      width: float = 12.0) -> float:
    """Tensor-grid quadrature of ∫ p ‖∇log p − ∇log q‖² (dim 1 or 2)."""
    _check_dims(p, q)
    points = points or (8001 if p.dim == 1 else 801)
    x, cell = _quadrature_grid(p, q, points, width)
    grad = (-np.linalg.solve(p.cov, (x - p.mean).T) + np.linalg.solve(q.cov, (x - q.mean).T)).T
    return float(np.sum(np.exp(p.logpdf(x)) * np.sum(grad * grad, axis=-1)) * cell)


def quadrature_tv(p: GaussianLaw, q: GaussianLaw, points: Optional[int] = None,
                  width: float = 12.0) -> float:
    """Total variation ½∫|p − q| by tensor-grid quadrature (dim 1 or 2)."""
    _check_dims(p, q)
    points = points or (8001 if p.dim == 1 else 801)
    x, cell = _quadrature_grid(p, q, points, width)
    return float(0.5 * np.sum(np.abs(np.exp(p.logpdf(x)) - np.exp(q.logpdf(x)))) * cell)
