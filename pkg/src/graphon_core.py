"""
Graphon Representations and Kernel Operators

Step graphons on the uniform m×m grid of [0,1]², their embedding into N×N
interaction matrices, the sup-L1 and cut distances between them, and the
integral operator f ↦ ∫ G(·,v) f(v) dv on [0,1] together with its exponential.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm

try:
    from .config import config
    from .errors import CutNormSizeError, DimensionMismatchError, ResolutionCapError
    from .logger_config import logger
except ImportError:
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent))
    from config import config
    from errors import CutNormSizeError, DimensionMismatchError, ResolutionCapError
    from logger_config import logger


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise DimensionMismatchError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StepKernel:
    """
    Signed piecewise-constant kernel on the uniform m×m grid of [0,1]².

    Differences of graphons live here; they need not be symmetric or lie in
    [0,1], which is why cut norms accept any StepKernel.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, 2, "values")
        if arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise DimensionMismatchError(f"step kernel must be square and nonempty, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def m(self) -> int:
        """Number of blocks per axis."""
        return self.values.shape[0]

    def refine(self, m_new: int) -> "StepKernel":
        """Replicate blocks so the kernel lives on an m_new grid (m_new multiple of m)."""
        if m_new % self.m:
            raise ValueError(f"cannot refine {self.m} blocks to {m_new}")
        factor = m_new // self.m
        refined = np.repeat(np.repeat(self.values, factor, axis=0), factor, axis=1)
        return type(self)(refined)

    def evaluate(self, u, v) -> np.ndarray:
        """Point values G(u, v) for u, v in [0,1] (broadcasting)."""
        iu = np.minimum((np.asarray(u, dtype=float) * self.m).astype(int), self.m - 1)
        iv = np.minimum((np.asarray(v, dtype=float) * self.m).astype(int), self.m - 1)
        return self.values[iu, iv]

    def row_means(self) -> np.ndarray:
        """u-block ↦ ∫ G(u, v) dv."""
        return self.values.mean(axis=1)

    def __sub__(self, other: "StepKernel") -> "StepKernel":
        return graphon_difference(self, other)


@dataclass(frozen=True, eq=False)
class Graphon(StepKernel):
    """Symmetric step graphon with values in [0,1]."""

    def __post_init__(self):
        super().__post_init__()
        vals = self.values
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError(f"graphon values must lie in [0,1], got range [{vals.min()}, {vals.max()}]")
        if not np.allclose(vals, vals.T, rtol=0.0, atol=config.SYMMETRY_TOLERANCE):
            raise ValueError("graphon values must be symmetric")

    @classmethod
    def constant(cls, c: float, m: int = 1) -> "Graphon":
        return cls(np.full((m, m), float(c)))

    @classmethod
    def from_dict(cls, payload: Dict) -> "Graphon":
        """Build from the JSON form {"m": int, "values": [[...]]}."""
        if "m" not in payload or "values" not in payload:
            raise ValueError("graphon JSON needs keys 'm' and 'values'")
        g = cls(payload["values"])
        if g.m != int(payload["m"]):
            raise DimensionMismatchError(f"declared m={payload['m']} but values are {g.m}×{g.m}")
        return g

    def to_dict(self) -> Dict:
        return {"m": self.m, "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function on the uniform m-cell grid of [0,1]."""

    samples: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.samples, 1, "samples")
        if arr.size == 0:
            raise DimensionMismatchError("grid function needs at least one sample")
        object.__setattr__(self, "samples", arr)

    @property
    def m(self) -> int:
        return self.samples.size

    @classmethod
    def constant(cls, m: int, c: float = 1.0) -> "GridFunction":
        return cls(np.full(m, float(c)))

    def refine(self, m_new: int) -> "GridFunction":
        if m_new % self.m:
            raise ValueError(f"cannot refine {self.m} cells to {m_new}")
        return GridFunction(np.repeat(self.samples, m_new // self.m))


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Nonnegative N×N interaction weights ξ with row sums at most one."""

    xi: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.xi, 2, "xi")
        if arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise DimensionMismatchError(f"interaction matrix must be square and nonempty, got {arr.shape}")
        if arr.min() < 0.0:
            raise ValueError("interaction weights must be nonnegative")
        worst = arr.sum(axis=1).max()
        if worst > 1.0 + config.ROW_SUM_TOLERANCE:
            raise ValueError(f"max row sum {worst} exceeds 1")
        object.__setattr__(self, "xi", arr)

    @property
    def N(self) -> int:
        return self.xi.shape[0]

    @classmethod
    def uniform(cls, N: int) -> "InteractionMatrix":
        """Classical mean-field weights ξ = 1/N."""
        return cls(np.full((N, N), 1.0 / N))

    @classmethod
    def zeros(cls, N: int) -> "InteractionMatrix":
        return cls(np.zeros((N, N)))

    def row_sums(self) -> np.ndarray:
        return self.xi.sum(axis=1)


KernelLike = Union[StepKernel, Graphon]


def common_resolution(m1: int, m2: int, cap: Optional[int] = None) -> int:
    """
    Least common multiple of two block counts, bounded by the refinement cap.

    Raises:
        ResolutionCapError: If the lcm exceeds the cap
    """
    cap = config.RESOLUTION_CAP if cap is None else cap
    m = m1 * m2 // math.gcd(m1, m2)
    if m > cap:
        raise ResolutionCapError(f"common resolution {m} of ({m1}, {m2}) exceeds cap {cap}")
    return m


def _refined_pair(a: StepKernel, b: StepKernel, cap: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    m = common_resolution(a.m, b.m, cap)
    return a.refine(m).values, b.refine(m).values


def graphon_from_function(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray],
    m: int
) -> Graphon:
    """
    Sample an analytic graphon at block midpoints.

    Args:
        func: Vectorised function of (u, v) arrays
        m: Number of blocks

    Returns:
        Step graphon; values are symmetrised and clipped into [0,1]
    """
    mid = (np.arange(m) + 0.5) / m
    U, V = np.meshgrid(mid, mid, indexing="ij")
    vals = np.asarray(func(U, V), dtype=float) * np.ones_like(U)
    vals = np.clip(0.5 * (vals + vals.T), 0.0, 1.0)
    return Graphon(vals)


def graphon_difference(g1: StepKernel, g2: StepKernel, cap: Optional[int] = None) -> StepKernel:
    """Signed kernel G₁ − G₂ at the common resolution."""
    a, b = _refined_pair(g1, g2, cap)
    return StepKernel(a - b)


def perturb_graphon(g: Graphon, delta: StepKernel, eps: float, cap: Optional[int] = None) -> Graphon:
    """clamp(G + ε·Δ) into [0,1], symmetrised."""
    a, d = _refined_pair(g, delta, cap)
    d = 0.5 * (d + d.T)
    return Graphon(np.clip(a + eps * d, 0.0, 1.0))


def _midpoint_blocks(m: int, N: int) -> np.ndarray:
    mid = (np.arange(N) + 0.5) / N
    return np.minimum((mid * m).astype(int), m - 1)


def interaction_from_graphon(g: Graphon, N: int) -> InteractionMatrix:
    """
    Embed a graphon as an N×N interaction matrix.

    ξ_{ij} = G((i−½)/N, (j−½)/N) / N with 1-based i, j (midpoint of each cell).

    Args:
        g: Step graphon
        N: Number of particles

    Returns:
        InteractionMatrix with row sums ≤ 1
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    idx = _midpoint_blocks(g.m, N)
    return InteractionMatrix(g.values[np.ix_(idx, idx)] / N)


def sample_bernoulli_matrix(g: Graphon, N: int, seed: int) -> InteractionMatrix:
    """
    Random symmetric graph with edge probabilities from the graphon, scaled by 1/N.

    A_{ij} ~ Bernoulli(G((i−½)/N, (j−½)/N)) for i ≤ j, mirrored below the
    diagonal; the result is ξ = A/N.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    idx = _midpoint_blocks(g.m, N)
    probs = g.values[np.ix_(idx, idx)]
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((N, N)) < probs)
    adjacency = upper | upper.T
    logger.debug(f"Sampled Bernoulli graph N={N}, edge density {adjacency.mean():.4f}")
    return InteractionMatrix(adjacency.astype(float) / N)


def dist_sup_l1(g1: StepKernel, g2: StepKernel, cap: Optional[int] = None) -> float:
    """d(G₁, G₂) = sup_u ∫ |G₁(u,v) − G₂(u,v)| dv, exact for step kernels."""
    a, b = _refined_pair(g1, g2, cap)
    return float(np.abs(a - b).mean(axis=1).max())


def _best_column_response(row_mask_sums: np.ndarray) -> np.ndarray:
    # For fixed A the best B takes every column whose partial sum has the wanted sign.
    pos = np.clip(row_mask_sums, 0.0, None).sum(axis=-1)
    neg = -np.clip(row_mask_sums, None, 0.0).sum(axis=-1)
    return np.maximum(pos, neg)


def cut_norm_exact(kernel: StepKernel, chunk_bits: int = 16) -> float:
    """
    Exact cut norm of a step kernel by enumerating block-aligned row sets.

    For each row set A the optimal column set is read off the signs of the
    column sums restricted to A, so only 2^m row sets are enumerated.

    Raises:
        CutNormSizeError: If m exceeds CUT_NORM_EXACT_MAX_BLOCKS
    """
    m = kernel.m
    if m > config.CUT_NORM_EXACT_MAX_BLOCKS:
        raise CutNormSizeError(
            f"{m} blocks is too many for exhaustive search "
            f"(max {config.CUT_NORM_EXACT_MAX_BLOCKS}); use cut_norm_lower_bound"
        )
    K = kernel.values
    bits = np.arange(m)
    total = 1 << m
    chunk = 1 << min(chunk_bits, m)
    best = 0.0
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        masks = ((codes[:, None] >> bits) & 1).astype(float)
        best = max(best, float(_best_column_response(masks @ K).max()))
    return best / (m * m)


def cut_norm_lower_bound(kernel: StepKernel, iterations: int, seed: int) -> float:
    """
    Lower bound on the cut norm by alternating best responses from random starts.

    Restart k always starts from the k-th draw of the seeded stream, so the
    bound is nondecreasing in `iterations` for a fixed seed.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    K = kernel.values
    m = kernel.m
    rng = np.random.default_rng(seed)
    best = 0.0
    for it in range(iterations):
        start = np.ones(m, dtype=bool) if it == 0 else rng.random(m) < 0.5
        for sign in (1.0, -1.0):
            rows = start.copy()
            value = -np.inf
            for _ in range(4 * m + 4):
                cols = (sign * (rows.astype(float) @ K)) > 0
                new_rows = (sign * (K @ cols.astype(float))) > 0
                new_value = sign * float(new_rows.astype(float) @ K @ cols.astype(float))
                if new_value <= value or np.array_equal(new_rows, rows):
                    value = max(value, new_value)
                    break
                rows, value = new_rows, new_value
            best = max(best, value)
    return max(best, 0.0) / (m * m)


def _quadrature_matrix(g: StepKernel, f: GridFunction, cap: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    m = common_resolution(g.m, f.m, cap)
    return g.refine(m).values / m, f.refine(m).samples


def kernel_apply(g: StepKernel, f: GridFunction, cap: Optional[int] = None) -> GridFunction:
    """(𝒜f)(u) = ∫ G(u, v) f(v) dv, exact block quadrature."""
    Q, samples = _quadrature_matrix(g, f, cap)
    return GridFunction(Q @ samples)


def kernel_growth_constant(g: StepKernel) -> float:
    """C = max_u ∫ G(u, v) dv, the rate in sup e^{t𝒜}1 ≤ e^{Ct}."""
    return float(g.row_means().max())


def kernel_exponential_apply(
    g: StepKernel,
    f: GridFunction,
    t: float,
    cap: Optional[int] = None
) -> GridFunction:
    """
    e^{t𝒜} f by scaling-and-squaring Padé exponentiation of the quadrature matrix.

    The exact exponential of a nonnegative matrix is entrywise nonnegative;
    rounding residue below EXPM_TOLERANCE relative to the largest entry is
    zeroed so that positivity is exact.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    Q, samples = _quadrature_matrix(g, f, cap)
    if t == 0:
        return GridFunction(samples)
    E = expm(t * Q)
    if g.values.min() >= 0.0:
        residue = E.min()
        if residue < 0.0:
            if -residue > config.EXPM_TOLERANCE * max(E.max(), 1.0):
                raise ArithmeticError(f"matrix exponential lost positivity ({residue:.3e})")
            E = np.clip(E, 0.0, None)
    return GridFunction(E @ samples)


def delta_n(xi: InteractionMatrix, v: Optional[Sequence[int]] = None) -> float:
    """δ_N = max ξ_{ij}, over all pairs or over (i, j) ∈ v² (0-based indices)."""
    if v is None:
        return float(xi.xi.max())
    idx = np.asarray(list(v), dtype=int)
    if idx.size == 0:
        return 0.0
    return float(xi.xi[np.ix_(idx, idx)].max())
