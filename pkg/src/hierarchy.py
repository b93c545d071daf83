"""
Subset Hierarchy

Functions of particle subsets v ⊆ {0, …, N−1} stored densely by bitmask
(bit i set when particle i belongs to v), the upward-coupled generator

    𝒜F(v) = Σ_{i∈v} Σ_{k∉v} ξ_ik (F(v ∪ {k}) − F(v)),

the source term C(v) = Σ_{i∈v} (Σ_{j∈v} ξ_ij)², the explicit bound of the
subset entropy/Fisher estimate and a solver for ż = 𝒜z + c·C.
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

try:
    from .config import config
    from .errors import EmptySubsetError, SubsetCapError
    from .graphon_core import Graphon, InteractionMatrix, interaction_from_graphon
    from .logger_config import logger
except ImportError:
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent))
    from config import config
    from errors import EmptySubsetError, SubsetCapError
    from graphon_core import Graphon, InteractionMatrix, interaction_from_graphon
    from logger_config import logger


def subset_mask(v: Iterable[int]) -> int:
    mask = 0
    for i in v:
        mask |= 1 << int(i)
    return mask


def mask_members(mask: int, N: int) -> List[int]:
    return [i for i in range(N) if mask >> i & 1]


def _check_cap(N: int) -> None:
    if N > config.HIERARCHY_MAX_N:
        raise SubsetCapError(f"N={N} exceeds the dense subset cap {config.HIERARCHY_MAX_N}")


def _popcounts(N: int) -> np.ndarray:
    counts = np.zeros(1 << N, dtype=np.int64)
    for i in range(N):
        counts[1 << i:1 << (i + 1)] = counts[:1 << i] + 1
    return counts


@dataclass(frozen=True, eq=False)
class SubsetFunction:
    """Real values indexed by all 2^N subsets (entry `mask` belongs to the subset with those bits)."""

    N: int
    values: np.ndarray

    def __post_init__(self):
        _check_cap(self.N)
        values = np.array(self.values, dtype=float)
        if values.shape != (1 << self.N,):
            raise ValueError(f"expected {1 << self.N} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("subset function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, N: int) -> "SubsetFunction":
        _check_cap(N)
        return cls(N, np.zeros(1 << N))

    @classmethod
    def from_cardinality(cls, N: int, func) -> "SubsetFunction":
        """F(v) = func(|v|)."""
        _check_cap(N)
        return cls(N, np.asarray(func(_popcounts(N)), dtype=float))

    def __getitem__(self, v: Iterable[int]) -> float:
        return float(self.values[subset_mask(v)])

    def __add__(self, other: "SubsetFunction") -> "SubsetFunction":
        return SubsetFunction(self.N, self.values + other.values)

    def __mul__(self, scale: float) -> "SubsetFunction":
        return SubsetFunction(self.N, self.values * scale)

    __rmul__ = __mul__

    def cardinalities(self) -> np.ndarray:
        return _popcounts(self.N)


def _subset_sums(column: np.ndarray) -> np.ndarray:
    """s(v) = Σ_{i∈v} column[i] for every mask."""
    N = column.size
    out = np.zeros(1 << N)
    for i in range(N):
        out[1 << i:1 << (i + 1)] = out[:1 << i] + column[i]
    return out


def _indices(v: Iterable[int], N: int) -> np.ndarray:
    idx = np.unique(np.asarray(list(v), dtype=int))
    if idx.size == 0:
        raise EmptySubsetError("subset must be nonempty")
    if idx.min() < 0 or idx.max() >= N:
        raise IndexError(f"subset indices must lie in 0..{N - 1}")
    return idx


def subset_generator_apply(xi: InteractionMatrix, F: SubsetFunction, v: Iterable[int]) -> float:
    """𝒜F(v) for one nonempty subset (0 for the full set)."""
    idx = _indices(v, xi.N)
    mask = subset_mask(idx)
    outside = [k for k in range(xi.N) if not mask >> k & 1]
    total = 0.0
    for k in outside:
        weight = float(xi.xi[idx, k].sum())
        total += weight * (F.values[mask | 1 << k] - F.values[mask])
    return total


def subset_generator_apply_all(xi: InteractionMatrix, F: SubsetFunction) -> SubsetFunction:
    """𝒜F on every subset at once (the empty set maps to 0)."""
    N = xi.N
    if F.N != N:
        raise ValueError(f"subset function has N={F.N}, interaction matrix N={N}")
    masks = np.arange(1 << N)
    out = np.zeros(1 << N)
    for k in range(N):
        weight = _subset_sums(xi.xi[:, k])
        free = (masks >> k & 1) == 0
        m = masks[free]
        out[m] += weight[m] * (F.values[m | 1 << k] - F.values[m])
    return SubsetFunction(N, out)


def source_term(xi: InteractionMatrix, v: Iterable[int]) -> float:
    """C(v) = Σ_{i∈v} (Σ_{j∈v} ξ_ij)²."""
    idx = _indices(v, xi.N)
    inner = xi.xi[np.ix_(idx, idx)].sum(axis=1)
    return float(np.sum(inner ** 2))


def source_term_all(xi: InteractionMatrix) -> SubsetFunction:
    """C on every subset."""
    N = xi.N
    _check_cap(N)
    masks = np.arange(1 << N)
    out = np.zeros(1 << N)
    for i in range(N):
        inner = _subset_sums(xi.xi[i, :])
        member = (masks >> i & 1) == 1
        out[member] += inner[member] ** 2
    return SubsetFunction(N, out)


def thm22_bound(xi: InteractionMatrix, v: Iterable[int]) -> float:
    """
    (δ|v| + 1)·(Σ_{v²} ξ_ij² + δ·Σ_{v²} (ξᵀξ + ξξᵀ)_ij + δ²|v|), δ = max_{v²} ξ_ij.

    Scales like |v|²/N² for ξ built from a graphon at resolution N.
    """
    idx = _indices(v, xi.N)
    k = idx.size
    sub = xi.xi[np.ix_(idx, idx)]
    delta = float(sub.max())
    gram = xi.xi.T @ xi.xi + xi.xi @ xi.xi.T
    middle = float(gram[np.ix_(idx, idx)].sum())
    return (delta * k + 1.0) * (float(np.sum(sub ** 2)) + delta * middle + delta ** 2 * k)


def thm22_bound_all(xi: InteractionMatrix) -> SubsetFunction:
    """thm22_bound on every nonempty subset (0 on the empty set)."""
    _check_cap(xi.N)
    out = np.zeros(1 << xi.N)
    for mask in range(1, 1 << xi.N):
        out[mask] = thm22_bound(xi, mask_members(mask, xi.N))
    return SubsetFunction(xi.N, out)


def solve_hierarchy_ode(
    xi: InteractionMatrix,
    z0: SubsetFunction,
    c_scale: float,
    T: float,
    dt: Optional[float] = None
) -> SubsetFunction:
    """
    Solve dz_v/dt = (𝒜z)_v + c_scale·C(v) on [0, T] by RK4.

    z_v only sees supersets of v, so the system is upper triangular in
    descending cardinality: the full set is a pure source integral, each
    smaller level is driven by levels above it. Every RK4 stage evaluates
    all levels from the same stage vector, which makes the whole-vector
    step identical to sweeping the levels top-down.
    """
    _check_cap(xi.N)
    if z0.N != xi.N:
        raise ValueError(f"initial data has N={z0.N}, interaction matrix N={xi.N}")
    if T < 0:
        raise ValueError("T must be nonnegative")
    dt = config.DEFAULT_DT if dt is None else dt
    source = c_scale * source_term_all(xi).values
    z = z0.values.copy()
    if T == 0:
        return SubsetFunction(xi.N, z)

    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / steps

    def rhs(y: np.ndarray) -> np.ndarray:
        return subset_generator_apply_all(xi, SubsetFunction(xi.N, y)).values + source

    for _ in range(steps):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    logger.debug(f"Solved hierarchy ODE for N={xi.N} to T={T} in {steps} steps")
    return SubsetFunction(xi.N, z)


def comparison_check(
    matrices: Union[InteractionMatrix, Mapping[int, InteractionMatrix], Sequence[InteractionMatrix]],
    T: float,
    z0_scale: float = 1.0,
    c_scale: float = 1.0,
    flag_factor: Optional[float] = None,
    dt: Optional[float] = None
) -> pd.DataFrame:
    """
    Ratios sup_{|v|=k} z_v(T) / bound(v) across a family of interaction matrices.

    Initial data are z0_v = z0_scale·bound(v). A row is flagged when its ratio
    exceeds flag_factor times the ratio at the smallest N for the same k.

    Returns:
        DataFrame with columns N, k, ratio, bound, z_value, flagged
    """
    if isinstance(matrices, InteractionMatrix):
        matrices = [matrices]
    if isinstance(matrices, Mapping):
        matrices = list(matrices.values())
    flag_factor = config.COMPARISON_FLAG_FACTOR if flag_factor is None else flag_factor

    rows = []
    for xi in sorted(matrices, key=lambda m: m.N):
        bound = thm22_bound_all(xi).values
        z = solve_hierarchy_ode(xi, SubsetFunction(xi.N, z0_scale * bound), c_scale, T, dt).values
        sizes = _popcounts(xi.N)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bound > 0, z / np.where(bound > 0, bound, 1.0),
                             np.where(np.abs(z) > 0, np.inf, 0.0))
        for k in range(1, xi.N + 1):
            level = np.flatnonzero(sizes == k)
            worst = level[np.argmax(ratio[level])]
            rows.append({"N": xi.N, "k": k, "ratio": float(ratio[worst]),
                         "bound": float(bound[worst]), "z_value": float(z[worst])})

    table = pd.DataFrame(rows, columns=["N", "k", "ratio", "bound", "z_value"])
    smallest = table.groupby("k")["ratio"].transform("first")
    table["flagged"] = table["ratio"] > flag_factor * smallest
    if table["flagged"].any():
        logger.warning(f"Comparison check flagged {int(table['flagged'].sum())} rows")
    return table


def graphon_envelope_check(g: Graphon, N_list: Sequence[int], k_list: Sequence[int]) -> pd.DataFrame:
    """
    thm22_bound on v = {0, …, k−1} against the k²/N² envelope for ξ built from g.

    Matrix-only, so N may go far beyond the dense subset cap.
    """
    rows = []
    for N in N_list:
        xi = interaction_from_graphon(g, N)
        for k in k_list:
            if k > N:
                continue
            bound = thm22_bound(xi, range(k))
            envelope = k ** 2 / N ** 2
            rows.append({"N": N, "k": k, "bound": bound, "envelope": envelope,
                         "ratio": bound / envelope})
    return pd.DataFrame(rows, columns=["N", "k", "bound", "envelope", "ratio"])


def z_from_parts(H, I, alpha: float = 1.0):
    """Z = αH + I for numbers, arrays or subset functions."""
    if isinstance(H, SubsetFunction) and isinstance(I, SubsetFunction):
        return SubsetFunction(H.N, alpha * H.values + I.values)
    if np.ndim(H) == 0 and np.ndim(I) == 0:
        return alpha * float(H) + float(I)
    return alpha * np.asarray(H, dtype=float) + np.asarray(I, dtype=float)
