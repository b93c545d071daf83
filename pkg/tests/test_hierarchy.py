"""
Tests for the subset hierarchy: generator, source term, bound and ODE solver.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from errors import EmptySubsetError, SubsetCapError
from graphon_core import Graphon, InteractionMatrix
from hierarchy import (SubsetFunction, comparison_check, graphon_envelope_check, mask_members, solve_hierarchy_ode,
                       source_term, source_term_all, subset_generator_apply, subset_generator_apply_all,
                       subset_mask, thm22_bound, thm22_bound_all, z_from_parts)


def _random_xi(N, seed):
    rng = np.random.default_rng(seed)
    raw = rng.random((N, N))
    return InteractionMatrix(raw / raw.sum(axis=1, keepdims=True) * 0.8)


class TestSubsetFunction:
    """Dense storage by bitmask."""

    def test_masks(self):
        assert subset_mask([0, 2]) == 5
        assert mask_members(5, 4) == [0, 2]

    def test_cardinality(self):
        F = SubsetFunction.from_cardinality(3, lambda k: k ** 2)
        assert F[[0, 1, 2]] == 9.0
        assert F[[1]] == 1.0
        assert F[[]] == 0.0

    def test_arithmetic(self):
        F = SubsetFunction.from_cardinality(2, lambda k: k)
        assert (F + 2 * F)[[0, 1]] == 6.0

    def test_cap(self):
        with pytest.raises(SubsetCapError):
            SubsetFunction.zeros(21)

    def test_shape(self):
        with pytest.raises(ValueError):
            SubsetFunction(3, np.zeros(4))


class TestGenerator:
    """The upward-coupled generator and the source term."""

    def test_cardinality_function(self):
        """𝒜|·|(v) is the weight leaving v."""
        xi = InteractionMatrix.uniform(4)
        F = SubsetFunction.from_cardinality(4, lambda k: k)
        assert subset_generator_apply(xi, F, [0]) == pytest.approx(0.75)
        assert subset_generator_apply(xi, F, [0, 1]) == pytest.approx(1.0)
        assert subset_generator_apply(xi, F, range(4)) == 0.0

    def test_single_matches_all(self):
        """Per-subset and vectorised evaluation agree."""
        xi = _random_xi(5, 0)
        F = SubsetFunction(5, np.random.default_rng(1).random(32))
        everything = subset_generator_apply_all(xi, F)
        for mask in range(1, 32):
            v = mask_members(mask, 5)
            assert everything.values[mask] == pytest.approx(subset_generator_apply(xi, F, v))
        assert everything.values[0] == 0.0

    def test_source_term(self):
        """C(v) for uniform ξ with N = 4 and |v| = 2 is ½."""
        xi = InteractionMatrix.uniform(4)
        assert source_term(xi, [1, 3]) == pytest.approx(0.5)
        assert source_term_all(xi)[[1, 3]] == pytest.approx(0.5)

    def test_source_term_all_matches(self):
        xi = _random_xi(4, 2)
        C = source_term_all(xi)
        for mask in range(1, 16):
            assert C.values[mask] == pytest.approx(source_term(xi, mask_members(mask, 4)))

    def test_empty_subset(self):
        with pytest.raises(EmptySubsetError):
            source_term(InteractionMatrix.uniform(3), [])


class TestBound:
    """Explicit subset bound."""

    def test_uniform_example(self):
        """N = 4, k = 2 gives 1.3125."""
        assert thm22_bound(InteractionMatrix.uniform(4), [0, 1]) == pytest.approx(1.3125, rel=1e-14)

    @pytest.mark.parametrize("N", [5, 8, 12])
    def test_uniform_formula(self, N):
        """(k/N + 1)(3k² + k)/N² for uniform ξ."""
        xi = InteractionMatrix.uniform(N)
        for k in range(1, N + 1):
            expected = (k / N + 1.0) * (3 * k ** 2 + k) / N ** 2
            assert thm22_bound(xi, range(k)) == pytest.approx(expected, rel=1e-12)

    def test_bound_all(self):
        xi = _random_xi(4, 3)
        B = thm22_bound_all(xi)
        assert B.values[0] == 0.0
        assert B[[0, 2]] == pytest.approx(thm22_bound(xi, [0, 2]))

    def test_graphon_envelope(self):
        """The bound stays within a constant of k²/N²."""
        table = graphon_envelope_check(Graphon.constant(1.0), [32, 64, 128], [2, 4])
        assert list(table.columns) == ["N", "k", "bound", "envelope", "ratio"]
        assert len(table) == 6
        assert table["ratio"].max() < 8.0
        assert table["ratio"].min() > 1.0


class TestHierarchyODE:
    """Solver for ż = 𝒜z + c·C."""

    @pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
    def test_two_particle_closed_form(self, t):
        """N = 2, ξ ≡ ½, z₀ = 0: z_full = 2t and z_single = 2t − 7/2 + (7/2)e^{−t/2}."""
        z = solve_hierarchy_ode(InteractionMatrix.uniform(2), SubsetFunction.zeros(2), 1.0, t)
        assert z[[0, 1]] == pytest.approx(2.0 * t, abs=1e-8)
        assert z[[0]] == pytest.approx(2.0 * t - 3.5 + 3.5 * math.exp(-t / 2.0), abs=1e-8)
        assert z[[1]] == pytest.approx(z[[0]], abs=1e-12)

    def test_zero_time(self):
        z0 = SubsetFunction(2, [0.0, 1.0, 2.0, 3.0])
        assert np.array_equal(solve_hierarchy_ode(InteractionMatrix.uniform(2), z0, 1.0, 0.0).values, z0.values)

    def test_comparison_and_positivity(self):
        """Ordered nonnegative data stay ordered and nonnegative."""
        for i in range(10):
            rng = np.random.default_rng(i)
            N = int(rng.integers(2, 6))
            xi = _random_xi(N, 100 + i)
            z0 = rng.random(1 << N)
            w0 = z0 + rng.random(1 << N)
            z = solve_hierarchy_ode(xi, SubsetFunction(N, z0), 0.5, 1.0, 1e-2).values
            w = solve_hierarchy_ode(xi, SubsetFunction(N, w0), 0.5, 1.0, 1e-2).values
            assert (w - z).min() >= -1e-12
            assert z.min() >= -1e-12

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            solve_hierarchy_ode(InteractionMatrix.uniform(3), SubsetFunction.zeros(2), 1.0, 1.0)

    def test_comparison_check(self):
        """Uniform ξ: ratios stay flat in N and nothing is flagged."""
        table = comparison_check([InteractionMatrix.uniform(N) for N in (4, 6)], 1.0, dt=1e-2)
        assert list(table.columns) == ["N", "k", "ratio", "bound", "z_value", "flagged"]
        assert len(table) == 4 + 6
        assert not table["flagged"].any()
        assert (table["ratio"] > 0).all()

    def test_z_from_parts(self):
        assert z_from_parts(0.5, 2.0, alpha=2.0) == 3.0
        assert np.allclose(z_from_parts(np.ones(3), np.ones(3)), 2.0)
        H = SubsetFunction.from_cardinality(2, lambda k: k)
        assert z_from_parts(H, H, alpha=1.0)[[0, 1]] == 4.0
