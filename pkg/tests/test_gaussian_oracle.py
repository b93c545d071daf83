"""
Tests for the Gaussian oracle: law evolution and closed-form divergences.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from errors import DimensionMismatchError, EmptySubsetError, IllConditionedError, NotPositiveDefiniteError
from gaussian_oracle import (GaussianLaw, JointGaussianState, averaged_subset_info, conditional_gaussian,
                             drift_matrix, evolve_graphon_gaussian, evolve_interacting_gaussian,
                             evolve_projection_gaussian, marginal_subset, projection_stationary_variance,
                             quadrature_entropy, quadrature_fisher, quadrature_tv, relative_entropy_gaussian,
                             relative_fisher_gaussian, subset_info)
from graphon_core import Graphon, InteractionMatrix


def _random_xi(N, seed):
    rng = np.random.default_rng(seed)
    raw = rng.random((N, N))
    return InteractionMatrix(0.5 * (raw + raw.T) / N)


class TestDivergences:
    """Closed-form relative entropy and Fisher information."""

    @pytest.mark.parametrize("mu", [0.0, 0.5, 1.0, 2.0])
    def test_mean_shift(self, mu):
        """H = μ²/2 and I = μ² for a shifted standard normal."""
        p = GaussianLaw([mu], [[1.0]])
        q = GaussianLaw.standard()
        assert relative_entropy_gaussian(p, q) == pytest.approx(mu * mu / 2, abs=1e-14)
        assert relative_fisher_gaussian(p, q) == pytest.approx(mu * mu, abs=1e-14)

    def test_variance_change(self):
        """H = ½(σ² − 1 − log σ²), I = (σ² − 1)²/σ²."""
        p = GaussianLaw([0.0], [[2.0]])
        q = GaussianLaw.standard()
        assert relative_entropy_gaussian(p, q) == pytest.approx(0.153426, abs=1e-6)
        assert relative_fisher_gaussian(p, q) == pytest.approx(0.5)

    def test_identical_laws(self):
        """Both divergences vanish on equal laws."""
        p = GaussianLaw([1.0, -1.0], [[2.0, 0.3], [0.3, 1.0]])
        assert relative_entropy_gaussian(p, p) == 0.0
        assert relative_fisher_gaussian(p, p) == pytest.approx(0.0, abs=1e-14)

    def test_quadrature_agrees_2d(self):
        """Tensor-grid quadrature matches the closed forms in two dimensions."""
        p = GaussianLaw([0.3, -0.2], [[1.2, 0.4], [0.4, 0.9]])
        q = GaussianLaw([0.0, 0.1], [[1.0, 0.1], [0.1, 1.1]])
        assert quadrature_entropy(p, q) == pytest.approx(relative_entropy_gaussian(p, q), rel=1e-3)
        assert quadrature_fisher(p, q) == pytest.approx(relative_fisher_gaussian(p, q), rel=1e-3)

    def test_pinsker(self):
        """TV ≤ sqrt(H/2) for Gaussian pairs."""
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = GaussianLaw([rng.normal()], [[rng.uniform(0.3, 3.0)]])
            q = GaussianLaw([rng.normal()], [[rng.uniform(0.3, 3.0)]])
            assert quadrature_tv(p, q) <= math.sqrt(relative_entropy_gaussian(p, q) / 2) + 1e-6

    def test_ill_conditioned_reference(self):
        """Near-singular covariances raise instead of returning garbage."""
        p = GaussianLaw.standard(2)
        q = GaussianLaw([0.0, 0.0], [[1.0, 0.0], [0.0, 1e-13]])
        with pytest.raises(IllConditionedError):
            relative_entropy_gaussian(p, q)

    def test_not_positive_definite(self):
        """Indefinite covariances are rejected at construction."""
        with pytest.raises(NotPositiveDefiniteError):
            GaussianLaw([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_dimension_mismatch(self):
        """Laws of different dimension cannot be compared."""
        with pytest.raises(DimensionMismatchError):
            relative_entropy_gaussian(GaussianLaw.standard(1), GaussianLaw.standard(2))


class TestEvolution:
    """Interacting system, independent projection and graphon limit."""

    def test_no_interaction_is_brownian(self):
        """ξ = 0 from N(0, I) gives covariance (1 + T)I with both methods."""
        init = JointGaussianState.standard(3)
        for method in ("rk4", "expm"):
            out = evolve_interacting_gaussian(InteractionMatrix.zeros(3), 1.0, init, 1.0, method=method)
            assert np.allclose(out.cov, 2.0 * np.eye(3))
            assert np.allclose(out.mean, 0.0)
            assert out.t == pytest.approx(1.0)

    def test_two_particle_difference(self):
        """X₁ − X₂ is an OU process: Var = 1 − e^{−2} from a point start."""
        init = JointGaussianState.deterministic(2)
        out = evolve_interacting_gaussian(InteractionMatrix.uniform(2), 1.0, init, 1.0, method="expm")
        diff = np.array([1.0, -1.0])
        total = np.array([1.0, 1.0])
        assert diff @ out.cov @ diff == pytest.approx(1.0 - math.exp(-2.0), rel=1e-6)
        assert total @ out.cov @ total == pytest.approx(2.0, rel=1e-6)

    def test_rk4_matches_expm(self):
        """Both integrators agree on a random interaction matrix."""
        xi = _random_xi(5, 0)
        init = JointGaussianState.from_marginals([GaussianLaw([m], [[1.0]]) for m in np.linspace(-1, 1, 5)])
        a = evolve_interacting_gaussian(xi, 1.0, init, 1.0, dt=1e-3, method="rk4")
        b = evolve_interacting_gaussian(xi, 1.0, init, 1.0, method="expm")
        assert np.allclose(a.mean, b.mean, atol=1e-10)
        assert np.allclose(a.cov, b.cov, atol=1e-10)

    def test_mean_dynamics_shared(self):
        """Projection means follow the interacting mean ODE."""
        xi = _random_xi(4, 1)
        marg = [GaussianLaw([m], [[0.5]]) for m in (-1.0, 0.0, 0.5, 2.0)]
        joint = evolve_interacting_gaussian(xi, 1.0, JointGaussianState.from_marginals(marg), 0.7, method="expm")
        proj = evolve_projection_gaussian(xi, 1.0, marg, 0.7, method="expm")
        assert np.allclose(joint.mean, [q.mean[0] for q in proj])

    def test_projection_variance(self):
        """Σ(T) = e^{−2aT}Σ₀ + (1 − e^{−2aT})/(2a) with unit row sums."""
        xi = InteractionMatrix.uniform(3)
        proj = evolve_projection_gaussian(xi, 1.0, [GaussianLaw.standard()] * 3, 1.0, method="expm")
        expected = math.exp(-2.0) + (1 - math.exp(-2.0)) / 2
        assert all(q.cov[0, 0] == pytest.approx(expected) for q in proj)
        assert np.allclose(projection_stationary_variance(xi, 1.0), 0.5)
        assert np.isinf(projection_stationary_variance(InteractionMatrix.zeros(2), 1.0)).all()

    def test_graphon_constant_preserves_mean(self):
        """G ≡ 1 with one block keeps the mean and relaxes the variance."""
        out = evolve_graphon_gaussian(Graphon.constant(1.0), 1.0, [GaussianLaw([0.7], [[1.0]])], 2.0,
                                      method="expm")
        assert out[0].mean[0] == pytest.approx(0.7)
        assert out[0].cov[0, 0] == pytest.approx(math.exp(-4.0) + (1 - math.exp(-4.0)) / 2)

    def test_drift_matrix(self):
        """D = a(ξ − diag(ξ·1)) has zero row sums."""
        D = drift_matrix(_random_xi(6, 2), 2.0)
        assert np.allclose(D.sum(axis=1), 0.0)

    def test_validation(self):
        """Bad rates, methods and sizes are refused."""
        init = JointGaussianState.standard(2)
        with pytest.raises(ValueError):
            evolve_interacting_gaussian(InteractionMatrix.zeros(2), 0.0, init, 1.0)
        with pytest.raises(ValueError):
            evolve_interacting_gaussian(InteractionMatrix.zeros(2), 1.0, init, 1.0, method="euler")
        with pytest.raises(DimensionMismatchError):
            evolve_interacting_gaussian(InteractionMatrix.zeros(3), 1.0, init, 1.0)


class TestSubsets:
    """Marginals, subset divergences and conditionals."""

    def test_product_start_has_zero_info(self):
        """Without interaction the joint law is the product of projections."""
        xi = InteractionMatrix.zeros(4)
        marg = [GaussianLaw.standard()] * 4
        joint = evolve_interacting_gaussian(xi, 1.0, JointGaussianState.from_marginals(marg), 1.0, method="expm")
        proj = evolve_projection_gaussian(xi, 1.0, marg, 1.0, method="expm")
        H, I = subset_info(joint, proj, [0, 2])
        assert H == pytest.approx(0.0, abs=1e-12)
        assert I == pytest.approx(0.0, abs=1e-12)

    def test_averaged_enumerates(self):
        """All C(4,2) = 6 subsets when the cap allows."""
        xi = InteractionMatrix.uniform(4)
        marg = [GaussianLaw.standard()] * 4
        joint = evolve_interacting_gaussian(xi, 1.0, JointGaussianState.from_marginals(marg), 1.0, method="expm")
        proj = evolve_projection_gaussian(xi, 1.0, marg, 1.0, method="expm")
        stats = averaged_subset_info(joint, proj, 2)
        assert stats["subsets"] == 6
        assert 0.0 < stats["mean_H"] <= stats["max_H"]
        # exchangeable system: every pair has the same divergence
        assert stats["mean_H"] == pytest.approx(stats["max_H"])
        sampled = averaged_subset_info(joint, proj, 2, max_subsets=3, seed=1)
        assert sampled["subsets"] == 3

    def test_empty_subset(self):
        """Empty subsets raise."""
        with pytest.raises(EmptySubsetError):
            marginal_subset(JointGaussianState.standard(3), [])

    def test_conditional(self):
        """Correlation ½ conditioned at 2 gives N(1, ¾)."""
        joint = JointGaussianState(2, 1, np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
        law = conditional_gaussian(joint, [0], 1, [2.0])
        assert law.mean[0] == pytest.approx(1.0)
        assert law.cov[0, 0] == pytest.approx(0.75)
        with pytest.raises(ValueError):
            conditional_gaussian(joint, [0], 0, [2.0])
