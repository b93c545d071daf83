"""
Tests for the particle simulators.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from drift import linear_kernel, sine_kernel, zero_kernel
from errors import DimensionMismatchError, DomainMismatchError, SimulationDivergenceError, TooFewSamplesError
from gaussian_oracle import (GaussianLaw, JointGaussianState, evolve_graphon_gaussian, evolve_interacting_gaussian,
                             evolve_projection_gaussian)
from graphon_core import Graphon, InteractionMatrix
from simulate import (EnsembleState, SimConfig, empirical_moments, euler_covariance_recursion,
                      gaussian_ensemble, joint_gaussian_ensemble, philox_generator, point_ensemble, replica_normals,
                      simulate_graphon_mfv, simulate_independent_projection, simulate_particle_system,
                      uniform_torus_ensemble, wrap_torus)


class TestStreams:
    """Counter-based random streams."""

    def test_reproducible(self):
        """The same (seed, lane, step) gives the same draws."""
        a = philox_generator(5, 0, 17).standard_normal(10)
        b = philox_generator(5, 0, 17).standard_normal(10)
        assert np.array_equal(a, b)

    def test_lanes_and_steps_differ(self):
        """Lanes, steps and seeds select different streams."""
        base = philox_generator(5, 0, 17).standard_normal(10)
        assert not np.array_equal(base, philox_generator(5, 1, 17).standard_normal(10))
        assert not np.array_equal(base, philox_generator(5, 0, 18).standard_normal(10))
        assert not np.array_equal(base, philox_generator(6, 0, 17).standard_normal(10))

    def test_replica_addressing(self):
        """Extending M or N keeps the draws of existing replicas and particles."""
        small = replica_normals(3, 0, 5, 300, 2)
        large = replica_normals(3, 0, 5, 2500, 4)
        assert small.shape == (300, 2, 1)
        assert np.array_equal(small, large[:300, :2])
        assert not np.array_equal(large[:1024], large[1024:2048])

    def test_extending_replicas_keeps_paths(self):
        cfg = SimConfig(dt=0.05, T=0.5, seed=2)
        a = simulate_particle_system(InteractionMatrix.zeros(2), zero_kernel(), point_ensemble(300, 2), cfg)
        b = simulate_particle_system(InteractionMatrix.zeros(3), zero_kernel(), point_ensemble(1500, 3), cfg)
        assert np.array_equal(a.positions, b.positions[:300, :2])

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            philox_generator(-1, 0, 0)


class TestStates:
    """Ensemble containers and step configuration."""

    def test_torus_wrap(self):
        """Torus positions are reduced into [0, L)."""
        e = EnsembleState(np.array([[[1.25], [-0.25]]]), domain="torus", period=1.0)
        assert e.positions[0, :, 0] == pytest.approx([0.25, 0.75])

    def test_wrap_never_returns_period(self):
        """Values just below 0 or L round to L under mod and must land in [0, L)."""
        for L in (1.0, 4.0):
            x = wrap_torus(np.array([-1e-17, L - 1e-17, L, 0.5 * L, -L]), L)
            assert x.min() >= 0.0
            assert x.max() < L

    def test_shape_check(self):
        with pytest.raises(DimensionMismatchError):
            EnsembleState(np.zeros((3, 2)))

    def test_sim_config(self):
        """Steps round up so that the step size never exceeds dt."""
        cfg = SimConfig(dt=0.3, T=1.0)
        assert cfg.steps == 4
        assert cfg.step_size == pytest.approx(0.25)
        with pytest.raises(ValueError):
            SimConfig(dt=2.0, T=1.0)
        with pytest.raises(ValueError):
            SimConfig(dt=0.1, T=1.0, scheme="milstein")

    def test_gaussian_ensemble_moments(self):
        """Initial draws follow the requested laws."""
        laws = [GaussianLaw([1.0], [[0.25]]), GaussianLaw([-2.0], [[4.0]])]
        means, blocks, joint = empirical_moments(gaussian_ensemble(laws, 40000, seed=1))
        assert means[:, 0] == pytest.approx([1.0, -2.0], abs=0.05)
        assert blocks[:, 0, 0] == pytest.approx([0.25, 4.0], rel=0.05)
        assert abs(joint[0, 1]) < 0.05

    def test_joint_ensemble_correlation(self):
        """Correlated draws reproduce the joint covariance."""
        joint = JointGaussianState(2, 1, np.zeros(2), np.array([[1.0, 0.6], [0.6, 1.0]]))
        _, _, cov = empirical_moments(joint_gaussian_ensemble(joint, 40000, seed=2))
        assert cov[0, 1] == pytest.approx(0.6, abs=0.03)

    def test_uniform_torus(self):
        e = uniform_torus_ensemble(1000, 3, 2.0, seed=0)
        assert e.positions.min() >= 0.0
        assert e.positions.max() < 2.0


class TestEulerMaruyama:
    """Particle system and independent projection."""

    def test_free_brownian(self):
        """Zero drift from a point gives variance T."""
        cfg = SimConfig(dt=0.01, T=1.0, seed=0)
        out = simulate_particle_system(InteractionMatrix.zeros(2), zero_kernel(), point_ensemble(20000, 2), cfg)
        means, blocks, _ = empirical_moments(out)
        assert np.allclose(means, 0.0, atol=0.05)
        assert np.allclose(blocks[:, 0, 0], 1.0, atol=0.05)
        assert out.t == pytest.approx(1.0)

    def test_same_seed_same_paths(self):
        """Both simulators share Brownian increments for a given seed."""
        cfg = SimConfig(dt=0.05, T=0.5, seed=9)
        init = point_ensemble(200, 3)
        a = simulate_particle_system(InteractionMatrix.zeros(3), zero_kernel(), init, cfg)
        b = simulate_independent_projection(InteractionMatrix.zeros(3), zero_kernel(), init, cfg)
        assert np.array_equal(a.positions, b.positions)

    def test_matches_euler_recursion(self):
        """Linear kernel: sample covariance matches the exact Euler-chain law."""
        xi = InteractionMatrix.uniform(2)
        cfg = SimConfig(dt=0.01, T=1.0, seed=3)
        init = JointGaussianState.standard(2)
        out = simulate_particle_system(xi, linear_kernel(1.0), joint_gaussian_ensemble(init, 20000, seed=4), cfg)
        exact = euler_covariance_recursion(xi, 1.0, init, cfg)
        _, _, cov = empirical_moments(out)
        assert np.allclose(cov, exact.cov, atol=0.06)

    def test_euler_recursion_converges(self):
        """The Euler-chain law approaches the continuous law as dt → 0."""
        xi = InteractionMatrix.uniform(3)
        init = JointGaussianState.standard(3)
        exact = evolve_interacting_gaussian(xi, 1.0, init, 1.0, method="expm")
        coarse = euler_covariance_recursion(xi, 1.0, init, SimConfig(dt=0.1, T=1.0))
        fine = euler_covariance_recursion(xi, 1.0, init, SimConfig(dt=0.01, T=1.0))
        assert np.abs(fine.cov - exact.cov).max() < np.abs(coarse.cov - exact.cov).max()

    def test_divergence_guard(self):
        """Positions beyond the divergence bound abort the run."""
        init = point_ensemble(10, 2, point=2e6)
        with pytest.raises(SimulationDivergenceError):
            simulate_particle_system(InteractionMatrix.zeros(2), zero_kernel(), init, SimConfig(dt=0.1, T=0.2))

    def test_projection_needs_replicas(self):
        with pytest.raises(TooFewSamplesError):
            simulate_independent_projection(InteractionMatrix.zeros(2), zero_kernel(), point_ensemble(10, 2),
                                            SimConfig(dt=0.1, T=0.2))

    def test_domain_mismatch(self):
        """A torus kernel cannot drive a Euclidean ensemble."""
        with pytest.raises(DomainMismatchError):
            simulate_particle_system(InteractionMatrix.zeros(2), sine_kernel(0.3), point_ensemble(10, 2),
                                     SimConfig(dt=0.1, T=0.2))

    def test_torus_stays_on_torus(self):
        e = simulate_particle_system(InteractionMatrix.uniform(4), sine_kernel(0.3),
                                     uniform_torus_ensemble(100, 4, 1.0, seed=0), SimConfig(dt=0.01, T=0.1))
        assert e.positions.min() >= 0.0
        assert e.positions.max() < 1.0


@pytest.mark.slow
class TestGraphonMcKeanVlasov:
    """Block clouds against the Gaussian oracle."""

    def test_linear_blocks_match_oracle(self):
        """Cloud moments track the closed-form block laws."""
        g = Graphon([[0.8, 0.3], [0.3, 0.6]])
        laws = [GaussianLaw([-1.0], [[1.0]]), GaussianLaw([1.0], [[0.5]])]
        cfg = SimConfig(dt=0.01, T=1.0, seed=0)
        clouds = simulate_graphon_mfv(g, linear_kernel(1.0), laws, cfg, M=20000)
        oracle = evolve_graphon_gaussian(g, 1.0, laws, 1.0, method="expm")
        for cloud, law in zip(clouds, oracle):
            means, blocks, _ = empirical_moments(cloud)
            assert means[0, 0] == pytest.approx(law.mean[0], abs=0.05)
            assert blocks[0, 0, 0] == pytest.approx(law.cov[0, 0], abs=0.05)
            assert math.isfinite(blocks[0, 0, 0])


class TestMonteCarloAgainstOracle:
    """Sample statistics within three standard errors of the Gaussian oracle."""

    def test_pair_difference_variance(self):
        """N = 2, ξ = ½ off the diagonal: Var(X₁ − X₂)(1) = 1 − e^{−2}."""
        M = 100_000
        xi = InteractionMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        out = simulate_particle_system(xi, linear_kernel(1.0), point_ensemble(M, 2), SimConfig(dt=0.001, T=1.0))
        oracle = evolve_interacting_gaussian(xi, 1.0, JointGaussianState.deterministic(2), 1.0, method="expm")
        exact = oracle.cov[0, 0] + oracle.cov[1, 1] - 2 * oracle.cov[0, 1]
        assert exact == pytest.approx(-math.expm1(-2.0), abs=1e-6)
        sample = np.var(out.positions[:, 0, 0] - out.positions[:, 1, 0], ddof=1)
        assert abs(sample - exact) <= 3 * exact * math.sqrt(2.0 / (M - 1))

    def test_projection_means_follow_mean_ode(self):
        """Per-node sample means of the projection track the oracle mean ODE."""
        M = 50_000
        xi = InteractionMatrix(np.array([[0.0, 0.5, 0.25], [0.5, 0.0, 0.25], [0.25, 0.25, 0.0]]))
        laws = [GaussianLaw([-1.0], [[0.5]]), GaussianLaw([0.0], [[0.5]]), GaussianLaw([2.0], [[0.5]])]
        cfg = SimConfig(dt=0.002, T=1.0, seed=1)
        out = simulate_independent_projection(xi, linear_kernel(1.0), gaussian_ensemble(laws, M, seed=1), cfg)
        oracle = evolve_projection_gaussian(xi, 1.0, laws, 1.0, method="expm")
        # sample means move like the interacting system's means
        spread = evolve_interacting_gaussian(xi, 1.0, JointGaussianState.from_marginals(laws), 1.0, method="expm")
        means, _, _ = empirical_moments(out)
        for i, law in enumerate(oracle):
            se = math.sqrt(spread.cov[i, i] / M)
            assert abs(means[i, 0] - law.mean[0]) <= 3 * se

    def test_torus_start_at_period_edge(self):
        """A start just below L stays in [0, L) through the run."""
        L = 4.0
        init = point_ensemble(500, 2, point=L - 1e-17, domain="torus", period=L)
        assert init.positions.max() < L
        out = simulate_particle_system(InteractionMatrix.uniform(2), sine_kernel(0.3, period=L), init,
                                       SimConfig(dt=0.01, T=0.1))
        assert out.positions.min() >= 0.0
        assert out.positions.max() < L
