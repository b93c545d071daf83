"""
Tests for drift kernels.
"""

import logging
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from drift import DriftKernel, kernel_from_spec, linear_kernel, sine_kernel, tabulated_kernel, zero_kernel
from errors import DimensionMismatchError, DomainMismatchError


@pytest.fixture
def sine():
    return sine_kernel(0.3, 1, 1.0)


@pytest.fixture
def table():
    r = np.arange(16) / 16
    return tabulated_kernel(0.3 * np.sin(2 * np.pi * r), 1.0)


class TestEvaluation:
    """Point values and Jacobians."""

    def test_linear_eval(self):
        """β(r) = −a·r."""
        assert linear_kernel(1.0).eval(1.0, -0.5)[0] == pytest.approx(-1.5)

    def test_sine_eval_and_grad(self, sine):
        """0.3·sin(2π x) and its derivative."""
        assert sine.eval(0.25, 0.0)[0] == pytest.approx(0.3)
        grad = sine.eval_grad(0.0, 0.0)
        assert grad.shape == (1, 1)
        assert grad[0, 0] == pytest.approx(0.3 * 2 * math.pi)

    def test_torus_wrap(self, sine):
        """Differences are periodic in the torus period."""
        assert sine.eval(0.9, 0.1)[0] == pytest.approx(sine.eval(-0.1, 0.1)[0])

    def test_zero(self):
        """The zero kernel vanishes everywhere."""
        k = zero_kernel()
        assert np.all(k.eval(np.ones((3, 1)), np.zeros((3, 1))) == 0.0)
        assert k.sup_b == 0.0

    def test_linear_grad_multidimensional(self):
        """Jacobian of the linear kernel is −a·I."""
        k = linear_kernel(2.0, dim=3)
        grad = k.eval_grad(np.ones(3), np.zeros(3))
        assert np.allclose(grad, -2.0 * np.eye(3))

    def test_dimension_mismatch(self):
        """Points must carry the kernel dimension."""
        with pytest.raises(DimensionMismatchError):
            linear_kernel(1.0, dim=2).eval(np.ones(3), np.zeros(3))

    def test_tabulated_interpolates_sine(self, sine, table):
        """A sampled sine is reproduced between the nodes."""
        r = np.linspace(-0.5, 0.5, 37)[:, None]
        assert np.allclose(table.beta(r), sine.beta(r), atol=1e-12)
        assert np.allclose(table.eval_grad(r, 0.0 * r), sine.eval_grad(r, 0.0 * r), atol=1e-10)


class TestMetadata:
    """Bounds and regime flags."""

    def test_sup_norms(self, sine):
        """sup|b| and sup|∇b| for each kind."""
        assert sine.sup_b == pytest.approx(0.3)
        assert sine.sup_grad_b == pytest.approx(0.3 * 2 * math.pi)
        assert linear_kernel(1.0).sup_b == float("inf")
        assert linear_kernel(1.5).sup_grad_b == 1.5

    def test_regime(self, sine):
        """Only the linear kernel is in the oracle regime."""
        assert linear_kernel(1.0).is_oracle_regime
        assert not sine.is_oracle_regime
        assert sine.difference_form

    def test_gradient_form_of_table(self, table):
        """Zero-mean tables are gradient form; a constant offset is not."""
        assert table.gradient_form
        shifted = tabulated_kernel(table.table + 0.1, 1.0)
        assert not shifted.gradient_form
        with pytest.raises(ValueError):
            shifted.potential(0.2)

    def test_potential_matches_closed_form(self, sine, table):
        """The tabulated potential integrates the interpolant."""
        r = np.linspace(0.0, 1.0, 11)[:, None]
        assert np.allclose(table.potential(r), sine.potential(r), atol=1e-12)

    def test_domain_checks(self):
        """Kernels refuse the wrong domain."""
        with pytest.raises(DomainMismatchError):
            DriftKernel("linear_difference", domain="torus", rate=1.0)
        with pytest.raises(DomainMismatchError):
            DriftKernel("sine_torus", domain="euclidean", amplitude=0.3)
        with pytest.raises(ValueError):
            DriftKernel("quadratic")

    def test_spec_round_trip(self, sine, table):
        """Kernels survive their config form."""
        for k in (sine, table, linear_kernel(0.7, 2), zero_kernel("torus", period=2.0)):
            again = kernel_from_spec(k.to_spec())
            assert again.to_spec() == k.to_spec()


class TestMeanField:
    """Exact empirical averages against brute force."""

    def test_mean_field_sine(self, sine):
        """Characteristic-function form equals the pairwise average."""
        rng = np.random.default_rng(0)
        x = rng.random((5, 1))
        y = rng.random((40, 1))
        brute = sine.eval(x[:, None, :], y[None, :, :]).mean(axis=1)
        assert np.allclose(sine.mean_field(x, y), brute)

    def test_mean_field_linear(self):
        """−a(x − mean y)."""
        k = linear_kernel(2.0)
        y = np.array([[1.0], [3.0]])
        assert np.allclose(k.mean_field(np.array([[0.0]]), y), [[4.0]])

    @pytest.mark.parametrize("name", ["sine", "table", "linear"])
    def test_interaction_drift(self, name, sine, table):
        """Σ_j w_ij b(x_i, x_j) matches the pairwise sum."""
        kernel = {"sine": sine, "table": table, "linear": linear_kernel(1.3)}[name]
        rng = np.random.default_rng(1)
        x = rng.random((3, 6, 1))
        w = rng.random((6, 6)) / 6
        pairs = kernel.eval(x[:, :, None, :], x[:, None, :, :])
        brute = np.einsum("ij,rijd->rid", w, pairs)
        assert np.allclose(kernel.interaction_drift(x, w), brute)

    @pytest.mark.parametrize("name", ["sine", "table"])
    def test_weighted_mean_field(self, name, sine, table):
        """Cloud averages weighted across nodes match brute force."""
        kernel = {"sine": sine, "table": table}[name]
        rng = np.random.default_rng(2)
        x = rng.random((2, 4, 1))
        clouds = rng.random((30, 4, 1))
        w = np.full((4, 4), 0.25)
        pairs = kernel.eval(x[:, :, None, None, :], clouds[None, None, :, :, :])
        brute = np.einsum("ij,risjd->rid", w, pairs) / clouds.shape[0]
        assert np.allclose(kernel.weighted_mean_field(x, clouds, w), brute)

    def test_convolution_methods_agree(self, sine):
        """FFT and dense convolution agree on the torus grid."""
        p = 1.0 + 0.5 * np.cos(2 * np.pi * (np.arange(64) + 0.5) / 64)
        assert np.allclose(sine.convolve_density(p, "fft"), sine.convolve_density(p, "direct"), atol=1e-12)

    def test_convolution_needs_torus(self):
        """Grid convolution is periodic only."""
        with pytest.raises(DomainMismatchError):
            linear_kernel(1.0).convolve_density(np.ones(8))

    def test_convolution_logs_grid_size(self, sine, caplog):
        with caplog.at_level(logging.DEBUG, logger="graphon_lab"):
            sine.convolve_density(np.ones(128))
        assert "FFT grid convolution, n=128" in caplog.text
