"""
Drift Kernels

Interaction kernels b(x, y) = β(x − y) shared by the particle simulators, the
Fokker-Planck solver and the bound evaluators, with their Jacobians,
potentials, boundedness metadata and exact empirical mean-field averages.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from scipy import fft

try:
    from .errors import DimensionMismatchError, DomainMismatchError
    from .logger_config import logger
except ImportError:
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent))
    from errors import DimensionMismatchError, DomainMismatchError
    from logger_config import logger


KINDS = ("zero", "linear_difference", "sine_torus", "tabulated")
DOMAINS = ("torus", "euclidean")


@dataclass(frozen=True, eq=False)
class DriftKernel:
    """
    Difference-form interaction kernel b(x, y) = β(x − y).

    Attributes:
        kind: One of zero, linear_difference, sine_torus, tabulated
        domain: "torus" (period L, dimension 1) or "euclidean" (dimension dim)
        rate: a in β(r) = −a·r (linear_difference)
        amplitude: A in β(r) = A·sin(2πk r/L) (sine_torus)
        frequency: k (sine_torus)
        period: L for torus kernels
        dim: Coordinate dimension
        table: β sampled at r = jL/n, j = 0..n−1 (tabulated)
    """

    kind: str
    domain: str = "euclidean"
    rate: float = 0.0
    amplitude: float = 0.0
    frequency: int = 1
    period: float = 1.0
    dim: int = 1
    table: Optional[np.ndarray] = None
    _coeffs: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind '{self.kind}', expected one of {KINDS}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain '{self.domain}', expected one of {DOMAINS}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.domain == "torus":
            if self.period <= 0:
                raise ValueError("torus period must be positive")
            if self.dim != 1:
                raise DimensionMismatchError("torus kernels are one-dimensional")
        if self.kind == "linear_difference" and self.domain != "euclidean":
            raise DomainMismatchError("linear_difference is not periodic; use the euclidean domain")
        if self.kind in ("sine_torus", "tabulated") and self.domain != "torus":
            raise DomainMismatchError(f"{self.kind} lives on the torus")
        if self.kind == "sine_torus" and int(self.frequency) < 1:
            raise ValueError("sine_torus frequency must be a positive integer")
        if self.kind == "tabulated":
            if self.table is None or len(self.table) < 2:
                raise ValueError("tabulated kernel needs at least two table values")
            table = np.array(self.table, dtype=float)
            table.setflags(write=False)
            object.__setattr__(self, "table", table)
            coeffs = fft.fft(table) / table.size
            coeffs.setflags(write=False)
            object.__setattr__(self, "_coeffs", coeffs)

    # ------------------------------------------------------------------ metadata

    @property
    def difference_form(self) -> bool:
        return True

    @property
    def gradient_form(self) -> bool:
        """β = ∇V for some potential V."""
        if self.kind == "tabulated":
            return abs(self._coeffs[0]) < 1e-12 * max(1.0, np.abs(self.table).max())
        return True

    @property
    def is_oracle_regime(self) -> bool:
        """Unbounded linear kernel: closed-form laws, outside the bounded-drift hypotheses."""
        return self.kind == "linear_difference"

    @property
    def sup_b(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear_difference":
            return float("inf") if self.rate != 0 else 0.0
        if self.kind == "sine_torus":
            return abs(self.amplitude)
        return float(np.abs(self._fine_values(0)).max())

    @property
    def sup_grad_b(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear_difference":
            return abs(self.rate)
        if self.kind == "sine_torus":
            return abs(self.amplitude) * self._omega
        return float(np.abs(self._fine_values(1)).max())

    @property
    def _omega(self) -> float:
        return 2.0 * np.pi * int(self.frequency) / self.period

    def _fine_values(self, derivative: int, oversample: int = 16) -> np.ndarray:
        r = np.linspace(0.0, self.period, oversample * self.table.size, endpoint=False)
        return self._trig_eval(r, derivative)

    # ------------------------------------------------------------------ evaluation

    def _points(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.shape[-1] != self.dim:
            raise DimensionMismatchError(f"points have dimension {arr.shape[-1]}, kernel expects {self.dim}")
        return arr

    def wrap(self, r: np.ndarray) -> np.ndarray:
        """Differences on the torus are taken in [−L/2, L/2)."""
        if self.domain != "torus":
            return r
        half = 0.5 * self.period
        return np.mod(r + half, self.period) - half

    def _modes(self, integrate: bool = False):
        """(ω_k, c_k) of the trigonometric interpolant of the table."""
        n = self.table.size
        omega = 2.0 * np.pi * fft.fftfreq(n, d=1.0 / n) / self.period
        coeffs = self._coeffs.copy()
        if integrate:
            safe = np.where(omega == 0, 1.0, omega)
            coeffs = np.where(omega == 0, 0.0, coeffs / (1j * safe))
        if n % 2 == 0:
            # split the Nyquist mode so the interpolant stays real
            nyq = n // 2
            coeffs[nyq] *= 0.5
            coeffs = np.append(coeffs, -coeffs[nyq] if integrate else coeffs[nyq])
            omega = np.append(omega, -omega[nyq])
        return omega, coeffs

    def _trig_eval(self, r: np.ndarray, derivative: int = 0) -> np.ndarray:
        omega, coeffs = self._modes()
        phase = np.exp(1j * np.multiply.outer(r, omega))
        weights = coeffs * (1j * omega) ** derivative
        return np.real(phase @ weights)

    def beta(self, r) -> np.ndarray:
        """β(r) for difference vectors r of shape (..., dim)."""
        r = self.wrap(self._points(r))
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "linear_difference":
            return -self.rate * r
        if self.kind == "sine_torus":
            return self.amplitude * np.sin(self._omega * r)
        return self._trig_eval(r[..., 0])[..., None]

    def eval(self, x, y) -> np.ndarray:
        """b(x, y) = β(x − y), shape (..., dim)."""
        x = self._points(x)
        y = self._points(y)
        return self.beta(x - y)

    def eval_grad(self, x, y) -> np.ndarray:
        """Jacobian of b in its first argument, shape (..., dim, dim)."""
        r = self.wrap(self._points(x) - self._points(y))
        eye = np.eye(self.dim)
        if self.kind == "zero":
            return np.zeros(r.shape + (self.dim,))
        if self.kind == "linear_difference":
            return np.broadcast_to(-self.rate * eye, r.shape[:-1] + (self.dim, self.dim)).copy()
        if self.kind == "sine_torus":
            slope = self.amplitude * self._omega * np.cos(self._omega * r)
        else:
            slope = self._trig_eval(r[..., 0], derivative=1)[..., None]
        return slope[..., None]

    def potential(self, r) -> np.ndarray:
        """V with β = ∇V (defined up to a constant), shape (...)."""
        if not self.gradient_form:
            raise ValueError("kernel is not of gradient form")
        r = self.wrap(self._points(r))
        if self.kind == "zero":
            return np.zeros(r.shape[:-1])
        if self.kind == "linear_difference":
            return -0.5 * self.rate * np.sum(r * r, axis=-1)
        if self.kind == "sine_torus":
            return -(self.amplitude / self._omega) * np.cos(self._omega * r[..., 0])
        # integrate the trigonometric interpolant term by term
        omega, coeffs = self._modes(integrate=True)
        return np.real(np.exp(1j * np.multiply.outer(r[..., 0], omega)) @ coeffs)

    # ------------------------------------------------------------------ mean-field averages

    def mean_field(self, x, samples) -> np.ndarray:
        """
        Exact empirical average (1/M) Σ_r b(x, y_r).

        Args:
            x: Evaluation points, shape (P, dim)
            samples: Cloud y_r, shape (M, dim)

        Returns:
            Array of shape (P, dim)
        """
        x = self._points(x)
        y = self._points(samples)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "linear_difference":
            return -self.rate * (x - y.mean(axis=0))
        if self.kind == "sine_torus":
            w = self._omega
            c = np.cos(w * y).mean(axis=0)
            s = np.sin(w * y).mean(axis=0)
            return self.amplitude * (np.sin(w * x) * c - np.cos(w * x) * s)
        omega, coeffs = self._modes()
        char = np.exp(-1j * np.multiply.outer(y[:, 0], omega)).mean(axis=0)
        return np.real(np.exp(1j * np.multiply.outer(x[:, 0], omega)) @ (coeffs * char))[:, None]

    def interaction_drift(self, positions: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """
        Σ_j w_ij b(x_i, x_j) inside each replica.

        Args:
            positions: Array of shape (M, N, dim)
            weights: Interaction weights w, shape (N, N)

        Returns:
            Array of shape (M, N, dim)
        """
        x = self._points(positions)
        w = np.asarray(weights, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "linear_difference":
            return -self.rate * (w.sum(axis=1)[None, :, None] * x - np.einsum("ij,rjd->rid", w, x))
        if self.kind == "sine_torus":
            om = self._omega
            wc = np.einsum("ij,rjd->rid", w, np.cos(om * x))
            ws = np.einsum("ij,rjd->rid", w, np.sin(om * x))
            return self.amplitude * (np.sin(om * x) * wc - np.cos(om * x) * ws)
        omega, coeffs = self._modes()
        phase = np.exp(1j * x[..., 0, None] * omega)
        mixed = np.einsum("ij,rjk->rik", w, np.conj(phase))
        return np.real(np.einsum("rik,k,rik->ri", phase, coeffs, mixed))[..., None]

    def weighted_mean_field(self, positions: np.ndarray, clouds: np.ndarray,
                            weights: np.ndarray) -> np.ndarray:
        """
        Σ_j w_ij (1/M) Σ_s b(x_i, y_j^(s)) with the laws replaced by replica clouds.

        Args:
            positions: Evaluation points x, shape (M, N, dim)
            clouds: Samples y, shape (M', N, dim); column j is the cloud of node j
            weights: Interaction weights w, shape (N, N)
        """
        x = self._points(positions)
        y = self._points(clouds)
        w = np.asarray(weights, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "linear_difference":
            return -self.rate * (w.sum(axis=1)[None, :, None] * x - (w @ y.mean(axis=0))[None])
        if self.kind == "sine_torus":
            om = self._omega
            wc = w @ np.cos(om * y).mean(axis=0)
            ws = w @ np.sin(om * y).mean(axis=0)
            return self.amplitude * (np.sin(om * x) * wc[None] - np.cos(om * x) * ws[None])
        omega, coeffs = self._modes()
        char = w @ np.exp(-1j * y[..., 0, None] * omega).mean(axis=0)
        phase = np.exp(1j * x[..., 0, None] * omega)
        return np.real(np.einsum("rik,k,ik->ri", phase, coeffs, char))[..., None]

    def convolve_density(self, values: np.ndarray, method: str = "fft") -> np.ndarray:
        """
        x_i ↦ h Σ_l β(x_i − x_l) p_l on a uniform periodic cell-centred grid.

        Args:
            values: Density samples p_l (length n) on [0, L)
            method: "fft" (circular convolution) or "direct" (dense matrix)
        """
        if self.domain != "torus":
            raise DomainMismatchError("grid convolution needs a torus kernel")
        p = np.asarray(values, dtype=float)
        n = p.size
        h = self.period / n
        if method == "direct":
            centres = (np.arange(n) + 0.5) * h
            logger.debug(f"Direct grid convolution, n={n}, kernel={self.kind}")
            B = self.eval(centres[:, None, None], centres[None, :, None])[..., 0]
            return h * (B @ p)
        offsets = np.arange(n) * h
        kernel = self.beta(offsets[:, None])[:, 0]
        logger.debug(f"FFT grid convolution, n={n}, kernel={self.kind}")
        return h * np.real(fft.ifft(fft.fft(kernel) * fft.fft(p)))

    # ------------------------------------------------------------------ config round trip

    def to_spec(self) -> Dict[str, Any]:
        spec: Dict[str, Any] = {"kind": self.kind, "domain": self.domain}
        if self.kind == "linear_difference":
            spec.update(rate=self.rate, dim=self.dim)
        elif self.kind == "sine_torus":
            spec.update(amplitude=self.amplitude, frequency=int(self.frequency), period=self.period)
        elif self.kind == "tabulated":
            spec.update(values=self.table.tolist(), period=self.period)
        else:
            spec.update(dim=self.dim, period=self.period)
        return spec


def zero_kernel(domain: str = "euclidean", dim: int = 1, period: float = 1.0) -> DriftKernel:
    return DriftKernel("zero", domain=domain, dim=dim, period=period)


def linear_kernel(rate: float = 1.0, dim: int = 1) -> DriftKernel:
    """β(r) = −a·r on ℝ^d (oracle regime)."""
    return DriftKernel("linear_difference", domain="euclidean", rate=float(rate), dim=dim)


def sine_kernel(amplitude: float, frequency: int = 1, period: float = 1.0) -> DriftKernel:
    """β(r) = A·sin(2πk r/L) on the torus of period L."""
    return DriftKernel("sine_torus", domain="torus", amplitude=float(amplitude),
                       frequency=int(frequency), period=float(period))


def tabulated_kernel(values, period: float = 1.0) -> DriftKernel:
    return DriftKernel("tabulated", domain="torus", table=np.asarray(values, dtype=float),
                       period=float(period))


def kernel_from_spec(spec: Dict[str, Any]) -> DriftKernel:
    """
    Build a kernel from its experiment-config form.

    Examples:
        {"kind": "sine_torus", "amplitude": 0.3, "frequency": 1, "period": 1.0}
        {"kind": "linear_difference", "rate": 1.0, "dim": 1}
    """
    kind = spec.get("kind")
    if kind == "linear_difference":
        return linear_kernel(spec.get("rate", 1.0), spec.get("dim", 1))
    if kind == "sine_torus":
        return sine_kernel(spec.get("amplitude", 0.3), spec.get("frequency", 1), spec.get("period", 1.0))
    if kind == "tabulated":
        return tabulated_kernel(spec["values"], spec.get("period", 1.0))
    if kind == "zero":
        return zero_kernel(spec.get("domain", "euclidean"), spec.get("dim", 1), spec.get("period", 1.0))
    raise ValueError(f"unknown kernel kind '{kind}'")
