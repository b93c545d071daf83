"""
Exception types for the Graphon Chaos Laboratory.

Every error derives from GraphonLabError and from the builtin a caller would
naturally catch (ValueError for bad inputs, RuntimeError for failures that
happen while integrating).
"""


class GraphonLabError(Exception):
    """Base class for all laboratory errors."""


class ResolutionCapError(GraphonLabError, ValueError):
    """Common block refinement would exceed the configured cap."""


class CutNormSizeError(GraphonLabError, ValueError):
    """Too many blocks for the exhaustive cut norm search."""


class DimensionMismatchError(GraphonLabError, ValueError):
    """Points, laws or matrices with incompatible dimensions."""


class NotPositiveDefiniteError(GraphonLabError, ValueError):
    """Covariance that is not symmetric positive definite."""


class IllConditionedError(GraphonLabError, ValueError):
    """Covariance whose condition number exceeds the guard."""


class EmptySubsetError(GraphonLabError, ValueError):
    """Subset operations that need a nonempty index set."""


class DomainMismatchError(GraphonLabError, ValueError):
    """Kernel domain differs from the ensemble or grid domain."""


class SimulationDivergenceError(GraphonLabError, RuntimeError):
    """Non-finite or runaway positions during a simulation."""


class TooFewSamplesError(GraphonLabError, ValueError):
    """Sample count below the estimator minimum."""


class StabilityError(GraphonLabError, ValueError):
    """Time step violates the explicit scheme's stability bound."""


class NegativeMassError(GraphonLabError, RuntimeError):
    """A density cell went negative after a step."""


class SupportError(GraphonLabError, ValueError):
    """p has mass where the reference density vanishes."""


class DensityFloorError(GraphonLabError, ValueError):
    """Density below the positivity floor where a logarithm is needed."""


class SubsetCapError(GraphonLabError, ValueError):
    """Particle count above the dense subset-lattice cap."""


class RegimeError(GraphonLabError, ValueError):
    """Experiment regime incompatible with the requested kernel or inputs."""


class ConfigError(GraphonLabError, ValueError):
    """Invalid experiment configuration."""
