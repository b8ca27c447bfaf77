"""Exception hierarchy for hk-semiclassical."""

from __future__ import annotations


class HKError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HKError, ValueError):
    """Invalid harness configuration."""

    def __init__(self, message: str, *, key: str | None = None) -> None:
        """Initialize the error.

        Args:
            message: Description of the violated constraint.
            key: Dotted path of the offending configuration key.
        """
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class ModelError(HKError, ValueError):
    """Inconsistent or unsupported Hamiltonian model."""


class FlowDivergenceError(HKError, ArithmeticError):
    """The classical flow produced a non-finite state."""

    def __init__(self, t: float) -> None:
        """Initialize the error.

        Args:
            t: Time at which the non-finite state was detected.
        """
        self.t = t
        super().__init__(f"Non-finite flow state detected at t={t!r}")


class SiegelError(HKError, ValueError):
    """Matrix is not in the Siegel space (symmetric, positive imaginary part)."""


class GridAdequacyError(HKError, ValueError):
    """Position grid too small or too coarse for the requested states."""


class QuadratureError(HKError, RuntimeError):
    """Phase-space quadrature could not reach its coverage target."""


class BranchAmbiguityError(HKError, RuntimeError):
    """Square-root branch cannot be followed continuously along a trajectory."""


class SingularMatrixError(HKError, ArithmeticError):
    """A matrix that must be invertible is numerically singular."""


class ReferenceSolverError(HKError, RuntimeError):
    """A reference propagator cannot be applied to the given input."""


class AliasingError(ReferenceSolverError):
    """Spectral tail of the split-step state is above threshold."""


class BoundaryError(ReferenceSolverError):
    """Wavepacket mass reached the edge of the periodic box."""
