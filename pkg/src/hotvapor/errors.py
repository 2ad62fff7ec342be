"""Exception hierarchy shared by the simulation and analysis modules."""

from __future__ import annotations

import numpy as np


class HotVaporError(Exception):
    """Base class for all package errors."""


class DomainError(HotVaporError, ValueError):
    """An input lies outside the physical or numerical domain of a model."""


class IntegrationError(HotVaporError, RuntimeError):
    """The stiff integrator could not advance (step-size underflow).

    Attributes
    ----------
    time : float
        Time of the last accepted step.
    last_state : ndarray
        Density-matrix vector at ``time``.
    """

    def __init__(self, message: str, time: float, last_state: np.ndarray):
        super().__init__(message)
        self.time = time
        self.last_state = np.asarray(last_state)


class SingularSystemError(HotVaporError, np.linalg.LinAlgError):
    """Bloch matrix is singular; no unique steady state exists."""


class NonDecayingError(HotVaporError, ValueError):
    """An eigenvalue of the Bloch matrix has non-negative real part."""


class SimulationError(HotVaporError, RuntimeError):
    """Too many trajectories failed during a Monte-Carlo run."""


class DetectionError(HotVaporError, RuntimeError):
    """No satellite peak could be isolated in the Fourier plane."""


class DemodulationError(HotVaporError, RuntimeError):
    """The satellite mask overlaps the continuous (DC) region."""


class UnwrapQualityError(HotVaporError, RuntimeError):
    """Phase residues are too dense for a trustworthy unwrap."""


class FitError(HotVaporError, RuntimeError):
    """Non-linear least squares failed to converge.

    Attributes
    ----------
    residuals : ndarray or None
        Residual vector at the best parameters found.
    """

    def __init__(self, message: str, residuals: np.ndarray | None = None):
        super().__init__(message)
        self.residuals = residuals


class PeriodAmbiguityError(FitError):
    """Fringe count of a bucket trace is uncertain by at least one period."""


class ConfigError(HotVaporError, ValueError):
    """Run configuration is missing keys or has invalid values."""
