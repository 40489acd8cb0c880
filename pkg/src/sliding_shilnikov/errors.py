"""Exception hierarchy shared by all modules."""
from __future__ import annotations

import numpy as np


class SlidingError(Exception):
    """Base class for library errors."""


class DomainError(SlidingError, ValueError):
    """State outside the bounding box of a system."""


class PreconditionError(SlidingError, ValueError):
    """An operation was called outside its precondition."""


class ImmediateFoldExit(PreconditionError):
    """Sliding start on the fold with the sliding field pointing outward."""


class DoubleTangencyError(SlidingError, ArithmeticError):
    """Xh and Yh coincide, so the sliding field is undefined."""


class AmbiguityError(SlidingError):
    """Nonunique continuation at a branch point and no hint was given."""


class ZenoError(SlidingError):
    """Event accumulation (chattering) detected."""


class IntegrationError(SlidingError, RuntimeError):
    """The ODE solver failed."""

    def __init__(self, message: str, t: float | None = None, state=None):
        super().__init__(message)
        self.t = t
        self.state = None if state is None else np.asarray(state, dtype=float)


class StepSizeUnderflow(IntegrationError):
    """Adaptive step size dropped below machine resolution."""


class NoReturnError(IntegrationError):
    """A flight did not return to the switching surface within its time cap."""


class NoHitError(IntegrationError):
    """A manifold shot missed its target section within its time cap."""


class OrbitEscape(IntegrationError):
    """A backward sliding orbit left the working region."""


class FitFailure(SlidingError):
    """Not enough samples for a local fit."""


class NewtonDiverged(SlidingError):
    """Newton iteration failed; ``trace`` holds (iterate, residual norm) pairs."""

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = list(trace)
