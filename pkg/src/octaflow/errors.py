"""Exception types raised by the geometry, field, dynamics and flow layers."""


class OctaflowError(Exception):
    """Base class for all package-specific failures."""


class NotReducible(OctaflowError):
    """A point could not be brought into the fundamental octagon within the
    iteration cap of the greedy reduction."""


class CurvaturePositive(OctaflowError):
    """A constructed or evolved conformal field has max K >= 0 somewhere."""


class OutOfRange(OctaflowError):
    """A field evaluation was requested outside the supported neighborhood
    of the fundamental octagon."""


class StepFailure(OctaflowError):
    """The geodesic integrator needed a speed renormalization larger than
    its per-step tolerance."""


class RiccatiBlowup(OctaflowError):
    """A Riccati solution left the admissible bracket [-2*sqrt(K2), 0]
    (stable branch) or its mirror (unstable branch)."""


class CflViolation(OctaflowError):
    """The requested flow time step exceeds the parabolic stability bound."""


class NegativeInput(OctaflowError):
    """An operation requiring non-negative input values received a negative one."""
