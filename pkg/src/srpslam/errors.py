"""Exception hierarchy for srpslam.

Every error raised on a documented failure path derives from SrpSlamError so
callers (and the CLI) can distinguish engine failures from programming bugs.
"""

from __future__ import annotations


class SrpSlamError(Exception):
    """Base class for all srpslam failures."""


class ConfigError(SrpSlamError):
    """Configuration file missing, unparseable, or containing invalid values."""


class DatasetError(SrpSlamError):
    """Dataset directory missing, incomplete, or inconsistent."""


class IoFailure(SrpSlamError):
    """A read or write of an on-disk artifact failed."""


class EmptyStream(SrpSlamError):
    """An IMU integration interval contains no samples."""


class NonMonotonicTime(SrpSlamError):
    """Timestamps in a stream decreased or repeated."""


class TimestampOutOfRange(SrpSlamError):
    """A query timestamp lies outside the covered interval."""


class BiasReferenceStale(SrpSlamError):
    """A preintegrated factor was evaluated with a bias too far from its
    linearization point for the first-order correction to hold."""


class TooFewPoints(SrpSlamError):
    """Not enough points to run an extraction or fitting step."""


class EmptyWindow(SrpSlamError):
    """The sliding window holds no frames."""


class DegenerateConfiguration(SrpSlamError):
    """A geometric fit has no unique solution (collinear/coincident input)."""


class SolverDiverged(SrpSlamError):
    """A nonlinear solve produced non-finite values or exploded."""


class InsufficientConstraints(SrpSlamError):
    """A solve was requested with too few residuals to determine the unknowns."""


class ExcessiveMotionDuringInit(SrpSlamError):
    """Static initialization window contained too much motion."""


class NoPlanesFound(SrpSlamError):
    """Structural plane extraction found no acceptable candidate."""


class DisconnectedGraph(SrpSlamError):
    """A pose graph vertex is unreachable from the gauge vertex."""


class InvalidSpec(SrpSlamError):
    """A scenario or building description is self-inconsistent."""
