"""Exception hierarchy shared across the package."""


class DSStitchError(Exception):
    """Base class for all package errors."""


class ParseError(DSStitchError, ValueError):
    pass


class DimensionMismatch(DSStitchError, ValueError):
    pass


class EmptyDemonstration(DSStitchError, ValueError):
    pass


class AttractorInconsistent(EmptyDemonstration):
    """Trajectory endpoints of one demonstration disagree on the attractor."""


class TooFewPoints(DSStitchError, ValueError):
    pass


class UnknownScenario(DSStitchError, KeyError):
    pass


class DegenerateData(DSStitchError, ValueError):
    pass


class SingularCovariance(DSStitchError, ValueError):
    pass


class OptimizationDiverged(DSStitchError, RuntimeError):
    pass


class StabilityUnsatisfied(DSStitchError, RuntimeError):
    pass


class NoGoalEdges(DSStitchError):
    pass


class NoPath(DSStitchError):
    pass


class EmptySelection(DSStitchError, ValueError):
    pass


class SegmentReversalConflict(DSStitchError, ValueError):
    pass


class DegenerateSupportStats(DSStitchError, ValueError):
    pass
