"""Exception taxonomy shared by all modules.

Every failure mode named in a module contract gets its own class so that
callers (and the CLI report writer) can translate them into machine-readable
error objects without string matching.
"""


class MorseflowError(Exception):
    """Base class for all engine errors."""


class PreconditionViolation(MorseflowError):
    """An operation was called outside its stated domain."""


class DimensionMismatch(PreconditionViolation):
    pass


class DegenerateMetric(MorseflowError):
    """Induced metric failed the positivity floor at a sampled point."""


class DegenerateCritical(MorseflowError):
    """A converged critical point violates the Morse nondegeneracy tolerance."""


class ChartTooSmall(MorseflowError):
    """No admissible chart radius satisfies the cubic residual bound."""


class LadderCollision(MorseflowError):
    """Two distinct critical values are too close to separate into levels."""


class StepUnderflow(MorseflowError):
    """Adaptive step controller stalled (stiffness near a critical point)."""


class HitCriticalLevel(MorseflowError):
    """Rescaled flow reached a critical level its caller did not allow."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class StuckOnStableManifold(MorseflowError):
    """Level transfer converged into a critical point above the target level."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point  # the CriticalPoint absorbing the trajectory


class IndexZero(PreconditionViolation):
    """Unstable sphere requested at a local minimum."""


class NonTransversalSuspected(MorseflowError):
    """Tangential or saddle-saddle intersection: Morse-Smale condition suspect."""

    def __init__(self, message, theta=None, at=None):
        super().__init__(message)
        self.theta = theta
        self.at = at  # offending critical point id, when known


class CaptureAmbiguous(MorseflowError):
    """A landed point sits within capture radius of two stable spheres."""


class SingularTransport(MorseflowError):
    """Transported orientation frame became numerically rank deficient."""


class MissingPair(MorseflowError):
    """Complex assembly found an adjacent-index pair that was never searched."""


class MissingDeck(MorseflowError):
    """A counted trajectory lacks deck data needed for a twisted complex."""


class AlphaTooLarge(PreconditionViolation):
    """Requested bump mass exceeds the admissible delta."""


class NoRegularValueFound(MorseflowError):
    def __init__(self, message, best_margin=None):
        super().__init__(message)
        self.best_margin = best_margin


class PositivityLost(MorseflowError):
    """Perturbed inverse metric failed positive definiteness (eta too large)."""


class NotTopDegree(PreconditionViolation):
    """Form degree does not match the dimension of the unstable manifold."""


class NonConvergent(MorseflowError):
    """Quadrature refinement moved the value far outside its error estimate."""


class ScenarioError(MorseflowError):
    """Scenario file failed validation (unknown names, bad parameters)."""
