"""Exception hierarchy shared by every module of the toolkit."""


class GaugeCocycleError(Exception):
    """Base class for all toolkit errors."""


# lie-core
class OutsideInjectivityDomain(GaugeCocycleError):
    pass


class TooFarFromGroup(GaugeCocycleError):
    pass


class GroupMismatch(GaugeCocycleError):
    pass


# grid / forms / norms
class DegreeOverflow(GaugeCocycleError):
    pass


class DegreeUnderflow(GaugeCocycleError):
    pass


class ChartMismatch(GaugeCocycleError):
    pass


class BadExponent(GaugeCocycleError):
    pass


class EmptySequence(GaugeCocycleError):
    pass


class CoverGap(GaugeCocycleError):
    pass


class MarginExhausted(GaugeCocycleError):
    """Raised when nested shrinking or refinement runs out of grid cells.

    In the topology pipeline this is the signature of curvature that
    concentrates below the resolvable scale.
    """


# bundle-core
class CoverMismatch(GaugeCocycleError):
    pass


# elliptic-critical
class ContractionFailure(GaugeCocycleError):
    pass


class NonConvergence(GaugeCocycleError):
    pass


# coulomb-gauge
class CompatibilityViolation(GaugeCocycleError):
    pass


class StallWithoutCoulomb(GaugeCocycleError):
    pass


class SmallnessViolated(GaugeCocycleError):
    pass


# topology-class
class NonIntegral(GaugeCocycleError):
    def __init__(self, value: float, deviation: float):
        super().__init__(f"integral {value:.9g} is {deviation:.3g} away from an integer")
        self.value = value
        self.deviation = deviation


class UnresolvableJump(GaugeCocycleError):
    pass


# smoothing-approx
class OscillationTooLarge(GaugeCocycleError):
    pass


# scenario-cli
class SpecParse(GaugeCocycleError):
    pass


class PipelineError(GaugeCocycleError):
    """Module error re-raised with the scenario stage that produced it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
