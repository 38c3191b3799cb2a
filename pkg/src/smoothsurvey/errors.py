"""Exception hierarchy shared by all modules."""


class SmoothSurveyError(Exception):
    """Base class for every domain error raised by the package."""


class ConfigError(SmoothSurveyError, ValueError):
    """Invalid run configuration."""


class InputError(SmoothSurveyError, OSError):
    """Unreadable or malformed input file."""


class InvalidConfig(SmoothSurveyError, ValueError):
    """Invalid generator or model settings."""


class AllWeightsZero(SmoothSurveyError, ValueError):
    """Every kernel value is zero at an evaluation point."""

    def __init__(self, t, message=None):
        self.t = t
        super().__init__(
            message
            or f"all smoothing weights are zero at t={t!r}; bandwidth too small for the grid"
        )


class AssumptionA3Violated(SmoothSurveyError, ValueError):
    """The bandwidth is too small relative to the grid spacing (2h <= T/(d-1))."""


class InvalidDesign(SmoothSurveyError, ValueError):
    """Sampling design inconsistent with the population."""


class IndexOutOfRange(SmoothSurveyError, IndexError):
    pass


class TooLargeToEnumerate(SmoothSurveyError, ValueError):
    """The exhaustive support exceeds the configured cap."""


class ZeroResponders(SmoothSurveyError, ValueError):
    """A group has no respondent at some instant, so its response rate is 0."""

    def __init__(self, group, instant):
        self.group = group
        self.instant = instant
        super().__init__(f"no respondents in group {group!r} at instant index {instant}")


class ZeroTheta(SmoothSurveyError, ValueError):
    """A response probability of 0 is attached to an observed cell."""


class ZeroDenominator(SmoothSurveyError, ValueError):
    """No effective respondents contribute near an evaluation point."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"estimated denominator is zero at t={t!r}")


class ZeroDenominatorInstant(SmoothSurveyError, ValueError):
    """N_hat(t_j) = 0 at an instant carrying positive smoothing weight."""

    def __init__(self, instant):
        self.instant = instant
        super().__init__(f"no respondents at instant index {instant}")


class NoClosedFormJoint(SmoothSurveyError, ValueError):
    """Joint response or joint inclusion probabilities are unavailable."""


class NotStratified(SmoothSurveyError, TypeError):
    """A stratified-only routine received a non-stratified design."""


class ZeroJointInclusion(SmoothSurveyError, ValueError):
    """A pair of sampled units has zero joint inclusion probability."""


class TooFewUnits(SmoothSurveyError, ValueError):
    """Leave-one-out needs at least two sampled units per stratum."""


class AllCandidatesFailed(SmoothSurveyError, ValueError):
    """No candidate bandwidth produced a finite cross-validation score."""


class StratumError(SmoothSurveyError):
    """Wraps an error raised while processing one stratum."""

    def __init__(self, stratum, cause):
        self.stratum = stratum
        self.cause = cause
        super().__init__(f"stratum {stratum!r}: {cause}")
