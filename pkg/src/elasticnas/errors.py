"""Exception types shared across the package."""


class ElasticNasError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpace(ElasticNasError):
    """Search-space definition violates its invariants."""


class UnknownLevel(ElasticNasError):
    """A requested dimension value is not one of the space's levels."""


class SpaceTooLarge(ElasticNasError):
    """Exhaustive operation requested on a space above the given limit."""


class InvalidArch(ElasticNasError):
    """Architecture does not validate against its search space."""


class MalformedEncoding(ElasticNasError):
    """Binary encoding has a segment that is not one-hot."""


class IncompatibleSpace(ElasticNasError):
    """Base architecture config and search space disagree on shape."""


class ShapeMismatch(ElasticNasError):
    """Tensor input has the wrong shape for the requested operation."""


class NonFiniteLoss(ElasticNasError):
    """Training loss became NaN/Inf; the offending step was aborted."""


class MissingTimeEntry(ElasticNasError):
    """Schedule time model has no entry for a phase."""


class MissingEntry(ElasticNasError):
    """Latency lookup table has no entry for a component of the arch."""


class NonPositiveEntry(ElasticNasError):
    """Latency table entry is zero or negative."""


class LutParseError(ElasticNasError):
    """Latency table CSV could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientData(ElasticNasError):
    """Not enough training pairs for the accuracy predictor."""


class InfeasibleTarget(ElasticNasError):
    """No architecture in the space can meet the latency target."""


class RetriesExhausted(ElasticNasError):
    """Rejection sampling failed to find a feasible candidate."""


class TooFewSamples(ElasticNasError):
    """Statistic requires more samples than were provided."""
