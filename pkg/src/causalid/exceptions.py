"""Error types shared across the package."""


class CausalIdError(Exception):
    """Base class for package errors."""


class InvalidStudyError(CausalIdError, ValueError):
    """A study violates marginal agreement or arm-sum consistency."""


class PreconditionError(CausalIdError, ValueError):
    """An operation was called outside its stated preconditions."""


class EstimatorError(PreconditionError):
    """An estimator could not run on the supplied samples or classes."""


class IdentificationError(CausalIdError):
    """A counterexample could not be built or certified."""


class ConfigError(CausalIdError, ValueError):
    """A configuration or input file could not be parsed."""
