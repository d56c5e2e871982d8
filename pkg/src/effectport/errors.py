"""Exception hierarchy shared across the package.

Errors fall into two broad families used by the CLI for exit codes:
validation errors (bad inputs, infeasible requests) and numerical errors
(estimation failed on data that passed validation).
"""


class EffectPortError(Exception):
    """Base class for every error raised by this package."""


class DomainError(EffectPortError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataValidationError(EffectPortError, ValueError):
    """Input records violate the expected schema or basic sanity checks."""


class ZeroCellError(DomainError):
    """A 2x2 cell required by the requested measure is zero."""


class DegenerateMarginError(DomainError):
    """A 2x2 margin is zero, so a required risk is undefined."""


class RankDeficientError(EffectPortError):
    """The design matrix does not have full column rank on the observed data."""


class SeparationError(EffectPortError):
    """Logistic estimates are diverging (separated or quasi-separated data)."""


class BoundaryError(EffectPortError):
    """A log-link fit has its maximum on the fitted-probability boundary.

    Carries the boundary-constrained fit (flagged not converged) as ``fit``.
    """

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class NestingError(EffectPortError, ValueError):
    """Likelihood-ratio comparison requested for non-nested models."""


class MissingTermError(EffectPortError, KeyError):
    """A requested term is not part of the fitted model."""


class InsufficientStudiesError(DataValidationError):
    """Too few studies for the requested analysis."""


class NumericalUnderflowError(EffectPortError):
    """A per-study integral underflowed even in log-sum-exp form."""


class NonConvergenceError(EffectPortError):
    """Optimization exhausted its iteration budget without converging."""


class SingularHessianError(EffectPortError):
    """The numerical Hessian at the optimum is singular or not positive definite."""


class CovarianceUnavailableError(EffectPortError):
    """An interval was requested from a fit whose covariance is unavailable."""


class LengthMismatchError(DataValidationError):
    """Paired vectors have different lengths."""


class DegenerateError(EffectPortError):
    """A rank correlation is undefined because one vector is constant."""


class EmptyCorpusError(DataValidationError):
    """No meta-analysis survived corpus filtering.

    ``skipped`` lists the (meta_id, study_count) pairs that were dropped.
    """

    def __init__(self, message, skipped=()):
        super().__init__(message)
        self.skipped = tuple(skipped)


class InfeasibleMechanismError(DomainError):
    """A simulation mechanism cannot produce valid risks on its baseline range."""


#: Errors that indicate bad or infeasible input (CLI exit code 3).
VALIDATION_ERRORS = (
    DataValidationError,
    DomainError,
    NestingError,
    MissingTermError,
    DegenerateError,
)

#: Errors that indicate a numerical failure on valid input (CLI exit code 4).
NUMERICAL_ERRORS = (
    RankDeficientError,
    SeparationError,
    BoundaryError,
    NumericalUnderflowError,
    NonConvergenceError,
    SingularHessianError,
    CovarianceUnavailableError,
)
