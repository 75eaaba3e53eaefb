"""Error taxonomy shared across the package.

Two failure families, mirrored by the CLI exit codes:

* ValidationError -- bad arguments, out-of-domain values, malformed config
  (CLI exit 1)
* ConvergenceError -- a numerical procedure failed to reach its tolerance
  (series hit max_terms while still growing, covariance not repairable to
  PSD, quadrature panel cap exceeded, ...)  (CLI exit 2)
"""


class ValidationError(ValueError):
    """Raised for domain/validation failures (bad parameter, bad config key)."""


class ConvergenceError(ArithmeticError):
    """Raised when an iterative/numerical procedure does not converge."""
