"""
Error handling utilities for pimspec
"""

import sys
import logging
import traceback

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class PimError(Exception):
    """Base error carrying a CLI exit code and a diagnostics payload"""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message, exit_code=None, payload=None):
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.payload = payload

    def to_dict(self):
        rv = dict(self.payload or ())
        rv['error'] = self.message
        rv['type'] = type(self).__name__
        return rv


class ValidationError(PimError, ValueError):
    """Invalid input, argument or configuration"""

    exit_code = EXIT_VALIDATION


class UnknownManifoldError(ValidationError):
    """Manifold tag without a sampler or analytic spectrum"""


class DimensionMismatchError(ValidationError):
    """Vector or matrix shape does not match the point cloud"""


class NumericalError(PimError, RuntimeError):
    """Failure inside a numerical stage"""

    exit_code = EXIT_NUMERICAL


class MassMatrixError(NumericalError):
    """Mass matrix B failed its Cholesky factorization"""

    def __init__(self, message="mass matrix not positive definite", payload=None):
        payload = dict(payload or ())
        payload.setdefault('remedy', 'rerun with --jitter [eps] to add eps*trace(B)/n to the diagonal')
        super().__init__(f"{message}; rerun with --jitter to regularize the diagonal", payload=payload)


class EigenConvergenceError(NumericalError):
    """Eigensolver iteration limit reached"""


class SingularSystemError(NumericalError):
    """Linear system singular beyond the constant nullspace"""


class PoissonConvergenceError(NumericalError):
    """Poisson solve did not reach its residual tolerance"""


class ClusterNotResolvedError(NumericalError):
    """No computed eigenvalue falls in an analytic cluster's matching window"""

    def __init__(self, message="cluster not resolved", payload=None):
        super().__init__(message, payload=payload)


class UnsupportedQueryPointError(NumericalError):
    """Query point farther than the kernel support radius from every sample"""

    def __init__(self, message="query point outside kernel support", payload=None):
        super().__init__(message, payload=payload)


class BandwidthWarning(UserWarning):
    """Bandwidth too small for the sampling density"""


def handle_error(error, stream=None):
    """Log an error, report it on stderr and return the process exit code"""
    stream = stream or sys.stderr

    if isinstance(error, PimError):
        if error.exit_code == EXIT_VALIDATION:
            logger.warning(f"Validation error: {error.message}")
        else:
            logger.error(f"Numerical error ({type(error).__name__}): {error.message}")
        print(f"error: {error.message}", file=stream)
        for key, value in (error.payload or {}).items():
            if key in ('spectrum', 'usage'):
                continue
            print(f"  {key}: {value}", file=stream)
        if error.payload and 'usage' in error.payload:
            print(error.payload['usage'], file=stream)
        return error.exit_code

    logger.error(f"Unexpected error: {str(error)}")
    logger.debug(f"Traceback: {traceback.format_exc()}")
    print(f"error: {type(error).__name__}: {error}", file=stream)
    return EXIT_NUMERICAL


def stage_error(stage, error):
    """Prefix an error with the pipeline stage that raised it"""
    if isinstance(error, PimError):
        payload = dict(error.payload or ())
        payload['stage'] = stage
        wrapped = type(error).__new__(type(error))
        PimError.__init__(wrapped, f"[{stage}] {error.message}", error.exit_code, payload)
        return wrapped
    return NumericalError(f"[{stage}] {type(error).__name__}: {error}", payload={'stage': stage})
