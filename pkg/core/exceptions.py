"""
Custom exception hierarchy for recurnet.

Every failure raised by the library derives from ``RecurnetException`` so the
CLI can catch one type, map it to an ``ErrorCode`` and emit a machine-readable
error document.
"""

from enum import Enum
from typing import Any, Dict, Optional


class RecurnetException(Exception):
    """Base exception for all recurnet errors"""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = dict(context or {})

    def to_dict(self) -> Dict[str, Any]:
        """Serializable view used by the CLI error report"""
        return {
            'error': type(self).__name__,
            'code': error_code_for(self).value,
            'message': self.message,
            'context': self.context,
        }


class NetworkException(RecurnetException):
    """Network construction or query errors"""
    pass


class NetworkSpecException(NetworkException):
    """Network spec failed validation"""

    def __init__(self, message: str, field: str = 'spec', context: Optional[Dict[str, Any]] = None):
        super().__init__(message, {**(context or {}), 'field': field})
        self.field = field


class VertexNotFoundException(NetworkException):
    """A vertex label or id does not exist in the network"""
    pass


class SolverException(RecurnetException):
    """Linear solve errors"""
    pass


class SingularSystemException(SolverException):
    """Dirichlet system has an interior component cut off from the absorbing set"""
    pass


class NotConvergedException(SolverException):
    """A limit did not reach its tolerance inside the computed range"""

    def __init__(self, message: str, certificate: Any = None, context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.certificate = certificate


class RegionTooSmallException(SolverException):
    """Escape mass through the region edge is above the configured bound"""
    pass


class TableTooLargeException(SolverException):
    """Dense table requested on a region above the dense cap"""
    pass


class PotentialException(RecurnetException):
    """Potential construction errors"""
    pass


class InvalidPotentialException(PotentialException):
    """A function fails the defining properties of a potential"""
    pass


class SimulationException(RecurnetException):
    """h-process or spanning tree sampling errors"""
    pass


class GameSolverException(RecurnetException):
    """Zero-sum game LP errors"""
    pass


class ConfigurationException(RecurnetException):
    """Configuration errors"""
    pass


class ErrorCode(str, Enum):
    """Structured error codes for CLI error reports"""
    # Input
    INVALID_SPEC = "INVALID_SPEC"
    INVALID_CONFIG = "INVALID_CONFIG"
    VERTEX_NOT_FOUND = "VERTEX_NOT_FOUND"
    # Numerics
    SINGULAR_SYSTEM = "SINGULAR_SYSTEM"
    NOT_CONVERGED = "NOT_CONVERGED"
    REGION_TOO_SMALL = "REGION_TOO_SMALL"
    TABLE_TOO_LARGE = "TABLE_TOO_LARGE"
    INVALID_POTENTIAL = "INVALID_POTENTIAL"
    SIMULATION_FAILED = "SIMULATION_FAILED"
    LP_FAILED = "LP_FAILED"
    # System
    INTERNAL_ERROR = "INTERNAL_ERROR"


_CODES = [
    (NetworkSpecException, ErrorCode.INVALID_SPEC),
    (VertexNotFoundException, ErrorCode.VERTEX_NOT_FOUND),
    (ConfigurationException, ErrorCode.INVALID_CONFIG),
    (SingularSystemException, ErrorCode.SINGULAR_SYSTEM),
    (NotConvergedException, ErrorCode.NOT_CONVERGED),
    (RegionTooSmallException, ErrorCode.REGION_TOO_SMALL),
    (TableTooLargeException, ErrorCode.TABLE_TOO_LARGE),
    (InvalidPotentialException, ErrorCode.INVALID_POTENTIAL),
    (SimulationException, ErrorCode.SIMULATION_FAILED),
    (GameSolverException, ErrorCode.LP_FAILED),
]


def error_code_for(exc: BaseException) -> ErrorCode:
    """Map an exception instance to its ErrorCode (most specific first)"""
    for exc_type, code in _CODES:
        if isinstance(exc, exc_type):
            return code
    return ErrorCode.INTERNAL_ERROR
