"""
Convergence certificates attached to every computed limit.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from core.exceptions import NotConvergedException

logger = logging.getLogger(__name__)


@dataclass
class LimitCertificate:
    """
    Record of a refinement sequence.

    Attributes:
        what: Name of the limit being certified
        radii: Truncation parameters, in order
        increments: Max-norm change between successive truncations
        tol: Target tolerance
        converged: True once an increment fell to ``tol`` or below
        achieved_radius: Truncation at which convergence was declared (or the last one)
    """
    what: str
    radii: List[int] = field(default_factory=list)
    increments: List[float] = field(default_factory=list)
    tol: float = 0.0
    converged: bool = False
    achieved_radius: Optional[int] = None

    @property
    def final_increment(self) -> Optional[float]:
        return self.increments[-1] if self.increments else None

    def record(self, radius: int, increment: Optional[float]) -> bool:
        """Append one step; returns True when it meets the tolerance"""
        self.radii.append(radius)
        self.achieved_radius = radius
        if increment is None:
            return False
        self.increments.append(float(increment))
        if increment <= self.tol:
            self.converged = True
        return self.converged

    def require_converged(self) -> 'LimitCertificate':
        if not self.converged:
            raise NotConvergedException(
                f"{self.what} did not reach tolerance {self.tol:g} "
                f"(last increment {self.final_increment})",
                certificate=self,
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            'what': self.what,
            'radii': list(self.radii),
            'increments': list(self.increments),
            'final_increment': self.final_increment,
            'tol': self.tol,
            'converged': self.converged,
            'achieved_radius': self.achieved_radius,
        }

    def warn_if_open(self) -> None:
        if not self.converged:
            logger.warning(
                f"{self.what} not converged: last increment {self.final_increment} > tol {self.tol:g} "
                f"at radius {self.achieved_radius}")
