"""
The phi-product lattice.

phi(v) = P_v(walk hits o) for the unit-conductance walk on Z^d, truncated: it is
computed on the ball of radius T+1 with the sphere at distance T+1 absorbing at
0 and phi(o) = 1. The weighted network lives on B(o, T) with conductances
c_xy = phi(x) phi(y) on edges inside the ball.

Since phi is unit-harmonic at every x in B_T minus o (its neighbors at
distance T+1 contribute 0), the network walk satisfies

    q(x, y) = c_xy / c_x = p(x, y) phi(y) / phi(x)

exactly at every such x, with p the simple random walk kernel.
"""

import logging
import math
from typing import Any, Dict, Hashable, List, Tuple

from core.cache_manager import MemoTable
from core.linsolve import BoundaryMode, DirichletOperator
from networks.base_network import Network
from networks.generators import Lattice, _parse_tuple
from networks.region import ball_region
from networks.spec import NetworkSpec, parse_spec

logger = logging.getLogger(__name__)

# (d, T) -> (label -> phi) shared across network instances
_PHI_CACHE = MemoTable('phi', max_size=32)


def solve_phi(d: int, truncation_radius: int) -> Dict[Tuple[int, ...], float]:
    """
    Truncated hitting probability of the origin for simple random walk on Z^d.

    Returns:
        Mapping lattice label -> phi on the ball of radius ``truncation_radius``
    """
    def compute() -> Dict[Tuple[int, ...], float]:
        unit = Lattice(parse_spec({'generator': 'lattice', 'params': {'d': d}}))
        region = ball_region(unit, truncation_radius)
        op = DirichletOperator(unit, region, [unit.root], BoundaryMode.ABSORBING)
        x = op.solve(op.rhs({unit.root: 1.0}))
        phi = op.to_function(x, {unit.root: 1.0})
        logger.debug(f"phi oracle Z^{d}, T={truncation_radius}: {len(phi)} vertices")
        return {unit.label(v): val for v, val in phi.items()}

    return _PHI_CACHE.get_or_compute((d, truncation_radius), compute)


class PhiProductLattice(Network):
    """
    Finite network on B(o, T) in Z^d with c_xy = phi(x) phi(y).

    Metadata records the truncation radius, the mean of phi over the root's
    neighbors and the root Green density ``g = 1 / (2d (1 - mean phi))``, so
    the closed-form potential ``g (1 - phi) / phi`` can be evaluated downstream.
    """

    finite = True

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        self.d = int(spec.params.d)
        self.truncation_radius = int(spec.params.truncation_radius)
        self._phi = solve_phi(self.d, self.truncation_radius)
        origin = (0,) * self.d
        ring = [self._phi[nb] for nb in self._unit_neighbors(origin)]
        phi_bar = math.fsum(ring) / len(ring)
        self.metadata.update({
            'd': self.d,
            'truncation_radius': self.truncation_radius,
            'phi_bar': phi_bar,
            'green_root': 1.0 / (2 * self.d * (1.0 - phi_bar)),
        })
        self._init_root()

    def _unit_neighbors(self, label: Tuple[int, ...]) -> List[Tuple[int, ...]]:
        out = []
        for i in range(self.d):
            for step in (1, -1):
                out.append(label[:i] + (label[i] + step,) + label[i + 1:])
        return out

    def default_root(self) -> Tuple[int, ...]:
        return (0,) * self.d

    def has_label(self, label: Hashable) -> bool:
        return (isinstance(label, tuple) and len(label) == self.d
                and sum(abs(a) for a in label) <= self.truncation_radius)

    def label_neighbors(self, label: Tuple[int, ...]) -> List[Tuple[int, ...]]:
        return [nb for nb in self._unit_neighbors(label) if self.has_label(nb)]

    def parse_label(self, obj: Any) -> Tuple[int, ...]:
        return _parse_tuple(obj)

    def label_distance(self, label: Tuple[int, ...]) -> int:
        return sum(abs(a) for a in label)

    def raw_conductance(self, a: Tuple[int, ...], b: Tuple[int, ...]) -> float:
        return self._phi[a] * self._phi[b]

    def phi(self, vid: int) -> float:
        """phi at a vertex id"""
        return self._phi[self.label(vid)]

    def unit_kernel(self, x: int) -> Dict[int, float]:
        """p(x, y) phi(y) / phi(x) over the network neighbors of x"""
        px = self.phi(x)
        return {y: self.phi(y) / (2 * self.d * px) for y, _ in self.neighbors(x)}
