"""
Finite regions and exhaustions.

A region is a finite vertex set containing the root. Its boundary is the set
of members with a neighbor outside; its exterior is the set of outside
vertices adjacent to it. Every solver in ``core`` takes an explicit region.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

import numpy as np

from core.exceptions import NetworkSpecException, VertexNotFoundException
from networks.base_network import Network

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Region:
    """
    Finite vertex set of a network.

    Attributes:
        net: Network the ids belong to
        ids: Sorted vertex ids
        radius: Ball radius when built by ``ball_region``
        shape: Name of the factory that built the region
    """
    net: Network
    ids: np.ndarray
    radius: Optional[int] = None
    shape: str = 'set'

    def __post_init__(self):
        ids = np.unique(np.asarray(self.ids, dtype=np.int64))
        object.__setattr__(self, 'ids', ids)
        if ids.size == 0 or ids[0] != self.net.root:
            raise VertexNotFoundException("region must contain the root", {'shape': self.shape})

    @cached_property
    def index(self) -> Dict[int, int]:
        """Vertex id -> position in ``ids``"""
        return {int(v): i for i, v in enumerate(self.ids)}

    @cached_property
    def members(self) -> frozenset:
        return frozenset(int(v) for v in self.ids)

    def __contains__(self, vid: int) -> bool:
        return int(vid) in self.index

    def __len__(self) -> int:
        return int(self.ids.size)

    def __iter__(self) -> Iterator[int]:
        return (int(v) for v in self.ids)

    @cached_property
    def boundary(self) -> List[int]:
        """Members with at least one neighbor outside the region"""
        members = self.members
        return [v for v in self if any(z not in members for z, _ in self.net.neighbors(v))]

    @cached_property
    def interior(self) -> List[int]:
        """Members whose neighbors all lie in the region"""
        edge = set(self.boundary)
        return [v for v in self if v not in edge]

    @cached_property
    def exterior(self) -> List[int]:
        """Outside vertices adjacent to the region, sorted"""
        members = self.members
        out = set()
        for v in self.boundary:
            out.update(z for z, _ in self.net.neighbors(v) if z not in members)
        return sorted(out)

    @cached_property
    def closure(self) -> List[int]:
        """Region plus its exterior, sorted"""
        return sorted(self.members.union(self.exterior))

    def labels(self) -> List[str]:
        return [self.net.display(v) for v in self]

    def contains_all(self, ids: Iterable[int]) -> bool:
        members = self.members
        return all(int(v) in members for v in ids)

    def describe(self) -> Dict[str, object]:
        return {
            'shape': self.shape,
            'radius': self.radius,
            'vertices': len(self),
            'boundary': len(self.boundary),
        }


# ----------------------------------------------------------------------
# Region factories
# ----------------------------------------------------------------------

def ball_region(net: Network, r: int) -> Region:
    """
    Breadth-first ball B(o, r).

    Args:
        net: Network
        r: Radius, r >= 0

    Returns:
        Region with v in region iff distance(o, v) <= r. On finite networks a
        radius beyond the diameter returns the whole network with empty boundary.

    Examples:
        >>> len(ball_region(z2, 2))
        13
    """
    if r < 0:
        raise ValueError(f"ball radius must be non-negative, got {r}")
    return Region(net, np.arange(net.layer_end(r)), radius=r, shape='ball')


def _coordinates(net: Network, vid: int) -> tuple:
    label = net.label(vid)
    if isinstance(label, tuple):
        return label
    if isinstance(label, int):
        return (label,)
    raise NetworkSpecException(f"{net.spec.generator.value} has no coordinates", field='generator')


def box_region(net: Network, r: int) -> Region:
    """
    Lattice box max_i |x_i - o_i| <= r.

    Only for coordinate generators (lattices, lines). The box sits inside the
    ball of radius d * r, which bounds the search.
    """
    if r < 0:
        raise ValueError(f"box radius must be non-negative, got {r}")
    origin = _coordinates(net, net.root)
    d = len(origin)
    candidates = range(net.layer_end(d * r))
    ids = [v for v in candidates
           if max(abs(a - b) for a, b in zip(_coordinates(net, v), origin)) <= r]
    return Region(net, np.array(ids), radius=None, shape='box')


def interval_region(net: Network, left: int, right: int) -> Region:
    """Integer interval [root - left, root + right] on a line network"""
    if left < 0 or right < 0:
        raise ValueError(f"interval extents must be non-negative, got ({left}, {right})")
    origin = net.label(net.root)
    if not isinstance(origin, int):
        raise NetworkSpecException("intervals need an integer-labelled line", field='generator')
    ids = []
    for k in range(origin - left, origin + right + 1):
        if net.has_label(k):
            ids.append(net.vertex_id(k))
    return Region(net, np.array(ids), shape='interval')


def vertex_set_region(net: Network, ids: Iterable[int], shape: str = 'set') -> Region:
    """Region from explicit ids; the root is added if missing"""
    members = set(int(v) for v in ids)
    members.add(net.root)
    return Region(net, np.array(sorted(members)), shape=shape)


def level_set_region(net: Network, h: Mapping[int, float], n: int) -> Region:
    """
    Root component of {v in B(o, n) : h(v) <= n}.

    ``h`` must be defined on the ball; vertices where it is missing are skipped.
    """
    ball = ball_region(net, n)
    allowed = {v for v in ball if v in h and h[v] <= n}
    seen = {net.root}
    frontier = [net.root]
    while frontier:
        nxt = []
        for v in frontier:
            for z, _ in net.neighbors(v):
                if z in allowed and z not in seen:
                    seen.add(z)
                    nxt.append(z)
        frontier = nxt
    return Region(net, np.array(sorted(seen)), radius=None, shape='level')


def interior_region(net: Network, domain: Iterable[int]) -> Region:
    """Members of ``domain`` whose neighbors are all in ``domain`` (plus the root)"""
    dom = set(int(v) for v in domain)
    ids = [v for v in dom if all(z in dom for z, _ in net.neighbors(v))]
    return vertex_set_region(net, ids, shape='interior')


# ----------------------------------------------------------------------
# Exhaustions
# ----------------------------------------------------------------------

@dataclass
class Exhaustion:
    """
    Nested sequence of regions D_0 subset D_1 subset ... built lazily.

    Attributes:
        name: Shape name recorded in certificates
        indices: Parameters n passed to the factory, increasing
        factory: n -> Region
    """
    name: str
    indices: List[int]
    factory: Callable[[int], Region] = field(repr=False)

    def __post_init__(self):
        if not self.indices:
            raise ValueError("exhaustion needs at least one index")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError(f"exhaustion indices must increase, got {self.indices}")

    def __len__(self) -> int:
        return len(self.indices)

    def region(self, i: int) -> Region:
        return self.factory(self.indices[i])

    def __iter__(self) -> Iterator[Region]:
        for n in self.indices:
            yield self.factory(n)


def ball_exhaustion(net: Network, radii: Sequence[int]) -> Exhaustion:
    return Exhaustion('ball', list(radii), lambda n: ball_region(net, n))


def box_exhaustion(net: Network, radii: Sequence[int]) -> Exhaustion:
    return Exhaustion('box', list(radii), lambda n: box_region(net, n))


def asymmetric_exhaustion(net: Network, lam: float, ns: Sequence[int]) -> Exhaustion:
    """D_n = [-ceil(lam * n), n] on the integer line"""
    if lam <= 0:
        raise ValueError(f"asymmetry ratio must be positive, got {lam}")
    return Exhaustion(
        f'asym({lam:g})', list(ns), lambda n: interval_region(net, int(math.ceil(lam * n)), n))


def level_set_exhaustion(net: Network, h: Mapping[int, float], ns: Sequence[int]) -> Exhaustion:
    """D_n = {v in B_n : h(v) <= n} for a target potential ``h``"""
    return Exhaustion('level', list(ns), lambda n: level_set_region(net, h, n))


def make_exhaustion(
    net: Network,
    shape: str,
    indices: Sequence[int],
    lam: float = 4.0,
    h: Optional[Mapping[int, float]] = None,
) -> Exhaustion:
    """
    Exhaustion factory by shape name: ``ball``, ``box``, ``asym`` or ``level``.

    Raises:
        ValueError: unknown shape, or ``level`` without a target potential
    """
    if shape == 'ball':
        return ball_exhaustion(net, indices)
    if shape == 'box':
        return box_exhaustion(net, indices)
    if shape == 'asym':
        return asymmetric_exhaustion(net, lam, indices)
    if shape == 'level':
        if h is None:
            raise ValueError("level-set exhaustions need a target potential")
        return level_set_exhaustion(net, h, indices)
    raise ValueError(f"unknown exhaustion shape '{shape}'")
