"""
Harmonic measures on finite sets.

omega_v^A(z) = P_v(X_{tau_A} = z) is computed four ways:

- ``direct``: one Dirichlet solve per z in A with boundary 1_z
- ``det``: Cramer's rule on the Green matrix (g_o(x, y))_{x, y in A minus o}
- ``limit``: sphere averages of omega_v^A for v on growing spheres, with a
  total-variation certificate for the limit v -> infinity
- ``mc``: last-exit frequencies of the h-process (see ``core.hprocess``)

The support A is always sorted by vertex id, so permuting the input set
cannot change any output.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.exceptions import (
    NotConvergedException,
    RegionTooSmallException,
    SingularSystemException,
    VertexNotFoundException,
)
from core.green import GreenTable, stabilized_columns
from core.linsolve import BoundaryMode, DirichletOperator
from networks.base_network import Network
from networks.region import Region, ball_region
from utils.math_helpers import total_variation
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

ESCAPE_TOL = 1e-10
SINGULAR_RATIO = 1e-12
COLUMN_BLOCK = 256


class MeasureRoute(str, Enum):
    """Computation path, recorded as the provenance of a measure"""
    DIRECT = "direct"
    DET = "det"
    LIMIT = "limit"
    MC = "mc"

    @property
    def provenance(self) -> str:
        return {
            MeasureRoute.DIRECT: 'direct-solve',
            MeasureRoute.DET: 'determinant',
            MeasureRoute.LIMIT: 'limit',
            MeasureRoute.MC: 'last-exit-MC',
        }[self]


@dataclass
class MeasureOnSet:
    """
    Probability measure on a finite vertex set.

    Attributes:
        net: Network
        support: Sorted vertex ids
        weights: Mass per support vertex
        route: How the measure was computed
        details: Route-specific diagnostics (escape mass, condition number,
            sample counts and bias bounds)
    """
    net: Network
    support: Tuple[int, ...]
    weights: np.ndarray
    route: MeasureRoute
    details: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.support) != self.weights.size:
            raise ValueError("support and weights differ in length")

    @property
    def total(self) -> float:
        return math.fsum(self.weights)

    def is_valid(self, tol: float = 1e-9) -> bool:
        """Weights >= -1e-12 and total mass 1 within ``tol``"""
        return bool(np.all(self.weights >= -1e-12)) and abs(self.total - 1.0) <= tol

    def __getitem__(self, v: int) -> float:
        return self.as_dict().get(int(v), 0.0)

    def as_dict(self) -> Dict[int, float]:
        return {v: float(w) for v, w in zip(self.support, self.weights)}

    def tv(self, other: 'MeasureOnSet') -> float:
        return total_variation(self.as_dict(), other.as_dict())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'vertex': [self.net.display(v) for v in self.support],
            'weight': self.weights,
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            'route': self.route.value,
            'provenance': self.route.provenance,
            'support': [self.net.display(v) for v in self.support],
            'weights': [float(w) for w in self.weights],
            'total': self.total,
            'details': self.details,
        }


@dataclass
class ConvergenceCertificate:
    """
    Sphere record for a harmonic measure from infinity.

    Attributes:
        radii: Sphere radii
        sphere_sizes: Number of vertices per sphere
        spreads: Max pairwise TV of omega_v^A within each sphere
        gaps: TV between successive sphere averages
        contractions: spreads[n+1] / spreads[n]
        q: q_n = max TV of the harmonic measure of sphere n seen from two
            vertices of sphere n+1
        tol: Target spread
        converged: Final spread within ``tol``
    """
    radii: List[int]
    sphere_sizes: List[int]
    spreads: List[float]
    gaps: List[float]
    contractions: List[Optional[float]]
    q: List[float]
    tol: float
    converged: bool

    @property
    def monotone(self) -> bool:
        """Spreads non-increasing along the radii"""
        return all(b <= a + 1e-15 for a, b in zip(self.spreads, self.spreads[1:]))

    def require_converged(self) -> 'ConvergenceCertificate':
        if not self.converged:
            raise NotConvergedException(
                f"harmonic measure from infinity: spread {self.spreads[-1]:.3g} above {self.tol:g}",
                certificate=self)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            'radii': self.radii,
            'sphere_sizes': self.sphere_sizes,
            'spreads': self.spreads,
            'gaps': self.gaps,
            'contractions': self.contractions,
            'q': self.q,
            'tol': self.tol,
            'converged': self.converged,
            'monotone': self.monotone,
        }


def _sorted_set(net: Network, A: Iterable[int]) -> Tuple[int, ...]:
    support = tuple(sorted(set(int(a) for a in A)))
    if not support:
        raise ValueError("harmonic measure needs a nonempty set")
    return support


# ----------------------------------------------------------------------
# Direct route
# ----------------------------------------------------------------------

def hitting_distribution(
    net: Network,
    A: Sequence[int],
    starts: Sequence[int],
    region: Region,
    mode: BoundaryMode = BoundaryMode.REFLECTING,
    operator: Optional[DirichletOperator] = None,
) -> np.ndarray:
    """
    omega_v^A(z) for every start v and z in A, from one factorization.

    Returns:
        Array of shape (len(starts), len(A)); rows for starts in A are unit vectors
    """
    support = list(A)
    op = operator or DirichletOperator(net, region, support, mode)
    out = np.zeros((len(starts), len(support)))
    free = [i for i, v in enumerate(starts) if int(v) not in op.known_index]
    for i, v in enumerate(starts):
        k = op.known_index.get(int(v))
        if k is not None:
            out[i, k] = 1.0
        elif int(v) not in op.index:
            raise VertexNotFoundException(f"{net.display(int(v))} is outside the region", {'id': int(v)})
    if free and op.size:
        rows = [op.index[int(starts[i])] for i in free]
        blocks = [list(range(j, min(j + COLUMN_BLOCK, len(support)))) for j in range(0, len(support), COLUMN_BLOCK)]

        def solve_block(cols: List[int]) -> np.ndarray:
            b = op.coupling[:, cols].toarray()
            return op.solve(b)[rows, :]

        for cols, block in zip(blocks, parallel_map(solve_block, blocks, label='harmonic block')):
            out[np.ix_(free, cols)] = block
    return out


def harmonic_measure_exact(
    net: Network,
    A: Iterable[int],
    v: int,
    region: Region,
    mode: BoundaryMode = BoundaryMode.REFLECTING,
    escape_tol: float = ESCAPE_TOL,
) -> MeasureOnSet:
    """
    omega_v^A by direct absorbing solves.

    In reflecting mode the region is a finite network and the walk hits A
    surely. In absorbing mode the mass lost through the region edge is
    reported and must stay below ``escape_tol``.

    Raises:
        RegionTooSmallException: escape mass above ``escape_tol``

    Examples:
        >>> m = harmonic_measure_exact(z, ids_for(z, [0, 3]), z.vertex_id(1), interval_region(z, 10, 10))
        >>> m[z.vertex_id(3)]
        0.3333333333333333
    """
    support = _sorted_set(net, A)
    if not region.contains_all(support) or int(v) not in region:
        raise VertexNotFoundException("set and start must lie in the region")
    row = hitting_distribution(net, support, [int(v)], region, mode)[0]
    escape = max(0.0, 1.0 - math.fsum(row))
    if escape > escape_tol:
        raise RegionTooSmallException(
            f"escape mass {escape:.3e} through the region edge exceeds {escape_tol:g}",
            {'escape_mass': escape, 'vertices': len(region)})
    logger.debug(f"omega_{net.display(int(v))} on {len(support)} vertices, escape {escape:.3e}")
    return MeasureOnSet(net, support, row, MeasureRoute.DIRECT,
                        {'escape_mass': escape, 'start': net.display(int(v)), 'mode': BoundaryMode(mode).value})


# ----------------------------------------------------------------------
# Determinant route
# ----------------------------------------------------------------------

def cramer_weights(matrix: np.ndarray, rhs: np.ndarray) -> Tuple[np.ndarray, Dict[str, float]]:
    """
    Solve ``M w = rhs`` entrywise by ratios of determinants.

    Each determinant comes from an LU factorization via ``slogdet``. A
    Hadamard ratio |det M| / prod ||M_j|| below 1e-12 counts as singular.

    Raises:
        SingularSystemException: M numerically singular
    """
    n = matrix.shape[0]
    sign, logdet = np.linalg.slogdet(matrix)
    norms = np.linalg.norm(matrix, axis=0)
    hadamard = math.exp(logdet - float(np.sum(np.log(norms)))) if sign != 0 and np.all(norms > 0) else 0.0
    if hadamard < SINGULAR_RATIO:
        raise SingularSystemException(
            f"Green matrix is numerically singular (Hadamard ratio {hadamard:.3e})",
            {'size': n, 'hadamard_ratio': hadamard})
    cond = float(np.linalg.cond(matrix))
    logger.debug(f"Cramer on {n}x{n}: log|det|={logdet:.6g}, condition {cond:.3e}")
    weights = np.zeros(n)
    for j in range(n):
        replaced = matrix.copy()
        replaced[:, j] = rhs
        s_j, ld_j = np.linalg.slogdet(replaced)
        weights[j] = 0.0 if s_j == 0 else s_j * sign * math.exp(ld_j - logdet)
    return weights, {'log_abs_det': float(logdet), 'condition': cond, 'hadamard_ratio': hadamard}


ColumnLike = Union[Mapping[int, float], Callable[[int], float]]


def _column_getter(column: ColumnLike) -> Callable[[int], float]:
    if callable(column):
        return column
    return column.__getitem__


def harmonic_measure_det(gtab: GreenTable, column: ColumnLike, A: Iterable[int]) -> MeasureOnSet:
    """
    Harmonic measure on A by Cramer's rule.

    With M = (g_o(x, y)) over A' = A minus o and b(x) = column(x) for x in A',
    omega(y) = det(M with column y replaced by b) / det(M) for y in A', and
    omega(o) = 1 - sum of the others. With column = g_o(., v) this is
    omega_v^A; with column = a potential h it is the harmonic measure from
    infinity when h is the unique potential.

    For a killed exhaustion potential the Cramer weights solve
    sum_y g(x, y) w(y) = h(x) with w(y) = P(Y_L = y) / f(y), f = 1 - h/H, so
    each weight is multiplied by f(y) to give the last-exit law of the
    killed h-process.

    Raises:
        SingularSystemException: M numerically singular
        ValueError: o not in A, or |A| < 2
    """
    net = gtab.net
    if len(gtab.kill) != 1:
        raise ValueError("determinant route needs a table killed at a single vertex")
    o = gtab.kill[0]
    support = _sorted_set(net, A)
    if o not in support or len(support) < 2:
        raise ValueError("A must contain the kill vertex and at least one other vertex")
    if not gtab.covers(support):
        raise VertexNotFoundException("Green table does not cover A")
    rest = [a for a in support if a != o]
    get = _column_getter(column)
    rhs = np.array([float(get(x)) for x in rest])
    weights, diag = cramer_weights(gtab.sub(rest, rest), rhs)
    if getattr(column, 'killed_level', None) is not None:
        weights = weights * np.array([column.escape_factor(x) for x in rest])
        diag['escape_corrected'] = True
    by_vertex = dict(zip(rest, weights))
    by_vertex[o] = 1.0 - math.fsum(weights)
    full = np.array([by_vertex[a] for a in support])
    return MeasureOnSet(net, support, full, MeasureRoute.DET, diag)


def harmonic_measure_two_point(gtab: GreenTable, v: int, y: int) -> float:
    """omega_v^{{o, y}}(y) = g_o(v, y) / g_o(y, y)"""
    g_yy = gtab.g(y, y)
    if g_yy <= 0:
        raise SingularSystemException(f"g_o(y, y) = {g_yy} at {gtab.net.display(int(y))}")
    return gtab.g(v, y) / g_yy


def harmonic_measure_root_shift(
    net: Network,
    h: Any,
    A: Iterable[int],
    radii: Sequence[int],
    tol: float,
) -> MeasureOnSet:
    """
    Harmonic measure from infinity by the determinant route for any finite A.

    The root moves to o~ = the smallest id in A; the potential is transferred
    with ``root_transfer`` and the Green matrix is g_{o~} on A minus o~. When
    o is already in A, o~ = o and nothing moves. Green columns come from
    stabilized reflecting tables; their certificate is kept in the diagnostics.

    Raises:
        NotConvergedException: ``h`` carries an open refinement certificate
    """
    from core.potentials import root_transfer

    if hasattr(h, 'require_converged'):
        h.require_converged()

    support = _sorted_set(net, A)
    new_root = support[0]
    rest = [a for a in support if a != new_root]
    if not rest:
        return MeasureOnSet(net, support, np.ones(1), MeasureRoute.DET, {'shifted_root': net.display(new_root)})
    transferred = root_transfer(net, h, new_root, radii, tol) if new_root != net.root else h
    inner, cols, cert = stabilized_columns(net, new_root, rest, radii, tol, BoundaryMode.REFLECTING,
                                           what='root-shift Green matrix')
    matrix = cols[[inner.index[a] for a in rest], :]
    rhs = np.array([transferred(a) for a in rest])
    weights, diag = cramer_weights(matrix, rhs)
    by_vertex = dict(zip(rest, weights))
    by_vertex[new_root] = 1.0 - math.fsum(weights)
    diag.update({'shifted_root': net.display(new_root), 'green_certificate': cert.to_dict()})
    return MeasureOnSet(net, support, np.array([by_vertex[a] for a in support]), MeasureRoute.DET, diag)


# ----------------------------------------------------------------------
# Limit route
# ----------------------------------------------------------------------

def _max_pairwise_tv(rows: np.ndarray) -> float:
    if rows.shape[0] < 2:
        return 0.0
    worst = 0.0
    for i in range(rows.shape[0] - 1):
        tv = 0.5 * np.abs(rows[i + 1:] - rows[i]).sum(axis=1)
        worst = max(worst, float(tv.max()))
    return worst


def sphere_contraction(net: Network, r_inner: int, r_outer: int) -> float:
    """
    q = max over v1, v2 on sphere r_outer of TV(omega_{v1}, omega_{v2}) on sphere r_inner.

    Solved on the reflecting ball of radius 2 * r_outer.
    """
    inner = net.sphere(r_inner)
    outer = net.sphere(r_outer)
    region = ball_region(net, 2 * r_outer)
    rows = hitting_distribution(net, inner, outer, region)
    return _max_pairwise_tv(rows)


def harmonic_measure_infinity(
    net: Network,
    A: Iterable[int],
    radii: Sequence[int],
    tol: float,
    ball_factor: int = 4,
    with_contractions: bool = True,
) -> Tuple[MeasureOnSet, ConvergenceCertificate]:
    """
    Harmonic measure from infinity by averages over growing spheres.

    omega_v^A is solved for every v of a reflecting ball of radius
    ``ball_factor * max(radii)`` with one factorization; each sphere
    contributes its within-sphere spread and its average measure. The result
    is the final sphere's average; it is certified once the final spread is
    at most ``tol``. A plateau above ``tol`` is reported with
    ``converged=False``, never raised.

    Examples:
        >>> m, cert = harmonic_measure_infinity(z2, [o, z2.vertex_id((1, 0))], [8, 16, 32], 0.05)
        >>> round(m[z2.vertex_id((1, 0))], 3)
        0.5
    """
    support = _sorted_set(net, A)
    radii = [int(r) for r in radii]
    if not radii or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"radii must be strictly increasing, got {radii}")
    if max(net.distance(a) for a in support) >= radii[0]:
        raise RegionTooSmallException("spheres must lie outside the set A", {'radii': radii})

    region = ball_region(net, ball_factor * radii[-1])
    spheres = [net.sphere(r) for r in radii]
    if any(not s for s in spheres):
        raise RegionTooSmallException("an empty sphere: the network ends before the largest radius")
    op = DirichletOperator(net, region, list(support), BoundaryMode.REFLECTING)
    starts = [v for s in spheres for v in s]
    table = hitting_distribution(net, support, starts, region, operator=op)

    spreads: List[float] = []
    averages: List[np.ndarray] = []
    pos = 0
    for r, s in zip(radii, spheres):
        rows = table[pos:pos + len(s)]
        pos += len(s)
        spreads.append(_max_pairwise_tv(rows))
        averages.append(rows.mean(axis=0))
        logger.debug(f"sphere r={r}: {len(s)} vertices, spread {spreads[-1]:.3e}")

    gaps = [float(0.5 * np.abs(b - a).sum()) for a, b in zip(averages, averages[1:])]
    contractions = [b / a if a > 0 else None for a, b in zip(spreads, spreads[1:])]
    q: List[float] = []
    if with_contractions:
        q = parallel_map(lambda pair: sphere_contraction(net, *pair), list(zip(radii, radii[1:])), label='contraction')

    converged = spreads[-1] <= tol
    cert = ConvergenceCertificate(radii, [len(s) for s in spheres], spreads, gaps, contractions,
                                  [float(x) for x in q], tol, converged)
    if not converged:
        logger.warning(f"harmonic measure from infinity not certified: final spread {spreads[-1]:.3g} > {tol:g}")
    measure = MeasureOnSet(net, support, averages[-1], MeasureRoute.LIMIT,
                           {'ball_radius': ball_factor * radii[-1], 'converged': converged})
    return measure, cert


def harmonic_measure_mc(net: Network, h: Any, A: Iterable[int], n_paths: int, seed: int, rule=None) -> MeasureOnSet:
    """Last-exit frequencies of h-process paths on A"""
    from core.hprocess import StopRule, last_exit_distribution, simulate_paths
    from networks.region import vertex_set_region

    support = _sorted_set(net, A)
    D = vertex_set_region(net, support)
    result = simulate_paths(net, h, rule or StopRule(observation=D), n_paths, seed)
    return last_exit_distribution(result, support)
