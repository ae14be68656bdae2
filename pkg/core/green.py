"""
Green densities, dipoles and effective resistance.

g_o(x, y) = G_o(x, y) / c_y is the expected number of visits to y before the
walk from x hits the kill set, divided by c_y. With ``A = diag(c) - C`` on the
unknowns, column y of ``A^-1`` is g(., y), so every column is one solve against
a shared factorization.

Truncations. ``killed_green_table`` and ``GreenOracle`` work on the region they
are given and default to the reflecting mode, where the region is a finite
network of its own and Delta g(., y)(o) = 1 holds exactly at every radius.
The stabilized family (``stabilized_green_o``, ``dipole``,
``effective_resistance``) defaults to the absorbing mode with kill set
{o} plus the exterior: entries count visits before o or exit, so they never
decrease as the ball grows and increase to g_o on a recurrent network.
Reflecting truncations stay available through ``mode``; on Z and on trees
they equal g_o at every radius, and on Z^2 their diagonal decreases to g_o at
rate R^-2 where absorbing tables move only logarithmically.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.cache_manager import MemoTable
from core.certificates import LimitCertificate
from core.config import get_global_config
from core.exceptions import TableTooLargeException, VertexNotFoundException
from core.linsolve import BoundaryMode, DirichletOperator
from networks.base_network import Network, path_product_cap
from networks.region import Region, ball_region, vertex_set_region

logger = logging.getLogger(__name__)

_STABILIZED = MemoTable('green.stabilized', max_size=64)


@dataclass(eq=False)
class GreenTable:
    """
    Dense table of Green densities over a region.

    Attributes:
        region: Rows and columns, in ``region.ids`` order
        kill: Kill set; rows and columns there are zero
        matrix: g(x, y) with x the row and y the column
        conductance_sums: c_v per region vertex
        mode: Truncation mode used for the solves
        certificate: Stabilization record when the table approximates g_o
    """
    region: Region
    kill: Tuple[int, ...]
    matrix: np.ndarray
    conductance_sums: np.ndarray
    mode: BoundaryMode = BoundaryMode.REFLECTING
    certificate: Optional[LimitCertificate] = None

    @property
    def net(self) -> Network:
        return self.region.net

    def _pos(self, v: int) -> int:
        try:
            return self.region.index[int(v)]
        except KeyError as e:
            raise VertexNotFoundException(
                f"{self.net.display(int(v))} is outside the Green table", {'id': int(v)}) from e

    def covers(self, ids: Iterable[int]) -> bool:
        return self.region.contains_all(ids)

    def g(self, x: int, y: int) -> float:
        return float(self.matrix[self._pos(x), self._pos(y)])

    def column(self, y: int) -> Dict[int, float]:
        """g(., y) as a vertex function"""
        j = self._pos(y)
        return {int(v): float(self.matrix[i, j]) for i, v in enumerate(self.region.ids)}

    def sub(self, xs: Sequence[int], ys: Sequence[int]) -> np.ndarray:
        rows = [self._pos(x) for x in xs]
        cols = [self._pos(y) for y in ys]
        return self.matrix[np.ix_(rows, cols)]

    def symmetry_defect(self) -> float:
        """max |g(x,y) - g(y,x)| / (1 + |g(x,y)|)"""
        m = self.matrix
        return float(np.max(np.abs(m - m.T) / (1.0 + np.abs(m)))) if m.size else 0.0

    def to_frame(self) -> pd.DataFrame:
        labels = self.region.labels()
        return pd.DataFrame(self.matrix, index=labels, columns=labels)


# ----------------------------------------------------------------------
# Killed tables
# ----------------------------------------------------------------------

def _conductance_sums(net: Network, region: Region) -> np.ndarray:
    return np.array([net.conductance_sum(v) for v in region])


def green_columns(
    net: Network,
    region: Region,
    kill: Iterable[int],
    ys: Sequence[int],
    mode: BoundaryMode = BoundaryMode.REFLECTING,
    operator: Optional[DirichletOperator] = None,
) -> np.ndarray:
    """
    Columns g(., y) for the given ys, on any region size.

    Returns:
        Array of shape (len(region), len(ys)) aligned with ``region.ids``;
        columns for killed ys are zero
    """
    kill_set = sorted(set(int(k) for k in kill))
    op = operator or DirichletOperator(net, region, kill_set, mode)
    live = [y for y in ys if int(y) not in op.known_index]
    out = np.zeros((len(region), len(ys)))
    if not live:
        return out
    for y in live:
        if int(y) not in op.index:
            raise VertexNotFoundException(f"{net.display(int(y))} is outside the region", {'id': int(y)})
    x = op.unit_columns(live)
    rows = np.array([region.index[v] for v in op.unknowns], dtype=np.int64)
    j_live = 0
    for j, y in enumerate(ys):
        if int(y) in op.known_index:
            continue
        out[rows, j] = x[:, j_live]
        j_live += 1
    return out


def killed_green_table(
    net: Network,
    region: Region,
    kill: Iterable[int],
    mode: BoundaryMode = BoundaryMode.REFLECTING,
) -> GreenTable:
    """
    Dense Green table of the walk killed on ``kill`` (and on exit in absorbing mode).

    Raises:
        TableTooLargeException: region above the dense cap
        SingularSystemException: no way to reach the kill set from some component

    Examples:
        >>> t = killed_green_table(z, interval_region(z, 50, 50), [z.root])
        >>> t.g(z.vertex_id(3), z.vertex_id(7))
        3.0
    """
    cap = get_global_config().solver.table_cap
    if len(region) > cap:
        raise TableTooLargeException(
            f"dense Green table on {len(region)} vertices exceeds the cap of {cap}; use green_columns",
            {'vertices': len(region), 'cap': cap})
    kill_t = tuple(sorted(set(int(k) for k in kill)))
    matrix = green_columns(net, region, kill_t, list(region), mode)
    logger.debug(f"Green table on {len(region)} vertices, kill={len(kill_t)}, mode={mode.value}")
    return GreenTable(region, kill_t, matrix, _conductance_sums(net, region), BoundaryMode(mode))


class GreenOracle:
    """
    g(x, y) on a fixed region with columns solved on demand.

    Used where a dense table would be wasteful: Martin tracking, mixture checks
    and tail completions query a handful of columns on large regions.
    """

    def __init__(
        self,
        net: Network,
        region: Region,
        kill: Iterable[int],
        mode: BoundaryMode = BoundaryMode.REFLECTING,
    ):
        self.net = net
        self.region = region
        self.kill = tuple(sorted(set(int(k) for k in kill)))
        self.mode = BoundaryMode(mode)
        self._op = DirichletOperator(net, region, self.kill, self.mode)
        self._columns = MemoTable(f"green.columns.{mode.value}", max_size=4096)

    def covers(self, v: int) -> bool:
        return int(v) in self.region

    def column(self, y: int) -> np.ndarray:
        """g(., y) aligned with ``region.ids``"""
        y = int(y)
        if y not in self.region:
            raise VertexNotFoundException(f"{self.net.display(y)} is outside the Green region", {'id': y})
        return self._columns.get_or_compute(
            y, lambda: green_columns(self.net, self.region, self.kill, [y], self.mode, self._op)[:, 0])

    def value(self, x: int, y: int) -> float:
        if int(x) not in self.region:
            raise VertexNotFoundException(f"{self.net.display(int(x))} is outside the Green region")
        return float(self.column(y)[self.region.index[int(x)]])

    def values(self, xs: Sequence[int], y: int) -> np.ndarray:
        col = self.column(y)
        return np.array([col[self.region.index[int(x)]] for x in xs])


# ----------------------------------------------------------------------
# Stabilized limits
# ----------------------------------------------------------------------

def _check_radii(radii: Sequence[int]) -> List[int]:
    radii = [int(r) for r in radii]
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"radii must be strictly increasing with at least 2 entries, got {radii}")
    if radii[0] < 0:
        raise ValueError("radii must be non-negative")
    return radii


def stabilized_columns(
    net: Network,
    o: int,
    ys: Sequence[int],
    radii: Sequence[int],
    tol: float,
    mode: BoundaryMode = BoundaryMode.ABSORBING,
    what: str = 'g_o columns',
) -> Tuple[Region, np.ndarray, LimitCertificate]:
    """
    Columns g_o(., y) on the inner ball B(root, radii[0]), refined over growing balls.

    The table at each radius is restricted to the inner ball and compared with
    the previous one in max norm; refinement stops once the increment is at
    most ``tol``.

    Returns:
        (inner region, array inner x ys, certificate)
    """
    radii = _check_radii(radii)
    inner = ball_region(net, radii[0])
    if int(o) not in inner:
        raise VertexNotFoundException(f"root {net.display(int(o))} is outside the inner ball")
    for y in ys:
        if int(y) not in inner:
            raise VertexNotFoundException(f"{net.display(int(y))} is outside the inner ball B({radii[0]})")

    cert = LimitCertificate(what=what, tol=tol)
    previous: Optional[np.ndarray] = None
    current = np.zeros((len(inner), len(ys)))
    for R in radii:
        region = ball_region(net, R)
        cols = green_columns(net, region, [o], ys, mode)
        current = cols[[region.index[v] for v in inner], :]
        increment = None if previous is None else float(np.max(np.abs(current - previous), initial=0.0))
        if previous is not None and mode == BoundaryMode.ABSORBING:
            drop = float(np.min(current - previous, initial=0.0))
            if drop < -1e-10:
                logger.warning(f"{what}: absorbing table decreased by {-drop:.3g} at R={R}")
        logger.debug(f"{what}: R={R} increment={increment}")
        previous = current
        if cert.record(R, increment):
            break
    cert.warn_if_open()
    return inner, current, cert


def stabilized_green_o(
    net: Network,
    o: int,
    radii: Sequence[int],
    tol: float,
    mode: BoundaryMode = BoundaryMode.ABSORBING,
) -> GreenTable:
    """
    Approximate g_o on the ball of radius ``radii[0]``.

    Tables are computed on balls of every listed radius until two successive
    ones agree within ``tol``; the default absorbing mode kills at {o} and the
    exterior, so entries never decrease from one radius to the next. A table
    that never gets there is still returned; its certificate has
    ``converged=False`` and the caller decides (``certificate.require_converged()``).

    Examples:
        >>> t = stabilized_green_o(z, z.root, [5, 10, 20], 1e-9, BoundaryMode.REFLECTING)
        >>> t.g(z.vertex_id(3), z.vertex_id(5))
        3.0
    """
    key = (net.spec.canonical_json(), int(o), tuple(int(r) for r in radii), float(tol), BoundaryMode(mode).value)

    def compute() -> GreenTable:
        inner = ball_region(net, int(radii[0]))
        region, matrix, cert = stabilized_columns(net, o, list(inner), radii, tol, mode, what='stabilized g_o')
        if len(region) > 1:
            far = int(region.ids[-1])
            logger.debug(f"path-product cap at {net.display(far)}: {path_product_cap(net, far):.6g}")
        return GreenTable(region, (int(o),), matrix, _conductance_sums(net, region), BoundaryMode(mode), cert)

    return _STABILIZED.get_or_compute(key, compute)


@dataclass
class VertexFunction:
    """Vertex function on a region together with its certificate"""
    values: Dict[int, float]
    region: Region
    certificate: LimitCertificate

    def __getitem__(self, v: int) -> float:
        return self.values[int(v)]


def dipole(
    net: Network,
    o: int,
    y: int,
    radii: Sequence[int],
    tol: float,
    mode: BoundaryMode = BoundaryMode.ABSORBING,
) -> VertexFunction:
    """
    The dipole from o to y: f >= 0, f(o) = 0, Delta f = 1_o - 1_y.

    It equals g_o(., y). Values cover the inner ball; the Laplacian identity is
    certified on the interior of that ball.
    """
    if int(o) == int(y):
        raise ValueError("dipole needs y != o")
    region, cols, cert = stabilized_columns(net, o, [y], radii, tol, mode, what='dipole')
    logger.debug(f"dipole {net.display(int(o))}->{net.display(int(y))}: "
                 f"path-product cap {path_product_cap(net, int(y)):.6g}")
    values = {int(v): float(cols[i, 0]) for i, v in enumerate(region.ids)}
    return VertexFunction(values, region, cert)


def effective_resistance(
    net: Network,
    x: int,
    y: int,
    radii: Sequence[int],
    tol: float,
    mode: BoundaryMode = BoundaryMode.ABSORBING,
    return_certificate: bool = False,
):
    """
    R_eff(x <-> y) = g_x(y, y).

    Returns:
        The resistance, or ``(resistance, certificate)`` when requested
    """
    if int(x) == int(y):
        zero = LimitCertificate(what='effective resistance', tol=tol, converged=True)
        return (0.0, zero) if return_certificate else 0.0
    region, cols, cert = stabilized_columns(net, x, [y], radii, tol, mode, what='effective resistance')
    value = float(cols[region.index[int(y)], 0])
    return (value, cert) if return_certificate else value


def resistance_matrix(table: GreenTable) -> np.ndarray:
    """
    All-pairs effective resistance from a table killed at a single vertex:
    R(x, y) = g(x, x) + g(y, y) - 2 g(x, y).
    """
    if len(table.kill) != 1:
        raise ValueError("resistance_matrix needs a table killed at exactly one vertex")
    d = np.diag(table.matrix)
    r = d[:, None] + d[None, :] - 2.0 * table.matrix
    np.fill_diagonal(r, 0.0)
    return r


def resistance_on(
    net: Network,
    ids: Sequence[int],
    radii: Sequence[int],
    tol: float,
) -> Tuple[Region, np.ndarray, LimitCertificate]:
    """
    Effective resistances between ``ids`` from stabilized reflecting tables killed at the root.

    A reflecting ball only removes paths, so each truncated resistance is at
    least R_eff; refinement over ``radii`` stops once the table moves by at
    most ``tol``. Every resistance combines three table entries, so it moved
    by at most four times the certificate's final increment.

    Returns:
        (region of ``ids`` plus the root, resistance matrix, certificate)
    """
    sub = vertex_set_region(net, ids)
    radii = _check_radii(radii)
    if max(net.distance(v) for v in sub) > radii[0]:
        raise VertexNotFoundException(f"vertex set does not fit in B({radii[0]})")
    inner, cols, cert = stabilized_columns(net, net.root, list(sub), radii, tol, BoundaryMode.REFLECTING,
                                           what='effective resistance matrix')
    matrix = cols[[inner.index[v] for v in sub], :]
    table = GreenTable(sub, (net.root,), matrix, _conductance_sums(net, sub), BoundaryMode.REFLECTING, cert)
    return sub, resistance_matrix(table), cert
