"""
Dirichlet problems on finite regions.

Unknowns are the region minus its absorbing set. With ``Delta f(v) =
sum_x c_vx (f(x) - f(v))`` prescribed on the unknowns, the system is

    A f = -source + C_known f_known  (+ exterior_value * c_out in absorbing mode)

where ``A = diag(c) - C`` restricted to the unknowns. In ``absorbing`` mode
edges leaving the region stay in the diagonal and lead to the exterior value,
so the walk is killed on exit; in ``reflecting`` mode they are dropped and the
region is the induced finite subnetwork.

Small systems are factorized once with SuperLU and reused for every right-hand
side; large ones go through Jacobi-preconditioned conjugate gradients.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, cg, splu

from core.config import get_global_config
from core.exceptions import NotConvergedException, SingularSystemException
from networks.base_network import Network
from networks.region import Region
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)


class BoundaryMode(str, Enum):
    """How a region treats edges that leave it"""
    ABSORBING = "absorbing"
    REFLECTING = "reflecting"


@dataclass
class DirichletProblem:
    """
    Boundary values on an absorbing set plus a prescribed Laplacian elsewhere.

    Attributes:
        region: Finite region
        boundary: Absorbing vertex -> value; vertices must lie in the region
        source: Interior vertex -> prescribed Delta f(v); missing vertices get 0
        mode: Treatment of edges leaving the region
        exterior_value: Value outside the region in absorbing mode
    """
    region: Region
    boundary: Dict[int, float]
    source: Dict[int, float] = field(default_factory=dict)
    mode: BoundaryMode = BoundaryMode.ABSORBING
    exterior_value: float = 0.0


class DirichletOperator:
    """
    Assembled and factorized Dirichlet Laplacian for one (region, absorbing set).

    Many right-hand sides share a single factorization, which is what Green
    tables and harmonic measures need.
    """

    def __init__(
        self,
        net: Network,
        region: Region,
        absorbing: Sequence[int],
        mode: BoundaryMode = BoundaryMode.ABSORBING,
    ):
        self.net = net
        self.region = region
        self.mode = BoundaryMode(mode)
        self.absorbing = sorted(set(int(v) for v in absorbing))
        for v in self.absorbing:
            if v not in region:
                raise ValueError(f"absorbing vertex {net.display(v)} is outside the region")
        absorbing_set = set(self.absorbing)
        self.unknowns = [v for v in region if v not in absorbing_set]
        self.index = {v: i for i, v in enumerate(self.unknowns)}
        self.known_index = {v: i for i, v in enumerate(self.absorbing)}

        self._assemble()
        self._check_nonsingular()
        self._factorize()

    @property
    def size(self) -> int:
        return len(self.unknowns)

    # ------------------------------------------------------------------
    # Assembly
    # ------------------------------------------------------------------

    def _assemble(self) -> None:
        n = len(self.unknowns)
        rows: List[int] = []
        cols: List[int] = []
        vals: List[float] = []
        k_rows: List[int] = []
        k_cols: List[int] = []
        k_vals: List[float] = []
        diag = np.zeros(n)
        c_out = np.zeros(n)
        absorbing_mode = self.mode == BoundaryMode.ABSORBING

        for i, v in enumerate(self.unknowns):
            for z, c in self.net.neighbors(v):
                j = self.index.get(z)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
                    vals.append(-c)
                    diag[i] += c
                    continue
                k = self.known_index.get(z)
                if k is not None:
                    k_rows.append(i)
                    k_cols.append(k)
                    k_vals.append(c)
                    diag[i] += c
                elif absorbing_mode:
                    c_out[i] += c
                    diag[i] += c

        offdiag = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.matrix = (offdiag + sparse.diags(diag)).tocsc()
        self.coupling = sparse.csr_matrix((k_vals, (k_rows, k_cols)), shape=(n, len(self.absorbing)))
        self.c_out = c_out
        self.diagonal = diag
        self._offdiag = offdiag

    def _check_nonsingular(self) -> None:
        if not self.unknowns:
            return
        leak = np.asarray(self.coupling.sum(axis=1)).ravel() + self.c_out
        n_comp, labels = connected_components(self._offdiag, directed=False)
        leaking = np.zeros(n_comp, dtype=bool)
        leaking[labels[leak > 0]] = True
        if not leaking.all():
            bad = int(np.flatnonzero(~leaking)[0])
            witness = self.unknowns[int(np.flatnonzero(labels == bad)[0])]
            raise SingularSystemException(
                f"interior component containing {self.net.display(witness)} never reaches the absorbing set",
                {'components': int(n_comp), 'isolated': int((~leaking).sum())},
            )

    def _factorize(self) -> None:
        cfg = get_global_config().solver
        self._lu = None
        self._jacobi: Optional[LinearOperator] = None
        if not self.unknowns:
            return
        if self.size <= cfg.direct_limit:
            self._lu = splu(self.matrix)
            logger.debug(f"splu on {self.size} unknowns ({self.mode.value})")
        else:
            inv = 1.0 / self.diagonal
            self._jacobi = LinearOperator(
                self.matrix.shape, matvec=lambda x: inv * x, dtype=float)
            logger.debug(f"cg on {self.size} unknowns ({self.mode.value})")

    # ------------------------------------------------------------------
    # Solves
    # ------------------------------------------------------------------

    def rhs(
        self,
        boundary: Optional[Mapping[int, float]] = None,
        source: Optional[Mapping[int, float]] = None,
        exterior_value: float = 0.0,
    ) -> np.ndarray:
        """Right-hand side for boundary values, prescribed Laplacian and exterior value"""
        b = np.zeros(self.size)
        if source:
            for v, s in source.items():
                i = self.index.get(int(v))
                if i is not None:
                    b[i] -= s
        if boundary:
            known = np.zeros(len(self.absorbing))
            for v, val in boundary.items():
                k = self.known_index.get(int(v))
                if k is None:
                    raise ValueError(f"{self.net.display(int(v))} is not in the absorbing set")
                known[k] = val
            b += self.coupling @ known
        if exterior_value and self.mode == BoundaryMode.ABSORBING:
            b += exterior_value * self.c_out
        return b

    def _cg_column(self, b: np.ndarray) -> np.ndarray:
        cfg = get_global_config().solver
        x, info = cg(self.matrix, b, rtol=cfg.cg_rtol, atol=0.0, maxiter=cfg.cg_maxiter, M=self._jacobi)
        if info != 0:
            raise NotConvergedException(
                f"conjugate gradients stopped with info={info}", context={'unknowns': self.size})
        return x

    def solve(self, b: np.ndarray) -> np.ndarray:
        """
        Solve ``A x = b`` for one column or a block of columns.

        Raises:
            NotConvergedException: if the max-norm residual exceeds the configured tolerance
        """
        b = np.asarray(b, dtype=float)
        if self.size == 0:
            return np.zeros_like(b)
        if self._lu is not None:
            x = self._lu.solve(b)
        elif b.ndim == 1:
            x = self._cg_column(b)
        else:
            cols = parallel_map(self._cg_column, [b[:, j] for j in range(b.shape[1])], label='cg column')
            x = np.column_stack(cols)
        self._check_residual(x, b)
        return x

    def _check_residual(self, x: np.ndarray, b: np.ndarray) -> None:
        tol = get_global_config().solver.residual_tol
        residual = self.matrix @ x - b
        scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
        worst = float(np.max(np.abs(residual))) if residual.size else 0.0
        logger.debug(f"Dirichlet residual {worst:.3e} (scale {scale:.3e})")
        if worst > tol * scale:
            raise NotConvergedException(
                f"Dirichlet residual {worst:.3e} exceeds {tol:g} x {scale:.3e}",
                context={'residual': worst, 'unknowns': self.size},
            )

    def unit_columns(self, ys: Sequence[int]) -> np.ndarray:
        """Solutions of ``A x = e_y`` for unknown vertices y, one column each"""
        b = np.zeros((self.size, len(ys)))
        for j, y in enumerate(ys):
            b[self.index[int(y)], j] = 1.0
        return self.solve(b)

    def to_function(self, x: np.ndarray, boundary: Optional[Mapping[int, float]] = None) -> Dict[int, float]:
        """Solution vector -> vertex function on the region"""
        f = {v: float(x[i]) for i, v in enumerate(self.unknowns)}
        for v in self.absorbing:
            f[v] = float(boundary.get(v, 0.0)) if boundary else 0.0
        return f


def dirichlet_solve(net: Network, prob: DirichletProblem) -> Dict[int, float]:
    """
    Solve a Dirichlet problem.

    Args:
        net: Network
        prob: Region, absorbing boundary values and prescribed Laplacian

    Returns:
        Vertex function on the region: boundary values on the absorbing set and
        ``Delta f(v) = source(v)`` on every other region vertex

    Raises:
        SingularSystemException: an interior component is cut off from the absorbing set
        NotConvergedException: residual above tolerance

    Examples:
        >>> z = build_network(parse_spec({"generator": "integer-line"}))
        >>> region = interval_region(z, 3, 3)
        >>> ends = {z.vertex_id(-3): 0.0, z.vertex_id(3): 0.0}
        >>> f = dirichlet_solve(z, DirichletProblem(region, ends, {z.root: -1.0}))
        >>> f[z.root]
        1.5
    """
    op = DirichletOperator(net, prob.region, list(prob.boundary), prob.mode)
    x = op.solve(op.rhs(prob.boundary, prob.source, prob.exterior_value))
    return op.to_function(x, prob.boundary)
