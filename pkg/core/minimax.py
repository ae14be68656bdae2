"""
Zero-sum games between boundary spheres and the escaping-potential construction.

Player 1 picks w on the sphere of radius R, player 2 picks v on the sphere of
radius r < R, and player 1 receives g_o(w, v). A mixed strategy zeta of player
1 is a mixture of dipoles psi = g_o(., zeta); its worst case over the inner
sphere is the game value V(R, r). Mixtures whose values reach a schedule of
levels combine into a potential growing along the spheres.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.certificates import LimitCertificate
from core.exceptions import GameSolverException, NotConvergedException, VertexNotFoundException
from core.green import GreenTable, stabilized_green_o
from core.linsolve import BoundaryMode
from core.potentials import Potential
from networks.base_network import Network, laplacian_apply
from networks.region import ball_region
from networks.spec import GeneratorKind
from utils.math_helpers import normalize_weights
from utils.parallel import parallel_map
from utils.validation import is_probability_vector

logger = logging.getLogger(__name__)

MAX_GAME_SIZE = 500
PIVOT_EPS = 1e-12
PROB_TOL = 1e-10
GAP_TOL = 1e-8


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    PIVOTED = "pivoted"


# ----------------------------------------------------------------------
# Payoffs
# ----------------------------------------------------------------------

@dataclass
class Payoff:
    """Payoff matrix with its row (outer sphere) and column (inner sphere) ids"""
    matrix: np.ndarray
    rows: List[int]
    cols: List[int]
    r: int = 0
    R: int = 0


def payoff_matrix(gtab: GreenTable, r: int, R: int) -> Payoff:
    """
    Payoff g_o(w, v) for w on the sphere of radius R and v on the sphere of radius r.

    Raises:
        ValueError: r >= R
        GameSolverException: one of the spheres is empty
        VertexNotFoundException: the table does not cover the outer sphere

    Examples:
        >>> payoff_matrix(game_table(z, 3, [3, 6], 1e-12), 1, 3).matrix
        array([[1., 0.],
               [0., 1.]])
    """
    if not 0 < r < R:
        raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
    net = gtab.net
    rows = net.sphere(R)
    cols = net.sphere(r)
    if not rows or not cols:
        raise GameSolverException(
            f"empty sphere in game r={r}, R={R}", {'rows': len(rows), 'cols': len(cols)})
    if not gtab.covers(rows):
        raise VertexNotFoundException(f"Green table does not cover the sphere of radius {R}")
    return Payoff(np.asarray(gtab.sub(rows, cols), dtype=float), rows, cols, r, R)


# ----------------------------------------------------------------------
# Simplex
# ----------------------------------------------------------------------

class SimplexTableau:
    """
    Dense tableau for max c.y subject to A y <= b, y >= 0, with b >= 0.

    Slack variables start in the basis. The last row holds the reduced costs
    and, in its last entry, minus the objective value. Pivoting follows
    Bland's rule, which cannot cycle.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray, c: np.ndarray, eps: float = PIVOT_EPS):
        self.m, self.n = A.shape
        self.eps = eps
        t = np.zeros((self.m + 1, self.n + self.m + 1))
        t[:self.m, :self.n] = A
        t[:self.m, self.n:self.n + self.m] = np.eye(self.m)
        t[:self.m, -1] = b
        t[self.m, :self.n] = c
        self.t = t
        self.basis = list(range(self.n, self.n + self.m))
        self.iterations = 0

    def pivot(self, i: int, j: int) -> None:
        t = self.t
        t[i] /= t[i, j]
        col = t[:, j].copy()
        col[i] = 0.0
        t -= np.outer(col, t[i])
        self.basis[i] = j
        self.iterations += 1

    def bland_step(self) -> LPStatus:
        """One pivot, or a terminal status"""
        t = self.t
        costs = t[self.m, :-1]
        entering = np.flatnonzero(costs > self.eps)
        if entering.size == 0:
            return LPStatus.OPTIMAL
        j = int(entering[0])
        column = t[:self.m, j]
        candidates = np.flatnonzero(column > self.eps)
        if candidates.size == 0:
            return LPStatus.UNBOUNDED
        ratios = t[candidates, -1] / column[candidates]
        best = ratios.min()
        tied = candidates[ratios <= best + self.eps * max(1.0, abs(best))]
        i = int(min(tied, key=lambda k: self.basis[k]))
        self.pivot(i, j)
        return LPStatus.PIVOTED

    def run(self, max_iterations: int) -> LPStatus:
        while self.iterations < max_iterations:
            status = self.bland_step()
            if status != LPStatus.PIVOTED:
                return status
        return LPStatus.ITERATION_LIMIT

    @property
    def objective(self) -> float:
        return float(-self.t[self.m, -1])

    def primal(self) -> np.ndarray:
        y = np.zeros(self.n)
        for i, var in enumerate(self.basis):
            if var < self.n:
                y[var] = self.t[i, -1]
        return y

    def dual(self) -> np.ndarray:
        """Constraint multipliers, the negated reduced costs of the slacks"""
        return -self.t[self.m, self.n:self.n + self.m].copy()


@dataclass
class GameSolution:
    """
    Optimal play of one zero-sum game.

    Attributes:
        value: max over row mixtures of min over columns
        row_strategy: Optimal mixture zeta over the outer sphere (rows)
        col_strategy: Optimal mixture eta over the inner sphere (columns)
        status: LP status
        gap: max(P eta) - min(zeta P), zero at an exact saddle point
        iterations: Simplex pivots
    """
    value: float
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    status: LPStatus
    gap: float
    iterations: int = 0
    r: Optional[int] = None
    R: Optional[int] = None
    rows: List[int] = field(default_factory=list)
    cols: List[int] = field(default_factory=list)

    @property
    def gap_ok(self) -> bool:
        return self.gap <= GAP_TOL * (1.0 + abs(self.value))

    def zeta(self) -> Dict[int, float]:
        """Row strategy keyed by vertex id"""
        return {w: float(p) for w, p in zip(self.rows, self.row_strategy)}

    def eta(self) -> Dict[int, float]:
        return {v: float(q) for v, q in zip(self.cols, self.col_strategy)}

    def to_dict(self, net: Optional[Network] = None) -> Dict[str, Any]:
        def name(v: int) -> Any:
            return net.display(v) if net is not None else v

        return {
            'r': self.r,
            'R': self.R,
            'value': self.value,
            'gap': self.gap,
            'status': self.status.value,
            'iterations': self.iterations,
            'row_strategy': {str(name(w)): p for w, p in self.zeta().items()} if self.rows
            else self.row_strategy.tolist(),
            'col_strategy': {str(name(v)): q for v, q in self.eta().items()} if self.cols
            else self.col_strategy.tolist(),
        }


def _clean_strategy(x: np.ndarray, context: Dict[str, Any]) -> np.ndarray:
    """Zero out round-off entries and renormalize; the raw vector must already be a mixed strategy"""
    if not is_probability_vector(x, tol=1e-6):
        raise GameSolverException("simplex returned a strategy that is not a probability vector",
                                  {**context, 'mass': float(np.sum(x)), 'min': float(np.min(x))})
    x = np.where(x < PROB_TOL, 0.0, x)
    return x / x.sum()


def solve_zero_sum(matrix: Any, max_iterations: Optional[int] = None) -> GameSolution:
    """
    Value and optimal mixed strategies of a zero-sum game; rows maximize.

    The payoff is shifted to be positive, then the column player's program
    max 1.y subject to P' y <= 1 is solved by the simplex method. Its optimum
    z gives the shifted value 1/z, the column strategy y/z and, through the
    constraint multipliers, the row strategy.

    Args:
        matrix: Finite real payoff matrix
        max_iterations: Pivot cap (default 50 (m + n))

    Returns:
        GameSolution with duality gap measured on the original matrix

    Raises:
        GameSolverException: non-finite input, size above the dense cap, or a
            failed solve; the context carries condition data

    Examples:
        >>> solve_zero_sum([[1, -1], [-1, 1]]).value
        0.0
    """
    P = np.atleast_2d(np.asarray(matrix, dtype=float))
    m, n = P.shape
    if P.size == 0 or not np.all(np.isfinite(P)):
        raise GameSolverException("payoff matrix must be non-empty and finite", {'shape': [m, n]})
    if max(m, n) > MAX_GAME_SIZE:
        raise GameSolverException(
            f"game {m}x{n} is above the dense simplex cap {MAX_GAME_SIZE}", {'shape': [m, n]})

    shift = float(P.min()) - 1.0
    shifted = P - shift
    tableau = SimplexTableau(shifted, np.ones(m), np.ones(n))
    status = tableau.run(max_iterations or 50 * (m + n))
    context = {
        'shape': [m, n],
        'payoff_range': [float(P.min()), float(P.max())],
        'iterations': tableau.iterations,
    }
    if status != LPStatus.OPTIMAL:
        raise GameSolverException(f"simplex stopped with status {status.value}", context)
    z = tableau.objective
    if not z > 0:
        raise GameSolverException(f"simplex objective {z} is not positive", context)

    col = _clean_strategy(tableau.primal() / z, context)
    row = _clean_strategy(tableau.dual() / z, context)
    value = 1.0 / z + shift
    gap = float(np.max(P @ col) - np.min(row @ P))
    solution = GameSolution(value, row, col, status, max(gap, 0.0), tableau.iterations)
    if not solution.gap_ok:
        raise GameSolverException(f"duality gap {gap:.3g} above tolerance", {**context, 'gap': gap})
    logger.debug(f"game {m}x{n}: value={value:.12g} gap={gap:.3g} pivots={tableau.iterations}")
    return solution


@dataclass
class FictitiousPlayResult:
    lower: float
    upper: float
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    iterations: int

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


def fictitious_play(matrix: Any, iterations: int = 20000) -> FictitiousPlayResult:
    """
    Brown-Robinson fictitious play; rows maximize.

    Each player best-responds to the other's empirical mixture. The value lies
    in [min_j (p P)_j, max_i (P q)_i] for any empirical pair (p, q); the best
    bracket seen is returned with the final empirical strategies.
    """
    P = np.atleast_2d(np.asarray(matrix, dtype=float))
    m, n = P.shape
    row_counts = np.zeros(m)
    col_counts = np.zeros(n)
    row_payoff = np.zeros(n)  # sum of played rows
    col_payoff = np.zeros(m)  # sum of played columns
    lower, upper = -np.inf, np.inf
    i = 0
    for t in range(1, iterations + 1):
        row_counts[i] += 1
        row_payoff += P[i]
        j = int(np.argmin(row_payoff))
        col_counts[j] += 1
        col_payoff += P[:, j]
        i = int(np.argmax(col_payoff))
        lower = max(lower, float(row_payoff.min()) / t)
        upper = min(upper, float(col_payoff.max()) / t)
    return FictitiousPlayResult(
        lower, upper, row_counts / row_counts.sum(), col_counts / col_counts.sum(), iterations)


# ----------------------------------------------------------------------
# Game values along R
# ----------------------------------------------------------------------

def game_table(
    net: Network,
    R: int,
    radii: Optional[Sequence[int]] = None,
    tol: float = 1e-10,
) -> GreenTable:
    """
    Stabilized g_o covering the ball of radius R.

    Truncations are reflecting balls, by default of radii R, 2R and 4R. On
    trees g_o(x, y) is the resistance from o to the branch point of x and y
    whatever the radius, so R and R + 1 suffice there and balls stay small.
    """
    if radii is None:
        radii = [R, R + 1] if net.spec.generator == GeneratorKind.REGULAR_TREE else [R, 2 * R, 4 * R]
    radii = list(radii)
    if radii[0] < R:
        raise ValueError(f"inner radius {radii[0]} does not cover the sphere of radius {R}")
    return stabilized_green_o(net, net.root, radii, tol, BoundaryMode.REFLECTING)


def solve_game(gtab: GreenTable, r: int, R: int) -> GameSolution:
    pay = payoff_matrix(gtab, r, R)
    sol = solve_zero_sum(pay.matrix)
    sol.r, sol.R, sol.rows, sol.cols = r, R, pay.rows, pay.cols
    return sol


@dataclass
class VLimit:
    """V(R, r) along an increasing list of R"""
    r: int
    Rs: List[int]
    values: List[float]
    solutions: List[GameSolution]
    violations: List[Tuple[int, int, float]]
    certificate: LimitCertificate
    table_certificate: Optional[LimitCertificate] = None
    sandwich: Optional[Dict[str, Any]] = None

    @property
    def value(self) -> float:
        return self.values[-1]

    @property
    def converged(self) -> bool:
        return self.certificate.converged

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'r': [self.r] * len(self.Rs),
            'R': self.Rs,
            'value': self.values,
            'gap': [s.gap for s in self.solutions],
            'iterations': [s.iterations for s in self.solutions],
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            'r': self.r,
            'R': list(self.Rs),
            'values': list(self.values),
            'value': self.value,
            'violations': [list(v) for v in self.violations],
            'certificate': self.certificate.to_dict(),
            'table_certificate': self.table_certificate.to_dict() if self.table_certificate else None,
            'sandwich': self.sandwich,
        }


def v_limit(
    net: Network,
    r: int,
    Rs: Sequence[int],
    tol: float,
    h: Optional[Potential] = None,
    radii: Optional[Sequence[int]] = None,
    green_tol: float = 1e-10,
    max_workers: Optional[int] = None,
) -> VLimit:
    """
    Game values V(R, r) for each R in ``Rs`` with a convergence record.

    All games share one Green table covering the largest R. Values should not
    increase with R; any increase above 1e-9 is listed as a violation. The
    last value is reported with the last increment as its certificate. With a
    potential ``h`` the lower bound V(R, r) >= min over the r-sphere of h is
    checked for every R.

    Raises:
        ValueError: Rs not strictly increasing or not above r
    """
    Rs = [int(R) for R in Rs]
    if not Rs or any(b <= a for a, b in zip(Rs, Rs[1:])) or Rs[0] <= r:
        raise ValueError(f"R list must be strictly increasing and above r={r}, got {Rs}")
    gtab = game_table(net, Rs[-1], radii, green_tol)

    solutions = parallel_map(lambda R: solve_game(gtab, r, R), Rs, max_workers=max_workers, label=f'V(R,{r})')
    values = [s.value for s in solutions]
    cert = LimitCertificate(what=f'V(inf,{r})', tol=tol)
    violations: List[Tuple[int, int, float]] = []
    for k, R in enumerate(Rs):
        increment = None if k == 0 else abs(values[k] - values[k - 1])
        if k and values[k] > values[k - 1] + 1e-9:
            violations.append((Rs[k - 1], R, values[k] - values[k - 1]))
        cert.record(R, increment)
    # converged means the final increment is within tol, not an early one
    cert.converged = cert.final_increment is not None and cert.final_increment <= tol
    if violations:
        logger.warning(f"V(R,{r}) increased along R at {violations}")
    cert.warn_if_open()

    sandwich = None
    if h is not None:
        floor = min(h(v) for v in net.sphere(r))
        slack = min(values) - floor
        sandwich = {'min_h_on_sphere': floor, 'slack': slack, 'holds': slack >= -1e-6}
        if slack < -1e-6:
            logger.warning(f"V(R,{r}) below min of h on the sphere by {-slack:.3g}")

    return VLimit(r, Rs, values, solutions, violations, cert, gtab.certificate, sandwich)


# ----------------------------------------------------------------------
# Dipole mixtures
# ----------------------------------------------------------------------

def mixture_function(gtab: GreenTable, zeta: Mapping[int, float]) -> Dict[int, float]:
    """g_o(., zeta) = sum over w of zeta(w) g_o(., w), on the table's region"""
    weights = np.zeros(len(gtab.region))
    for w, p in zeta.items():
        weights[gtab._pos(w)] += p
    values = gtab.matrix @ weights
    return {int(v): float(x) for v, x in zip(gtab.region.ids, values)}


def mixture_laplacian_check(gtab: GreenTable, zeta: Mapping[int, float]) -> Dict[str, float]:
    """
    Laplacian of g_o(., zeta): 1 at the root and 0 at interior vertices off the support.

    Returns:
        Dict with ``root_residual`` and ``harmonic_residual`` (max abs), and
        ``support_residual``, the largest |Delta psi(w) + zeta(w)| on the support
    """
    net = gtab.net
    psi = mixture_function(gtab, zeta)
    interior = [v for v in gtab.region.interior if v != net.root]
    harm = 0.0
    support = 0.0
    for v in interior:
        lap = laplacian_apply(net, psi, v)
        if v in zeta:
            support = max(support, abs(lap + zeta[v]))
        else:
            harm = max(harm, abs(lap))
    root = abs(laplacian_apply(net, psi, net.root) - 1.0)
    return {'root_residual': root, 'harmonic_residual': harm, 'support_residual': support}


# ----------------------------------------------------------------------
# Escaping potential
# ----------------------------------------------------------------------

@dataclass
class EscapeLevel:
    n: int
    target: float
    r: int
    value: float
    weight: float
    sphere_min: float

    @property
    def bound(self) -> float:
        """w_n M_n, the certified lower bound on the sphere of radius r"""
        return self.weight * self.target


@dataclass
class EscapingPotential:
    """
    Potential sum w_n g_o(., zeta_n) with its level record and sphere profile.

    ``profile`` maps rho to the minimum of h over the sphere of radius rho,
    for rho up to the outer radius minus one.
    """
    potential: Potential
    levels: List[EscapeLevel]
    profile: Dict[int, float]
    outer_radius: int
    converged: bool
    schedule: List[float]

    @property
    def monotone(self) -> bool:
        vals = [self.profile[k] for k in sorted(self.profile)]
        return all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    @property
    def levels_exceeded(self) -> bool:
        """min of h on the sphere of radius r_n is at least the certified bound w_n M_n"""
        return all(lv.sphere_min >= lv.bound - 1e-9 for lv in self.levels)

    def levels_reached(self, n_max: int = 3) -> bool:
        """Levels 1..n_max were all found and min of h on the sphere of radius r_n is at least n"""
        found = {lv.n: lv for lv in self.levels}
        return all(n in found and found[n].sphere_min >= n - 1e-9 for n in range(1, n_max + 1))

    def profile_frame(self) -> pd.DataFrame:
        radii = sorted(self.profile)
        return pd.DataFrame({'radius': radii, 'min_h': [self.profile[k] for k in radii]})

    def to_dict(self) -> Dict[str, Any]:
        return {
            'outer_radius': self.outer_radius,
            'converged': self.converged,
            'monotone': self.monotone,
            'levels_exceeded': self.levels_exceeded,
            'levels_reached': self.levels_reached(),
            'schedule': list(self.schedule),
            'levels': [{**lv.__dict__, 'bound': lv.bound} for lv in self.levels],
            'potential': self.potential.certificate.to_dict(),
        }


def build_escaping_potential(
    net: Network,
    schedule: Optional[Sequence[float]] = None,
    n_levels: int = 3,
    radius_cap: int = 64,
    outer_radius: Optional[int] = None,
    radii: Optional[Sequence[int]] = None,
    green_tol: float = 1e-10,
) -> EscapingPotential:
    """
    Potential whose sphere minima pass a schedule of levels, from optimal game strategies.

    All games are played against one outer sphere of radius R_out. For level n
    with target M_n (default n 2^n) the smallest r_n with V(R_out, r_n) >= M_n
    is found, and psi_n = g_o(., zeta_n) uses the optimal outer strategy. Every
    psi_n is harmonic off the root on B(o, R_out - 1), so the weighted sum with
    weights proportional to 2^-n is a potential there, and its minimum over the
    sphere of radius r_n is at least n.

    When the inner radius reaches R_out before a target is met, the levels
    achieved so far are combined and returned with ``converged=False``.

    Raises:
        NotConvergedException: not even the first level is reachable
    """
    targets = [float(m) for m in schedule] if schedule is not None else \
        [n * 2.0 ** n for n in range(1, n_levels + 1)]
    R_out = int(outer_radius if outer_radius is not None else radius_cap)
    if R_out < 2:
        raise ValueError(f"outer radius must be at least 2, got {R_out}")
    gtab = game_table(net, R_out, radii, green_tol)

    found: List[Tuple[int, float, int, GameSolution]] = []
    r = 1
    converged = True
    for n, target in enumerate(targets, start=1):
        sol = None
        while r < R_out:
            sol = solve_game(gtab, r, R_out)
            if sol.value >= target:
                break
            r += 1
        if r >= R_out or sol is None:
            converged = False
            logger.warning(f"level {n}: V({R_out}, r) stayed below {target:g} for r < {R_out}")
            break
        found.append((n, target, r, sol))
        logger.debug(f"escape level {n}: M={target:g} r={r} V={sol.value:.6g}")

    if not found:
        cert = LimitCertificate(what='escaping potential', tol=targets[0] if targets else 0.0)
        raise NotConvergedException(
            f"no level reached inside the outer radius {R_out}", certificate=cert,
            context={'achieved_levels': 0})

    weights = normalize_weights({n: 2.0 ** -n for n, _, _, _ in found})
    total: Dict[int, float] = {}
    for n, _, _, sol in found:
        for v, val in mixture_function(gtab, sol.zeta()).items():
            total[v] = total.get(v, 0.0) + weights[n] * val

    region = ball_region(net, R_out - 1)
    pot = Potential.from_values(net, total, region, name='minimax-construction', limit=gtab.certificate)
    levels = [
        EscapeLevel(n, target, r_n, sol.value, weights[n], min(total[v] for v in net.sphere(r_n)))
        for n, target, r_n, sol in found
    ]
    profile = {rho: min(total[v] for v in net.sphere(rho)) for rho in range(1, R_out)}
    result = EscapingPotential(pot, levels, profile, R_out, converged, targets)
    logger.info(
        f"escaping potential: {len(levels)}/{len(targets)} levels at radii "
        f"{[lv.r for lv in levels]}, monotone={result.monotone}")
    return result

