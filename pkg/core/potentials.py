"""
Potentials: construction, validation, root transfer and the tree construction.

A potential is a nonnegative vertex function h with h(o) = 0, Delta h(o) = 1
and Delta h = 0 at every other vertex. Here a ``Potential`` stores values on
its certified region plus that region's exterior, so the Laplacian can be
evaluated anywhere in the region.

Exhaustion potentials h_N(x) = g_N(o, o) - g_N(x, o), with g_N the Green
density of the walk killed on leaving D_N, are potentials of the killed chain:
they equal the constant ``killed_level`` H = g_N(o, o) outside D_N. For those,
f(v) = 1 - h(v)/H is the probability of reaching o before leaving D_N, and the
h-process identities downstream pick up that factor.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.certificates import LimitCertificate
from core.exceptions import (
    NotConvergedException,
    PotentialException,
    VertexNotFoundException,
)
from core.green import resistance_on, stabilized_columns
from core.linsolve import BoundaryMode, DirichletOperator
from networks.base_network import Network, laplacian_apply
from networks.region import Exhaustion, Region, ball_region, interior_region
from networks.spec import GeneratorKind
from utils.math_helpers import normalize_weights
from utils.rng import path_generator

logger = logging.getLogger(__name__)


@dataclass
class PotentialCertificate:
    """Residuals and refinement record of a potential"""
    radius: Optional[int]
    harmonic_residual: float
    root_residual: float
    limit: Optional[LimitCertificate] = None

    @property
    def converged(self) -> bool:
        return self.limit is None or self.limit.converged

    def to_dict(self) -> Dict[str, Any]:
        return {
            'radius': self.radius,
            'harmonic_residual': self.harmonic_residual,
            'root_residual': self.root_residual,
            'limit': self.limit.to_dict() if self.limit else None,
        }


@dataclass(eq=False)
class Potential:
    """
    Potential values with the region on which they are certified.

    Attributes:
        net: Network
        values: Vertex id -> h(v) on ``region`` and its exterior
        region: Certified region; the Laplacian is checked on it
        certificate: Residuals and refinement history
        name: Human-readable origin (``exhaustion:ball``, ``closed-form``...)
        killed_level: H for exhaustion potentials of the killed chain
        extender: radius -> Potential covering B(o, radius), for on-demand growth
        history: h_n restricted to the certified region, one per exhaustion step
        root_vertex: Vertex where h vanishes with unit Laplacian, when it is not the network root
    """
    net: Network
    values: Dict[int, float]
    region: Region
    certificate: PotentialCertificate
    name: str = 'potential'
    killed_level: Optional[float] = None
    extender: Optional[Callable[[int], 'Potential']] = field(default=None, repr=False)
    history: List[Dict[int, float]] = field(default_factory=list, repr=False)
    root_vertex: Optional[int] = None

    @property
    def root(self) -> int:
        return self.net.root if self.root_vertex is None else self.root_vertex

    def __call__(self, v: int) -> float:
        try:
            return self.values[int(v)]
        except KeyError as e:
            raise VertexNotFoundException(
                f"potential undefined at {self.net.display(int(v))}", {'id': int(v)}) from e

    def __contains__(self, v: int) -> bool:
        return int(v) in self.values

    @property
    def converged(self) -> bool:
        return self.certificate.converged

    def require_converged(self) -> 'Potential':
        if self.certificate.limit is not None:
            self.certificate.limit.require_converged()
        return self

    def escape_factor(self, v: int) -> float:
        """1 - h(v)/H for killed potentials, 1 otherwise"""
        if self.killed_level is None:
            return 1.0
        return 1.0 - self(v) / self.killed_level

    def laplacian(self, v: int) -> float:
        return laplacian_apply(self.net, self.values, int(v))

    def extend(self, radius: int) -> 'Potential':
        """Potential certified on at least B(o, radius), via the attached extender"""
        if self.extender is None:
            raise PotentialException(f"potential '{self.name}' has no extender")
        grown = self.extender(radius)
        logger.info(f"Extended potential '{self.name}' to radius {radius} ({len(grown.region)} vertices)")
        return grown

    def to_frame(self) -> pd.DataFrame:
        ids = list(self.region)
        return pd.DataFrame({
            'vertex': [self.net.display(v) for v in ids],
            'value': [self.values[v] for v in ids],
        })

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def from_values(
        cls,
        net: Network,
        values: Mapping[int, float],
        region: Region,
        name: str = 'potential',
        **kwargs: Any,
    ) -> 'Potential':
        """Wrap values and compute residuals on ``region``"""
        vals = {int(k): float(v) for k, v in values.items()}
        harm, root_res = _residuals(net, vals, region)
        cert = PotentialCertificate(region.radius, harm, root_res, kwargs.pop('limit', None))
        return cls(net, vals, region, cert, name=name, **kwargs)

    @classmethod
    def from_function(
        cls,
        net: Network,
        fn: Callable[[Any], float],
        radius: int,
        name: str = 'closed-form',
    ) -> 'Potential':
        """
        Closed-form potential evaluated on labels, certified on B(o, radius).

        The extender re-evaluates ``fn`` on a larger ball.

        Examples:
            >>> h = Potential.from_function(z, lambda n: abs(n) / 2, 10)
            >>> h(z.vertex_id(4))
            2.0
        """
        region = ball_region(net, radius)
        values = {v: float(fn(net.label(v))) for v in region.closure}
        pot = cls.from_values(net, values, region, name=name)
        pot.extender = lambda r: cls.from_function(net, fn, max(r, radius), name)
        return pot


def _residuals(net: Network, values: Mapping[int, float], region: Region) -> Tuple[float, float]:
    harm = 0.0
    root_res = 0.0
    for v in region:
        if any(z not in values for z, _ in net.neighbors(v)):
            continue
        lap = laplacian_apply(net, values, v)
        if v == net.root:
            root_res = abs(lap - 1.0)
        else:
            harm = max(harm, abs(lap))
    return harm, root_res


# ----------------------------------------------------------------------
# Exhaustion potentials
# ----------------------------------------------------------------------

def exhaustion_potential(net: Network, region: Region) -> Potential:
    """
    h_D(x) = g_D(o, o) - g_D(x, o) for the walk killed on leaving ``region``.

    Values cover the region and its exterior, where h_D equals the killed
    level H = g_D(o, o).
    """
    op = DirichletOperator(net, region, [], BoundaryMode.ABSORBING)
    col = op.unit_columns([net.root])[:, 0]
    g_oo = float(col[op.index[net.root]])
    values = {v: g_oo - float(col[i]) for i, v in enumerate(op.unknowns)}
    values[net.root] = 0.0
    for v in region.exterior:
        values[v] = g_oo
    pot = Potential.from_values(net, values, region, name=f'exhaustion:{region.shape}', killed_level=g_oo)
    logger.debug(f"exhaustion potential on {len(region)} vertices, H={g_oo:.6g}")
    return pot


def potential_from_exhaustion(net: Network, exhaustion: Exhaustion, tol: float) -> Potential:
    """
    Limit of exhaustion potentials, certified on the smallest region D_0.

    Computes h_n on each D_n and stops at the first n where h_n and h_{n-1}
    agree within ``tol`` on D_0 and its exterior. The result depends on the
    exhaustion shape when the network has several potentials. Without
    convergence the result carries ``converged=False`` and the whole sequence
    in ``history``.

    Examples:
        >>> h = potential_from_exhaustion(z, ball_exhaustion(z, [20, 40]), 1e-9)
        >>> h(z.vertex_id(-6))
        3.0
    """
    base = exhaustion.region(0)
    support = base.closure
    cert = LimitCertificate(what=f'exhaustion potential ({exhaustion.name})', tol=tol)
    history: List[Dict[int, float]] = []
    previous: Optional[np.ndarray] = None
    current: Dict[int, float] = {}
    for n, region in zip(exhaustion.indices, exhaustion):
        if not region.contains_all(base):
            raise ValueError(f"exhaustion is not nested at n={n}")
        h_n = exhaustion_potential(net, region)
        current = {v: h_n(v) for v in support}
        history.append(current)
        vec = np.array([current[v] for v in support])
        increment = None if previous is None else float(np.max(np.abs(vec - previous)))
        previous = vec
        if cert.record(n, increment):
            break
    cert.warn_if_open()
    return Potential.from_values(
        net, current, base, name=f'exhaustion:{exhaustion.name}', limit=cert, history=history)


def convex_combination(potentials: Sequence[Potential], weights: Sequence[float]) -> Potential:
    """
    Weighted average of potentials on the intersection of their domains.

    Weights are nonnegative and are normalized to sum to 1.
    """
    if not potentials or len(potentials) != len(weights):
        raise ValueError("need one weight per potential")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be nonnegative")
    net = potentials[0].net
    w = normalize_weights({i: float(x) for i, x in enumerate(weights)})
    domain = set(potentials[0].values)
    for p in potentials[1:]:
        domain &= set(p.values)
    values = {v: math.fsum(w[i] * p.values[v] for i, p in enumerate(potentials)) for v in domain}
    region = interior_region(net, domain)
    return Potential.from_values(net, values, region, name='convex-combination')


def fit_half_line_mixture(net: Network, h: Potential, radius: int) -> Tuple[float, float]:
    """
    Least-squares alpha with h(k) ~ alpha max(k, 0) + (1 - alpha) max(-k, 0) on Z.

    Returns:
        (alpha, max abs residual) over |k| <= radius
    """
    ks = [k for k in range(-radius, radius + 1)]
    ids = [net.vertex_id(k) for k in ks]
    pos = np.array([max(k, 0) for k in ks], dtype=float)
    neg = np.array([max(-k, 0) for k in ks], dtype=float)
    y = np.array([h(v) for v in ids]) - neg
    basis = pos - neg
    alpha = float(basis @ y / (basis @ basis))
    residual = float(np.max(np.abs(alpha * pos + (1 - alpha) * neg - (y + neg))))
    return alpha, residual


# ----------------------------------------------------------------------
# Validation
# ----------------------------------------------------------------------

@dataclass
class ValidationReport:
    """Outcome of checking the defining properties of a potential"""
    root_value: float
    min_value: float
    harmonic_residual: float
    root_residual: float
    edge_gradient_slack: float
    lipschitz_slack: float
    worst_pair: Optional[Tuple[str, str]]
    pairs_checked: int
    tol: float
    lipschitz_tol: float
    root: Optional[str] = None
    resistance_certificate: Optional[LimitCertificate] = None

    @property
    def nonnegative(self) -> bool:
        return self.min_value >= -1e-12

    @property
    def passed(self) -> bool:
        return (self.root_value == 0.0
                and self.nonnegative
                and self.harmonic_residual <= self.tol
                and self.root_residual <= self.tol
                and self.edge_gradient_slack >= -self.lipschitz_tol
                and self.lipschitz_slack >= -self.lipschitz_tol)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'root': self.root,
            'root_value': self.root_value,
            'min_value': self.min_value,
            'harmonic_residual': self.harmonic_residual,
            'root_residual': self.root_residual,
            'edge_gradient_slack': self.edge_gradient_slack,
            'lipschitz_slack': self.lipschitz_slack,
            'worst_pair': list(self.worst_pair) if self.worst_pair else None,
            'pairs_checked': self.pairs_checked,
            'resistance_certificate': (self.resistance_certificate.to_dict()
                                       if self.resistance_certificate else None),
            'passed': self.passed,
        }


def validate_potential(
    net: Network,
    h: Potential,
    region: Optional[Region] = None,
    n_pairs: int = 500,
    seed: int = 0,
    resistance_radii: Optional[Sequence[int]] = None,
    tol: float = 1e-8,
    lipschitz_tol: float = 1e-8,
    root: Optional[int] = None,
    resistance_tol: float = 1e-8,
) -> ValidationReport:
    """
    Check h(root) = 0, nonnegativity, harmonicity and the Lipschitz bounds.

    ``root`` defaults to ``h.root``; a transferred potential is checked at its
    new root. The edge-gradient bound |h(x) - h(y)| <= 1/c_xy is checked on
    every edge of the region. The effective-resistance bound is checked on
    every edge and on ``n_pairs`` random pairs against stabilized reflecting
    resistances (``resistance_on``) over radii R, 2R and 4R around the region,
    or R and R + 1 on trees where reflecting balls are exact. Reflecting
    resistances approach R_eff from above, so the slack is reduced by four
    times the final increment of the table. Never raises for a failing
    potential.
    """
    region = region or h.region
    root = h.root if root is None else int(root)
    values = h.values
    ids = [v for v in region if v in values]
    root_value = values.get(root, float('nan'))
    min_value = min(values[v] for v in ids)

    harm = 0.0
    root_res = 0.0
    edge_slack = math.inf
    edges: List[Tuple[int, int]] = []
    for v in ids:
        nbrs = net.neighbors(v)
        if all(z in values for z, _ in nbrs):
            lap = laplacian_apply(net, values, v)
            if v == root:
                root_res = abs(lap - 1.0)
            else:
                harm = max(harm, abs(lap))
        for z, c in nbrs:
            if z in region and v < z and z in values:
                edges.append((v, z))
                edge_slack = min(edge_slack, 1.0 / c - abs(values[v] - values[z]))

    if root not in region:
        root_res = math.inf

    pairs = list(edges)
    if n_pairs and len(ids) > 1:
        gen = path_generator(seed, 0)
        picks = gen.integers(0, len(ids), size=(n_pairs, 2))
        pairs.extend((ids[a], ids[b]) for a, b in picks if a != b)

    lip_slack = math.inf
    worst: Optional[Tuple[str, str]] = None
    res_cert: Optional[LimitCertificate] = None
    if pairs:
        if resistance_radii is None:
            reach = max(net.distance(v) for v in ids) + 1
            if net.spec.generator == GeneratorKind.REGULAR_TREE:
                resistance_radii = [reach, reach + 1]
            else:
                resistance_radii = [reach, 2 * reach, 4 * reach]
        sub, r, res_cert = resistance_on(net, ids, resistance_radii, resistance_tol)
        margin = 4.0 * (res_cert.final_increment or 0.0)
        for x, y in pairs:
            slack = r[sub.index[x], sub.index[y]] - margin - abs(values[x] - values[y])
            if slack < lip_slack:
                lip_slack = float(slack)
                worst = (net.display(x), net.display(y))

    report = ValidationReport(
        root_value=float(root_value),
        min_value=float(min_value),
        harmonic_residual=float(harm),
        root_residual=float(root_res),
        edge_gradient_slack=float(edge_slack if edges else 0.0),
        lipschitz_slack=float(lip_slack if pairs else 0.0),
        worst_pair=worst,
        pairs_checked=len(pairs),
        tol=tol,
        lipschitz_tol=lipschitz_tol,
        root=net.display(root),
        resistance_certificate=res_cert,
    )
    if not report.passed:
        logger.warning(f"potential '{h.name}' failed validation: {report.to_dict()}")
    return report


# ----------------------------------------------------------------------
# Root transfer
# ----------------------------------------------------------------------

def root_transfer(
    net: Network,
    h: Potential,
    new_root: int,
    radii: Sequence[int],
    tol: float,
) -> Potential:
    """
    Move the root of a potential: h~ = h + g_new(., o) - h(new).

    The result vanishes at ``new_root`` with unit Laplacian there, and its
    ``root`` is ``new_root``, so ``validate_potential`` checks it there. The
    column g_new(., o) comes from stabilized reflecting tables.
    """
    new_root = int(new_root)
    if new_root not in h.region:
        raise VertexNotFoundException(f"{net.display(new_root)} is outside the certified region")
    if new_root == h.root:
        return h
    inner, cols, cert = stabilized_columns(net, new_root, [net.root], radii, tol, BoundaryMode.REFLECTING,
                                           what='root transfer')
    h_new = h(new_root)
    values = {}
    for i, v in enumerate(inner.ids):
        v = int(v)
        if v in h.values:
            values[v] = h.values[v] + float(cols[i, 0]) - h_new
    values[new_root] = 0.0
    region = interior_region(net, values)
    harm = _harmonic_except(net, values, region, new_root)
    root_lap = laplacian_apply(net, values, new_root) if region.contains_all(
        [z for z, _ in net.neighbors(new_root)] + [new_root]) else math.nan
    logger.debug(f"root transfer to {net.display(new_root)}: residual {harm:.3e}")
    return Potential(
        net, values, region,
        PotentialCertificate(region.radius, harm, abs(root_lap - 1.0), cert),
        name=f'{h.name}@{net.display(new_root)}',
        root_vertex=new_root,
    )


def _harmonic_except(net: Network, values: Mapping[int, float], region: Region, root: int) -> float:
    worst = 0.0
    for v in region:
        if v == root or any(z not in values for z, _ in net.neighbors(v)):
            continue
        worst = max(worst, abs(laplacian_apply(net, values, v)))
    return worst


# ----------------------------------------------------------------------
# Tree construction
# ----------------------------------------------------------------------

@dataclass
class TreeLevel:
    """One summand of the tree construction"""
    n: int
    target: float
    radius: int
    green_root: float
    weight: float
    sphere_min: float


def _children(net: Network, v: int) -> List[int]:
    d = net.distance(v)
    return [z for z, _ in net.neighbors(v) if net.distance(z) == d + 1]


def _check_tree(net: Network, radius: int) -> None:
    for v in range(net.layer_end(radius)):
        d = net.distance(v)
        up = sum(1 for z, _ in net.neighbors(v) if net.distance(z) == d - 1)
        level = sum(1 for z, _ in net.neighbors(v) if net.distance(z) == d)
        if level or (v != net.root and up != 1):
            raise PotentialException(f"{net.spec.generator.value} is not a tree around {net.display(v)}")


def _tree_psi(net: Network, R: int, radius: int) -> Tuple[Dict[int, float], float]:
    """
    psi = g_R(o, o) - g_R(., o) inside B_R with the walk killed at distance R,
    continued harmonically beyond: along the smallest-child ray from each
    sphere vertex the current is preserved, every other branch is constant.
    """
    inside = ball_region(net, R - 1)
    op = DirichletOperator(net, inside, [], BoundaryMode.ABSORBING)
    col = op.unit_columns([net.root])[:, 0]
    g_rr = float(col[op.index[net.root]])
    psi = {v: g_rr - float(col[i]) for i, v in enumerate(op.unknowns)}
    psi[net.root] = 0.0
    delta: Dict[int, float] = {}
    on_ray: Dict[int, bool] = {}
    for v in range(inside.net.layer_end(R - 1), net.layer_end(radius + 1)):
        p = net.parent(v)
        if net.distance(v) == R:
            psi[v] = g_rr
            delta[v] = g_rr - psi[p]
            on_ray[v] = True
            continue
        kids = _children(net, p)
        if on_ray[p] and v == min(kids):
            pp = net.parent(p)
            delta[v] = delta[p] * net.edge_conductance(pp, p) / net.edge_conductance(p, v)
            psi[v] = psi[p] + delta[v]
            on_ray[v] = True
        else:
            psi[v] = psi[p]
            delta[v] = 0.0
            on_ray[v] = False
    return psi, g_rr


def tree_potential_to_infinity(
    net: Network,
    n_levels: int = 3,
    schedule: Optional[Sequence[float]] = None,
    radius_cap: int = 40,
    radius: Optional[int] = None,
) -> Tuple[Potential, List[TreeLevel]]:
    """
    Explicit potential tending to infinity on a tree.

    For each level n with target M_n (default n 2^n) the smallest R_n with
    g_{R_n}(o, o) >= M_n is found; psi_n is built as in ``_tree_psi`` and
    satisfies psi_n >= M_n off B(o, R_n). The potential is sum w_n psi_n with
    w_n proportional to 2^-n, normalized over the levels, so its minimum over
    the sphere of radius R_n is at least n.

    Raises:
        PotentialException: the network is not a tree
        NotConvergedException: no R_n up to ``radius_cap`` reaches M_n
    """
    targets = list(schedule) if schedule is not None else [n * 2.0 ** n for n in range(1, n_levels + 1)]
    _check_tree(net, min(radius_cap, 6))

    levels: List[Tuple[int, float, int, float]] = []
    R = 1
    for n, target in enumerate(targets, start=1):
        g_rr = 0.0
        while True:
            if R > radius_cap:
                cert = LimitCertificate(what='tree potential', tol=target, radii=[lv[2] for lv in levels])
                raise NotConvergedException(
                    f"level {n}: g_R(o,o) stayed below {target:g} up to radius {radius_cap}",
                    certificate=cert, context={'achieved_levels': n - 1})
            _, g_rr = _tree_psi(net, R, R)
            if g_rr >= target:
                break
            R += 1
        levels.append((n, target, R, g_rr))
        logger.debug(f"tree level {n}: M={target:g} R={R} g_R(o,o)={g_rr:.6g}")

    top = radius if radius is not None else levels[-1][2] + 2
    raw = {n: 2.0 ** -n for n, _, _, _ in levels}
    weights = normalize_weights(raw)
    total: Dict[int, float] = {}
    for n, _, R_n, _ in levels:
        psi, _ = _tree_psi(net, R_n, top)
        for v, val in psi.items():
            total[v] = total.get(v, 0.0) + weights[n] * val

    region = ball_region(net, top)
    pot = Potential.from_values(net, total, region, name='tree-construction')
    out = []
    for n, target, R_n, g_rr in levels:
        sphere_min = min(total[v] for v in net.sphere(R_n))
        out.append(TreeLevel(n, target, R_n, g_rr, weights[n], sphere_min))
    pot.extender = lambda r: tree_potential_to_infinity(
        net, n_levels, targets, radius_cap, max(r, top))[0]
    return pot, out


def min_on_spheres(h: Potential, radii: Sequence[int]) -> Dict[int, float]:
    """min over the sphere of radius r of h, for each r"""
    return {int(r): min(h(v) for v in h.net.sphere(int(r))) for r in radii}


# ----------------------------------------------------------------------
# Mixtures and limits
# ----------------------------------------------------------------------

def weak_convergence_check(
    net: Network,
    exhaustion: Exhaustion,
    h: Potential,
    gammas: Sequence[Sequence[int]],
) -> List[Dict[str, Any]]:
    """
    Exact P_o(o gamma | exit D_n before returning to o) against P^h(gamma).

    For each D_n, P_o(exit before o+) is solved exactly as a Dirichlet problem
    and the conditional probability of the path prefix o, gamma_1, ...,
    gamma_l is c_o P_o(o gamma) u_n(gamma_l) / c_o P_o(exit before o+), with
    u_n(x) = P_x(exit D_n before o). The h-transform side is
    c_o P_o(o gamma) h(gamma_l).

    Returns:
        One row per n: max abs difference over the paths, and the per-path values
    """
    rows = []
    for n, region in zip(exhaustion.indices, exhaustion):
        op = DirichletOperator(net, region, [net.root], BoundaryMode.ABSORBING)
        x = op.solve(op.rhs({net.root: 0.0}, exterior_value=1.0))
        u = op.to_function(x, {net.root: 0.0})
        for v in region.exterior:
            u[v] = 1.0
        c_o = net.conductance_sum(net.root)
        escape = math.fsum(c * u[z] for z, c in net.neighbors(net.root)) / c_o
        conditional = []
        transformed = []
        for gamma in gammas:
            prob = _walk_probability(net, [net.root] + list(gamma))
            conditional.append(prob * u[gamma[-1]] / escape)
            transformed.append(c_o * prob * h(gamma[-1]))
        diff = float(np.max(np.abs(np.array(conditional) - np.array(transformed))))
        rows.append({'n': n, 'max_difference': diff, 'conditional': conditional, 'h_transform': transformed})
        logger.debug(f"weak convergence n={n}: max difference {diff:.3e}")
    return rows


def _walk_probability(net: Network, path: Sequence[int]) -> float:
    prob = 1.0
    for a, b in zip(path, path[1:]):
        prob *= net.edge_conductance(a, b) / net.conductance_sum(a)
    return prob


def mixture_check(
    net: Network,
    h: Potential,
    D: Region,
    n_paths: int,
    seed: int,
    rule=None,
    green=None,
) -> Dict[str, Any]:
    """
    Monte Carlo check of h(x) = E g_o(x, Y_L) / f(Y_L), L the last exit of D.

    f is 1 for potentials of the full walk and ``escape_factor`` for killed
    exhaustion potentials. Flags every x in D whose estimate is more than three
    standard errors from h(x).
    """
    from core.hprocess import StopRule, green_oracle_for, last_exit_samples, simulate_paths

    rule = rule or StopRule(observation=D)
    result = simulate_paths(net, h, rule, n_paths, seed)
    green = green or green_oracle_for(net, result.potential, D)
    exits, excluded = last_exit_samples(result, D)
    pot = result.potential
    weights = np.array([1.0 / pot.escape_factor(y) for y in exits])
    rows = []
    flagged = []
    for x in D:
        if x == net.root:
            samples = np.zeros(len(exits))
        else:
            col = {y: green.value(x, y) for y in set(exits)}
            samples = np.array([col[y] for y in exits]) * weights
        mean = float(samples.mean()) if samples.size else math.nan
        stderr = float(samples.std(ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
        expected = pot(x)
        bad = abs(mean - expected) > max(3 * stderr, 1e-9)
        rows.append({'vertex': net.display(x), 'estimate': mean, 'stderr': stderr, 'h': expected, 'flagged': bad})
        if bad:
            flagged.append(net.display(x))
    return {
        'seed': seed,
        'n_paths': n_paths,
        'used': len(exits),
        'excluded': excluded,
        'rows': rows,
        'flagged': flagged,
        'passed': not flagged,
    }


def phi_closed_form_potential(net: Network) -> Potential:
    """
    h = g (1 - phi) / phi on a phi-product lattice, g = 1 / (2d (1 - mean phi)).

    Weighted-harmonic on B(o, T-1) minus o with Delta h(o) = 1; certified there.
    """
    g = net.metadata['green_root']
    values = {v: g * (1.0 - net.phi(v)) / net.phi(v) for v in range(net.layer_end(net.truncation_radius))}
    values[net.root] = 0.0
    region = ball_region(net, net.truncation_radius - 1)
    pot = Potential.from_values(net, values, region, name='phi-closed-form')
    pot.killed_level = None
    return pot


def phi_potential_check(net: Network) -> Dict[str, float]:
    """
    Compare the phi closed form with the unit-lattice exhaustion potential.

    h phi equals H_T, the exhaustion potential of unit Z^d on B_T, at every
    vertex of the truncation. Also reports the weighted harmonicity of h on
    the inner ball and its root Laplacian.
    """
    from networks.generators import Lattice
    from networks.spec import parse_spec

    h = phi_closed_form_potential(net)
    unit = Lattice(parse_spec({'generator': 'lattice', 'params': {'d': net.d}}))
    H = exhaustion_potential(unit, ball_region(unit, net.truncation_radius))
    diff = 0.0
    for v in range(net.layer_end(net.truncation_radius)):
        lab = net.label(v)
        diff = max(diff, abs(h(v) * net.phi(v) - H(unit.vertex_id(lab))))
    return {
        'max_product_difference': diff,
        'harmonic_residual': h.certificate.harmonic_residual,
        'root_residual': h.certificate.root_residual,
        'killed_level': float(H.killed_level),
        'green_root': float(net.metadata['green_root']),
    }
