"""
The Doob h-transform chain.

For a potential h the h-process moves from x to y with probability
p(x, y) h(y) / h(x) on S_h = {h > 0} and starts from mu_h(v) = c_ov h(v) on
the root's neighbors. It is transient, so every simulated path is stopped:

- ``LEVEL_REACHED``: h(Y_n) reached the stop level. By the Green identities
  P^h_v(ever hit w) <= h(w) / h(v), so past the level max(level, sum over the
  inner boundary of D_obs of h(w) / eps) the path returns to D_obs with
  probability at most eps.
- ``REGION_EDGE``: the path left the region where h is known. For an
  exhaustion potential of the killed walk this is where the conditioned walk
  ends, so nothing is lost; otherwise the potential's extender grows it first.
- ``BUDGET``: the step budget ran out; such paths carry no bias bound.

Paths run in vectorized lockstep batches. Path i under seed s draws every
uniform from its own Philox stream (``utils.rng``): the first uniform picks
the start from mu_h and each step consumes exactly one more, so a path does
not depend on the batch it was simulated in.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from core.config import get_global_config
from core.exceptions import InvalidPotentialException, SimulationException, VertexNotFoundException
from core.green import GreenOracle
from core.harmonic_measure import MeasureOnSet, MeasureRoute
from core.linsolve import BoundaryMode, DirichletOperator
from core.potentials import Potential
from networks.base_network import Network
from networks.region import Region, ball_region, vertex_set_region
from utils.math_helpers import mean_and_stderr, proportion_stderr
from utils.parallel import parallel_map
from utils.rng import path_generator, validate_seed

logger = logging.getLogger(__name__)

MU_TOL = 1e-6
MIN_EXPECTED = 5.0


class StopReason(str, Enum):
    """Why a path stopped"""
    ACTIVE = "active"
    LEVEL_REACHED = "level-reached"
    REGION_EDGE = "region-edge"
    BUDGET = "budget"


_REASONS = [StopReason.ACTIVE, StopReason.LEVEL_REACHED, StopReason.REGION_EDGE, StopReason.BUDGET]


def _inner_boundary(net: Network, members: Iterable[int]) -> List[int]:
    member_set = set(int(v) for v in members)
    return sorted(v for v in member_set if any(z not in member_set for z, _ in net.neighbors(v)))


def _members(D: Union[Region, Iterable[int]]) -> List[int]:
    if isinstance(D, Region):
        return list(D)
    return sorted(set(int(v) for v in D))


@dataclass
class StopRule:
    """
    When to stop an h-process path.

    Attributes:
        observation: Region whose return probability is bounded
        epsilon: Return-probability bound, in (0, 1)
        budget: Maximum number of steps
        level: Explicit minimum stop level
        bound: ``union`` sums h over the inner boundary of the observation
            region; ``max`` uses its maximum, which is also a valid bound
    """
    observation: Region
    epsilon: Optional[float] = None
    budget: Optional[int] = None
    level: Optional[float] = None
    bound: str = 'union'

    def __post_init__(self):
        mc = get_global_config().monte_carlo
        if self.epsilon is None:
            self.epsilon = mc.epsilon
        if self.budget is None:
            self.budget = mc.step_budget
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.budget < 1:
            raise ValueError(f"step budget must be positive, got {self.budget}")
        if self.bound not in ('union', 'max'):
            raise ValueError(f"bound must be 'union' or 'max', got '{self.bound}'")

    def bound_sum(self, h: Potential, D: Optional[Iterable[int]] = None) -> float:
        """Sum (or max) of h over the inner boundary of D (default: the observation region)"""
        boundary = self.observation.boundary if D is None else _inner_boundary(h.net, D)
        try:
            vals = [h(w) for w in boundary]
        except VertexNotFoundException as e:
            raise SimulationException("the potential does not cover the observation region") from e
        if not vals:
            return 0.0
        return math.fsum(vals) if self.bound == 'union' else max(vals)

    def stop_level(self, h: Potential) -> float:
        level = self.bound_sum(h) / self.epsilon
        if self.level is not None:
            level = max(level, float(self.level))
        observed = max(h(v) for v in self.observation if v in h)
        if level <= observed:
            raise SimulationException(
                f"stop level {level:g} does not exceed max h = {observed:g} on the observation region")
        return level

    def to_dict(self) -> Dict[str, Any]:
        return {
            'observation': self.observation.describe(),
            'epsilon': self.epsilon,
            'budget': self.budget,
            'level': self.level,
            'bound': self.bound,
        }


@dataclass
class HPath:
    """
    One simulated trajectory Y_0, Y_1, ... (the root is not recorded).

    Attributes:
        vertices: Vertex ids; consecutive entries are adjacent
        seed: Master seed
        index: Path index under the seed
        stop_reason: Why the path stopped
        log_prob: Log probability of the recorded path under mu_h and p^h
        extensions: (step, radius) for every growth of the potential while
            this path was running
    """
    vertices: np.ndarray
    seed: int
    index: int
    stop_reason: StopReason
    log_prob: float
    extensions: List[Tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.vertices.size)

    @property
    def final(self) -> int:
        return int(self.vertices[-1])

    def labels(self, net: Network) -> List[str]:
        return [net.display(int(v)) for v in self.vertices]


@dataclass
class SimulationResult:
    """Paths plus everything needed to interpret them"""
    paths: List[HPath]
    potential: Potential
    rule: StopRule
    stop_level: float
    seed: int
    n_paths: int
    kernel_defect: float

    @property
    def net(self) -> Network:
        return self.potential.net

    def stop_counts(self) -> Dict[str, int]:
        counts = {r.value: 0 for r in _REASONS[1:]}
        for p in self.paths:
            counts[p.stop_reason.value] += 1
        return counts

    def path_bias(self, path: HPath, D: Optional[Iterable[int]] = None) -> float:
        """
        Bound on the probability that the path would have returned to D.

        Zero for a killed potential stopped at its region edge, infinite for
        a budget stop.
        """
        if path.stop_reason == StopReason.BUDGET:
            return math.inf
        if path.stop_reason == StopReason.REGION_EDGE and self.potential.killed_level is not None:
            return 0.0
        h_end = self.potential.values.get(path.final)
        if not h_end:
            return math.inf
        return self.rule.bound_sum(self.potential, D) / h_end

    def to_dict(self) -> Dict[str, Any]:
        lengths = [len(p) for p in self.paths]
        return {
            'seed': self.seed,
            'n_paths': self.n_paths,
            'epsilon': self.rule.epsilon,
            'stop_level': self.stop_level,
            'rule': self.rule.to_dict(),
            'stop_reasons': self.stop_counts(),
            'kernel_defect': self.kernel_defect,
            'mean_length': float(np.mean(lengths)) if lengths else 0.0,
            'max_length': int(max(lengths)) if lengths else 0,
            'bias_bound_total': float(sum(min(self.path_bias(p), 1.0) for p in self.paths)),
            'extensions': sum(len(p.extensions) for p in self.paths),
        }


# ----------------------------------------------------------------------
# Kernel
# ----------------------------------------------------------------------

def mu_h(net: Network, h: Potential) -> Dict[int, float]:
    """
    Initial law mu_h(v) = c_ov h(v) over the root's neighbors.

    Raises:
        InvalidPotentialException: total mass differs from 1 by more than 1e-6
    """
    weights = {z: c * h(z) for z, c in net.neighbors(net.root)}
    total = math.fsum(weights.values())
    if abs(total - 1.0) > MU_TOL or any(w < -1e-12 for w in weights.values()):
        raise InvalidPotentialException(
            f"mu_h has total mass {total:.12g}; the root Laplacian of '{h.name}' is not 1",
            {'total': total})
    return weights


def step_kernel(net: Network, h: Potential, x: int) -> Dict[int, float]:
    """
    p^h(x, y) = c_xy h(y) / (c_x h(x)) over the neighbors of x.

    Not renormalized: the values sum to 1 exactly where h is harmonic.

    Raises:
        SimulationException: x outside S_h
    """
    hx = h(x)
    if not hx > 0:
        raise SimulationException(f"{net.display(int(x))} is outside S_h (h = {hx})")
    cx = net.conductance_sum(x)
    return {y: c * h(y) / (cx * hx) for y, c in net.neighbors(x)}


class _KernelTable:
    """Padded transition arrays for every vertex of S_h in the certified region"""

    def __init__(self, net: Network, h: Potential):
        self.potential = h
        ids = [v for v in h.region if h.values.get(v, 0.0) > 0]
        top = max(h.values) + 1
        self.hval = np.full(top, np.nan)
        for v, val in h.values.items():
            self.hval[v] = val
        self.rowmap = np.full(top, -1, dtype=np.int64)
        width = max((len(net.neighbors(v)) for v in ids), default=1)
        self.nbr = np.full((len(ids), width), -1, dtype=np.int64)
        self.cum = np.full((len(ids), width), 2.0)
        self.logp = np.full((len(ids), width), -np.inf)
        defect = 0.0
        for row, v in enumerate(ids):
            self.rowmap[v] = row
            kern = step_kernel(net, h, v)
            probs = np.array(list(kern.values()))
            total = probs.sum()
            defect = max(defect, abs(total - 1.0))
            probs = probs / total
            k = probs.size
            self.nbr[row, :k] = list(kern.keys())
            c = np.cumsum(probs)
            c[-1] = 1.0
            self.cum[row, :k] = c
            with np.errstate(divide='ignore'):
                self.logp[row, :k] = np.log(probs)
        self.defect = float(defect)
        logger.debug(f"h-kernel on {len(ids)} vertices, width {width}, defect {defect:.3e}")

    def row_of(self, ys: np.ndarray) -> np.ndarray:
        inside = ys < self.rowmap.size
        out = np.full(ys.shape, -1, dtype=np.int64)
        out[inside] = self.rowmap[ys[inside]]
        return out

    def h_of(self, ys: np.ndarray) -> np.ndarray:
        inside = ys < self.hval.size
        out = np.full(ys.shape, np.nan)
        out[inside] = self.hval[ys[inside]]
        return out


class _PotentialHolder:
    """Shared potential and kernel; growth happens under the lock"""

    def __init__(self, net: Network, h: Potential):
        self.net = net
        self._lock = threading.Lock()
        self.potential = h
        self.kernel = _KernelTable(net, h)

    @property
    def extendable(self) -> bool:
        return self.potential.extender is not None and self.potential.killed_level is None

    def radius(self) -> int:
        h = self.potential
        if h.region.radius is not None:
            return h.region.radius
        return max(self.net.distance(v) for v in h.region)

    def ensure(self, v: int) -> Tuple['_KernelTable', Optional[int]]:
        """Grow the potential until v has a kernel row; returns (kernel, new radius or None)"""
        with self._lock:
            if self.kernel.row_of(np.array([v]))[0] >= 0:
                return self.kernel, None
            target = max(2 * self.radius(), self.net.distance(v) + 1)
            self.potential = self.potential.extend(target)
            self.kernel = _KernelTable(self.net, self.potential)
            return self.kernel, target


# ----------------------------------------------------------------------
# Simulation
# ----------------------------------------------------------------------

def _run_batch(
    net: Network,
    holder: _PotentialHolder,
    mu_ids: np.ndarray,
    mu_cum: np.ndarray,
    mu_logp: np.ndarray,
    stop_level: float,
    budget: int,
    seed: int,
    indices: Sequence[int],
    stream: int,
) -> List[HPath]:
    block = get_global_config().monte_carlo.block_size
    n = len(indices)
    gens = [path_generator(seed, i, stream) for i in indices]
    buf = np.empty((n, block))
    for i, g in enumerate(gens):
        buf[i] = g.random(block)
    ptr = 0

    cap = 256
    traj = np.full((n, cap), -1, dtype=np.int64)
    logp = np.zeros(n)
    reason = np.zeros(n, dtype=np.int8)
    extensions: List[List[Tuple[int, int]]] = [[] for _ in range(n)]
    kernel = holder.kernel

    def settle(rows_idx: np.ndarray, ys: np.ndarray, step: int) -> None:
        nonlocal kernel
        off = kernel.row_of(ys) < 0
        for i, y in zip(rows_idx[off], ys[off]):
            if holder.extendable:
                kernel, radius = holder.ensure(int(y))
                if radius is not None:
                    extensions[i].append((step, radius))
            else:
                reason[i] = 2
        live = rows_idx[reason[rows_idx] == 0]
        if live.size:
            hv = kernel.h_of(traj[live, step])
            reason[live[hv >= stop_level]] = 1
        if step >= budget:
            reason[rows_idx[reason[rows_idx] == 0]] = 3

    u = buf[:, ptr]
    ptr += 1
    k = (mu_cum[None, :] <= u[:, None]).sum(axis=1)
    traj[:, 0] = mu_ids[k]
    logp += mu_logp[k]
    settle(np.arange(n), traj[:, 0], 0)

    t = 0
    while True:
        active = np.flatnonzero(reason == 0)
        if active.size == 0:
            break
        t += 1
        if ptr == block:
            for i in active:
                buf[i] = gens[i].random(block)
            ptr = 0
        u = buf[active, ptr]
        ptr += 1
        if t >= cap:
            cap *= 2
            grown = np.full((n, cap), -1, dtype=np.int64)
            grown[:, :traj.shape[1]] = traj
            traj = grown
        x = traj[active, t - 1]
        rows = kernel.row_of(x)
        k = (kernel.cum[rows] <= u[:, None]).sum(axis=1)
        y = kernel.nbr[rows, k]
        logp[active] += kernel.logp[rows, k]
        traj[active, t] = y
        settle(active, y, t)

    lengths = (traj >= 0).sum(axis=1)
    return [
        HPath(traj[i, :lengths[i]].copy(), seed, int(indices[i]), _REASONS[reason[i]], float(logp[i]), extensions[i])
        for i in range(n)
    ]


def _prepare(net: Network, h: Potential) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = mu_h(net, h)
    support = sorted(v for v, w in mu.items() if w > 0)
    w = np.array([mu[v] for v in support])
    w = w / w.sum()
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.array(support, dtype=np.int64), cum, np.log(w)


def simulate_paths(
    net: Network,
    h: Potential,
    rule: StopRule,
    n_paths: int,
    seed: int,
    start_index: int = 0,
    stream: int = 0,
    batch_size: int = 4096,
) -> SimulationResult:
    """
    Simulate paths ``start_index .. start_index + n_paths - 1`` under ``seed``.

    Batches run on the thread pool; the potential may grow between steps if
    it has an extender, and growth is recorded in every affected path.

    Examples:
        >>> res = simulate_paths(z, half_abs, StopRule(interval_region(z, 3, 3), epsilon=0.01), 1000, 7)
        >>> res.stop_counts()['level-reached']
        1000
    """
    seed = validate_seed(seed)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    holder = _PotentialHolder(net, h)
    stop_level = rule.stop_level(h)
    mu_ids, mu_cum, mu_logp = _prepare(net, h)
    starts = list(range(start_index, start_index + n_paths, batch_size))
    batches = [list(range(s, min(s + batch_size, start_index + n_paths))) for s in starts]
    logger.info(f"Simulating {n_paths} h-paths (seed={seed}, stop level {stop_level:.6g})")

    def run(indices: List[int]) -> List[HPath]:
        return _run_batch(net, holder, mu_ids, mu_cum, mu_logp, stop_level, rule.budget, seed, indices, stream)

    paths = [p for batch in parallel_map(run, batches, label='h-path batch') for p in batch]
    result = SimulationResult(paths, holder.potential, rule, stop_level, seed, n_paths, holder.kernel.defect)
    counts = result.stop_counts()
    if counts[StopReason.BUDGET.value]:
        logger.warning(f"{counts[StopReason.BUDGET.value]} of {n_paths} paths hit the step budget")
    return result


def simulate(net: Network, h: Potential, rule: StopRule, seed: int, index: int = 0, stream: int = 0) -> HPath:
    """Single path ``index`` under ``seed``; identical to that path in any batch run"""
    return simulate_paths(net, h, rule, 1, seed, start_index=index, stream=stream).paths[0]


def path_log_probability(net: Network, h: Potential, path: HPath) -> float:
    """Recompute log P^h(path) from mu_h and the normalized kernel"""
    v0 = int(path.vertices[0])
    mu = mu_h(net, h)
    total = math.fsum(w for w in mu.values() if w > 0)
    logp = math.log(mu[v0] / total)
    for x, y in zip(path.vertices[:-1], path.vertices[1:]):
        kern = step_kernel(net, h, int(x))
        logp += math.log(kern[int(y)] / math.fsum(kern.values()))
    return logp


# ----------------------------------------------------------------------
# Green identity
# ----------------------------------------------------------------------

def green_oracle_for(net: Network, h: Potential, D: Union[Region, Iterable[int]], radius: Optional[int] = None) -> GreenOracle:
    """
    Green oracle matching the chain behind ``h``.

    Killed exhaustion potentials use g of the walk killed at the root and on
    leaving their region; other potentials use a reflecting ball that
    contains D with room to spare.
    """
    if h.killed_level is not None:
        return GreenOracle(net, h.region, [net.root], BoundaryMode.ABSORBING)
    reach = max(net.distance(v) for v in _members(D))
    return GreenOracle(net, ball_region(net, radius or 4 * (reach + 1)), [net.root], BoundaryMode.REFLECTING)


def green_tail_completion(
    result: SimulationResult,
    targets: Sequence[int],
    green: GreenOracle,
) -> Tuple[np.ndarray, int]:
    """
    Expected visits after the stop, g_o(Y_T, v) c_v h(v) / h(Y_T), per path and target.

    Killed paths at their region edge get nothing. Paths whose final vertex
    the oracle does not cover are skipped and counted. Each distinct final
    vertex is evaluated once.

    Returns:
        (array paths x targets, number of skipped paths)
    """
    net = result.net
    pot = result.potential
    out = np.zeros((len(result.paths), len(targets)))
    if not result.paths:
        return out, 0
    weights = np.array([net.conductance_sum(v) * pot(v) for v in targets])
    finals = np.array([path.final for path in result.paths], dtype=np.int64)
    live = np.ones(len(finals), dtype=bool)
    if pot.killed_level is not None:
        live = np.array([path.stop_reason != StopReason.REGION_EDGE for path in result.paths])
    uniq, inverse = np.unique(finals, return_inverse=True)
    covered = np.array([green.covers(int(y)) for y in uniq])
    use = live & covered[inverse]
    skipped = int(np.count_nonzero(live & ~covered[inverse]))
    inside = uniq[covered]
    if inside.size:
        h_inside = np.array([pot(int(y)) for y in inside])
        table = np.column_stack([green.values(inside, v) for v in targets]) * weights / h_inside[:, None]
        row_of = np.full(len(uniq), -1)
        row_of[covered] = np.arange(inside.size)
        out[use] = table[row_of[inverse[use]]]
    return out, skipped


def visit_counts(result: SimulationResult, targets: Sequence[int]) -> np.ndarray:
    """Visits to each target per path (paths x targets)"""
    out = np.zeros((len(result.paths), len(targets)))
    for i, path in enumerate(result.paths):
        ids, counts = np.unique(path.vertices, return_counts=True)
        lookup = dict(zip(ids.tolist(), counts.tolist()))
        out[i] = [lookup.get(int(v), 0) for v in targets]
    return out


def _green_rows(net: Network, pot: Potential, targets: Sequence[int], samples: np.ndarray) -> List[Dict[str, Any]]:
    rows = []
    for j, v in enumerate(targets):
        mean, stderr = mean_and_stderr(samples[:, j])
        expected = pot(v) * net.conductance_sum(v) * pot.escape_factor(v) if v in pot else 0.0
        rel = abs(mean - expected) / expected if expected else abs(mean)
        flagged = abs(mean - expected) > max(3 * stderr, 1e-12)
        rows.append({
            'vertex': net.display(int(v)),
            'mean_visits': mean,
            'stderr': stderr,
            'expected': expected,
            'relative_error': rel,
            'flagged': bool(flagged),
        })
    return rows


def empirical_green_check(
    result: SimulationResult,
    targets: Sequence[int],
    green: Optional[GreenOracle] = None,
) -> Dict[str, Any]:
    """
    Mean visit counts against h(v) c_v (times 1 - h(v)/H for killed potentials).

    With a Green oracle the truncated counts get their exact tail completion.
    Targets outside S_h are expected to get zero visits.
    """
    samples = visit_counts(result, targets)
    skipped = 0
    if green is not None:
        tail, skipped = green_tail_completion(result, targets, green)
        samples = samples + tail
    rows = _green_rows(result.net, result.potential, targets, samples)
    return {
        'seed': result.seed,
        'n_paths': result.n_paths,
        'tail_completed': green is not None,
        'tail_skipped': skipped,
        'rows': rows,
        'passed': not any(r['flagged'] for r in rows),
    }


def streamed_green_check(
    net: Network,
    h: Potential,
    rule: StopRule,
    targets: Sequence[int],
    n_paths: int,
    seed: int,
    batch_size: int = 50_000,
    green: Optional[GreenOracle] = None,
    relative_tol: Optional[float] = None,
) -> Dict[str, Any]:
    """
    ``empirical_green_check`` for path counts too large to keep in memory.

    Paths are simulated in chunks; only per-target running sums survive. With
    a Green oracle every chunk gets its tail completion, so for a potential
    that is not killed the target is h(v) c_v. ``relative_tol`` adds a bound
    on the relative error to the 3-standard-error test.
    """
    totals = np.zeros(len(targets))
    squares = np.zeros(len(targets))
    skipped = 0
    pot = h
    for start in range(0, n_paths, batch_size):
        count = min(batch_size, n_paths - start)
        chunk = simulate_paths(net, pot, rule, count, seed, start_index=start)
        pot = chunk.potential
        counts = visit_counts(chunk, targets)
        if green is not None:
            tail, missed = green_tail_completion(chunk, targets, green)
            counts = counts + tail
            skipped += missed
        totals += counts.sum(axis=0)
        squares += (counts ** 2).sum(axis=0)
    rows = []
    for j, v in enumerate(targets):
        mean = totals[j] / n_paths
        var = max(squares[j] / n_paths - mean ** 2, 0.0) * n_paths / max(n_paths - 1, 1)
        stderr = math.sqrt(var / n_paths)
        expected = pot(v) * net.conductance_sum(v) * pot.escape_factor(v)
        rel = abs(mean - expected) / expected if expected else abs(mean)
        flagged = abs(mean - expected) > max(3 * stderr, 1e-12)
        if relative_tol is not None:
            flagged = flagged or rel > relative_tol
        rows.append({
            'vertex': net.display(int(v)),
            'mean_visits': float(mean),
            'stderr': stderr,
            'expected': expected,
            'relative_error': rel,
            'flagged': bool(flagged),
        })
    return {'seed': seed, 'n_paths': n_paths, 'tail_completed': green is not None, 'tail_skipped': skipped,
            'relative_tol': relative_tol, 'rows': rows, 'passed': not any(r['flagged'] for r in rows)}


# ----------------------------------------------------------------------
# Last exits
# ----------------------------------------------------------------------

def last_exit_index(path: HPath, members: Iterable[int]) -> int:
    """L_D: last position in D, or -1 when the path never enters D"""
    hits = np.flatnonzero(np.isin(path.vertices, np.fromiter(members, dtype=np.int64)))
    return int(hits[-1]) if hits.size else -1


def last_exit_samples(
    result: SimulationResult,
    D: Union[Region, Iterable[int]],
) -> Tuple[List[int], Dict[str, int]]:
    """
    Y_{L_D} for every path whose bias bound for D is within epsilon.

    L_D = -1 means the path never entered D after leaving the root, so the
    sample is the root (when the root is in D).

    Returns:
        (samples, counts of excluded paths by cause)
    """
    members = _members(D)
    member_set = set(members)
    root = result.net.root
    excluded = {'budget': 0, 'weak_bound': 0, 'never_entered': 0}
    samples: List[int] = []
    for path in result.paths:
        bias = result.path_bias(path, members)
        if path.stop_reason == StopReason.BUDGET:
            excluded['budget'] += 1
            continue
        if bias > result.rule.epsilon:
            excluded['weak_bound'] += 1
            continue
        L = last_exit_index(path, member_set)
        if L < 0:
            if root in member_set:
                samples.append(root)
            else:
                excluded['never_entered'] += 1
            continue
        samples.append(int(path.vertices[L]))
    if any(excluded.values()):
        logger.info(f"last exits: excluded {excluded}")
    return samples, excluded


def last_exit_distribution(result: SimulationResult, D: Union[Region, Iterable[int]]) -> MeasureOnSet:
    """
    Empirical law of Y_{L_D}.

    Each used path returns to D after its stop with probability at most
    epsilon; the total bias bound is recorded with the sample counts.
    """
    members = _members(D)
    samples, excluded = last_exit_samples(result, members)
    if not samples:
        raise SimulationException("no path has a usable last exit for this set", excluded)
    ids, counts = np.unique(np.array(samples, dtype=np.int64), return_counts=True)
    freq = dict(zip(ids.tolist(), (counts / len(samples)).tolist()))
    weights = np.array([freq.get(v, 0.0) for v in members])
    return MeasureOnSet(result.net, tuple(members), weights, MeasureRoute.MC, {
        'seed': result.seed,
        'n_paths': result.n_paths,
        'used': len(samples),
        'excluded': excluded,
        'epsilon': result.rule.epsilon,
        'bias_bound_total': result.rule.epsilon * len(samples),
        'stderr': [proportion_stderr(w, len(samples)) for w in weights],
    })


# ----------------------------------------------------------------------
# Path reversal
# ----------------------------------------------------------------------

def grouped_chi_square(groups: Sequence[Tuple[np.ndarray, np.ndarray]]) -> Dict[str, float]:
    """
    Pearson and likelihood-ratio statistics over independent multinomial groups.

    Each group is (observed counts, cell probabilities). Cells with expected
    count below 5 are pooled; a pool still below 5 joins the smallest
    remaining cell. Degrees of freedom are the sum over groups of cells - 1.
    """
    pearson = 0.0
    g_stat = 0.0
    df = 0
    for observed, probs in groups:
        n = observed.sum()
        if n == 0:
            continue
        expected = probs * n
        small = expected < MIN_EXPECTED
        obs_cells = list(observed[~small])
        exp_cells = list(expected[~small])
        if small.any():
            pooled_o, pooled_e = observed[small].sum(), expected[small].sum()
            if pooled_e >= MIN_EXPECTED or not exp_cells:
                obs_cells.append(pooled_o)
                exp_cells.append(pooled_e)
            else:
                j = int(np.argmin(exp_cells))
                obs_cells[j] += pooled_o
                exp_cells[j] += pooled_e
        if len(exp_cells) < 2:
            continue
        o = np.array(obs_cells, dtype=float)
        e = np.array(exp_cells, dtype=float)
        pearson += float(((o - e) ** 2 / e).sum())
        nz = o > 0
        g_stat += float(2.0 * (o[nz] * np.log(o[nz] / e[nz])).sum())
        df += len(e) - 1
    return {
        'chi_square': pearson,
        'g_statistic': g_stat,
        'df': df,
        'p_value': float(stats.chi2.sf(pearson, df)) if df else 1.0,
        'g_p_value': float(stats.chi2.sf(g_stat, df)) if df else 1.0,
    }


def _avoid_probability(net: Network, h: Potential, stop_level: float, max_growth: int = 4) -> Dict[int, float]:
    """
    phi_S(v) = P_v(hit the root before {h >= stop level} or the region edge).

    An extendable potential is grown until the sub-level set no longer
    touches the edge of its certified region.
    """
    for _ in range(max_growth):
        below = [v for v in h.region if h.values.get(v, math.inf) < stop_level]
        edge = set(h.region.boundary)
        if h.extender is None or h.killed_level is not None or not any(v in edge for v in below):
            break
        radius = h.region.radius or max(net.distance(v) for v in h.region)
        h = h.extend(2 * radius)
    U = vertex_set_region(net, below, shape='below-level')
    op = DirichletOperator(net, U, [net.root], BoundaryMode.ABSORBING)
    x = op.solve(op.rhs({net.root: 1.0}))
    return op.to_function(x, {net.root: 1.0})


def _reference_segments(
    net: Network, u: int, m: int, phi_s: Mapping[int, float]
) -> Dict[Tuple[int, ...], float]:
    """Segments of up to m steps from u of the walk conditioned on reaching the root before the stop set"""
    root = net.root
    out: Dict[Tuple[int, ...], float] = {}

    def walk(seg: Tuple[int, ...], prob: float) -> None:
        x = seg[-1]
        if x == root or len(seg) == m + 1:
            out[seg] = out.get(seg, 0.0) + prob
            return
        cx = net.conductance_sum(x)
        for y, c in net.neighbors(x):
            weight = phi_s.get(y, 0.0)
            if weight > 0:
                walk(seg + (y,), prob * c / cx * weight / phi_s[x])

    if phi_s.get(u, 0.0) > 0:
        walk((u,), 1.0)
    return out


def reversal_check(
    result: SimulationResult,
    D: Union[Region, Iterable[int]],
    m: int = 2,
) -> Dict[str, Any]:
    """
    Reversed exit segments against the network walk.

    For each used path the segment (Y_L, Y_{L-1}, ..., Y_0, o) is cut to m
    steps. Given its start u it should follow the network walk from u
    conditioned on reaching the root before the stop set, with
    probabilities computed exactly by a Dirichlet solve and enumeration.
    Segments impossible under that walk are counted as illegal.
    """
    net = result.net
    pot = result.potential
    members = _members(D)
    member_set = set(members)
    phi_s = _avoid_probability(net, pot, result.stop_level)

    by_start: Dict[int, Dict[Tuple[int, ...], int]] = {}
    used = 0
    for path in result.paths:
        if result.path_bias(path, members) > result.rule.epsilon:
            continue
        L = last_exit_index(path, member_set)
        if L < 0:
            continue
        seg = tuple(int(v) for v in path.vertices[L::-1][:m + 1])
        if len(seg) < m + 1:
            seg = seg + (net.root,)
        by_start.setdefault(seg[0], {})
        by_start[seg[0]][seg] = by_start[seg[0]].get(seg, 0) + 1
        used += 1

    groups = []
    illegal = 0
    for u, observed in sorted(by_start.items()):
        ref = _reference_segments(net, u, m, phi_s)
        cells = sorted(ref)
        counts = np.array([observed.get(c, 0) for c in cells], dtype=float)
        illegal += sum(n for seg, n in observed.items() if seg not in ref)
        groups.append((counts, np.array([ref[c] for c in cells])))
    test = grouped_chi_square(groups)
    return {'seed': result.seed, 'n_paths': result.n_paths, 'segments': used, 'm': m,
            'starts': len(by_start), 'illegal_segments': illegal, **test}


# ----------------------------------------------------------------------
# Martin kernel
# ----------------------------------------------------------------------

@dataclass
class MartinTrack:
    """g(x, Y_n) / f(Y_n) along one path, per target"""
    values: Dict[int, np.ndarray]
    dispersion: Dict[int, float]
    limit: Dict[int, float]


def martin_track(path: HPath, targets: Sequence[int], green: GreenOracle, h: Potential) -> MartinTrack:
    """
    Track g_o(x, Y_n) / f(Y_n) for each target x.

    f is the escape factor of a killed potential (1 otherwise). Positions
    the oracle does not cover, such as the final exterior vertex of a killed
    path, are dropped. Tail dispersion is max - min over the final quartile.
    """
    ys = [int(y) for y in path.vertices if green.covers(int(y)) and y in h]
    if not ys:
        raise SimulationException("path never enters the Green oracle region")
    factors = np.array([h.escape_factor(y) for y in ys])
    values: Dict[int, np.ndarray] = {}
    dispersion: Dict[int, float] = {}
    limit: Dict[int, float] = {}
    tail = max(1, len(ys) // 4)
    for x in targets:
        seq = np.array([green.value(x, y) for y in ys]) / factors
        values[int(x)] = seq
        dispersion[int(x)] = float(seq[-tail:].max() - seq[-tail:].min())
        limit[int(x)] = float(seq[-1])
    return MartinTrack(values, dispersion, limit)


def martin_expectation_check(
    result: SimulationResult,
    D: Union[Region, Iterable[int]],
    targets: Sequence[int],
    green: GreenOracle,
) -> Dict[str, Any]:
    """E[M(x, Y_L)] with M(x, y) = g_o(x, y) / (h(x) f(y)); should be 1 for each target"""
    pot = result.potential
    exits, excluded = last_exit_samples(result, D)
    factors = np.array([pot.escape_factor(y) for y in exits])
    rows = []
    for x in targets:
        hx = pot(x)
        if not hx > 0:
            continue
        samples = np.array([green.value(x, y) for y in exits]) / (hx * factors)
        mean, stderr = mean_and_stderr(samples)
        rows.append({'vertex': result.net.display(int(x)), 'mean': mean, 'stderr': stderr,
                     'deviation': abs(mean - 1.0), 'flagged': bool(abs(mean - 1.0) > max(3 * stderr, 1e-12))})
    return {'seed': result.seed, 'used': len(exits), 'excluded': excluded, 'rows': rows,
            'passed': not any(r['flagged'] for r in rows)}


def martin_limit_check(
    result: SimulationResult,
    targets: Sequence[int],
    green: GreenOracle,
    dispersion_tol: float = 0.05,
    share: float = 0.9,
) -> Dict[str, Any]:
    """
    Martin tracking over a batch: settled tails and E H(x) = h(x).

    A path settles when the tail dispersion of every target is at most
    ``dispersion_tol``; at least ``share`` of the paths must settle. H(x) is
    the last tracked value per path and its mean must lie within three
    standard errors of h(x).
    """
    pot = result.potential
    tracks = [martin_track(path, targets, green, pot) for path in result.paths]
    settled = sum(1 for t in tracks if max(t.dispersion.values()) <= dispersion_tol)
    settled_share = settled / len(tracks) if tracks else 0.0
    rows = []
    for x in targets:
        limits = np.array([t.limit[int(x)] for t in tracks])
        mean, stderr = mean_and_stderr(limits)
        expected = pot(x)
        rows.append({'vertex': result.net.display(int(x)), 'mean_limit': mean, 'stderr': stderr,
                     'expected': expected, 'deviation': abs(mean - expected),
                     'flagged': bool(abs(mean - expected) > max(3 * stderr, 1e-12))})
    return {'seed': result.seed, 'paths': len(tracks), 'settled_share': settled_share,
            'dispersion_tol': dispersion_tol, 'rows': rows,
            'passed': settled_share >= share and not any(r['flagged'] for r in rows)}


# ----------------------------------------------------------------------
# Intersections and escape
# ----------------------------------------------------------------------

@dataclass
class IntersectionReport:
    count: int
    pairs: List[Tuple[int, int]]


def intersection_count(path_a: HPath, path_b: HPath, max_pairs: int = 10_000) -> IntersectionReport:
    """All (m, n) with Y_m = Z_n; positions are kept up to ``max_pairs``"""
    positions: Dict[int, List[int]] = {}
    for n, z in enumerate(path_b.vertices.tolist()):
        positions.setdefault(z, []).append(n)
    count = 0
    pairs: List[Tuple[int, int]] = []
    for m, y in enumerate(path_a.vertices.tolist()):
        hits = positions.get(y)
        if not hits:
            continue
        count += len(hits)
        for n in hits:
            if len(pairs) < max_pairs:
                pairs.append((m, n))
    return IntersectionReport(count, pairs)


def escape_profile(result: SimulationResult, M: float, steps: Sequence[int]) -> Dict[int, float]:
    """
    Fraction of paths with h(Y_l) > M at each step l.

    A stopped path keeps its final position.
    """
    pot = result.potential
    out = {}
    for step in steps:
        above = 0
        for path in result.paths:
            y = int(path.vertices[min(step, len(path) - 1)])
            if pot.values.get(y, math.inf) > M:
                above += 1
        out[int(step)] = above / len(result.paths)
    return out


# ----------------------------------------------------------------------
# Exact conditional checks
# ----------------------------------------------------------------------

def conditional_tail_check(
    net: Network,
    h: Potential,
    region: Region,
    v: int,
    M: float,
    j: int,
) -> Dict[str, Any]:
    """
    P_o(h(X_j) >= M | tau_v < tau_o+) against the bound h(v) / M.

    The conditioned walk is the Doob transform by
    psi(x) = P_x(hit v before the root and before leaving ``region``); its
    law at time j is propagated exactly, with v absorbing.
    """
    v = int(v)
    root = net.root
    if v == root:
        raise ValueError("v must differ from the root")
    op = DirichletOperator(net, region, [root, v], BoundaryMode.ABSORBING)
    psi = op.to_function(op.solve(op.rhs({root: 0.0, v: 1.0})), {root: 0.0, v: 1.0})

    first = {y: c * psi.get(y, 0.0) for y, c in net.neighbors(root)}
    total = math.fsum(first.values())
    if total <= 0:
        raise SimulationException(f"{net.display(v)} is unreachable inside the region")
    law = {y: w / total for y, w in first.items() if w > 0}
    for _ in range(j - 1):
        nxt: Dict[int, float] = {}
        for x, p in law.items():
            if x == v:
                nxt[v] = nxt.get(v, 0.0) + p
                continue
            cx = net.conductance_sum(x)
            for y, c in net.neighbors(x):
                w = psi.get(y, 0.0)
                if w > 0:
                    nxt[y] = nxt.get(y, 0.0) + p * c / cx * w / psi[x]
        law = nxt
    prob = math.fsum(p for x, p in law.items() if h(x) >= M)
    bound = h(v) / M
    return {'vertex': net.display(v), 'M': M, 'j': j, 'probability': prob, 'bound': bound,
            'holds': prob <= bound + 1e-9, 'mass': math.fsum(law.values())}


def _walk_probability(net: Network, path: Sequence[int]) -> float:
    prob = 1.0
    for a, b in zip(path, path[1:]):
        prob *= net.edge_conductance(a, b) / net.conductance_sum(a)
    return prob


def dipole_mixture_path_check(
    net: Network,
    eta: Mapping[int, float],
    gammas: Sequence[Sequence[int]],
    h: Potential,
    region: Region,
) -> Dict[str, Any]:
    """
    Path probabilities of the walk conditioned to reach eta before returning.

    For each path gamma from a root neighbor, three quantities:
    the exact conditional mixture sum_v eta(v) P_o(o gamma | tau_v < tau_o+)
    from Dirichlet solves, the Green form c_o P_o(o gamma) g_o(gamma_l, eta),
    and the h-transform c_o P_o(o gamma) h(gamma_l).
    """
    root = net.root
    c_o = net.conductance_sum(root)
    green = GreenOracle(net, region, [root], BoundaryMode.REFLECTING)
    conditional = np.zeros(len(gammas))
    for v, weight in eta.items():
        if weight == 0:
            continue
        op = DirichletOperator(net, region, [root, int(v)], BoundaryMode.REFLECTING)
        psi = op.to_function(op.solve(op.rhs({root: 0.0, int(v): 1.0})), {root: 0.0, int(v): 1.0})
        escape = math.fsum(c * psi[y] for y, c in net.neighbors(root)) / c_o
        for i, gamma in enumerate(gammas):
            conditional[i] += weight * _walk_probability(net, [root, *gamma]) * psi[int(gamma[-1])] / escape
    mixture = np.array([
        c_o * _walk_probability(net, [root, *gamma]) * math.fsum(w * green.value(gamma[-1], v) for v, w in eta.items())
        for gamma in gammas
    ])
    transformed = np.array([c_o * _walk_probability(net, [root, *gamma]) * h(gamma[-1]) for gamma in gammas])
    return {
        'conditional': conditional.tolist(),
        'green_mixture': mixture.tolist(),
        'h_transform': transformed.tolist(),
        'identity_defect': float(np.max(np.abs(conditional - mixture))),
        'h_difference': float(np.max(np.abs(conditional - transformed))),
    }


# ----------------------------------------------------------------------
# Phi-product lattice
# ----------------------------------------------------------------------

def phi_kernel_check(net: Network) -> float:
    """max |c_xy / c_x - p(x, y) phi(y) / phi(x)| over every non-root vertex"""
    worst = 0.0
    for x in range(1, net.num_vertices()):
        ref = net.unit_kernel(x)
        cx = net.conductance_sum(x)
        for y, c in net.neighbors(x):
            worst = max(worst, abs(c / cx - ref[y]))
    return worst


def phi_transition_frequencies(result: SimulationResult, net: Network, min_visits: int = 30) -> Dict[str, Any]:
    """
    Observed h-process transitions against p(x, y)(1 - phi(y)) / (1 - phi(x)).

    That is the simple random walk conditioned to avoid the root. Vertices
    with fewer than ``min_visits`` departures are skipped.
    """
    transitions: Dict[int, Dict[int, int]] = {}
    for path in result.paths:
        vs = path.vertices.tolist()
        for x, y in zip(vs[:-1], vs[1:]):
            row = transitions.setdefault(x, {})
            row[y] = row.get(y, 0) + 1
    groups = []
    worst_z = 0.0
    for x, row in sorted(transitions.items()):
        n = sum(row.values())
        if n < min_visits:
            continue
        one_minus = 1.0 - net.phi(x)
        ref = {y: p * (1.0 - net.phi(y)) / one_minus for y, p in _srw(net, x).items()}
        cells = sorted(ref)
        counts = np.array([row.get(y, 0) for y in cells], dtype=float)
        probs = np.array([ref[y] for y in cells])
        probs = probs / probs.sum()
        groups.append((counts, probs))
        for cnt, p in zip(counts, probs):
            se = proportion_stderr(p, n)
            if se > 0:
                worst_z = max(worst_z, abs(cnt / n - p) / se)
    test = grouped_chi_square(groups)
    return {'vertices_tested': len(groups), 'max_abs_z': worst_z, **test}


def _srw(net: Network, x: int) -> Dict[int, float]:
    """p(x, y) = 1/(2d) of the unit lattice, over the network neighbors of x"""
    return {y: 1.0 / (2 * net.d) for y, _ in net.neighbors(x)}
