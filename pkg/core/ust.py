"""
Loop-erased walks, Wilson's algorithm and spanning tree statistics.

Every walk here runs on the induced network of a finite region (edges leaving
the region are dropped), so it is recurrent and always hits its targets.
Wilson walks draw from RNG stream 2 of their sample index, which keeps them
independent of the h-process paths (streams 0 and 1) used by ``end_profile``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import stats

from core.exceptions import SimulationException, TableTooLargeException
from core.potentials import Potential
from networks.base_network import Network
from networks.region import Region, ball_region
from utils.math_helpers import proportion_stderr
from utils.parallel import parallel_map
from utils.rng import UniformStream, validate_seed

logger = logging.getLogger(__name__)

WALK_STREAM = 2
ENUMERATION_CAP = 12

Edge = Tuple[int, int]
TreeKey = FrozenSet[Edge]


def _edge(a: int, b: int) -> Edge:
    return (a, b) if a < b else (b, a)


class _WalkTable:
    """Cumulative step distributions of the walk on a region's induced network"""

    def __init__(self, net: Network, region: Region):
        self.net = net
        self.region = region
        members = region.members
        self._steps: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        for v in region:
            inside = [(z, c) for z, c in net.neighbors(v) if z in members]
            if not inside:
                continue
            ids = np.array([z for z, _ in inside], dtype=np.int64)
            cum = np.cumsum([c for _, c in inside])
            cum = cum / cum[-1]
            cum[-1] = 1.0
            self._steps[v] = (ids, cum)

    def step(self, x: int, u: float) -> int:
        try:
            ids, cum = self._steps[x]
        except KeyError as e:
            raise SimulationException(f"{self.net.display(x)} has no neighbor inside the region") from e
        return int(ids[int(np.searchsorted(cum, u, side='right'))])


def random_walk(table: _WalkTable, start: int, targets: Iterable[int], uniforms: UniformStream,
                max_steps: int = 10_000_000) -> List[int]:
    """Walk from ``start`` until it first hits ``targets``"""
    target_set = set(targets)
    walk = [int(start)]
    while walk[-1] not in target_set:
        if len(walk) > max_steps:
            raise SimulationException(f"walk did not reach its targets within {max_steps} steps")
        walk.append(table.step(walk[-1], uniforms.next()))
    return walk


def loop_erase(walk: Sequence[int]) -> List[int]:
    """
    Chronological loop erasure.

    Examples:
        >>> loop_erase([3, 2, 3, 2, 1, 2, 1, 0])
        [3, 2, 1, 0]
    """
    path: List[int] = []
    position: Dict[int, int] = {}
    for v in walk:
        v = int(v)
        if v in position:
            cut = position[v] + 1
            for dropped in path[cut:]:
                del position[dropped]
            del path[cut:]
        else:
            position[v] = len(path)
            path.append(v)
    return path


def lerw(
    net: Network,
    start: int,
    targets: Iterable[int],
    seed: int,
    region: Optional[Region] = None,
    index: int = 0,
) -> List[int]:
    """
    Loop-erased random walk from ``start`` to its first hit of ``targets``.

    The walk lives on ``region`` (default: the smallest ball containing the
    start and targets, grown by one).

    Examples:
        >>> lerw(path_graph, path_graph.vertex_id(3), [path_graph.root], seed=1)
        [3, 2, 1, 0]
    """
    targets = [int(t) for t in targets]
    if region is None:
        reach = max(net.distance(v) for v in [int(start), *targets])
        region = ball_region(net, reach + 1)
    table = _WalkTable(net, region)
    uniforms = UniformStream(validate_seed(seed), index, stream=WALK_STREAM)
    return loop_erase(random_walk(table, int(start), targets, uniforms))


# ----------------------------------------------------------------------
# Spanning trees
# ----------------------------------------------------------------------

@dataclass
class SpanningTree:
    """
    Spanning tree of a region as a parent map toward the root.

    Attributes:
        net: Network
        region: Spanned region
        parent: Vertex id -> parent id; the root maps to None
        seed: Master seed of the sample
        index: Sample index under the seed
    """
    net: Network
    region: Region
    parent: Dict[int, Optional[int]]
    seed: Optional[int] = None
    index: int = 0

    def edges(self) -> TreeKey:
        return frozenset(_edge(v, p) for v, p in self.parent.items() if p is not None)

    def validate(self) -> 'SpanningTree':
        """
        Check the tree invariants.

        Raises:
            SimulationException: the parent map is not a spanning tree of the region
        """
        root = self.net.root
        if set(self.parent) != self.region.members:
            raise SimulationException("tree does not span the region")
        if self.parent.get(root, 0) is not None:
            raise SimulationException("the root must have no parent")
        for v, p in self.parent.items():
            if v == root:
                continue
            if p is None:
                raise SimulationException(f"{self.net.display(v)} has no parent")
            if not any(z == p for z, _ in self.net.neighbors(v)):
                raise SimulationException(f"parent edge {self.net.display(v)}-{self.net.display(p)} is not an edge")
        for v in self.parent:
            seen = set()
            while v is not None:
                if v in seen:
                    raise SimulationException("parent map has a cycle")
                seen.add(v)
                v = self.parent[v]
        return self

    def weight(self) -> float:
        return math.prod(self.net.edge_conductance(a, b) for a, b in self.edges())

    def to_rows(self) -> List[Dict[str, str]]:
        return [{'vertex': self.net.display(v), 'parent': '' if p is None else self.net.display(p)}
                for v, p in sorted(self.parent.items())]


def _check_connected(net: Network, region: Region) -> None:
    graph = net.to_networkx(list(region))
    if not nx.is_connected(graph):
        raise SimulationException(
            f"region is disconnected ({nx.number_connected_components(graph)} components)",
            {'vertices': len(region)})


def wilson_ust(
    net: Network,
    region: Region,
    seed: int,
    index: int = 0,
    order: Optional[Sequence[int]] = None,
    table: Optional[_WalkTable] = None,
) -> SpanningTree:
    """
    Weighted uniform spanning tree of a finite region by Wilson's algorithm.

    The tree is grown from the root. Starts are processed in ``order``
    (default: BFS order, i.e. increasing id); each start walks until it hits
    the tree, remembering only its last exit from every vertex, and the
    resulting loop-erased branch joins the tree.

    Raises:
        SimulationException: the region is disconnected
    """
    seed = validate_seed(seed)
    if table is None:
        _check_connected(net, region)
        table = _WalkTable(net, region)
    uniforms = UniformStream(seed, index, stream=WALK_STREAM)
    root = net.root
    in_tree = {root}
    parent: Dict[int, Optional[int]] = {root: None}
    following: Dict[int, int] = {}
    for start in (order if order is not None else list(region)):
        u = int(start)
        while u not in in_tree:
            following[u] = table.step(u, uniforms.next())
            u = following[u]
        u = int(start)
        while u not in in_tree:
            parent[u] = following[u]
            in_tree.add(u)
            u = following[u]
    return SpanningTree(net, region, parent, seed, index)


def sample_trees(
    net: Network,
    region: Region,
    n_samples: int,
    seed: int,
    order: Optional[Sequence[int]] = None,
    batch_size: int = 1000,
) -> List[SpanningTree]:
    """Samples ``0 .. n_samples - 1`` under ``seed``, batched on the thread pool"""
    _check_connected(net, region)
    table = _WalkTable(net, region)
    batches = [range(s, min(s + batch_size, n_samples)) for s in range(0, n_samples, batch_size)]

    def run(indices: range) -> List[SpanningTree]:
        return [wilson_ust(net, region, seed, i, order, table) for i in indices]

    return [t for batch in parallel_map(run, batches, label='wilson batch') for t in batch]


def tree_prob_enumerate(net: Network, region: Optional[Region] = None) -> Dict[TreeKey, float]:
    """
    Exact spanning tree law: weights proportional to products of conductances.

    Raises:
        TableTooLargeException: more than 12 vertices
    """
    ids = list(region) if region is not None else list(range(net.num_vertices() or 0))
    if len(ids) > ENUMERATION_CAP:
        raise TableTooLargeException(
            f"tree enumeration is limited to {ENUMERATION_CAP} vertices, got {len(ids)}",
            {'vertices': len(ids)})
    graph = net.to_networkx(ids)
    weights: Dict[TreeKey, float] = {}
    for tree in nx.SpanningTreeIterator(graph, weight='weight'):
        key = frozenset(_edge(a, b) for a, b in tree.edges())
        weights[key] = math.prod(d['weight'] for _, _, d in tree.edges(data=True))
    total = math.fsum(weights.values())
    logger.debug(f"enumerated {len(weights)} spanning trees on {len(ids)} vertices")
    return {k: w / total for k, w in weights.items()}


def matrix_tree_weight(net: Network, region: Region) -> float:
    """
    Total weight of the spanning trees of a region's induced network.

    The weighted Laplacian with the root row and column removed has this
    weight as its determinant.
    """
    graph = net.to_networkx(list(region))
    lap = nx.laplacian_matrix(graph, nodelist=sorted(graph.nodes), weight='weight').toarray()
    reduced = lap[1:, 1:]
    if reduced.size == 0:
        return 1.0
    sign, logdet = np.linalg.slogdet(reduced)
    return float(sign * math.exp(logdet))


def tree_chi_square(samples: Sequence[SpanningTree], exact: Mapping[TreeKey, float]) -> Dict[str, Any]:
    """Goodness of fit of sampled trees against the exact law (scipy ``chisquare``)"""
    counts: Dict[TreeKey, int] = {}
    for tree in samples:
        key = tree.edges()
        counts[key] = counts.get(key, 0) + 1
    keys = sorted(exact, key=lambda k: sorted(k))
    observed = np.array([counts.get(k, 0) for k in keys], dtype=float)
    expected = np.array([exact[k] for k in keys]) * len(samples)
    illegal = sum(n for k, n in counts.items() if k not in exact)
    test = stats.chisquare(observed, expected * observed.sum() / expected.sum())
    return {
        'n_samples': len(samples),
        'trees': len(keys),
        'statistic': float(test.statistic),
        'p_value': float(test.pvalue),
        'illegal': illegal,
        'frequencies': (observed / max(len(samples), 1)).tolist(),
        'exact': [exact[k] for k in keys],
    }


# ----------------------------------------------------------------------
# Crossings
# ----------------------------------------------------------------------

def _net_crossings(path: Sequence[int]) -> Dict[Edge, int]:
    out: Dict[Edge, int] = {}
    for a, b in zip(path, path[1:]):
        key = _edge(a, b)
        out[key] = out.get(key, 0) + (1 if a < b else -1)
    return out


def lerw_net_crossings(
    net: Network,
    region: Region,
    start: int,
    targets: Iterable[int],
    n_samples: int,
    seed: int,
) -> Dict[str, Any]:
    """
    Net edge crossings of the stopped walk against those of its loop erasure.

    A crossing of (a, b) with a < b counts +1 in that direction and -1 in
    the other. Erased loops are traversed both ways equally often on average,
    so the expected net crossings agree edge by edge; every edge whose mean
    difference exceeds three standard errors is flagged.
    """
    table = _WalkTable(net, region)
    targets = [int(t) for t in targets]
    diffs: Dict[Edge, np.ndarray] = {}
    walk_mean: Dict[Edge, float] = {}
    for i in range(n_samples):
        walk = random_walk(table, int(start), targets, UniformStream(seed, i, stream=WALK_STREAM))
        w_cross = _net_crossings(walk)
        l_cross = _net_crossings(loop_erase(walk))
        for key in set(w_cross) | set(l_cross):
            if key not in diffs:
                diffs[key] = np.zeros(n_samples)
                walk_mean[key] = 0.0
            diffs[key][i] = w_cross.get(key, 0) - l_cross.get(key, 0)
            walk_mean[key] += w_cross.get(key, 0) / n_samples
    rows = []
    for (a, b), d in sorted(diffs.items()):
        stderr = float(d.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
        mean = float(d.mean())
        rows.append({'edge': f"{net.display(a)}-{net.display(b)}", 'walk': walk_mean[(a, b)],
                     'difference': mean, 'stderr': stderr,
                     'flagged': bool(abs(mean) > max(3 * stderr, 1e-12))})
    return {'seed': seed, 'n_samples': n_samples, 'rows': rows, 'passed': not any(r['flagged'] for r in rows)}


# ----------------------------------------------------------------------
# End profile
# ----------------------------------------------------------------------

@dataclass
class EndProfile:
    """
    Two-branch merge statistics for a UST.

    Attributes:
        r: Inner radius
        radii: Outer radii R
        merges: Per R, one 0/1 entry per usable sample: did the branches
            from the two last exits of B_R merge inside B(o, r)
        merge_distance: Per R, distance from the root of each merge point
        insufficient: Per R, samples without a usable last exit
    """
    r: int
    radii: List[int]
    merges: Dict[int, List[int]] = field(default_factory=dict)
    merge_distance: Dict[int, List[int]] = field(default_factory=dict)
    insufficient: Dict[int, int] = field(default_factory=dict)

    def frequency(self, R: int) -> float:
        m = self.merges.get(R, [])
        return sum(m) / len(m) if m else math.nan

    def stderr(self, R: int) -> float:
        return proportion_stderr(self.frequency(R), len(self.merges.get(R, [])))

    def series(self) -> List[Dict[str, float]]:
        """(R, frequency, stderr) rows"""
        return [{'R': R, 'frequency': self.frequency(R), 'stderr': self.stderr(R),
                 'samples': len(self.merges.get(R, []))} for R in self.radii]

    def to_dict(self) -> Dict[str, Any]:
        return {'r': self.r, 'series': {str(R): row for R, row in zip(self.radii, self.series())},
                'insufficient': {str(k): v for k, v in self.insufficient.items()}}


def _branch_merge(table: _WalkTable, root: int, w1: int, w2: int, uniforms: UniformStream) -> int:
    gamma1 = loop_erase(random_walk(table, w1, [root], uniforms))
    gamma2 = loop_erase(random_walk(table, w2, gamma1, uniforms))
    return gamma2[-1]


def end_profile(
    net: Network,
    potentials: Sequence[Potential],
    r: int,
    radii: Sequence[int],
    n_samples: int,
    seed: int,
    epsilon: Optional[float] = None,
    walk_radius: Optional[int] = None,
) -> EndProfile:
    """
    Merge frequency of two Wilson branches started from h-process last exits.

    For each outer radius R and sample i, two independent h-processes
    (streams 0 and 1; ``potentials`` may hold one potential used twice or
    two different ones) give last exits w1, w2 of B(o, R). The walk from w1
    to the root is loop-erased into gamma1, the walk from w2 is run until it
    hits gamma1, and the sample records whether that merge point lies in
    B(o, r). Walks run on the ball of radius ``walk_radius`` (default 2 max R).
    No verdict about ends is drawn; the curve over R is the output.

    Raises:
        SimulationException: no usable last exit at some R
    """
    from core.hprocess import StopRule, last_exit_index, simulate_paths

    if not potentials or len(potentials) > 2:
        raise ValueError("end_profile takes one or two potentials")
    h1 = potentials[0]
    h2 = potentials[-1]
    radii = [int(R) for R in radii]
    if any(R < r for R in radii):
        raise ValueError("outer radii must be at least r")
    region = ball_region(net, walk_radius or 2 * max(radii))
    table = _WalkTable(net, region)
    profile = EndProfile(r=r, radii=radii)

    for R in radii:
        ball = ball_region(net, R)
        members = ball.members
        rule1 = StopRule(observation=ball, epsilon=epsilon)
        rule2 = StopRule(observation=ball, epsilon=epsilon)
        res1 = simulate_paths(net, h1, rule1, n_samples, seed, stream=0)
        res2 = simulate_paths(net, h2, rule2, n_samples, seed, stream=1)

        def sample(i: int) -> Optional[int]:
            p1, p2 = res1.paths[i], res2.paths[i]
            if res1.path_bias(p1, members) > rule1.epsilon or res2.path_bias(p2, members) > rule2.epsilon:
                return None
            L1, L2 = last_exit_index(p1, members), last_exit_index(p2, members)
            w1 = int(p1.vertices[L1]) if L1 >= 0 else net.root
            w2 = int(p2.vertices[L2]) if L2 >= 0 else net.root
            return _branch_merge(table, net.root, w1, w2, UniformStream(seed, i, stream=WALK_STREAM))

        merges = parallel_map(sample, list(range(n_samples)), label='end sample')
        usable = [m for m in merges if m is not None]
        profile.insufficient[R] = len(merges) - len(usable)
        if not usable:
            raise SimulationException(f"no certified last exits of B({R})", {'R': R})
        profile.merge_distance[R] = [net.distance(m) for m in usable]
        profile.merges[R] = [1 if net.distance(m) <= r else 0 for m in usable]
        logger.info(f"end profile R={R}: merge-in-B({r}) frequency {profile.frequency(R):.4f} "
                    f"over {len(usable)} samples")
    return profile
