"""
Rooted weighted networks behind a neighbor oracle.

Vertex ids are assigned in breadth-first order from the root, lazily, one
distance layer at a time: before the neighbors of a layer-k vertex are
reported, layer k+1 is fully discovered. Ids are therefore stable under region
growth, and the ball of radius r is exactly the id range
``[0, layer_end(r))``.
"""

import bisect
import logging
import math
import re
import threading
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx

from core.cache_manager import MemoTable
from core.exceptions import NetworkSpecException, VertexNotFoundException
from networks.spec import ConductanceRule, NetworkSpec

logger = logging.getLogger(__name__)

VertexFunction = Union[Mapping[int, float], Callable[[int], float]]

_LABEL_TOKEN = re.compile(r'\([^()]*\)|[^,()\s]+')

# Guard for label lookups on generators without a distance formula
_MAX_SEARCH_LAYERS = 100_000


class Network(ABC):
    """
    Abstract rooted network.

    Subclasses describe the graph through labels (``label_neighbors``,
    ``raw_conductance``); this class owns id assignment, memoized neighbor
    lists and the conductance rule plumbing.
    """

    finite: bool = False

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.metadata: Dict[str, Any] = {}
        self._lock = threading.RLock()
        self._labels: List[Hashable] = []
        self._ids: Dict[Hashable, int] = {}
        self._layer_end: List[int] = []
        self._complete = False
        self._neighbor_memo = MemoTable(f"{spec.generator.value}.neighbors", max_size=2_000_000)
        self._scale = float(spec.conductance.scale)
        self._edge_table: Dict[frozenset, float] = {}

    def _init_root(self) -> None:
        """Register the root; subclasses call this at the end of __init__"""
        root = self.default_root() if self.spec.root is None else self.parse_label(self.spec.root)
        if not self.has_label(root):
            raise NetworkSpecException(f"root {self.format_label(root)} is not a vertex", field='root')
        self._register(root)
        self._layer_end.append(1)

    # ------------------------------------------------------------------
    # Generator interface
    # ------------------------------------------------------------------

    @abstractmethod
    def default_root(self) -> Hashable:
        """Root label used when the spec omits one"""

    @abstractmethod
    def has_label(self, label: Hashable) -> bool:
        """True when ``label`` names a vertex"""

    @abstractmethod
    def label_neighbors(self, label: Hashable) -> List[Hashable]:
        """Neighbor labels in canonical order"""

    @abstractmethod
    def parse_label(self, obj: Any) -> Hashable:
        """Convert a JSON or CLI token to a label"""

    def label_distance(self, label: Hashable) -> Optional[int]:
        """Graph distance from the root when a closed form exists"""
        return None

    def raw_conductance(self, a: Hashable, b: Hashable) -> float:
        """
        Conductance before scaling. Must be symmetric in (a, b) exactly.

        The base implementation covers the unit and per-edge rules.
        """
        rule = self.spec.conductance.rule
        if rule == ConductanceRule.UNIT:
            return 1.0
        if rule == ConductanceRule.PER_EDGE:
            default = self.spec.conductance.default
            return self._edge_table.get(frozenset((a, b)), 1.0 if default is None else default)
        raise NetworkSpecException(
            f"{type(self).__name__} does not support conductance rule {rule.value}",
            field='conductance.rule',
        )

    def _load_edge_table(self, entries: Sequence[Sequence[Any]]) -> None:
        for i, (u, v, c) in enumerate(entries):
            a, b = self.parse_label(u), self.parse_label(v)
            if b not in self.label_neighbors(a):
                raise NetworkSpecException(
                    f"table entry {i} is not an edge: {u} - {v}", field=f'conductance.table.{i}')
            self._edge_table[frozenset((a, b))] = float(c)

    # ------------------------------------------------------------------
    # Labels and ids
    # ------------------------------------------------------------------

    @property
    def root(self) -> int:
        return 0

    def _register(self, label: Hashable) -> int:
        vid = len(self._labels)
        self._labels.append(label)
        self._ids[label] = vid
        return vid

    def _discover(self, k: int) -> None:
        """Make sure layers 0..k are assigned ids"""
        if len(self._layer_end) > k or self._complete:
            return
        with self._lock:
            while len(self._layer_end) <= k and not self._complete:
                start = self._layer_end[-2] if len(self._layer_end) > 1 else 0
                end = self._layer_end[-1]
                for vid in range(start, end):
                    for lab in self.label_neighbors(self._labels[vid]):
                        if lab not in self._ids:
                            self._register(lab)
                new_end = len(self._labels)
                if new_end == end:
                    self._complete = True
                    logger.debug(f"Network exhausted at {end} vertices, {len(self._layer_end)} layers")
                    break
                self._layer_end.append(new_end)

    def layer_end(self, r: int) -> int:
        """Number of vertices at distance <= r"""
        self._discover(r)
        if r < len(self._layer_end):
            return self._layer_end[r]
        return self._layer_end[-1]

    def max_layer(self) -> Optional[int]:
        """Largest distance present, for finite networks once fully discovered"""
        if not self.finite:
            return None
        self._discover(_MAX_SEARCH_LAYERS)
        return len(self._layer_end) - 1

    def num_vertices(self) -> Optional[int]:
        if not self.finite:
            return None
        self._discover(_MAX_SEARCH_LAYERS)
        return len(self._labels)

    def distance(self, vid: int) -> int:
        """Graph distance from the root of an assigned id"""
        if vid < 0 or vid >= len(self._labels):
            raise VertexNotFoundException(f"vertex id {vid} has not been assigned", {'id': vid})
        return bisect.bisect_right(self._layer_end, vid)

    def label(self, vid: int) -> Hashable:
        if vid < 0 or vid >= len(self._labels):
            raise VertexNotFoundException(f"vertex id {vid} has not been assigned", {'id': vid})
        return self._labels[vid]

    def vertex_id(self, label: Any) -> int:
        """
        Id of a label, discovering layers as needed.

        Raises:
            VertexNotFoundException: when the label is not a vertex
        """
        if isinstance(label, (list, str)):
            label = self.parse_label(label)
        if label in self._ids:
            return self._ids[label]
        if not self.has_label(label):
            raise VertexNotFoundException(f"{self.format_label(label)} is not a vertex", {'label': str(label)})
        dist = self.label_distance(label)
        if dist is not None:
            self._discover(dist)
        else:
            k = len(self._layer_end)
            while label not in self._ids and not self._complete and k < _MAX_SEARCH_LAYERS:
                self._discover(k)
                k += 1
        if label not in self._ids:
            raise VertexNotFoundException(f"{self.format_label(label)} is not reachable from the root")
        return self._ids[label]

    def ids_for(self, labels: Sequence[Any]) -> List[int]:
        return [self.vertex_id(lab) for lab in labels]

    @staticmethod
    def format_label(label: Hashable) -> str:
        """Display form: tuples render as ``(a,b)``"""
        if isinstance(label, tuple):
            return '(' + ','.join(str(x) for x in label) + ')'
        return str(label)

    def display(self, vid: int) -> str:
        return self.format_label(self.label(vid))

    def parse_vertex_set(self, text: str) -> List[int]:
        """
        Parse a CLI vertex list such as ``"(0,0),(1,0)"`` or ``"-1,1"`` into ids.
        """
        tokens = _LABEL_TOKEN.findall(text)
        if not tokens:
            raise VertexNotFoundException(f"no vertices in '{text}'")
        return [self.vertex_id(self.parse_label(tok)) for tok in tokens]

    # ------------------------------------------------------------------
    # Oracle
    # ------------------------------------------------------------------

    def conductance(self, a: Hashable, b: Hashable) -> float:
        c = self.raw_conductance(a, b) * self._scale
        if not c > 0 or math.isinf(c):
            raise NetworkSpecException(
                f"non-positive conductance {c} on edge {self.format_label(a)}-{self.format_label(b)}",
                field='conductance',
            )
        return c

    def neighbors(self, vid: int) -> Tuple[Tuple[int, float], ...]:
        """
        Neighbor ids with conductances, in canonical label order.

        Memoized; safe for concurrent readers.
        """
        return self._neighbor_memo.get_or_compute(vid, lambda: self._compute_neighbors(vid))

    def _compute_neighbors(self, vid: int) -> Tuple[Tuple[int, float], ...]:
        label = self.label(vid)
        self._discover(self.distance(vid) + 1)
        out = []
        for lab in self.label_neighbors(label):
            out.append((self._ids[lab], self.conductance(label, lab)))
        return tuple(out)

    def conductance_sum(self, vid: int) -> float:
        """c_v = sum of conductances at v"""
        return math.fsum(c for _, c in self.neighbors(vid))

    def edge_conductance(self, x: int, y: int) -> float:
        for z, c in self.neighbors(x):
            if z == y:
                return c
        raise VertexNotFoundException(f"{self.display(x)} and {self.display(y)} are not adjacent")

    def parent(self, vid: int) -> Optional[int]:
        """First neighbor one layer closer to the root (BFS parent)"""
        if vid == self.root:
            return None
        d = self.distance(vid)
        for z, _ in self.neighbors(vid):
            if self.distance(z) == d - 1:
                return z
        raise VertexNotFoundException(f"vertex {vid} has no parent")

    def sphere(self, r: int) -> List[int]:
        """Ids at distance exactly r"""
        lo = 0 if r == 0 else self.layer_end(r - 1)
        return list(range(lo, self.layer_end(r)))

    def to_networkx(self, ids: Sequence[int]) -> nx.Graph:
        """Induced subgraph on ``ids`` with ``weight`` = conductance"""
        members = set(ids)
        graph = nx.Graph()
        graph.add_nodes_from(sorted(members))
        for v in sorted(members):
            for z, c in self.neighbors(v):
                if z in members and v < z:
                    graph.add_edge(v, z, weight=c)
        return graph

    def describe(self) -> Dict[str, Any]:
        """Summary used by ``net describe``"""
        return {
            'generator': self.spec.generator.value,
            'root': self.format_label(self.label(self.root)),
            'finite': self.finite,
            'vertices': self.num_vertices(),
            'metadata': self.metadata,
        }


def laplacian_apply(net: Network, f: VertexFunction, v: int) -> float:
    """
    Network Laplacian at v: sum over neighbors x of c_vx (f(x) - f(v)).

    Args:
        net: Network
        f: Vertex function, a mapping keyed by id or a callable on ids
        v: Vertex id

    Returns:
        (Delta f)(v)

    Raises:
        VertexNotFoundException: if f is undefined at v or one of its neighbors

    Examples:
        >>> line = build_network(parse_spec({"generator": "integer-line"}))
        >>> laplacian_apply(line, lambda i: max(line.label(i), 0), line.vertex_id(0))
        1.0
    """
    get = f if callable(f) else f.__getitem__
    try:
        fv = get(v)
        return math.fsum(c * (get(x) - fv) for x, c in net.neighbors(v))
    except KeyError as e:
        raise VertexNotFoundException(f"vertex function undefined at id {e.args[0]}") from e


def path_product_cap(net: Network, x: int) -> float:
    """
    A-priori cap on g_o(x, .) and on every potential at x.

    Along the BFS-parent path o = x_0, ..., x_l = x the cap is
    1/c(x_0 x_1) times the product over later steps of c(x_{i-1}) / c(x_{i-1} x_i),
    the reciprocal transition probabilities (superharmonicity off the root).
    """
    if x == net.root:
        return 0.0
    path = [x]
    while path[-1] != net.root:
        path.append(net.parent(path[-1]))
    path.reverse()
    cap = 1.0 / net.edge_conductance(path[0], path[1])
    for prev, cur in zip(path[1:-1], path[2:]):
        cap *= net.conductance_sum(prev) / net.edge_conductance(prev, cur)
    return cap
