"""
Standard network generators and ``build_network``.

Labels:
    integer-line, half-line: ints
    lattice: tuples of ints of length d
    regular-tree: tuples of child indices, root ``()``
    explicit-edge-list: the JSON labels (ints or strings)
"""

import ast
import logging
from typing import Any, Dict, Hashable, List, Optional

import networkx as nx

from core.exceptions import NetworkSpecException
from networks.base_network import Network
from networks.spec import ConductanceRule, GeneratorKind, NetworkSpec, SidePolicy

logger = logging.getLogger(__name__)


def _parse_int(obj: Any, field: str = 'root') -> int:
    try:
        if isinstance(obj, bool):
            raise ValueError(obj)
        if isinstance(obj, (list, tuple)) and len(obj) == 1:
            obj = obj[0]
        if isinstance(obj, str):
            obj = obj.strip().strip('()')
        return int(obj)
    except (TypeError, ValueError) as e:
        raise NetworkSpecException(f"expected an integer vertex label, got {obj!r}", field=field) from e


def _parse_tuple(obj: Any, field: str = 'root') -> tuple:
    if isinstance(obj, str):
        text = obj.strip()
        if text in ('()', ''):
            return ()
        try:
            obj = ast.literal_eval(text if text.startswith('(') else f'({text},)')
        except (ValueError, SyntaxError) as e:
            raise NetworkSpecException(f"cannot parse vertex label {text!r}", field=field) from e
    if isinstance(obj, int) and not isinstance(obj, bool):
        return (obj,)
    if isinstance(obj, (list, tuple)):
        try:
            return tuple(int(x) for x in obj)
        except (TypeError, ValueError) as e:
            raise NetworkSpecException(f"vertex label must be integers, got {obj!r}", field=field) from e
    raise NetworkSpecException(f"cannot parse vertex label {obj!r}", field=field)


class IntegerLine(Network):
    """Z with nearest-neighbor edges"""

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        if spec.conductance.rule == ConductanceRule.PER_EDGE:
            self._load_edge_table(spec.conductance.table or [])
        self._init_root()

    def default_root(self) -> int:
        return 0

    def has_label(self, label: Hashable) -> bool:
        return isinstance(label, int)

    def label_neighbors(self, label: int) -> List[int]:
        return [label + 1, label - 1]

    def parse_label(self, obj: Any) -> int:
        return _parse_int(obj)

    def label_distance(self, label: int) -> int:
        return abs(label - self._labels[0])


class HalfLine(Network):
    """{0, 1, 2, ...} with nearest-neighbor edges"""

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        if spec.conductance.rule == ConductanceRule.PER_EDGE:
            self._load_edge_table(spec.conductance.table or [])
        self._init_root()

    def default_root(self) -> int:
        return 0

    def has_label(self, label: Hashable) -> bool:
        return isinstance(label, int) and label >= 0

    def label_neighbors(self, label: int) -> List[int]:
        return [label + 1, label - 1] if label > 0 else [label + 1]

    def parse_label(self, obj: Any) -> int:
        return _parse_int(obj)

    def label_distance(self, label: int) -> int:
        return abs(label - self._labels[0])


class Lattice(Network):
    """Z^d, or the half-space with first coordinate >= 0"""

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        self.d = int(spec.params.d)
        self.half = spec.params.side_policy == SidePolicy.HALF
        if spec.conductance.rule == ConductanceRule.PER_EDGE:
            self._load_edge_table(spec.conductance.table or [])
        self.metadata.update({'d': self.d, 'side_policy': 'half' if self.half else 'full'})
        self._init_root()

    def default_root(self) -> tuple:
        return (0,) * self.d

    def has_label(self, label: Hashable) -> bool:
        if not isinstance(label, tuple) or len(label) != self.d:
            return False
        return not self.half or label[0] >= 0

    def label_neighbors(self, label: tuple) -> List[tuple]:
        out = []
        for i in range(self.d):
            for step in (1, -1):
                nb = label[:i] + (label[i] + step,) + label[i + 1:]
                if not self.half or nb[0] >= 0:
                    out.append(nb)
        return out

    def parse_label(self, obj: Any) -> tuple:
        label = _parse_tuple(obj)
        if len(label) != self.d:
            raise NetworkSpecException(f"lattice label needs {self.d} coordinates, got {obj!r}", field='root')
        return label

    def label_distance(self, label: tuple) -> int:
        root = self._labels[0]
        return sum(abs(a - b) for a, b in zip(label, root))


class RegularTree(Network):
    """
    Rooted tree in which every vertex has ``branching`` children.

    Under the level-decay rule the edge between levels l-1 and l has
    conductance decay**(l-1). The tree is recurrent iff branching * decay <= 1;
    the default decay 1/(2 * branching) makes it recurrent. With unit
    conductances the tree is transient.
    """

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        self.branching = int(spec.params.branching)
        self.decay: Optional[float] = None
        if spec.conductance.rule == ConductanceRule.LEVEL_DECAY:
            self.decay = spec.conductance.decay if spec.conductance.decay is not None else 1.0 / (2 * self.branching)
            self.metadata['decay'] = self.decay
        elif spec.conductance.rule == ConductanceRule.PER_EDGE:
            self._load_edge_table(spec.conductance.table or [])
        self.metadata.update({
            'branching': self.branching,
            'recurrent': self.decay is not None and self.branching * self.decay <= 1.0,
        })
        if spec.root is not None and self.parse_label(spec.root) != ():
            raise NetworkSpecException("regular trees are rooted at ()", field='root')
        self._init_root()

    def default_root(self) -> tuple:
        return ()

    def has_label(self, label: Hashable) -> bool:
        return isinstance(label, tuple) and all(
            isinstance(i, int) and 0 <= i < self.branching for i in label)

    def label_neighbors(self, label: tuple) -> List[tuple]:
        children = [label + (i,) for i in range(self.branching)]
        return ([label[:-1]] + children) if label else children

    def parse_label(self, obj: Any) -> tuple:
        return _parse_tuple(obj)

    def label_distance(self, label: tuple) -> int:
        return len(label)

    def raw_conductance(self, a: tuple, b: tuple) -> float:
        if self.decay is not None:
            return self.decay ** (max(len(a), len(b)) - 1)
        return super().raw_conductance(a, b)


class ExplicitNetwork(Network):
    """Finite network from an edge list"""

    finite = True

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        self._adjacency: Dict[Hashable, List[Hashable]] = {}
        graph = nx.Graph()
        for i, edge in enumerate(spec.params.edges):
            u, v = self.parse_label(edge[0]), self.parse_label(edge[1])
            if graph.has_edge(u, v):
                raise NetworkSpecException(f"edge {i} duplicates {u}-{v}", field=f'params.edges.{i}')
            graph.add_edge(u, v)
            self._adjacency.setdefault(u, []).append(v)
            self._adjacency.setdefault(v, []).append(u)
            if len(edge) == 3:
                self._edge_table[frozenset((u, v))] = float(edge[2])
        if spec.conductance.rule == ConductanceRule.PER_EDGE and spec.conductance.table:
            self._load_edge_table(spec.conductance.table)
        if not nx.is_connected(graph):
            raise NetworkSpecException(
                f"edge list is disconnected ({nx.number_connected_components(graph)} components)",
                field='params.edges')
        root = self.default_root() if spec.root is None else self.parse_label(spec.root)
        if root not in self._adjacency:
            raise NetworkSpecException(f"root {root!r} does not appear in the edge list", field='root')
        self.metadata['edges'] = graph.number_of_edges()
        self._init_root()

    def default_root(self) -> Hashable:
        return self.parse_label(self.spec.params.edges[0][0])

    def has_label(self, label: Hashable) -> bool:
        return label in self._adjacency

    def label_neighbors(self, label: Hashable) -> List[Hashable]:
        return self._adjacency[label]

    def parse_label(self, obj: Any) -> Hashable:
        if isinstance(obj, bool):
            return str(obj)
        if isinstance(obj, int):
            return obj
        if isinstance(obj, str):
            text = obj.strip()
            try:
                return int(text)
            except ValueError:
                return text
        if isinstance(obj, float) and obj.is_integer():
            return int(obj)
        raise NetworkSpecException(f"explicit labels are integers or strings, got {obj!r}", field='root')


def build_network(spec: NetworkSpec) -> Network:
    """
    Build a network from a validated spec.

    Args:
        spec: NetworkSpec (``parse_spec`` output)

    Returns:
        Network whose oracle is symmetric, positive and locally finite

    Raises:
        NetworkSpecException: disconnected edge list, missing root, non-positive conductance

    Examples:
        >>> z2 = build_network(parse_spec({"generator": "lattice", "params": {"d": 2}}))
        >>> z2.conductance_sum(z2.root)
        4.0
    """
    spec.check()
    kind = spec.generator
    if kind == GeneratorKind.INTEGER_LINE:
        net: Network = IntegerLine(spec)
    elif kind == GeneratorKind.HALF_LINE:
        net = HalfLine(spec)
    elif kind == GeneratorKind.LATTICE:
        net = Lattice(spec)
    elif kind == GeneratorKind.REGULAR_TREE:
        net = RegularTree(spec)
    elif kind == GeneratorKind.PHI_PRODUCT_LATTICE:
        from networks.phi_lattice import PhiProductLattice
        net = PhiProductLattice(spec)
    elif kind == GeneratorKind.EXPLICIT_EDGE_LIST:
        net = ExplicitNetwork(spec)
    else:  # pragma: no cover - enum is exhaustive
        raise NetworkSpecException(f"unknown generator {kind}", field='generator')
    logger.debug(f"Built {kind.value} network rooted at {net.display(net.root)}")
    return net
