"""
Unit tests for network specs, generators and regions.

Covers spec validation (with the offending field named), canonical JSON,
breadth-first id assignment, conductance rules and region factories.
"""

import json

import pytest

from core.exceptions import NetworkSpecException, VertexNotFoundException
from networks.base_network import laplacian_apply, path_product_cap
from networks.generators import build_network
from networks.region import (
    asymmetric_exhaustion,
    ball_region,
    box_region,
    interior_region,
    interval_region,
    level_set_region,
    make_exhaustion,
    vertex_set_region,
)
from networks.spec import load_spec, parse_spec
from tests.conftest import explicit, make_network


# ===========================================================================
# Spec parsing
# ===========================================================================

class TestParseSpec:
    """Test spec validation"""

    def test_minimal_lattice(self):
        spec = parse_spec({'generator': 'lattice', 'params': {'d': 2}})
        assert spec.params.d == 2
        assert spec.conductance.rule.value == 'unit'

    def test_json_text(self):
        spec = parse_spec('{"generator": "integer-line"}')
        assert spec.generator.value == 'integer-line'

    def test_malformed_json(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            parse_spec('{"generator": ')
        assert exc_info.value.context['field'] == 'spec'

    def test_unknown_generator(self):
        """Schema errors name the field"""
        with pytest.raises(NetworkSpecException) as exc_info:
            parse_spec({'generator': 'hypercube'})
        assert exc_info.value.context['field'] == 'generator'

    def test_unknown_key(self):
        with pytest.raises(NetworkSpecException):
            parse_spec({'generator': 'integer-line', 'colour': 'red'})

    def test_lattice_needs_dimension(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            parse_spec({'generator': 'lattice'})
        assert exc_info.value.context['field'] == 'params.d'

    def test_dimension_range(self):
        with pytest.raises(NetworkSpecException):
            parse_spec({'generator': 'lattice', 'params': {'d': 6}})

    def test_tree_needs_branching(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            parse_spec({'generator': 'regular-tree', 'params': {'branching': 1}})
        assert exc_info.value.context['field'] == 'params.branching'

    def test_level_decay_only_on_trees(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            parse_spec({'generator': 'integer-line', 'conductance': {'rule': 'level-decay'}})
        assert exc_info.value.context['field'] == 'conductance.rule'

    def test_negative_scale(self):
        with pytest.raises(NetworkSpecException):
            parse_spec({'generator': 'integer-line', 'conductance': {'scale': -1.0}})

    def test_self_loop(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            parse_spec({'generator': 'explicit-edge-list', 'params': {'edges': [[0, 0]]}})
        assert exc_info.value.context['field'] == 'params.edges.0'

    def test_weighted_edges_need_per_edge_rule(self):
        with pytest.raises(NetworkSpecException):
            parse_spec({'generator': 'explicit-edge-list', 'params': {'edges': [[0, 1, 2.0]]}})

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(NetworkSpecException) as exc_info:
            load_spec(tmp_path / 'absent.json')
        assert exc_info.value.context['field'] == 'net'


class TestCanonicalJson:
    """Test canonical serialization"""

    @pytest.mark.parametrize('data', [
        {'generator': 'integer-line'},
        {'generator': 'lattice', 'params': {'d': 2}, 'root': [1, 0]},
        {'generator': 'regular-tree', 'params': {'branching': 3}, 'conductance': {'rule': 'level-decay', 'decay': 0.25}},
        {'generator': 'explicit-edge-list', 'params': {'edges': [[0, 1, 3.0], [1, 2, 0.1]]}, 'conductance': 'per-edge'},
    ])
    def test_fixed_point(self, data):
        """Parsing the canonical text reproduces it exactly"""
        text = parse_spec(data).canonical_json()
        assert parse_spec(text).canonical_json() == text

    def test_defaults_omitted_and_sorted(self):
        text = parse_spec({'generator': 'lattice', 'params': {'d': 2}, 'conductance': {'scale': 1.0}}).canonical_json()
        assert 'scale' not in text
        data = json.loads(text)
        assert list(data) == sorted(data)

    def test_float_bits_preserved(self):
        value = 0.1 + 0.2
        spec = parse_spec({'generator': 'integer-line', 'conductance': {'scale': value}})
        assert parse_spec(spec.canonical_json()).conductance.scale == value


# ===========================================================================
# Generators
# ===========================================================================

class TestIntegerLine:
    """Test Z"""

    def test_bfs_ids(self, z):
        """Ids follow layers, each layer in canonical neighbor order"""
        assert [z.label(i) for i in range(5)] == [0, 1, -1, 2, -2]

    def test_vertex_id_discovers_layers(self, z):
        assert z.distance(z.vertex_id(-7)) == 7

    def test_spheres(self, z):
        assert len(z.sphere(0)) == 1
        assert sorted(z.label(v) for v in z.sphere(3)) == [-3, 3]

    def test_unit_conductances(self, z):
        assert z.conductance_sum(z.vertex_id(4)) == 2.0

    def test_root_override(self):
        net = make_network({'generator': 'integer-line', 'root': 5})
        assert net.label(net.root) == 5
        assert net.distance(net.vertex_id(3)) == 2

    def test_laplacian_of_absolute_value(self, z):
        """|k|/2 is harmonic off 0 and has Laplacian 1 at 0"""
        f = lambda v: abs(z.label(v)) / 2.0
        assert laplacian_apply(z, f, z.root) == 1.0
        assert laplacian_apply(z, f, z.vertex_id(3)) == 0.0


class TestLattice:
    """Test Z^d"""

    def test_sphere_sizes(self, z2):
        assert [len(z2.sphere(r)) for r in range(4)] == [1, 4, 8, 12]

    def test_ball_size(self, z2):
        assert len(ball_region(z2, 2)) == 13

    def test_parse_vertex_set(self, z2):
        ids = z2.parse_vertex_set('(0,0),(1,0)')
        assert [z2.display(v) for v in ids] == ['(0,0)', '(1,0)']

    def test_unknown_vertex(self, z2):
        with pytest.raises(NetworkSpecException):
            z2.parse_vertex_set('(1,2,3)')

    def test_half_space(self):
        net = make_network({'generator': 'lattice', 'params': {'d': 2, 'side_policy': 'half'}})
        assert len(net.sphere(1)) == 3
        with pytest.raises(VertexNotFoundException):
            net.vertex_id((-1, 0))

    def test_per_edge_table(self):
        net = make_network({
            'generator': 'lattice', 'params': {'d': 2},
            'conductance': {'rule': 'per-edge', 'table': [[[0, 0], [1, 0], 5.0]], 'default': 2.0},
        })
        o, e, n = net.root, net.vertex_id((1, 0)), net.vertex_id((0, 1))
        assert net.edge_conductance(o, e) == 5.0
        assert net.edge_conductance(e, o) == 5.0
        assert net.edge_conductance(o, n) == 2.0

    def test_table_entry_must_be_an_edge(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            make_network({
                'generator': 'lattice', 'params': {'d': 2},
                'conductance': {'rule': 'per-edge', 'table': [[[0, 0], [2, 0], 1.0]]},
            })
        assert exc_info.value.context['field'] == 'conductance.table.0'


class TestRegularTree:
    """Test the level-decay tree"""

    def test_default_decay_recurrent(self, tree):
        assert tree.metadata['decay'] == 0.25
        assert tree.metadata['recurrent'] is True

    def test_conductances_decay_by_level(self, tree):
        child = tree.vertex_id((0,))
        grandchild = tree.vertex_id((0, 1))
        assert tree.edge_conductance(tree.root, child) == 1.0
        assert tree.edge_conductance(child, grandchild) == 0.25

    def test_sphere_growth(self, tree):
        assert [len(tree.sphere(r)) for r in range(4)] == [1, 2, 4, 8]

    def test_path_product_cap(self, tree):
        """1/c(o,x1) times c(x1)/c(x1,x2): 1 * 1.5 / 0.25"""
        v = tree.vertex_id((1, 0))
        assert path_product_cap(tree, v) == pytest.approx(6.0)


class TestExplicitNetwork:
    """Test explicit edge lists"""

    def test_finite(self, triangle):
        assert triangle.finite
        assert triangle.num_vertices() == 3
        assert triangle.max_layer() == 1

    def test_weights(self, triangle):
        assert triangle.edge_conductance(triangle.vertex_id(0), triangle.vertex_id(1)) == 3.0
        assert triangle.conductance_sum(triangle.vertex_id(2)) == 3.0

    def test_describe(self, triangle):
        info = triangle.describe()
        assert info['generator'] == 'explicit-edge-list'
        assert info['vertices'] == 3
        assert info['metadata']['edges'] == 3

    def test_disconnected(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            explicit([[0, 1], [2, 3]])
        assert exc_info.value.context['field'] == 'params.edges'

    def test_duplicate_edge(self):
        with pytest.raises(NetworkSpecException):
            explicit([[0, 1], [1, 0]])

    def test_root_must_appear(self):
        with pytest.raises(NetworkSpecException) as exc_info:
            explicit([[0, 1]], root=7)
        assert exc_info.value.context['field'] == 'root'

    def test_string_labels(self):
        net = explicit([['a', 'b'], ['b', 'c']], root='b')
        assert net.display(net.root) == 'b'
        assert len(net.sphere(1)) == 2


class TestPhiLattice:
    """Test the phi-product lattice"""

    def test_finite_ball(self):
        net = make_network({'generator': 'phi-product-lattice', 'params': {'d': 3, 'truncation_radius': 3},
                            'conductance': {'rule': 'phi-product'}})
        assert net.finite
        assert net.max_layer() == 3
        assert net.phi(net.root) == 1.0

    def test_needs_phi_rule(self):
        with pytest.raises(NetworkSpecException):
            parse_spec({'generator': 'phi-product-lattice', 'params': {'d': 3, 'truncation_radius': 3}})


def test_build_network_rejects_bad_root():
    with pytest.raises(NetworkSpecException):
        build_network(parse_spec({'generator': 'half-line', 'root': -1}))


# ===========================================================================
# Regions
# ===========================================================================

class TestRegions:
    """Test region factories"""

    def test_ball_boundary_and_exterior(self, z):
        ball = ball_region(z, 3)
        assert len(ball) == 7
        assert sorted(z.label(v) for v in ball.boundary) == [-3, 3]
        assert sorted(z.label(v) for v in ball.exterior) == [-4, 4]
        assert len(ball.closure) == 9

    def test_ball_beyond_diameter(self, path_graph):
        region = ball_region(path_graph, 10)
        assert len(region) == 5
        assert region.boundary == []

    def test_box(self, z2):
        assert len(box_region(z2, 2)) == 25

    def test_interval(self, z):
        region = interval_region(z, 4, 1)
        assert sorted(z.label(v) for v in region) == list(range(-4, 2))

    def test_vertex_set_adds_root(self, z2):
        region = vertex_set_region(z2, [z2.vertex_id((2, 0))])
        assert z2.root in region
        assert len(region) == 2

    def test_region_needs_root(self, z):
        from networks.region import Region
        import numpy as np

        with pytest.raises(VertexNotFoundException):
            Region(z, np.array([z.vertex_id(1)]))

    def test_level_set(self, z):
        h = {v: abs(z.label(v)) / 2.0 for v in ball_region(z, 10)}
        region = level_set_region(z, h, 2)
        assert sorted(z.label(v) for v in region) == [-2, -1, 0, 1, 2]

    def test_asymmetric_exhaustion(self, z):
        ex = asymmetric_exhaustion(z, 4.0, [1, 2])
        labels = sorted(z.label(v) for v in ex.region(1))
        assert labels[0] == -8 and labels[-1] == 2

    def test_make_exhaustion_unknown_shape(self, z):
        with pytest.raises(ValueError):
            make_exhaustion(z, 'star', [1, 2])

    def test_level_needs_target(self, z):
        with pytest.raises(ValueError):
            make_exhaustion(z, 'level', [1, 2])

    def test_box_exhaustion(self, z2):
        ex = make_exhaustion(z2, 'box', [1, 2])
        assert len(ex) == 2
        assert [len(region) for region in ex] == [9, 25]
        assert ex.name == 'box'

    def test_level_exhaustion(self, z):
        h = {v: abs(z.label(v)) / 2.0 for v in ball_region(z, 10)}
        ex = make_exhaustion(z, 'level', [2, 4], h=h)
        assert [len(region) for region in ex] == [5, 9]

    def test_exhaustion_indices_increase(self, z):
        with pytest.raises(ValueError):
            make_exhaustion(z, 'ball', [4, 2])

    def test_interior(self, z):
        region = interior_region(z, ball_region(z, 3))
        assert sorted(z.label(v) for v in region) == [-2, -1, 0, 1, 2]


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
