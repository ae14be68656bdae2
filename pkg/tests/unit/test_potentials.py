"""
Unit tests for potentials: exhaustion limits, validation, root transfer,
the tree construction and the phi-product closed form
"""

import pytest

from core.exceptions import NotConvergedException, PotentialException, VertexNotFoundException
from core.potentials import (
    Potential,
    convex_combination,
    exhaustion_potential,
    fit_half_line_mixture,
    min_on_spheres,
    mixture_check,
    phi_closed_form_potential,
    phi_potential_check,
    potential_from_exhaustion,
    root_transfer,
    tree_potential_to_infinity,
    validate_potential,
    weak_convergence_check,
)
from networks.region import asymmetric_exhaustion, ball_exhaustion, ball_region, interval_region

from tests.conftest import make_network


@pytest.fixture
def z_abs(z):
    """h(k) = |k|/2 on Z"""
    return Potential.from_function(z, lambda n: abs(n) / 2.0, 10)


# ============================================================================
# Exhaustion potentials
# ============================================================================

class TestExhaustionPotential:
    """Test exhaustion_potential on single regions"""

    def test_line_ball(self, z):
        """Killed outside [-R, R], h(k) = |k|/2 and H = (R + 1)/2"""
        h = exhaustion_potential(z, ball_region(z, 10))
        assert h.killed_level == pytest.approx(5.5)
        for k in (-7, -1, 0, 3, 10, 11):
            assert h(z.vertex_id(k)) == pytest.approx(abs(k) / 2.0)

    def test_asymmetric_interval(self, z):
        """On [-40, 10] the slopes are 41/52 to the right and 11/52 to the left"""
        h = exhaustion_potential(z, interval_region(z, 40, 10))
        assert h(z.vertex_id(5)) == pytest.approx(5 * 41 / 52)
        assert h(z.vertex_id(-5)) == pytest.approx(5 * 11 / 52)

    def test_z2_residuals(self, z2):
        h = exhaustion_potential(z2, ball_region(z2, 8))
        assert h(z2.root) == 0.0
        assert h.certificate.root_residual <= 1e-10
        assert h.certificate.harmonic_residual <= 1e-10
        assert min(h.values.values()) >= 0.0

    def test_escape_factor(self, z):
        """1 - h/H is the chance of hitting o before leaving the region"""
        h = exhaustion_potential(z, ball_region(z, 9))
        assert h.escape_factor(z.vertex_id(4)) == pytest.approx(1.0 - 4 / 10)
        assert h.escape_factor(z.root) == pytest.approx(1.0)

    def test_undefined_vertex(self, z):
        h = exhaustion_potential(z, ball_region(z, 3))
        with pytest.raises(VertexNotFoundException):
            h(z.vertex_id(30))


class TestPotentialFromExhaustion:
    """Test limits over nested exhaustions"""

    def test_line_converges_immediately(self, z):
        h = potential_from_exhaustion(z, ball_exhaustion(z, [20, 40]), 1e-9)
        assert h(z.vertex_id(-6)) == pytest.approx(3.0)
        assert h.converged
        assert h.certificate.limit.achieved_radius == 40
        assert len(h.history) == 2

    def test_z2_limit_certificate(self, z2):
        h = potential_from_exhaustion(z2, ball_exhaustion(z2, [4, 8, 16]), 1e-1)
        assert h.certificate.limit.increments
        assert h.region.radius == 4
        assert h.certificate.root_residual <= 1e-8

    def test_open_limit_is_flagged(self, z):
        """Asymmetric intervals keep moving on the large region D_0"""
        h = potential_from_exhaustion(z, asymmetric_exhaustion(z, 4.0, [10, 20]), 1e-12)
        assert not h.converged
        with pytest.raises(NotConvergedException):
            h.require_converged()

    def test_shape_changes_the_limit(self, z):
        ball = potential_from_exhaustion(z, ball_exhaustion(z, [10]), 1e-9)
        asym = potential_from_exhaustion(z, asymmetric_exhaustion(z, 4.0, [10]), 1e-9)
        k = z.vertex_id(5)
        assert abs(ball(k) - asym(k)) > 1.0


# ============================================================================
# Combinations and fits
# ============================================================================

class TestMixtures:
    """Test convex combinations and the half-line fit on Z"""

    def test_convex_combination(self, z):
        right = Potential.from_function(z, lambda n: max(n, 0), 10)
        left = Potential.from_function(z, lambda n: max(-n, 0), 10)
        h = convex_combination([right, left], [1.0, 3.0])
        assert h(z.vertex_id(4)) == pytest.approx(1.0)
        assert h(z.vertex_id(-4)) == pytest.approx(3.0)
        assert h.certificate.root_residual <= 1e-12
        assert h.certificate.harmonic_residual <= 1e-12

        alpha, residual = fit_half_line_mixture(z, h, 5)
        assert alpha == pytest.approx(0.25)
        assert residual <= 1e-12

    def test_fit_asymmetric(self, z):
        h = exhaustion_potential(z, interval_region(z, 40, 10))
        alpha, residual = fit_half_line_mixture(z, h, 5)
        assert alpha == pytest.approx(41 / 52)
        assert residual <= 1e-9

    def test_bad_weights(self, z_abs):
        with pytest.raises(ValueError):
            convex_combination([z_abs, z_abs], [1.0, -1.0])
        with pytest.raises(ValueError):
            convex_combination([z_abs], [0.5, 0.5])


# ============================================================================
# Validation
# ============================================================================

class TestValidatePotential:
    """Test validate_potential"""

    def test_closed_form_passes(self, z, z_abs):
        report = validate_potential(z, z_abs, n_pairs=50)
        assert report.passed
        assert report.root_value == 0.0
        assert report.edge_gradient_slack == pytest.approx(0.5)
        assert report.pairs_checked > 20

    def test_bumped_value_fails(self, z, z_abs):
        values = dict(z_abs.values)
        values[z.vertex_id(3)] += 1.0
        bad = Potential.from_values(z, values, z_abs.region, name='bumped')
        report = validate_potential(z, bad, n_pairs=0)
        assert not report.passed
        assert report.harmonic_residual == pytest.approx(2.0)
        assert report.edge_gradient_slack == pytest.approx(-0.5)

    def test_scaled_potential_breaks_lipschitz(self, z2):
        h = exhaustion_potential(z2, ball_region(z2, 6))
        scaled = Potential.from_values(z2, {v: 3.0 * x for v, x in h.values.items()}, h.region)
        report = validate_potential(z2, scaled, n_pairs=20)
        assert not report.passed
        assert report.root_residual == pytest.approx(2.0)
        assert report.lipschitz_slack < 0

    def test_report_serializes(self, z, z_abs):
        data = validate_potential(z, z_abs, n_pairs=10).to_dict()
        assert data['passed'] is True
        assert set(data) >= {'root_value', 'harmonic_residual', 'lipschitz_slack', 'worst_pair'}
        assert data['resistance_certificate']['converged'] is True


class TestRootTransfer:
    """Test root_transfer"""

    def test_line(self, z, z_abs):
        """Moving the root of |k|/2 to 3 gives |k - 3|/2"""
        moved = root_transfer(z, z_abs, z.vertex_id(3), [20, 40], 1e-9)
        assert moved(z.vertex_id(3)) == 0.0
        assert moved(z.vertex_id(-4)) == pytest.approx(3.5)
        assert moved(z.vertex_id(8)) == pytest.approx(2.5)
        assert moved.certificate.root_residual <= 1e-9
        assert moved.certificate.harmonic_residual <= 1e-9

    def test_validated_at_the_new_root(self, z, z_abs):
        """The moved potential reports its new root, and validation checks it there"""
        new_root = z.vertex_id(2)
        moved = root_transfer(z, z_abs, new_root, [20, 40], 1e-9)
        assert moved.root == new_root
        report = validate_potential(z, moved, n_pairs=20)
        assert report.passed
        assert report.root_value == 0.0
        assert report.root_residual <= 1e-8
        assert report.root == z.display(new_root)

    def test_same_root(self, z, z_abs):
        assert root_transfer(z, z_abs, z.root, [20], 1e-9) is z_abs

    def test_outside_region(self, z, z_abs):
        with pytest.raises(VertexNotFoundException):
            root_transfer(z, z_abs, z.vertex_id(50), [20, 40], 1e-9)


class TestWeakConvergence:
    """Conditioned walk prefixes match the h-transform"""

    def test_line(self, z, z_abs):
        gammas = [[z.vertex_id(1)], [z.vertex_id(1), z.vertex_id(2)],
                  [z.vertex_id(-1), z.vertex_id(-2), z.vertex_id(-3)]]
        rows = weak_convergence_check(z, ball_exhaustion(z, [5, 10]), z_abs, gammas)
        assert [r['n'] for r in rows] == [5, 10]
        for row in rows:
            assert row['max_difference'] <= 1e-9
            assert row['h_transform'][0] == pytest.approx(0.5)


# ============================================================================
# Tree construction
# ============================================================================

class TestTreePotential:
    """Test tree_potential_to_infinity on the level-decay binary tree"""

    def test_levels(self, tree):
        """g_R(o, o) = (2^R - 1)/2, so targets 2, 8, 24 need R = 3, 5, 6"""
        h, levels = tree_potential_to_infinity(tree, n_levels=3)
        assert [lv.radius for lv in levels] == [3, 5, 6]
        assert [lv.green_root for lv in levels] == pytest.approx([3.5, 15.5, 31.5])
        assert sum(lv.weight for lv in levels) == pytest.approx(1.0)
        for lv in levels:
            assert lv.sphere_min >= lv.n

    def test_is_potential(self, tree):
        h, _ = tree_potential_to_infinity(tree, n_levels=2)
        assert h(tree.root) == 0.0
        assert h.certificate.harmonic_residual <= 1e-8
        assert h.certificate.root_residual <= 1e-8
        assert min(h.values.values()) >= 0.0

    def test_radius_cap(self, tree):
        with pytest.raises(NotConvergedException):
            tree_potential_to_infinity(tree, n_levels=3, radius_cap=3)

    def test_rejects_non_tree(self, z2):
        with pytest.raises(PotentialException):
            tree_potential_to_infinity(z2, n_levels=1)

    def test_min_on_spheres(self, z_abs):
        assert min_on_spheres(z_abs, [1, 4]) == {1: 0.5, 4: 2.0}


class TestPhiPotential:
    """Test the phi-product closed form"""

    def test_matches_unit_lattice(self):
        net = make_network({'generator': 'phi-product-lattice', 'params': {'d': 3, 'truncation_radius': 4},
                            'conductance': {'rule': 'phi-product'}})
        report = phi_potential_check(net)
        assert report['max_product_difference'] <= 1e-8
        assert report['harmonic_residual'] <= 1e-8
        assert report['root_residual'] <= 1e-8

    def test_closed_form_is_potential(self):
        net = make_network({'generator': 'phi-product-lattice', 'params': {'d': 3, 'truncation_radius': 4},
                            'conductance': {'rule': 'phi-product'}})
        h = phi_closed_form_potential(net)
        assert h(net.root) == 0.0
        assert h.killed_level is None
        assert h.certificate.harmonic_residual <= 1e-8
        assert min(h.values.values()) >= 0.0


class TestMixtureCheck:
    """Last-exit representation of h by Green densities"""

    @pytest.mark.statistical
    def test_line(self, z):
        """Exits of [-1, 1] fall on the starting side, so the estimate at 1 is P(Y_L = 1)"""
        h = exhaustion_potential(z, ball_region(z, 10))
        report = mixture_check(z, h, ball_region(z, 1), 2000, 3)
        assert report['used'] == 2000
        rows = {row['vertex']: row for row in report['rows']}
        assert rows['0']['estimate'] == 0.0
        for label in ('1', '-1'):
            assert abs(rows[label]['estimate'] - 0.5) <= 0.1


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
