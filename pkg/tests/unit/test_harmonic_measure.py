"""
Unit tests for harmonic measures: direct, determinant, limit and Monte Carlo routes
"""

import numpy as np
import pytest

from core.exceptions import NotConvergedException, RegionTooSmallException, SingularSystemException
from core.green import killed_green_table
from core.harmonic_measure import (
    MeasureOnSet,
    MeasureRoute,
    cramer_weights,
    harmonic_measure_det,
    harmonic_measure_exact,
    harmonic_measure_infinity,
    harmonic_measure_mc,
    harmonic_measure_root_shift,
    harmonic_measure_two_point,
    hitting_distribution,
    sphere_contraction,
)
from core.linsolve import BoundaryMode
from core.potentials import Potential, exhaustion_potential, potential_from_exhaustion
from networks.region import asymmetric_exhaustion, ball_region, interval_region


# ============================================================================
# Direct solves
# ============================================================================

class TestHarmonicMeasureExact:
    """Test harmonic_measure_exact and hitting_distribution"""

    def test_gamblers_ruin(self, z):
        A = [z.root, z.vertex_id(3)]
        m = harmonic_measure_exact(z, A, z.vertex_id(1), interval_region(z, 10, 10))
        assert m[z.vertex_id(3)] == pytest.approx(1 / 3)
        assert m[z.root] == pytest.approx(2 / 3)
        assert m.route == MeasureRoute.DIRECT
        assert m.is_valid()

    def test_reflecting_side(self, z):
        """From the far side of 0 the walk hits 0 first"""
        A = [z.root, z.vertex_id(3)]
        m = harmonic_measure_exact(z, A, z.vertex_id(-2), interval_region(z, 10, 10))
        assert m[z.root] == pytest.approx(1.0)

    def test_escape_mass_too_large(self, z):
        A = [z.root, z.vertex_id(3)]
        with pytest.raises(RegionTooSmallException):
            harmonic_measure_exact(z, A, z.vertex_id(-2), interval_region(z, 3, 5), BoundaryMode.ABSORBING)

    def test_order_of_set_is_irrelevant(self, z):
        region = interval_region(z, 10, 10)
        a = harmonic_measure_exact(z, [z.vertex_id(3), z.root], z.vertex_id(1), region)
        b = harmonic_measure_exact(z, [z.root, z.vertex_id(3)], z.vertex_id(1), region)
        assert a.support == b.support
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_start_inside_set(self, z):
        rows = hitting_distribution(z, [z.root, z.vertex_id(3)], [z.vertex_id(3)], interval_region(z, 5, 5))
        np.testing.assert_allclose(rows, [[0.0, 1.0]])

    def test_weighted_triangle(self, triangle):
        """From 2, the walk steps to 1 w.p. 2/3 and to 0 w.p. 1/3"""
        region = ball_region(triangle, 1)
        a, b, c = (triangle.vertex_id(k) for k in (0, 1, 2))
        m = harmonic_measure_exact(triangle, [a, b], c, region)
        assert m[b] == pytest.approx(2 / 3)

    def test_empty_set(self, z):
        with pytest.raises(ValueError):
            harmonic_measure_exact(z, [], z.root, interval_region(z, 3, 3))


# ============================================================================
# Determinant route
# ============================================================================

class TestCramer:
    """Test cramer_weights"""

    def test_small_system(self):
        w, diag = cramer_weights(np.array([[2.0, 1.0], [1.0, 3.0]]), np.array([3.0, 5.0]))
        np.testing.assert_allclose(w, [0.8, 1.4])
        assert diag['log_abs_det'] == pytest.approx(np.log(5.0))

    def test_singular(self):
        with pytest.raises(SingularSystemException):
            cramer_weights(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 1.0]))


class TestHarmonicMeasureDet:
    """Test the determinant route against direct solves"""

    def test_line_matches_direct(self, z):
        region = interval_region(z, 20, 20)
        table = killed_green_table(z, region, [z.root])
        A = [z.root, z.vertex_id(3)]
        v = z.vertex_id(1)
        det = harmonic_measure_det(table, table.column(v), A)
        direct = harmonic_measure_exact(z, A, v, region)
        np.testing.assert_allclose(det.weights, direct.weights, atol=1e-12)
        assert harmonic_measure_two_point(table, v, z.vertex_id(3)) == pytest.approx(1 / 3)

    def test_grid_three_points(self, z2):
        region = ball_region(z2, 6)
        table = killed_green_table(z2, region, [z2.root])
        A = [z2.root, z2.vertex_id((2, 0)), z2.vertex_id((0, -3))]
        v = z2.vertex_id((1, 1))
        det = harmonic_measure_det(table, table.column(v), A)
        direct = harmonic_measure_exact(z2, A, v, region)
        np.testing.assert_allclose(det.weights, direct.weights, atol=1e-9)
        assert det.route == MeasureRoute.DET

    def test_needs_single_kill(self, z):
        table = killed_green_table(z, interval_region(z, 3, 3), [z.vertex_id(-3), z.vertex_id(3)])
        with pytest.raises(ValueError):
            harmonic_measure_det(table, table.column(z.root), [z.vertex_id(-3), z.root])

    def test_set_must_contain_kill(self, z):
        table = killed_green_table(z, interval_region(z, 5, 5), [z.root])
        with pytest.raises(ValueError):
            harmonic_measure_det(table, table.column(z.vertex_id(1)), [z.vertex_id(2), z.vertex_id(4)])


class TestRootShift:
    """Harmonic measure from infinity when o is not in A"""

    def test_line(self, z):
        """With h = |k|/2 the root moves to 2 and omega(5) = 1.5 / 3"""
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 10)
        m = harmonic_measure_root_shift(z, h, [z.vertex_id(5), z.vertex_id(2)], [20, 40], 1e-9)
        assert m[z.vertex_id(5)] == pytest.approx(0.5)
        assert m.details['shifted_root'] == '2'
        assert m.details['green_certificate']['converged'] is True

    def test_symmetric_pair(self, z2):
        """(1,0) and (-1,0) are swapped by a symmetry of the ball"""
        h = exhaustion_potential(z2, ball_region(z2, 8))
        A = [z2.vertex_id((1, 0)), z2.vertex_id((-1, 0))]
        m = harmonic_measure_root_shift(z2, h, A, [10, 20], 1e-6)
        np.testing.assert_allclose(m.weights, [0.5, 0.5], atol=1e-9)

    def test_root_and_neighbor(self, z2):
        h = exhaustion_potential(z2, ball_region(z2, 20))
        e = z2.vertex_id((1, 0))
        m = harmonic_measure_root_shift(z2, h, [z2.root, e], [10, 20], 1e-6)
        assert m[e] == pytest.approx(0.5, abs=1e-2)

    def test_single_vertex(self, z):
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 10)
        m = harmonic_measure_root_shift(z, h, [z.vertex_id(4)], [20], 1e-9)
        assert m.weights.tolist() == [1.0]

    def test_open_potential_is_rejected(self, z):
        h = potential_from_exhaustion(z, asymmetric_exhaustion(z, 4.0, [10, 20]), 1e-12)
        with pytest.raises(NotConvergedException):
            harmonic_measure_root_shift(z, h, [z.vertex_id(5), z.vertex_id(2)], [20, 40], 1e-9)


# ============================================================================
# Limit route
# ============================================================================

class TestHarmonicMeasureInfinity:
    """Test sphere averages and their certificate"""

    def test_symmetric_pair(self, z2):
        A = [z2.vertex_id((1, 0)), z2.vertex_id((-1, 0))]
        m, cert = harmonic_measure_infinity(z2, A, [3, 6, 12], 0.05, ball_factor=2, with_contractions=False)
        np.testing.assert_allclose(m.weights, [0.5, 0.5], atol=1e-9)
        assert cert.spreads[-1] < cert.spreads[0]
        assert cert.sphere_sizes == [12, 24, 48]
        assert m.route == MeasureRoute.LIMIT

    def test_line_never_converges(self, z):
        """On Z the two sides of the sphere see different ends of A"""
        m, cert = harmonic_measure_infinity(z, [z.root, z.vertex_id(1)], [4, 8, 16], 0.05, with_contractions=False)
        assert not cert.converged
        assert cert.spreads == pytest.approx([1.0, 1.0, 1.0])
        np.testing.assert_allclose(m.weights, [0.5, 0.5])
        with pytest.raises(NotConvergedException):
            cert.require_converged()

    def test_set_inside_sphere(self, z2):
        with pytest.raises(RegionTooSmallException):
            harmonic_measure_infinity(z2, [z2.root, z2.vertex_id((3, 0))], [3, 6], 0.05)

    def test_finite_network(self, path_graph):
        with pytest.raises(RegionTooSmallException):
            harmonic_measure_infinity(path_graph, [0, 1], [2, 8], 0.05)

    def test_contraction_is_tv(self, z2):
        q = sphere_contraction(z2, 2, 4)
        assert 0.0 < q < 1.0

    def test_certificate_dict(self, z2):
        _, cert = harmonic_measure_infinity(z2, [z2.root], [2, 4], 1.0, ball_factor=2, with_contractions=False)
        data = cert.to_dict()
        assert data['converged'] is True
        assert data['radii'] == [2, 4]


# ============================================================================
# Monte Carlo route
# ============================================================================

class TestHarmonicMeasureMC:
    """Last-exit frequencies against the determinant route"""

    @pytest.mark.statistical
    def test_line_against_det(self, z):
        region = ball_region(z, 20)
        h = exhaustion_potential(z, region)
        A = [z.root, z.vertex_id(1)]
        table = killed_green_table(z, region, [z.root], BoundaryMode.ABSORBING)
        det = harmonic_measure_det(table, h, A)
        assert det[z.vertex_id(1)] == pytest.approx(0.5)
        assert det.details['escape_corrected']
        mc = harmonic_measure_mc(z, h, A, 4000, 7)
        assert mc.route == MeasureRoute.MC
        assert mc.is_valid()
        assert mc.tv(det) <= 0.03

    def test_deterministic(self, z):
        h = exhaustion_potential(z, ball_region(z, 10))
        A = [z.root, z.vertex_id(-1)]
        a = harmonic_measure_mc(z, h, A, 300, 11)
        b = harmonic_measure_mc(z, h, A, 300, 11)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestMeasureOnSet:
    """Test the measure container"""

    def test_length_mismatch(self, z):
        with pytest.raises(ValueError):
            MeasureOnSet(z, (0, 1), np.array([1.0]), MeasureRoute.DIRECT)

    def test_serialization(self, z):
        m = MeasureOnSet(z, (z.root, z.vertex_id(1)), np.array([0.25, 0.75]), MeasureRoute.DET)
        data = m.to_dict()
        assert data['support'] == ['0', '1']
        assert data['provenance'] == 'determinant'
        assert list(m.to_frame().columns) == ['vertex', 'weight']


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
