"""
Unit tests for the h-process: kernel, stop rules, simulation and the checks built on paths
"""

import math

import numpy as np
import pytest

from core.exceptions import InvalidPotentialException, SimulationException
from core.hprocess import (
    HPath,
    StopReason,
    StopRule,
    conditional_tail_check,
    dipole_mixture_path_check,
    empirical_green_check,
    escape_profile,
    green_oracle_for,
    green_tail_completion,
    grouped_chi_square,
    intersection_count,
    last_exit_index,
    martin_limit_check,
    martin_track,
    mu_h,
    path_log_probability,
    phi_kernel_check,
    phi_transition_frequencies,
    reversal_check,
    simulate,
    simulate_paths,
    step_kernel,
    streamed_green_check,
    visit_counts,
)
from core.potentials import Potential, exhaustion_potential, phi_closed_form_potential
from networks.region import ball_region, interval_region

from tests.conftest import make_network


@pytest.fixture
def z_killed(z):
    """Exhaustion potential of [-10, 10]: |k|/2 inside, 5.5 outside"""
    return exhaustion_potential(z, ball_region(z, 10))


@pytest.fixture
def z_rule(z):
    return StopRule(ball_region(z, 1), epsilon=0.05)


def _path(vertices):
    return HPath(np.array(vertices, dtype=np.int64), 0, 0, StopReason.BUDGET, 0.0)


# ============================================================================
# Kernel
# ============================================================================

class TestKernel:
    """Test mu_h and step_kernel"""

    def test_mu_h(self, z, z_killed):
        mu = mu_h(z, z_killed)
        assert mu == {z.vertex_id(1): pytest.approx(0.5), z.vertex_id(-1): pytest.approx(0.5)}

    def test_mu_h_rejects_bad_root_laplacian(self, z, z_killed):
        doubled = Potential.from_values(z, {v: 2 * x for v, x in z_killed.values.items()}, z_killed.region)
        with pytest.raises(InvalidPotentialException):
            mu_h(z, doubled)

    def test_step_kernel(self, z, z_killed):
        """p^h(3, 4) = h(4) / (2 h(3)) = 2/3"""
        kern = step_kernel(z, z_killed, z.vertex_id(3))
        assert kern[z.vertex_id(4)] == pytest.approx(2 / 3)
        assert kern[z.vertex_id(2)] == pytest.approx(1 / 3)
        assert math.fsum(kern.values()) == pytest.approx(1.0)

    def test_no_kernel_at_root(self, z, z_killed):
        with pytest.raises(SimulationException):
            step_kernel(z, z_killed, z.root)


class TestStopRule:
    """Test StopRule validation and levels"""

    def test_level_from_boundary(self, z, z_killed, z_rule):
        """h(1) + h(-1) = 1, so the level is 1 / 0.05"""
        assert z_rule.bound_sum(z_killed) == pytest.approx(1.0)
        assert z_rule.stop_level(z_killed) == pytest.approx(20.0)

    def test_max_bound(self, z, z_killed):
        rule = StopRule(ball_region(z, 1), epsilon=0.05, bound='max')
        assert rule.stop_level(z_killed) == pytest.approx(10.0)

    def test_explicit_level_wins(self, z, z_killed):
        rule = StopRule(ball_region(z, 1), epsilon=0.5, level=7.0)
        assert rule.stop_level(z_killed) == pytest.approx(7.0)

    @pytest.mark.parametrize('kwargs', [{'epsilon': 1.5}, {'epsilon': 0.0}, {'budget': 0}, {'bound': 'sum'}])
    def test_invalid(self, z, kwargs):
        with pytest.raises(ValueError):
            StopRule(ball_region(z, 1), **kwargs)

    def test_defaults_from_config(self, z, monkeypatch):
        from core.config import reset_global_config

        monkeypatch.setenv('RECURNET_MC_EPSILON', '0.2')
        reset_global_config()
        assert StopRule(ball_region(z, 1)).epsilon == pytest.approx(0.2)

    def test_potential_must_cover_observation(self, z):
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 2)
        with pytest.raises(SimulationException):
            StopRule(ball_region(z, 5), epsilon=0.1).stop_level(h)


# ============================================================================
# Simulation
# ============================================================================

class TestSimulatePaths:
    """Test simulate_paths and its reproducibility"""

    def test_killed_paths_end_outside(self, z, z_killed, z_rule):
        result = simulate_paths(z, z_killed, z_rule, 200, 3)
        assert result.stop_counts()['region-edge'] == 200
        edge = {z.vertex_id(11), z.vertex_id(-11)}
        for path in result.paths:
            assert path.final in edge
            assert z.root not in path.vertices.tolist()
            assert result.path_bias(path) == 0.0

    def test_paths_are_walks(self, z2):
        h = exhaustion_potential(z2, ball_region(z2, 6))
        result = simulate_paths(z2, h, StopRule(ball_region(z2, 1), epsilon=0.1), 50, 1)
        for path in result.paths:
            assert path.vertices[0] in {z for z, _ in z2.neighbors(z2.root)}
            for a, b in zip(path.vertices[:-1], path.vertices[1:]):
                assert z2.edge_conductance(int(a), int(b)) > 0

    def test_batch_invariance(self, z, z_killed, z_rule):
        """Path i depends on (seed, i) only"""
        big = simulate_paths(z, z_killed, z_rule, 40, 9)
        small = simulate_paths(z, z_killed, z_rule, 40, 9, batch_size=7)
        for a, b in zip(big.paths, small.paths):
            np.testing.assert_array_equal(a.vertices, b.vertices)
        single = simulate(z, z_killed, z_rule, 9, index=17)
        np.testing.assert_array_equal(single.vertices, big.paths[17].vertices)

    def test_streams_differ(self, z, z_killed, z_rule):
        a = simulate_paths(z, z_killed, z_rule, 30, 9)
        b = simulate_paths(z, z_killed, z_rule, 30, 9, stream=2)
        assert any(not np.array_equal(p.vertices, q.vertices) for p, q in zip(a.paths, b.paths))

    def test_log_probability(self, z, z_killed, z_rule):
        path = simulate(z, z_killed, z_rule, 5, index=2)
        assert path.log_prob == pytest.approx(path_log_probability(z, z_killed, path))

    def test_budget_stop(self, z, z_killed):
        rule = StopRule(ball_region(z, 1), epsilon=0.05, budget=3)
        result = simulate_paths(z, z_killed, rule, 20, 0)
        assert result.stop_counts()['budget'] == 20
        assert all(len(p) == 4 for p in result.paths)
        assert math.isinf(result.path_bias(result.paths[0]))

    def test_potential_grows_on_demand(self, z):
        """A closed-form potential is extended until h reaches the stop level"""
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 3)
        rule = StopRule(ball_region(z, 1), epsilon=0.1)
        result = simulate_paths(z, h, rule, 30, 4)
        assert result.stop_counts()['level-reached'] == 30
        assert all(abs(z.label(p.final)) == 20 for p in result.paths)
        assert any(p.extensions for p in result.paths)
        assert result.potential.region.radius >= 20

    def test_invalid_arguments(self, z, z_killed, z_rule):
        with pytest.raises(ValueError):
            simulate_paths(z, z_killed, z_rule, 0, 1)
        with pytest.raises(ValueError):
            simulate_paths(z, z_killed, z_rule, 10, -1)

    def test_summary(self, z, z_killed, z_rule):
        data = simulate_paths(z, z_killed, z_rule, 10, 2).to_dict()
        assert data['n_paths'] == 10
        assert data['stop_reasons']['region-edge'] == 10
        assert data['bias_bound_total'] == 0.0
        assert data['kernel_defect'] <= 1e-12


# ============================================================================
# Path statistics
# ============================================================================

class TestGreenIdentity:
    """Mean visits against h(v) c_v f(v)"""

    @pytest.mark.statistical
    def test_line_visits(self, z, z_killed, z_rule):
        targets = [z.vertex_id(k) for k in (1, 2, -3)]
        result = simulate_paths(z, z_killed, z_rule, 6000, 12)
        report = empirical_green_check(result, targets)
        expected = report['rows'][0]['expected']
        assert expected == pytest.approx(1.0 * (1 - 0.5 / 5.5))
        for row in report['rows']:
            assert row['relative_error'] <= 0.1

    @pytest.mark.statistical
    def test_streamed_matches_in_memory(self, z, z_killed, z_rule):
        targets = [z.vertex_id(2)]
        streamed = streamed_green_check(z, z_killed, z_rule, targets, 600, 5, batch_size=250)
        in_memory = empirical_green_check(simulate_paths(z, z_killed, z_rule, 600, 5), targets)
        assert streamed['rows'][0]['mean_visits'] == pytest.approx(in_memory['rows'][0]['mean_visits'])

    @pytest.mark.statistical
    def test_streamed_tail_completion(self, z):
        """With the tail added, mean visits to v match h(v) c_v = |v| for h = |k|/2"""
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 10)
        D = interval_region(z, 3, 3)
        rule = StopRule(D, epsilon=0.5, bound='max')
        targets = [z.vertex_id(k) for k in (1, 2, -1)]
        report = streamed_green_check(z, h, rule, targets, 20000, 8, batch_size=5000,
                                      green=green_oracle_for(z, h, D, radius=20), relative_tol=0.05)
        assert report['tail_completed']
        assert report['tail_skipped'] == 0
        assert report['rows'][1]['expected'] == pytest.approx(2.0)
        assert report['passed']


class TestLastExitAndReversal:
    """Test last exits and reversed segments"""

    def test_last_exit_index(self):
        path = _path([1, 2, 3, 2, 5])
        assert last_exit_index(path, {2}) == 3
        assert last_exit_index(path, {9}) == -1

    @pytest.mark.statistical
    def test_reversal_has_no_illegal_segments(self, z):
        h = exhaustion_potential(z, ball_region(z, 20))
        D = ball_region(z, 2)
        result = simulate_paths(z, h, StopRule(D, epsilon=0.05), 1000, 8)
        report = reversal_check(result, D, m=2)
        assert report['illegal_segments'] == 0
        assert report['segments'] == 1000
        assert report['p_value'] > 1e-4


class TestPathHelpers:
    """Test intersection counts, escape profiles and exact tail bounds"""

    def test_intersection_count(self):
        report = intersection_count(_path([1, 2, 3, 2]), _path([2, 5, 2]))
        assert report.count == 4
        assert report.pairs == [(1, 0), (1, 2), (3, 0), (3, 2)]

    def test_intersection_cap(self):
        report = intersection_count(_path([7] * 5), _path([7] * 5), max_pairs=3)
        assert report.count == 25
        assert len(report.pairs) == 3

    def test_escape_profile(self, z, z_killed, z_rule):
        result = simulate_paths(z, z_killed, z_rule, 50, 6)
        profile = escape_profile(result, 0.25, [0, 1000])
        assert profile == {0: 1.0, 1000: 1.0}
        assert escape_profile(result, 1.0, [0]) == {0: 0.0}

    def test_conditional_tail_bound(self, z):
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 12)
        report = conditional_tail_check(z, h, interval_region(z, 10, 10), z.vertex_id(4), 1.5, 3)
        assert report['holds']
        assert report['bound'] == pytest.approx(2.0 / 1.5)
        assert report['mass'] == pytest.approx(1.0)

    def test_conditional_tail_needs_other_vertex(self, z):
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 12)
        with pytest.raises(ValueError):
            conditional_tail_check(z, h, interval_region(z, 10, 10), z.root, 1.0, 2)


class TestGreenCorrections:
    """Test visit counts, tail completion and the Martin track"""

    def test_visit_counts(self, z):
        ids = [z.vertex_id(k) for k in (1, 2, 1, 2, 3)]
        result = simulate_paths(z, exhaustion_potential(z, ball_region(z, 10)),
                                StopRule(ball_region(z, 1), epsilon=0.05), 2, 0)
        result.paths = [_path(ids), _path(ids[:2])]
        counts = visit_counts(result, [z.vertex_id(1), z.vertex_id(2), z.vertex_id(-1)])
        np.testing.assert_array_equal(counts, [[2, 2, 0], [1, 1, 0]])

    def test_killed_paths_need_no_tail(self, z, z_killed, z_rule):
        result = simulate_paths(z, z_killed, z_rule, 10, 1)
        tail, skipped = green_tail_completion(result, [z.vertex_id(1)], green_oracle_for(z, z_killed, ball_region(z, 1)))
        assert skipped == 0
        assert not tail.any()

    def test_level_stopped_tail(self, z):
        """From +-20 the walk killed at 0 expects g(20, 1) c_1 h(1) / h(20) = 0.1 more visits to 1"""
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 3)
        result = simulate_paths(z, h, StopRule(ball_region(z, 1), epsilon=0.1), 20, 2)
        green = green_oracle_for(z, result.potential, ball_region(z, 1), radius=40)
        tail, skipped = green_tail_completion(result, [z.vertex_id(1)], green)
        assert skipped == 0
        for path, row in zip(result.paths, tail):
            expected = 0.1 if z.label(path.final) > 0 else 0.0
            assert row[0] == pytest.approx(expected)

    def test_martin_track(self, z, z_killed):
        """On [-10, 10] killed at 0, g(1, y) / f(y) = 1 along the right half-line"""
        path = _path([z.vertex_id(k) for k in range(1, 12)])
        green = green_oracle_for(z, z_killed, ball_region(z, 1))
        track = martin_track(path, [z.vertex_id(1), z.vertex_id(2)], green, z_killed)
        np.testing.assert_allclose(track.values[z.vertex_id(1)], np.ones(10))
        assert track.values[z.vertex_id(2)][0] == pytest.approx(0.9)
        assert track.limit[z.vertex_id(2)] == pytest.approx(2.0)
        assert track.dispersion[z.vertex_id(1)] == pytest.approx(0.0, abs=1e-12)

    def test_martin_track_outside(self, z, z_killed):
        green = green_oracle_for(z, z_killed, ball_region(z, 1))
        with pytest.raises(SimulationException):
            martin_track(_path([z.vertex_id(50)]), [z.vertex_id(1)], green, z_killed)

    @pytest.mark.statistical
    def test_martin_limits_on_line(self, z):
        """h = |k|/2 never crosses the root, so H(1) is 0 or 1 and every track is constant"""
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 10)
        D = interval_region(z, 3, 3)
        result = simulate_paths(z, h, StopRule(D, epsilon=0.5, bound='max'), 2000, 4)
        report = martin_limit_check(result, [z.vertex_id(1), z.vertex_id(-1)], green_oracle_for(z, h, D, radius=20))
        assert report['settled_share'] == 1.0
        assert report['rows'][0]['expected'] == pytest.approx(0.5)
        assert report['rows'][0]['mean_limit'] + report['rows'][1]['mean_limit'] == pytest.approx(1.0)
        assert report['passed']


class TestDipoleMixture:
    """Walks conditioned to reach a mixture of targets"""

    def test_line(self, z):
        """Mixing g(., 5) and g(., -5) evenly gives |k|/2 inside [-5, 5]"""
        h = Potential.from_function(z, lambda n: abs(n) / 2.0, 10)
        eta = {z.vertex_id(5): 0.5, z.vertex_id(-5): 0.5}
        gammas = [[z.vertex_id(1)], [z.vertex_id(1), z.vertex_id(2)],
                  [z.vertex_id(-1), z.vertex_id(-2), z.vertex_id(-3)]]
        report = dipole_mixture_path_check(z, eta, gammas, h, ball_region(z, 10))
        assert report['identity_defect'] <= 1e-10
        assert report['h_difference'] <= 1e-10
        assert report['h_transform'][0] == pytest.approx(0.5)


class TestChiSquare:
    """Test grouped_chi_square"""

    def test_perfect_fit(self):
        result = grouped_chi_square([(np.array([50.0, 50.0]), np.array([0.5, 0.5]))])
        assert result['chi_square'] == pytest.approx(0.0)
        assert result['df'] == 1
        assert result['p_value'] == pytest.approx(1.0)

    def test_small_cells_pooled(self):
        observed = np.array([90.0, 6.0, 2.0, 2.0])
        probs = np.array([0.9, 0.06, 0.02, 0.02])
        result = grouped_chi_square([(observed, probs)])
        assert result['df'] == 1

    def test_poor_fit(self):
        result = grouped_chi_square([(np.array([90.0, 10.0]), np.array([0.5, 0.5]))])
        assert result['p_value'] < 1e-6


class TestPhiKernel:
    """The phi-product conductances reproduce the h-transformed unit walk"""

    def test_kernel_identity(self):
        net = make_network({'generator': 'phi-product-lattice', 'params': {'d': 3, 'truncation_radius': 3},
                            'conductance': {'rule': 'phi-product'}})
        assert phi_kernel_check(net) <= 1e-12

    @pytest.mark.statistical
    def test_transitions_avoid_the_root(self):
        """Under the closed-form potential the h-process is the unit walk conditioned to avoid o"""
        net = make_network({'generator': 'phi-product-lattice', 'params': {'d': 3, 'truncation_radius': 4},
                            'conductance': {'rule': 'phi-product'}})
        h = phi_closed_form_potential(net)
        result = simulate_paths(net, h, StopRule(ball_region(net, 1), epsilon=0.5), 3000, 1)
        report = phi_transition_frequencies(result, net)
        assert report['vertices_tested'] > 0
        assert report['p_value'] > 1e-4


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
