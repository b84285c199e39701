import math

import numpy as np
import pytest

from fastconsensus.dynamics import SystemConfig, closed_loop_block
from fastconsensus.errors import Disconnected, InvalidOptions
from fastconsensus.graph import (
    Graph,
    complete_bipartite_graph,
    complete_graph,
    cycle_graph,
    path_graph,
    random_connected_graph,
    spectrum,
    star_graph,
)
from fastconsensus.rate import (
    batch_rates,
    bound_vector,
    consensus_check,
    convergence_rate,
    deadbeat_box,
    default_init_box,
    gains_to_f,
    gradient_descent_rate,
    optimal_gains_general,
    optimal_gains_order2,
    rate_lower_bound,
    restart_rng,
)

C10 = spectrum(cycle_graph(10))
# exact cycle eigenvalues, independent of the eigensolver
L2_C10 = 2 - 2 * math.cos(2 * math.pi / 10)


def eig_rate(s, cfg, k):
    """Rate from dense eigenvalues of every block (oracle)."""
    return max(
        np.max(np.abs(np.linalg.eigvals(closed_loop_block(cfg, lam, k)))) for lam in s.distinct_nonzero
    )


class TestConvergenceRate:
    def test_open_loop(self):
        res = convergence_rate(C10, SystemConfig(3, 0.1), [0, 0, 0])
        assert res.rate == 1.0
        assert not res.consensus

    def test_order2_optimal_on_cycle(self):
        cfg = SystemConfig(2, 0.1)
        res = convergence_rate(C10, cfg, optimal_gains_order2(C10, 0.1))
        expected = math.sqrt((4 - L2_C10) / (4 + L2_C10))
        assert res.rate == pytest.approx(expected, abs=1e-9)
        assert res.rate == pytest.approx(0.9087, abs=5e-5)
        assert res.consensus

    def test_complete_graph_single_step(self):
        for size in (3, 5, 8):
            s = spectrum(complete_graph(size))
            assert convergence_rate(s, SystemConfig(1, 0.1), [10 / size]).rate < 1e-12

    def test_matches_eigvals_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s = spectrum(random_connected_graph(8, rng))
            n = int(rng.integers(1, 5))
            cfg = SystemConfig(n, 0.1)
            k = rng.uniform(0, 3, size=n)
            assert convergence_rate(s, cfg, k).rate == pytest.approx(eig_rate(s, cfg, k), rel=1e-6)

    def test_tie_breaks_toward_smallest_eigenvalue(self):
        # order-2 optimum equalises the radius at lambda_2 and lambda_N
        res = convergence_rate(C10, SystemConfig(2, 0.1), optimal_gains_order2(C10, 0.1))
        assert res.argmax_lambda == pytest.approx(L2_C10, abs=1e-12)

    def test_disconnected(self):
        s = spectrum(Graph(4, ((0, 1), (2, 3))))
        with pytest.raises(Disconnected):
            convergence_rate(s, SystemConfig(1, 0.1), [1.0])

    def test_relabel_invariance(self):
        rng = np.random.default_rng(2)
        g = random_connected_graph(9, rng, weighted=True)
        cfg = SystemConfig(3, 0.1)
        k = [1.0, 3.0, 2.0]
        base = convergence_rate(spectrum(g), cfg, k).rate
        for _ in range(5):
            perm = rng.permutation(9)
            assert convergence_rate(spectrum(g.relabeled(perm)), cfg, k).rate == pytest.approx(base, rel=1e-9)

    def test_batch_matches_single(self):
        cfg = SystemConfig(2, 0.1)
        gains = np.array([[1.0, 2.0], [4.0, 5.0], [0.0, 0.0]])
        batch = batch_rates(C10, cfg, gains)
        singles = [convergence_rate(C10, cfg, k).rate for k in gains]
        assert np.allclose(batch, singles)


class TestLowerBound:
    @pytest.mark.parametrize(
        "g, expected",
        [(cycle_graph(10), 0.9381), (path_graph(10), 0.9834), (complete_bipartite_graph(4, 6), 0.7539)],
    )
    def test_reference_graphs(self, g, expected):
        assert round(rate_lower_bound(spectrum(g), 3), 4) == expected

    def test_complete_graph_is_zero(self):
        assert rate_lower_bound(spectrum(complete_graph(6)), 3) == 0.0

    def test_formula(self):
        s = spectrum(path_graph(7))
        for n in (1, 2, 5):
            l2, ln = s.lambda_2, s.lambda_max
            assert rate_lower_bound(s, n) == pytest.approx(((ln - l2) / (ln + l2)) ** (1 / n), rel=1e-15)

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            rate_lower_bound(C10, 0)


class TestClosedForms:
    def test_order2_values(self):
        k = optimal_gains_order2(C10, 0.1)
        expected_k1 = 2 * L2_C10 / (0.01 * (L2_C10 + 4) * 4)
        assert k[1] == pytest.approx(5.0, abs=1e-12)
        assert k[0] == pytest.approx(expected_k1, rel=1e-12)
        assert k[0] == pytest.approx(4.358386, abs=1e-6)

    def test_order2_complete_graph_rate_zero(self):
        s = spectrum(complete_graph(5))
        assert convergence_rate(s, SystemConfig(2, 0.1), optimal_gains_order2(s, 0.1)).rate < 1e-6

    def test_first_order_matches_grid_search(self):
        s = spectrum(path_graph(6))
        tau = 0.1
        gains = optimal_gains_general(s, SystemConfig(1, tau)).gains
        grid = np.linspace(0.01, 20, 200001)
        worst = np.maximum(np.abs(1 - s.lambda_2 * tau * grid), np.abs(1 - s.lambda_max * tau * grid))
        assert gains[0] == pytest.approx(grid[np.argmin(worst)], abs=2e-4)
        assert gains[0] == pytest.approx(2 / ((s.lambda_2 + s.lambda_max) * tau), rel=1e-12)

    def test_general_reduces_to_order2(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            s = spectrum(random_connected_graph(7, rng, weighted=True))
            tau = float(rng.uniform(0.05, 0.5))
            general = optimal_gains_general(s, SystemConfig(2, tau)).gains
            assert np.allclose(general, optimal_gains_order2(s, tau), rtol=1e-10)

    def test_star_attains_bound(self):
        s = spectrum(star_graph(10))
        cfg = SystemConfig(3, 0.1)
        der = optimal_gains_general(s, cfg)
        assert convergence_rate(s, cfg, der.gains).rate == pytest.approx(der.target_rate, abs=1e-6)

    def test_triangular_system_round_trip(self):
        for n in range(1, 6):
            cfg = SystemConfig(n, 0.2)
            der = optimal_gains_general(C10, cfg)
            assert np.allclose(gains_to_f(der.gains, cfg.tau), der.f, rtol=1e-10, atol=1e-12)
            assert np.allclose(der.f, bound_vector(C10, n))

    def test_frozen_cycle_gains(self):
        der = optimal_gains_general(C10, SystemConfig(3, 0.1))
        assert np.allclose(der.gains, [2.47132317, 6.18385145, 5.15783328], atol=1e-8)


class TestConsensusCheck:
    def test_open_loop_fails(self):
        assert not consensus_check(C10, SystemConfig(2, 0.1), [0, 0]).consensus

    def test_optimal_gains_pass(self):
        rep = consensus_check(C10, SystemConfig(2, 0.1), optimal_gains_order2(C10, 0.1))
        assert rep.consensus
        assert len(rep.max_modulus) == 5
        assert max(rep.max_modulus) < 1

    def test_huge_gain_fails_at_lambda_max(self):
        rep = consensus_check(C10, SystemConfig(2, 0.1), [1000, 0])
        assert not rep.consensus
        assert rep.max_modulus[0] > 1


class TestGradientDescent:
    @pytest.mark.parametrize(
        "kwargs",
        [{"T": 0}, {"T": 2.5}, {"eta": 0}, {"delta": -1}, {"restarts": 0}, {"init_box": [1.0, -1.0]}],
    )
    def test_invalid_options(self, kwargs):
        with pytest.raises(InvalidOptions):
            gradient_descent_rate(C10, SystemConfig(2, 0.1), **kwargs)

    def test_init_shape_checked(self):
        with pytest.raises(InvalidOptions):
            gradient_descent_rate(C10, SystemConfig(2, 0.1), T=2, init=[1.0, 2.0, 3.0])

    def test_start_at_optimum(self):
        cfg = SystemConfig(2, 0.1)
        k_star = optimal_gains_order2(C10, 0.1)
        rep = gradient_descent_rate(C10, cfg, T=200, restarts=2, init=k_star)
        lb = rate_lower_bound(C10, 2)
        assert rep.best_rate == pytest.approx(lb, abs=1e-9)
        assert rep.best_rate <= rep.rate_trace[:, 0].min()

    def test_report_invariants(self):
        cfg = SystemConfig(3, 0.1)
        rep = gradient_descent_rate(C10, cfg, T=300, restarts=4, seed=7)
        assert rep.rate_trace.shape == (4, 301)
        assert rep.iterations_run == 300
        assert rep.best_rate == pytest.approx(convergence_rate(C10, cfg, rep.best_gains).rate, abs=1e-12)
        assert rep.best_rate <= np.nanmin(rep.final_rates)
        assert rep.best_rate <= np.nanmin(rep.rate_trace[:, 0])
        assert rep.best_rate >= rate_lower_bound(C10, 3) - 1e-9
        assert rep.best_final_rate == pytest.approx(np.min(rep.final_rates))

    def test_deterministic_and_batch_independent(self):
        cfg = SystemConfig(2, 0.1)
        a = gradient_descent_rate(C10, cfg, T=50, restarts=3, seed=5)
        b = gradient_descent_rate(C10, cfg, T=50, restarts=3, seed=5)
        assert np.array_equal(a.rate_trace, b.rate_trace)
        # restart r's start depends only on (seed, r)
        c = gradient_descent_rate(C10, cfg, T=50, restarts=5, seed=5)
        assert np.array_equal(a.initial_gains, c.initial_gains[:3])
        assert np.array_equal(a.rate_trace, c.rate_trace[:3])

    def test_initial_points_inside_box(self):
        cfg = SystemConfig(3, 0.1)
        rep = gradient_descent_rate(C10, cfg, T=1, restarts=20, seed=1)
        box = default_init_box(C10, cfg)
        assert np.all(rep.initial_gains > 0) and np.all(rep.initial_gains < box)
        expected = restart_rng(1, 4).uniform(0.0, box)
        assert np.array_equal(rep.initial_gains[4], expected)

    def test_deadbeat_box(self):
        box = deadbeat_box(C10, SystemConfig(2, 0.1))
        assert np.allclose(box, [2 * 1 / (4 * 0.01), 2 * 2 / (4 * 0.1)])

    def test_raw_mode_runs(self):
        cfg = SystemConfig(2, 0.1)
        rep = gradient_descent_rate(C10, cfg, T=100, restarts=2, scaled=False, init_box=deadbeat_box(C10, cfg))
        assert np.isfinite(rep.best_rate)
        assert rep.best_rate <= rep.rate_trace[:, 0].min()

    def test_descent_improves_on_second_order(self):
        cfg = SystemConfig(2, 0.1)
        rep = gradient_descent_rate(C10, cfg, T=2000, restarts=4, seed=0)
        assert rep.best_rate - rate_lower_bound(C10, 2) < 5e-3
