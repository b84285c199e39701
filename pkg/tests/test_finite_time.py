import math

import numpy as np
import pytest

from fastconsensus.dynamics import SystemConfig, a_power, closed_loop_block
from fastconsensus.errors import DimensionMismatch, Disconnected
from fastconsensus.finite_time import (
    GainSchedule,
    deadbeat_gains,
    deadbeat_schedule,
    final_consensus_state,
    product_annihilation,
    schedule_product,
    verify_nilpotent,
    write_schedule_csv,
)
from fastconsensus.graph import (
    Graph,
    complete_bipartite_graph,
    complete_graph,
    cycle_graph,
    path_graph,
    spectrum,
    star_graph,
)
from fastconsensus.sim import initial_condition, simulate_scheduled
from fastconsensus.stability import char_coeffs

C10 = spectrum(cycle_graph(10))


class TestSchedule:
    def test_cycle_second_order(self):
        sched = deadbeat_schedule(C10, SystemConfig(2, 0.1))
        assert sched.length == 10
        assert sched.eigen_order[0] == pytest.approx(4.0, abs=1e-12)
        assert list(sched.eigen_order) == sorted(sched.eigen_order, reverse=True)
        assert np.allclose(sched.entries[0].astype(float), [25.0, 5.0], rtol=1e-14)
        assert np.array_equal(sched.entries[0], sched.entries[1])

    def test_block_values(self):
        cfg = SystemConfig(3, 0.2)
        sched = deadbeat_schedule(C10, cfg)
        for block, lam in enumerate(sched.eigen_order):
            for j in range(3):
                row = sched.entries[3 * block + j].astype(float)
                expected = [math.comb(3, m - 1) / (lam * 0.2 ** (3 - m + 1)) for m in (1, 2, 3)]
                assert np.allclose(row, expected, rtol=1e-13)

    def test_complete_graph_single_block(self):
        s = spectrum(complete_graph(6))
        for n in (1, 2, 3, 4):
            assert deadbeat_schedule(s, SystemConfig(n, 0.1)).length == n

    def test_first_order_reciprocals(self):
        s = spectrum(path_graph(5))
        sched = deadbeat_schedule(s, SystemConfig(1, 0.1))
        assert sched.length == 4
        assert np.allclose(sched.entries[:, 0].astype(float) * 0.1, 1 / np.array(s.distinct_nonzero))

    def test_zero_after_end(self):
        sched = deadbeat_schedule(C10, SystemConfig(2, 0.1))
        assert np.array_equal(sched.gain_at(10), [0.0, 0.0])
        assert np.array_equal(sched.gain_at(-1), [0.0, 0.0])

    def test_float64_variant(self):
        sched = deadbeat_schedule(C10, SystemConfig(2, 0.1), extended=False)
        assert sched.entries.dtype == np.float64

    def test_disconnected(self):
        with pytest.raises(Disconnected):
            deadbeat_schedule(spectrum(Graph(3, ((0, 1),))), SystemConfig(2, 0.1))

    def test_scaled(self):
        sched = deadbeat_schedule(C10, SystemConfig(2, 0.1))
        assert np.array_equal(sched.scaled(2.0).entries, sched.entries * 2.0)


class TestNilpotent:
    def test_schedule_gain_is_nilpotent(self):
        cfg = SystemConfig(2, 0.1)
        assert verify_nilpotent(cfg, 4.0, deadbeat_gains(cfg, 4.0))

    def test_zero_gain_is_not(self):
        assert not verify_nilpotent(SystemConfig(2, 0.1), 1.0, [0.0, 0.0])

    def test_binomial_case(self):
        assert verify_nilpotent(SystemConfig(3, 1.0), 1.0, [1, 3, 3])

    def test_coefficients_vanish(self):
        for n in range(1, 7):
            cfg = SystemConfig(n, 0.1)
            for lam in C10.distinct_nonzero:
                coeffs = char_coeffs(cfg.tau, lam, deadbeat_gains(cfg, lam))
                assert np.max(np.abs(coeffs[1:])) < 1e-9 * math.comb(n, n // 2)


class TestAnnihilation:
    def test_cycle_second_order(self):
        res = product_annihilation(C10, SystemConfig(2, 0.1), deadbeat_schedule(C10, SystemConfig(2, 0.1)))
        assert len(res) == 5
        assert max(res.values()) <= 1e-8

    def test_single_block_matches_power(self):
        s = spectrum(complete_graph(5))
        cfg = SystemConfig(3, 0.1)
        sched = deadbeat_schedule(s, cfg)
        prod = schedule_product(cfg, 5.0, sched)
        h = closed_loop_block(cfg, 5.0, sched.entries[0])
        assert np.allclose(prod, np.linalg.matrix_power(h, 3), atol=1e-12)
        assert max(product_annihilation(s, cfg, sched).values()) <= 1e-8

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_ascending_order_also_annihilates(self, n):
        cfg = SystemConfig(n, 0.1)
        sched = deadbeat_schedule(C10, cfg, descending=False)
        assert list(sched.eigen_order) == sorted(sched.eigen_order)
        assert max(product_annihilation(C10, cfg, sched).values()) <= 1e-8

    def test_perturbed_eigenvalues_leave_residual(self):
        cfg = SystemConfig(2, 0.1)
        wrong = [lam * 1.01 for lam in C10.distinct_nonzero]
        sched = deadbeat_schedule(C10, cfg, eigenvalues=wrong)
        assert max(product_annihilation(C10, cfg, sched).values()) > 1e-8


class TestFinalState:
    def test_first_order_mean(self):
        x0 = np.array([1.0, 2.0, 6.0])
        for k in (0, 5, 100):
            assert final_consensus_state(SystemConfig(1, 0.1), x0, k) == pytest.approx([3.0])

    def test_second_order_drift(self):
        # 10 agents with averages 1.3325 and 0.9627
        x0 = np.tile([1.3325, 0.9627], 10)
        for k in (0, 10, 37):
            s = final_consensus_state(SystemConfig(2, 0.1), x0, k)
            assert s == pytest.approx([1.3325 + 0.09627 * k, 0.9627], rel=1e-14)

    def test_third_order_polynomial_in_k(self):
        x0 = np.tile([1.3325, 0.9627, 2.2662], 10)
        for k in (0, 15, 40):
            s = final_consensus_state(SystemConfig(3, 0.1), x0, k)
            expected = [1.3325 + 0.09627 * k + 0.022662 * k * (k - 1) / 2, 0.9627 + 0.22662 * k, 2.2662]
            assert s == pytest.approx(expected, rel=1e-13)

    def test_matches_open_loop_average(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 4):
            cfg = SystemConfig(n, 0.3)
            x0 = rng.normal(size=7 * n)
            for k in (0, 1, 9, 70):
                expected = a_power(cfg, k) @ x0.reshape(7, n).mean(axis=0)
                assert np.allclose(final_consensus_state(cfg, x0, k), expected, rtol=1e-12, atol=1e-12)

    def test_zero_mean_derivatives_freeze(self):
        x0 = np.array([1.0, 1.0, -2.0, -1.0, 4.0, 0.0])
        s = [final_consensus_state(SystemConfig(2, 0.1), x0, k)[0] for k in range(5)]
        assert np.allclose(s, s[0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            final_consensus_state(SystemConfig(3, 0.1), np.zeros(7), 1)


WELL_CONDITIONED = [
    ("C10", cycle_graph(10), (1, 2, 3)),
    ("C6", cycle_graph(6), (1, 2, 3, 4)),
    ("C8", cycle_graph(8), (1, 2, 3)),
    ("P5", path_graph(5), (1, 2, 3)),
    ("P10", path_graph(10), (1, 2)),
    ("S10", star_graph(10), (1, 2, 3)),
    ("K6", complete_graph(6), (1, 2, 3, 4)),
    ("K4,6", complete_bipartite_graph(4, 6), (1, 2, 3, 4)),
]


def _state_gap(g, n, seed=0):
    s = spectrum(g)
    cfg = SystemConfig(n, 0.1)
    sched = deadbeat_schedule(s, cfg)
    x0 = initial_condition(g.node_count, n, 5.0, seed)
    traj = simulate_scheduled(g, cfg, sched, x0, sched.length + 20)
    scale = np.max(np.abs(x0))
    gaps = []
    for k in (sched.length, sched.length + 20):
        sim_state = traj.states[k].astype(float).reshape(-1, n)
        gaps.append(np.max(np.abs(sim_state - final_consensus_state(cfg, x0, k))) / scale)
    return max(gaps), traj, sched


@pytest.mark.parametrize(
    "name, g, n", [(name, g, n) for name, g, orders in WELL_CONDITIONED for n in orders]
)
def test_simulated_state_matches_prediction(name, g, n):
    gap, traj, sched = _state_gap(g, n)
    assert gap <= 1e-8
    # consensus error stays small once the schedule is exhausted
    tail = traj.errors[sched.length:] / np.linalg.norm(traj.states[0].astype(float))
    assert np.all(tail <= 1e-8)


@pytest.mark.xfail(strict=True, reason="rounding amplified by (lambda_N / lambda_2)^n per block exceeds 1e-8")
@pytest.mark.parametrize("g, n", [(path_graph(10), 3), (path_graph(10), 4), (cycle_graph(10), 4)])
def test_ill_conditioned_schedules_lose_accuracy(g, n):
    gap, _, _ = _state_gap(g, n)
    assert gap <= 1e-8


def test_weight_scaling_covariance():
    g = complete_bipartite_graph(3, 4)
    cfg = SystemConfig(3, 0.1)
    alpha = 2.5
    base = deadbeat_schedule(spectrum(g), cfg)
    scaled = deadbeat_schedule(spectrum(g.scaled(alpha)), cfg)
    for lam, lam_s in zip(base.eigen_order, scaled.eigen_order):
        assert lam_s == pytest.approx(alpha * lam, rel=1e-12)
    # lam * K is unchanged block by block
    products = np.array(base.eigen_order).repeat(3)[:, None] * base.entries.astype(float)
    products_s = np.array(scaled.eigen_order).repeat(3)[:, None] * scaled.entries.astype(float)
    assert np.allclose(products, products_s, rtol=1e-12)
    assert np.allclose(scaled.entries.astype(float), base.entries.astype(float) / alpha, rtol=1e-12)


def test_schedule_csv(tmp_path):
    sched = deadbeat_schedule(C10, SystemConfig(2, 0.1))
    path = tmp_path / "s.csv"
    write_schedule_csv(sched, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,K_1,K_2"
    assert len(lines) == 11
    first = [float(v) for v in lines[1].split(",")]
    assert first[0] == 0 and first[1:] == pytest.approx([25.0, 5.0], rel=1e-14)
    again = tmp_path / "t.csv"
    write_schedule_csv(sched, again)
    assert path.read_bytes() == again.read_bytes()


def test_gain_schedule_type():
    sched = GainSchedule(np.ones((2, 1)), 1, 0.1, (1.0, 2.0))
    assert sched.length == 2
    assert sched.gain_at(1)[0] == 1.0
