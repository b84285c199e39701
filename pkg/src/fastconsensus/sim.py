"""Trajectory simulation of the networked agents and consensus-error series."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .dynamics import SystemConfig, a_power, as_gains, network_step
from .errors import DimensionMismatch, EmptyTrajectory
from .finite_time import GainSchedule
from .graph import Graph, laplacian

STORE_CAP = 10**6


@dataclass
class Trajectory:
    """States ``x(0..T)`` (agent-major rows) and consensus errors ``e(0..T)``.

    ``states`` is ``None`` when ``(T + 1) * N * n`` exceeds the storage cap;
    errors are always kept.
    """

    states: NDArray[np.float64] | None = field(repr=False)
    errors: NDArray[np.float64] = field(repr=False)
    config: SystemConfig
    step_count: int
    final_state: NDArray[np.float64] = field(repr=False, default=None)


def _lap(g) -> NDArray[np.float64]:
    return laplacian(g) if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)


def _check(lap, cfg, x0):
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.size != lap.shape[0] * cfg.order:
        raise DimensionMismatch(
            f"initial state has length {x0.size}, expected {lap.shape[0] * cfg.order}"
        )
    return x0


def consensus_error(cfg: SystemConfig, x, mean0, k: int) -> float:
    """``||x(k) - 1_N kron A^k mean(x(0))||_2``."""
    drift = a_power(cfg, k) @ mean0
    return float(np.linalg.norm(x.reshape(-1, cfg.order) - drift[None, :]))


def _run(lap, cfg, gain_at, x0, steps, store_cap):
    if steps < 0:
        raise ValueError("steps must be non-negative")
    size = lap.shape[0]
    keep = (steps + 1) * size * cfg.order <= store_cap
    states = np.empty((steps + 1, size * cfg.order), dtype=x0.dtype) if keep else None
    errors = np.empty(steps + 1)
    mean0 = x0.reshape(size, cfg.order).mean(axis=0)
    x = x0.copy()
    for k in range(steps + 1):
        if k:
            x = network_step(lap, cfg, gain_at(k - 1), x)
        if keep:
            states[k] = x
        errors[k] = consensus_error(cfg, x, mean0, k)
    return Trajectory(states, errors, cfg, steps, x)


def simulate_constant(
    g: Graph | NDArray[np.float64],
    cfg: SystemConfig,
    k,
    x0,
    steps: int,
    store_cap: int = STORE_CAP,
) -> Trajectory:
    """Iterate the constant-gain protocol for ``steps`` steps."""
    lap = _lap(g)
    x0 = _check(lap, cfg, x0)
    gains = as_gains(k, cfg.order)
    return _run(lap, cfg, lambda _k: gains, x0, steps, store_cap)


def simulate_scheduled(
    g: Graph | NDArray[np.float64],
    cfg: SystemConfig,
    sched: GainSchedule,
    x0,
    steps: int,
    store_cap: int = STORE_CAP,
) -> Trajectory:
    """Iterate the time-varying protocol; gains are zero once the schedule ends.

    The state is carried in the schedule's dtype, so an extended-precision
    schedule yields an extended-precision trajectory.
    """
    if sched.order != cfg.order:
        raise DimensionMismatch("schedule order does not match the system order")
    lap = _lap(g)
    x0 = _check(lap, cfg, x0).astype(np.result_type(sched.entries.dtype, np.float64))
    return _run(lap, cfg, sched.gain_at, x0, steps, store_cap)


def fit_decay_slope(errors, window: tuple[int, int] | None = None) -> float:
    """Least-squares slope of ``log e(k)`` over ``window`` (inclusive step range).

    The default window is the second half of the series. Zero or
    non-finite errors are skipped; NaN if fewer than two points remain.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if window is None:
        window = (len(errors) // 2, len(errors) - 1)
    lo, hi = window
    ks = np.arange(lo, min(hi, len(errors) - 1) + 1)
    vals = errors[ks]
    ok = np.isfinite(vals) & (vals > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(ks[ok], np.log(vals[ok]), 1)[0])


def error_series(t: Trajectory, window: tuple[int, int] | None = None):
    """Return ``([(k, e(k)), ...], slope)`` with the fitted log-decay slope."""
    if t.errors is None or len(t.errors) == 0:
        raise EmptyTrajectory("trajectory has no samples")
    pairs = [(k, float(e)) for k, e in enumerate(t.errors)]
    return pairs, fit_decay_slope(t.errors, window)


def consensus_step(t: Trajectory, tol: float) -> int | None:
    """First ``k`` after which every stored error stays at or below ``tol``."""
    above = np.flatnonzero(~(t.errors <= tol))
    if above.size == 0:
        return 0
    k = int(above[-1]) + 1
    return k if k <= t.step_count else None


def initial_condition(
    node_count: int, order: int, spread: float, seed: int
) -> NDArray[np.float64]:
    """Seeded uniform draw on ``[-spread, spread]`` (PCG64), agent-major."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-spread, spread, size=node_count * order)


def write_trajectory_csv(t: Trajectory, path: str | Path):
    """Columns ``k, e_k, x_<agent>_<level>``; 17 significant digits."""
    if t.states is None:
        raise ValueError("trajectory states were not stored (storage cap exceeded)")
    n = t.config.order
    size = t.states.shape[1] // n
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["k", "e_k"] + [f"x_{i}_{l}" for i in range(1, size + 1) for l in range(1, n + 1)]
        )
        for k in range(t.step_count + 1):
            writer.writerow(
                [k, format(float(t.errors[k]), ".17g")]
                + [format(float(v), ".17g") for v in t.states[k]]
            )
