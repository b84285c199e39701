"""Convergence rate of the constant-gain protocol and its optimisation.

The rate of a gain vector ``K`` is the largest spectral radius of
``H(lam, K)`` over the distinct nonzero Laplacian eigenvalues ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .dynamics import SystemConfig, as_gains
from .errors import InvalidOptions
from .graph import Spectrum
from .stability import batch_roots, char_coeffs, spectral_radii

CONSENSUS_MARGIN = 1e-9
TIE_TOL = 1e-12


@dataclass(frozen=True)
class RateResult:
    rate: float
    argmax_lambda: float
    consensus: bool


@dataclass(frozen=True)
class ConsensusReport:
    """Root-modulus report for every distinct nonzero eigenvalue."""

    consensus: bool
    lambdas: tuple[float, ...]
    max_modulus: tuple[float, ...]
    margin: float


@dataclass(frozen=True)
class GainDerivation:
    """Closed-form gains together with the intermediate vector ``f``."""

    f: NDArray[np.float64]
    gains: NDArray[np.float64]
    target_rate: float


@dataclass
class OptimizerReport:
    """Outcome of :func:`gradient_descent_rate`.

    ``rate_trace[r, t]`` is the rate of restart ``r`` after ``t`` updates;
    column 0 holds the random starting points.
    """

    best_gains: NDArray[np.float64]
    best_rate: float
    iterations_run: int
    rate_trace: NDArray[np.float64] = field(repr=False)
    restarts: int
    seed: int
    initial_gains: NDArray[np.float64] = field(repr=False)
    final_gains: NDArray[np.float64] = field(repr=False)
    final_rates: NDArray[np.float64] = field(repr=False)
    best_restart: int = 0

    @property
    def best_final_rate(self) -> float:
        """Best last iterate across restarts (what a single plain descent run would report)."""
        return float(np.min(self.final_rates))


def _lambdas(s: Spectrum) -> NDArray[np.float64]:
    s.require_connected()
    return np.asarray(s.distinct_nonzero, dtype=np.float64)


def convergence_rate(s: Spectrum, cfg: SystemConfig, k) -> RateResult:
    """``r(K) = max_lam rho(H(lam, K))`` over distinct nonzero eigenvalues."""
    lams = _lambdas(s)
    gains = as_gains(k, cfg.order)
    radii = spectral_radii(cfg.tau, lams, gains[None, :])
    rate = float(np.max(radii))
    # smallest eigenvalue attaining the max; lams are descending
    ties = np.flatnonzero(radii >= rate - TIE_TOL * max(1.0, rate))
    argmax = float(lams[ties[-1]])
    return RateResult(rate=rate, argmax_lambda=argmax, consensus=rate < 1.0)


def batch_rates(s: Spectrum, cfg: SystemConfig, gains) -> NDArray[np.float64]:
    """Rates for an array of gain vectors of shape ``(..., n)``."""
    lams = _lambdas(s)
    gains = np.asarray(gains, dtype=np.float64)
    radii = spectral_radii(cfg.tau, lams, gains[..., None, :])
    return np.max(radii, axis=-1)


def rate_lower_bound(s: Spectrum, n: int) -> float:
    """``((lam_N - lam_2) / (lam_N + lam_2))^(1/n)``."""
    s.require_connected()
    if n < 1:
        raise ValueError("order must be at least 1")
    if s.distinct_count <= 1:
        # lambda_2 == lambda_N up to clustering; the n-th root would amplify rounding
        return 0.0
    l2, ln = s.lambda_2, s.lambda_max
    ratio = max((ln - l2) / (ln + l2), 0.0)
    return ratio ** (1.0 / n)


def optimal_gains_order2(s: Spectrum, tau: float) -> NDArray[np.float64]:
    """Closed-form optimal gains ``[K_1, K_2]`` for second-order agents."""
    s.require_connected()
    l2, ln = s.lambda_2, s.lambda_max
    return np.array([2.0 * l2 / (tau**2 * (l2 + ln) * ln), 2.0 / (ln * tau)])


def bound_vector(s: Spectrum, n: int) -> NDArray[np.float64]:
    """Entries ``f_1 .. f_n`` that the optimal gains must reproduce.

    ``f_q = (-1)^q / (2 l2 lN) * [r^(2q - n) C(n, q) (lN - l2) - C(n, n - q) (lN + l2)]``
    with ``r`` the rate lower bound.
    """
    l2, ln = s.lambda_2, s.lambda_max
    r = rate_lower_bound(s, n)
    f = np.empty(n)
    for q in range(1, n + 1):
        # r = 0 only when lN == l2, where the first term drops out
        head = r ** (2 * q - n) * (ln - l2) if r > 0 else 0.0
        f[q - 1] = (-1) ** q / (2 * l2 * ln) * (
            head * math.comb(n, q) - math.comb(n, n - q) * (ln + l2)
        )
    return f


def gains_to_f(k, tau: float) -> NDArray[np.float64]:
    """Forward map of the triangular system linking gains and ``f``.

    ``f_i = sum_{m=0}^{i-1} (-1)^m K_(n-i+1+m) tau^(i-m) C(n-i+m, n-i)``.
    """
    gains = np.asarray(k, dtype=np.float64)
    n = gains.size
    f = np.zeros(n)
    for i in range(1, n + 1):
        for m in range(i):
            f[i - 1] += (-1) ** m * gains[n - i + m] * tau ** (i - m) * math.comb(n - i + m, n - i)
    return f


def optimal_gains_general(s: Spectrum, cfg: SystemConfig) -> GainDerivation:
    """Gains that are necessary for attaining the rate lower bound.

    Solves the triangular system back from ``K_n = f_1 / tau``, then
    ``K_j = (f_(n+1-j) + sum_i (-1)^(i+1) K_(j+i) tau^(n-j+1-i) C(j-1+i, j-1)) / tau^(n+1-j)``
    for ``j = n-1 .. 1``.
    """
    s.require_connected()
    n, tau = cfg.order, cfg.tau
    f = bound_vector(s, n)
    gains = np.zeros(n)
    gains[n - 1] = f[0] / tau
    for j in range(n - 1, 0, -1):
        acc = f[n - j]
        for i in range(1, n - j + 1):
            acc += gains[j + i - 1] * (-1) ** (i + 1) * tau ** (n - j + 1 - i) * math.comb(j - 1 + i, j - 1)
        gains[j - 1] = acc / tau ** (n + 1 - j)
    return GainDerivation(f=f, gains=gains, target_rate=rate_lower_bound(s, n))


def consensus_check(
    s: Spectrum, cfg: SystemConfig, k, margin: float = CONSENSUS_MARGIN
) -> ConsensusReport:
    """Consensus holds iff every characteristic root has modulus below ``1 - margin``."""
    lams = _lambdas(s)
    gains = as_gains(k, cfg.order)
    coeffs = char_coeffs(cfg.tau, lams, gains[None, :])
    roots = batch_roots(coeffs)
    moduli = np.max(np.abs(roots), axis=1) if roots.shape[1] else np.zeros(len(lams))
    return ConsensusReport(
        consensus=bool(np.all(moduli < 1.0 - margin)),
        lambdas=tuple(float(x) for x in lams),
        max_modulus=tuple(float(x) for x in moduli),
        margin=margin,
    )


# -- gradient descent -----------------------------------------------------

def deadbeat_box(s: Spectrum, cfg: SystemConfig) -> NDArray[np.float64]:
    """Twice the deadbeat gains at ``lam_N``."""
    n, tau = cfg.order, cfg.tau
    return np.array(
        [2.0 * math.comb(n, j - 1) / (s.lambda_max * tau ** (n + 1 - j)) for j in range(1, n + 1)]
    )


def gain_units(s: Spectrum, cfg: SystemConfig) -> NDArray[np.float64]:
    """Per-coordinate gain scale used by the descent.

    Deadbeat gains at ``lam_N`` shrunk by ``theta^(n-j)`` with
    ``theta = min(1, 2 (1 - r_lb))``: when the best attainable rate is close
    to one the closed-loop roots hug ``z = 1`` and every lower-order gain is
    smaller by roughly that factor.
    """
    n = cfg.order
    theta = min(1.0, 2.0 * (1.0 - rate_lower_bound(s, n)))
    return deadbeat_box(s, cfg) / 2.0 * theta ** (n - np.arange(1, n + 1))


def default_init_box(s: Spectrum, cfg: SystemConfig) -> NDArray[np.float64]:
    """Upper ends of the uniform sampling box: twice :func:`gain_units`."""
    return 2.0 * gain_units(s, cfg)


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    """Private PCG64 stream for one restart, keyed by ``(seed, restart)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, restart])))


def gradient_descent_rate(
    s: Spectrum,
    cfg: SystemConfig,
    T: int = 5000,
    eta: float = 0.01,
    delta: float = 1e-6,
    restarts: int = 10,
    seed: int = 0,
    init_box=None,
    init=None,
    scaled: bool = True,
) -> OptimizerReport:
    """Forward-difference gradient descent on ``r(K)`` with random restarts.

    Each restart draws ``K^(0)`` uniformly from ``(0, init_box)`` and then runs
    ``T`` fixed-step updates ``K <- K - eta * grad``, where
    ``grad_m = (r(K + delta e_m) - r(K)) / delta``. The lowest-rate iterate
    ever visited is returned alongside the final iterates. All restarts are
    advanced together as one batch; each restart's starting point comes from
    its own RNG stream, so results do not depend on batching.

    Args:
        init: optional explicit starting gains, shape ``(n,)`` or
            ``(restarts, n)``; overrides random sampling.
    """
    lams = _lambdas(s)
    n = cfg.order
    if T < 1 or int(T) != T:
        raise InvalidOptions(f"T must be a positive integer, got {T}")
    if not eta > 0:
        raise InvalidOptions(f"eta must be positive, got {eta}")
    if not delta > 0:
        raise InvalidOptions(f"delta must be positive, got {delta}")
    if restarts < 1:
        raise InvalidOptions(f"restarts must be positive, got {restarts}")

    if init is not None:
        k0 = np.atleast_2d(np.asarray(init, dtype=np.float64))
        if k0.shape[1] != n:
            raise InvalidOptions(f"init gains must have {n} columns")
        if k0.shape[0] == 1:
            k0 = np.repeat(k0, restarts, axis=0)
        if k0.shape[0] != restarts:
            raise InvalidOptions("init must provide one row per restart")
    else:
        box = default_init_box(s, cfg) if init_box is None else np.asarray(init_box, float)
        if box.shape != (n,) or np.any(box <= 0):
            raise InvalidOptions("init_box must hold n positive upper bounds")
        k0 = np.stack([restart_rng(seed, r).uniform(0.0, box) for r in range(restarts)])

    # iterate on K / unit; unit = 1 reproduces the raw update in gain units
    unit = gain_units(s, cfg) if scaled else np.ones(n)
    probes = delta * np.eye(n)

    def evaluate(coords):
        # rates at K and at K + delta e_m for every restart: shape (restarts, n + 1)
        batch = np.concatenate([coords[:, None, :], coords[:, None, :] + probes[None]], axis=1)
        radii = spectral_radii(cfg.tau, lams, (batch * unit)[..., None, :])
        return np.max(radii, axis=-1)

    coords = k0 / unit
    trace = np.empty((restarts, T + 1))
    with np.errstate(over="ignore", invalid="ignore"):
        vals = evaluate(coords)
        trace[:, 0] = vals[:, 0]
        best_rates = vals[:, 0].copy()
        best_coords = coords.copy()
        for t in range(1, T + 1):
            grad = (vals[:, 1:] - vals[:, :1]) / delta
            coords = coords - eta * grad
            vals = evaluate(coords)
            trace[:, t] = vals[:, 0]
            better = vals[:, 0] < best_rates
            best_rates[better] = vals[better, 0]
            best_coords[better] = coords[better]
    best_gains = best_coords * unit
    gains = coords * unit

    winner = int(np.nanargmin(best_rates))
    return OptimizerReport(
        best_gains=best_gains[winner].copy(),
        best_rate=float(best_rates[winner]),
        iterations_run=T,
        rate_trace=trace,
        restarts=restarts,
        seed=seed,
        initial_gains=k0,
        final_gains=gains,
        final_rates=trace[:, -1].copy(),
        best_restart=winner,
    )
