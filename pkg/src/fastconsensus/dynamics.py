"""Single-agent chain-of-integrators model and networked closed-loop dynamics.

States are stored agent-major: ``x = [x_1^T, ..., x_N^T]^T`` with each
``x_i`` holding the ``n`` derivative levels of agent ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch

EXACT_BINOM_LIMIT = 62


@dataclass(frozen=True)
class SystemConfig:
    """Order ``n`` of the integrator chain and sampling period ``tau``."""

    order: int
    tau: float

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be a positive integer, got {self.order}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def A(self) -> NDArray[np.float64]:
        return system_matrices(self)[0]

    @property
    def B(self) -> NDArray[np.float64]:
        return system_matrices(self)[1]


def as_gains(k, order: int) -> NDArray[np.float64]:
    """Validate a gain vector ``[K_1, ..., K_n]`` against the system order.

    Extended-precision input keeps its dtype; everything else becomes float64.
    """
    gains = np.asarray(k)
    gains = gains.astype(np.result_type(gains.dtype, np.float64)).reshape(-1)
    if gains.shape[0] != order:
        raise DimensionMismatch(f"expected {order} gains, got {gains.shape[0]}")
    return gains


def binom(k: int, j: int) -> float:
    """``C(k, j)``; exact integers for ``k <= 62``, multiplicative form above."""
    if j < 0 or j > k:
        return 0.0
    if k <= EXACT_BINOM_LIMIT:
        return float(math.comb(k, j))
    j = min(j, k - j)
    out = 1.0
    for i in range(1, j + 1):
        out *= (k - j + i) / i
    return out


def system_matrices(cfg: SystemConfig) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return ``(A, B)``: unit upper-bidiagonal A with ``tau`` superdiagonal, B = tau e_n."""
    n = cfg.order
    a = np.eye(n) + cfg.tau * np.eye(n, k=1)
    b = np.zeros((n, 1))
    b[-1, 0] = cfg.tau
    return a, b


def closed_loop_block(cfg: SystemConfig, lam: float, k) -> NDArray[np.float64]:
    """``H(lam, K) = A - lam * B K``."""
    a, b = system_matrices(cfg)
    gains = as_gains(k, cfg.order)
    if lam == 0:
        return a
    return a - lam * (b @ gains[None, :])


def a_power(cfg: SystemConfig, k: int) -> NDArray[np.float64]:
    """Closed form of ``A^k``: entry ``(i, j)`` is ``C(k, j - i) tau^(j - i)`` for ``j >= i``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    n = cfg.order
    out = np.zeros((n, n))
    for d in range(n):
        coeff = binom(k, d) * cfg.tau**d
        idx = np.arange(n - d)
        out[idx, idx + d] = coeff
    return out


def network_step(lap: NDArray[np.float64], cfg: SystemConfig, k, x) -> NDArray[np.float64]:
    """One step of ``x(k+1) = (I_N kron A - L kron B K) x(k)`` without forming Kronecker products.

    Runs in the wider of the state and gain dtypes (float64 or longdouble).
    """
    lap = np.asarray(lap, dtype=np.float64)
    n = cfg.order
    gains = as_gains(k, n)
    x = np.asarray(x)
    x = x.astype(np.result_type(x.dtype, gains.dtype))
    size = lap.shape[0]
    if lap.shape != (size, size) or x.shape != (size * n,):
        raise DimensionMismatch(
            f"state of length {x.shape} does not match N={size}, n={n}"
        )
    states = x.reshape(size, n)
    nxt = states.copy()
    nxt[:, :-1] += cfg.tau * states[:, 1:]
    y = states @ gains
    # L 1 = 0, so removing y_0 changes nothing except making agreement exact
    nxt[:, -1] -= cfg.tau * (lap @ (y - y[0]))
    return nxt.reshape(-1)


def network_matrix(lap: NDArray[np.float64], cfg: SystemConfig, k) -> NDArray[np.float64]:
    """Dense ``I_N kron A - L kron B K``; reference only, O((N n)^2) memory."""
    a, b = system_matrices(cfg)
    gains = as_gains(k, cfg.order)
    lap = np.asarray(lap, dtype=np.float64)
    return np.kron(np.eye(lap.shape[0]), a) - np.kron(lap, b @ gains[None, :])
