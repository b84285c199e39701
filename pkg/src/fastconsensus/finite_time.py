"""Time-varying deadbeat gain schedules for exact finite-time consensus.

Gains are held constant for ``n`` steps per distinct nonzero Laplacian
eigenvalue; each block makes ``A - lam B K`` nilpotent for its own
eigenvalue, so the product over all blocks annihilates every disagreement
mode after ``n * l`` steps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .dynamics import SystemConfig, as_gains, binom, closed_loop_block
from .errors import DimensionMismatch
from .graph import Spectrum, refined_distinct
from .stability import char_coeffs

NILPOTENT_TOL = 1e-9
ANNIHILATION_TOL = 1e-8


@dataclass(frozen=True)
class GainSchedule:
    """Per-step gains ``K(k)`` for ``k < n * l``; zero afterwards."""

    entries: NDArray[np.float64]
    order: int
    tau: float
    eigen_order: tuple[float, ...]

    @property
    def length(self) -> int:
        return self.entries.shape[0]

    def gain_at(self, k: int) -> NDArray[np.float64]:
        if 0 <= k < self.length:
            return self.entries[k]
        return np.zeros(self.order, dtype=self.entries.dtype)

    def scaled(self, factor: float) -> GainSchedule:
        return GainSchedule(self.entries * factor, self.order, self.tau, self.eigen_order)


def deadbeat_gains(cfg: SystemConfig, lam, dtype=np.float64) -> NDArray:
    """``K_m = C(n, m-1) / (lam tau^(n-m+1))``, placing every root of the block at zero."""
    n = cfg.order
    lam, tau = dtype(lam), dtype(cfg.tau)
    return np.array(
        [dtype(math.comb(n, m - 1)) / (lam * tau ** (n - m + 1)) for m in range(1, n + 1)],
        dtype=dtype,
    )


def deadbeat_schedule(
    s: Spectrum,
    cfg: SystemConfig,
    descending: bool = True,
    eigenvalues=None,
    extended: bool = True,
) -> GainSchedule:
    """Blockwise-constant schedule over the distinct nonzero eigenvalues.

    Blocks run from the largest eigenvalue to the smallest by default so the
    high-frequency disagreement is removed first. ``eigenvalues`` overrides
    the spectrum's own values (e.g. to study perturbed eigenvalues).

    With ``extended`` the eigenvalues are refined and the gains held in
    ``np.longdouble``. Later blocks amplify whatever an earlier block left
    of its own mode by up to ``(lam_N / lam_2)^n`` per block, so the
    ~1e-16 mismatch of float64 gains is not small enough once ``n >= 3``.
    """
    s.require_connected()
    dtype = np.longdouble if extended else np.float64
    if eigenvalues is not None:
        lams = list(np.asarray(eigenvalues, dtype=dtype))
    elif extended:
        lams = list(refined_distinct(s, dtype))
    else:
        lams = [dtype(x) for x in s.distinct_nonzero]
    lams.sort(reverse=descending)
    n = cfg.order
    rows = [deadbeat_gains(cfg, lam, dtype) for lam in lams for _ in range(n)]
    entries = np.array(rows, dtype=dtype).reshape(-1, n)
    return GainSchedule(entries, n, cfg.tau, tuple(float(x) for x in lams))


def verify_nilpotent(cfg: SystemConfig, lam: float, k, tol: float = NILPOTENT_TOL) -> bool:
    """True iff ``H = A - lam B K`` satisfies ``H^n = 0`` and all ``b_j = 0`` to tolerance."""
    gains = as_gains(k, cfg.order)
    h = closed_loop_block(cfg, lam, gains)
    scale = max(1.0, float(np.max(np.abs(h))))
    power = np.linalg.matrix_power(h, cfg.order)
    if np.max(np.abs(power)) > tol * scale**cfg.order:
        return False
    coeffs = char_coeffs(cfg.tau, lam, gains)
    # b_j sums terms as large as C(n, j) and lam tau^p K
    term_scale = max(
        float(math.comb(cfg.order, cfg.order // 2)),
        float(np.max(np.abs(lam * cfg.tau ** np.arange(1, cfg.order + 1) * gains[::-1]))),
    )
    return bool(np.all(np.abs(coeffs[1:]) <= tol * term_scale))


def schedule_product(cfg: SystemConfig, lam: float, sched: GainSchedule) -> NDArray[np.float64]:
    """``H(lam, K(T-1)) ... H(lam, K(0))`` over the whole schedule."""
    prod = np.eye(cfg.order)
    for k in range(sched.length):
        prod = closed_loop_block(cfg, lam, sched.entries[k]) @ prod
    return prod


def product_annihilation(
    s: Spectrum, cfg: SystemConfig, sched: GainSchedule
) -> dict[float, float]:
    """Scaled max-norm of the full-schedule product at each distinct eigenvalue.

    The product is measured in coordinates ``x_j tau^(j-1)`` (which map ``A``
    to its unit-step form) and divided by the product of the factors' norms
    in those coordinates, i.e. it is a relative rounding-level residual.
    """
    s.require_connected()
    n, tau = cfg.order, cfg.tau
    d = tau ** np.arange(n)
    out = {}
    for lam in s.distinct_nonzero:
        prod = np.eye(n)
        norm_prod = 1.0
        for k in range(sched.length):
            h = closed_loop_block(cfg, lam, sched.entries[k])
            h_scaled = d[:, None] * h / d[None, :]
            norm_prod *= max(1.0, float(np.max(np.abs(h_scaled))))
            prod = h_scaled @ prod
        out[float(lam)] = float(np.max(np.abs(prod))) / norm_prod
    return out


def final_consensus_state(cfg: SystemConfig, x0, k: int) -> NDArray[np.float64]:
    """Agreement value ``[s_1(k), ..., s_n(k)]`` reached by every agent.

    ``s_j(k) = sum_{m=1}^{n-j+1} tau^(m-1) C(k, m-1) mean_p x_p^(m+j-1)(0)``.
    """
    n, tau = cfg.order, cfg.tau
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1 or x0.size % n:
        raise DimensionMismatch(f"state length {x0.size} is not a multiple of n={n}")
    means = x0.reshape(-1, n).mean(axis=0)
    out = np.zeros(n)
    for j in range(1, n + 1):
        for m in range(1, n - j + 2):
            out[j - 1] += tau ** (m - 1) * binom(k, m - 1) * means[m + j - 2]
    return out


def write_schedule_csv(sched: GainSchedule, path: str | Path):
    """Columns ``step, K_1 .. K_n`` with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step"] + [f"K_{m}" for m in range(1, sched.order + 1)])
        for k, row in enumerate(sched.entries):
            writer.writerow([k] + [format(float(v), ".17g") for v in row])
