"""Characteristic polynomials of closed-loop blocks and stability tests.

Coefficient vectors are highest power first throughout, as in
``numpy.polyval``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from .dynamics import SystemConfig, as_gains
from .errors import DegenerateInput, NonConvergence

DK_MAX_ITER = 500
DK_STEP_TOL = 1e-13
DK_ANGLE = 0.4
AXIS_TOL = 1e-9
ROUTH_ZERO_TOL = 1e-12
ROUTH_EPS = 1e-30


class Stability(enum.Enum):
    STABLE = "stable"
    MARGINAL = "marginal"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class CharPoly:
    """Monic ``z^n + b_1 z^(n-1) + ... + b_n`` of ``H(lam, K)``."""

    coeffs: NDArray[np.float64]
    lam: float

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


@dataclass(frozen=True)
class BilinearPoly:
    """``(s - 1)^n R(r (s + 1) / (s - 1))`` expanded in ``s``; ``coeffs[0]`` may vanish."""

    coeffs: NDArray[np.float64]
    radius: float


@lru_cache(maxsize=None)
def _shift_basis(n: int) -> NDArray[np.float64]:
    # row p holds the coefficients of (z - 1)^(n - p), right-aligned to length n + 1
    basis = np.zeros((n + 1, n + 1))
    for p in range(n + 1):
        d = n - p
        basis[p, p:] = [math.comb(d, i) * (-1) ** i for i in range(d + 1)]
    basis.setflags(write=False)
    return basis


def char_coeffs(tau: float, lams, gains) -> NDArray[np.float64]:
    """Batched characteristic coefficients.

    Uses ``R(z) = (z - 1)^n + lam * sum_p tau^p K_(n-p+1) (z - 1)^(n-p)``.

    Args:
        tau: sampling period.
        lams: eigenvalues, broadcastable against ``gains[..., 0]``.
        gains: array of shape ``(..., n)``.

    Returns:
        Array of shape ``broadcast(...) + (n + 1,)``.
    """
    gains = np.asarray(gains, dtype=np.float64)
    lams = np.asarray(lams, dtype=np.float64)
    n = gains.shape[-1]
    powers = tau ** np.arange(1, n + 1)
    # shifted-basis weights: w_0 = 1, w_p = lam tau^p K_(n-p+1)
    tail = lams[..., None] * powers * gains[..., ::-1]
    shape = tail.shape[:-1] + (n + 1,)
    weights = np.empty(shape)
    weights[..., 0] = 1.0
    weights[..., 1:] = tail
    out = weights @ _shift_basis(n)
    out[..., 0] = 1.0
    return out


def char_poly(cfg: SystemConfig, lam: float, k) -> CharPoly:
    """Characteristic polynomial ``det(zI - H(lam, K))``."""
    gains = as_gains(k, cfg.order)
    return CharPoly(char_coeffs(cfg.tau, float(lam), gains), float(lam))


def char_coeffs_direct(cfg: SystemConfig, lam: float, k) -> NDArray[np.float64]:
    """Coefficients from the explicit sum for ``b_j``.

    ``b_j = lam sum_{p<=j} (-1)^(j-p) tau^p K_(n+1-p) C(n-p, n-j) + (-1)^j C(n, n-j)``.
    Independent of :func:`char_coeffs`; kept as a cross-check.
    """
    n = cfg.order
    gains = as_gains(k, n)
    out = np.empty(n + 1)
    out[0] = 1.0
    for j in range(1, n + 1):
        acc = 0.0
        for p in range(1, j + 1):
            acc += (-1) ** (j - p) * cfg.tau**p * gains[n - p] * math.comb(n - p, n - j)
        out[j] = lam * acc + (-1) ** j * math.comb(n, n - j)
    return out


def _coeff_array(p) -> NDArray[np.float64]:
    if isinstance(p, (CharPoly, BilinearPoly)):
        return np.asarray(p.coeffs, dtype=np.float64)
    return np.asarray(p)


def batch_roots(
    coeffs,
    max_iter: int = DK_MAX_ITER,
    step_tol: float = DK_STEP_TOL,
) -> NDArray[np.complex128]:
    """Durand-Kerner (Weierstrass) iteration on a batch of polynomials.

    Args:
        coeffs: shape ``(m, d + 1)``, leading coefficients nonzero.

    Returns:
        Complex roots of shape ``(m, d)``.

    Each polynomial is made monic; starting points sit on a circle of radius
    ``1 + max|b_j|`` about the root centroid ``-b_1 / d``, rotated by 0.4 rad.
    A polynomial stops iterating once its largest correction is at most
    ``step_tol * max(1, max|z|)`` or every residual is at the rounding level
    of Horner evaluation.

    Raises:
        NonConvergence: the budget ran out and some residual exceeds
            ``1e-8 * max|coeff|``.
    """
    coeffs = np.asarray(coeffs)
    if coeffs.ndim != 2:
        raise ValueError("coeffs must be two-dimensional")
    lead = coeffs[:, :1]
    if np.any(lead == 0):
        raise DegenerateInput("leading coefficient must be nonzero")
    monic = (coeffs / lead).astype(np.complex128)
    m, d1 = monic.shape
    deg = d1 - 1
    if deg == 0:
        return np.empty((m, 0), dtype=np.complex128)
    if deg == 1:
        return -monic[:, 1:2]

    centre = -monic[:, 1] / deg
    radius = 1.0 + np.max(np.abs(monic[:, 1:]), axis=1)
    angles = 2.0 * np.pi * np.arange(deg) / deg + DK_ANGLE
    z = centre[:, None] + radius[:, None] * np.exp(1j * angles)[None, :]
    abs_coeffs = np.abs(monic)
    eye = np.eye(deg, dtype=bool)

    active = np.arange(m)
    for _ in range(max_iter):
        za = z[active]
        ca = monic[active]
        val = np.ones_like(za)
        bound = np.ones(za.shape)
        absz = np.abs(za)
        for j in range(1, d1):
            val = val * za + ca[:, j : j + 1]
            bound = bound * absz + abs_coeffs[active, j : j + 1]
        diff = za[:, :, None] - za[:, None, :]
        diff[:, eye] = 1.0
        denom = np.prod(diff, axis=2)
        denom[denom == 0] = 1e-300
        step = val / denom
        z[active] = za - step
        # rounding-level residual: |p(z)| <= 8 eps sum |a_j| |z|^(n-j)
        at_floor = np.all(np.abs(val) <= 8 * np.finfo(float).eps * bound, axis=1)
        small = np.max(np.abs(step), axis=1) <= step_tol * np.maximum(1.0, np.max(absz, axis=1))
        active = active[~(small | at_floor)]
        if active.size == 0:
            return _merge_clusters(monic, z)

    resid = np.abs(_horner(monic[active], z[active]))
    scale = np.max(np.abs(coeffs[active]), axis=1) / np.abs(coeffs[active, 0])
    if np.all(resid <= 1e-8 * scale[:, None]):
        return _merge_clusters(monic, z)
    raise NonConvergence(
        f"Durand-Kerner did not converge in {max_iter} iterations "
        f"(worst residual {resid.max():.3e})"
    )


def _horner(monic, z):
    val = np.ones_like(z)
    for j in range(1, monic.shape[1]):
        val = val * z + monic[:, j : j + 1]
    return val


CLUSTER_LINK = 1e-2
CLUSTER_NOISE_FACTOR = 10.0


def _merge_clusters(monic, z):
    """Replace noise-level clusters of roots by their mean.

    An ``m``-fold root is only resolvable to about ``(eps * B / |q|)^(1/m)``
    where ``B`` bounds the Horner rounding error and ``q`` is the cofactor
    from the other roots. The cluster mean is far better conditioned than
    the individual members, so clusters whose spread is within that noise
    radius collapse onto their mean. Separated roots are left untouched.
    """
    deg = z.shape[1]
    if deg < 2:
        return z
    scale = np.maximum(1.0, np.max(np.abs(z), axis=1))
    gaps = np.abs(z[:, :, None] - z[:, None, :])
    gaps[:, np.eye(deg, dtype=bool)] = np.inf
    suspects = np.flatnonzero(np.min(gaps, axis=(1, 2)) <= CLUSTER_LINK * scale)
    eps = np.finfo(float).eps
    abs_coeffs = np.abs(monic)
    for row in suspects:
        roots = z[row]
        link = CLUSTER_LINK * scale[row]
        labels = list(range(deg))
        for i in range(deg):
            for j in range(i + 1, deg):
                if gaps[row, i, j] <= link:
                    old, new = labels[j], labels[i]
                    labels = [new if lab == old else lab for lab in labels]
        for lab in set(labels):
            members = [i for i in range(deg) if labels[i] == lab]
            m = len(members)
            if m < 2:
                continue
            centre = roots[members].mean()
            spread = np.max(np.abs(roots[members] - centre))
            others = [i for i in range(deg) if labels[i] != lab]
            cofactor = np.prod(np.abs(centre - roots[others])) if others else 1.0
            bound = np.polyval(abs_coeffs[row], abs(centre))
            noise = (8 * eps * bound / max(cofactor, 1e-300)) ** (1.0 / m)
            if spread <= CLUSTER_NOISE_FACTOR * noise:
                z[row, members] = _polish_centre(monic[row], centre, m, spread)
    return z


def _polish_centre(monic_row, centre, m, spread):
    # an m-fold root is a simple root of the (m-1)-th derivative
    deriv = np.polyder(monic_row, m - 1)
    second = np.polyder(deriv)
    z = centre
    for _ in range(8):
        slope = np.polyval(second, z)
        if slope == 0:
            break
        dz = np.polyval(deriv, z) / slope
        z = z - dz
        if abs(dz) <= 4 * np.finfo(float).eps * max(1.0, abs(z)):
            break
    # keep the mean if Newton wandered off the cluster
    return z if abs(z - centre) <= max(spread, 1e-300) * 2 else centre


def poly_roots(p) -> NDArray[np.complex128]:
    """All complex roots of a polynomial (CharPoly, BilinearPoly or coefficient list)."""
    coeffs = _coeff_array(p)
    if coeffs.ndim != 1 or coeffs.size == 0:
        raise ValueError("expected a non-empty 1-D coefficient vector")
    if coeffs[0] == 0:
        raise DegenerateInput("leading coefficient must be nonzero")
    return batch_roots(coeffs[None, :])[0]


def spectral_radii(tau: float, lams, gains) -> NDArray[np.float64]:
    """Batched ``rho(H(lam, K))``; output shape is ``broadcast(lams, gains[..., 0])``."""
    coeffs = char_coeffs(tau, lams, gains)
    shape = coeffs.shape[:-1]
    roots = batch_roots(coeffs.reshape(-1, coeffs.shape[-1]))
    if roots.shape[1] == 0:
        return np.zeros(shape)
    return np.max(np.abs(roots), axis=1).reshape(shape)


def block_spectral_radius(cfg: SystemConfig, lam: float, k) -> float:
    """Largest root modulus of ``char_poly(cfg, lam, k)``."""
    return float(np.max(np.abs(poly_roots(char_poly(cfg, lam, k)))))


def _normalise(coeffs) -> NDArray[np.float64]:
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    nz = np.flatnonzero(c)
    if nz.size == 0:
        raise DegenerateInput("zero polynomial")
    c = c[nz[0]:]
    return -c if c[0] < 0 else c


def routh_hurwitz_stable(coeffs) -> Stability:
    """Classify the roots of a real polynomial against the imaginary axis.

    Builds the Routh array. A zero leading entry in an otherwise nonzero row
    is replaced by a tiny positive epsilon; an all-zero row is replaced by the
    derivative of the auxiliary polynomial formed from the row above. Either
    event, or a zero constant term, means the polynomial is not Hurwitz, so
    with no sign changes the roots touch the axis.

    Leading zero coefficients are dropped (a degree drop is not a root).
    """
    c = _normalise(coeffs)
    scale = np.max(np.abs(c))
    ztol = ROUTH_ZERO_TOL * scale
    touches_axis = False
    # zero roots
    while c.size > 1 and abs(c[-1]) <= ztol:
        c = c[:-1]
        touches_axis = True
    deg = c.size - 1
    if deg == 0:
        return Stability.MARGINAL if touches_axis else Stability.STABLE

    width = deg // 2 + 2
    rows = [np.zeros(width), np.zeros(width)]
    rows[0][: len(c[0::2])] = c[0::2]
    rows[1][: len(c[1::2])] = c[1::2]
    for i in range(1, deg + 1):
        cur = rows[i]
        if np.all(np.abs(cur) <= ztol):
            # auxiliary polynomial of degree deg - i + 1 from the row above
            power = deg - i + 1
            above = rows[i - 1]
            cur = np.zeros(width)
            for kk in range(width):
                if power - 2 * kk < 0:
                    break
                cur[kk] = above[kk] * (power - 2 * kk)
            touches_axis = True
        if abs(cur[0]) <= ztol:
            cur = cur.copy()
            cur[0] = ROUTH_EPS * scale
            touches_axis = True
        rows[i] = cur
        if i < deg:
            above = rows[i - 1]
            nxt = np.zeros(width)
            nxt[:-1] = (cur[0] * above[1:] - above[0] * cur[1:]) / cur[0]
            rows.append(nxt)

    first = np.array([r[0] for r in rows[: deg + 1]])
    changes = int(np.sum(np.signbit(first[1:]) != np.signbit(first[:-1])))
    if changes > 0:
        return Stability.UNSTABLE
    return Stability.MARGINAL if touches_axis else Stability.STABLE


def root_stability(coeffs, axis_tol: float = AXIS_TOL) -> Stability:
    """Root-based counterpart of :func:`routh_hurwitz_stable`."""
    c = _normalise(coeffs)
    if c.size == 1:
        return Stability.STABLE
    re = poly_roots(c).real
    if np.any(re > axis_tol):
        return Stability.UNSTABLE
    if np.any(re >= -axis_tol):
        return Stability.MARGINAL
    return Stability.STABLE


def bilinear_coeffs(p, r: float) -> BilinearPoly:
    """Substitute ``z = r (s + 1) / (s - 1)`` and clear the denominator.

    Roots of the result lie in the closed left half plane iff the roots of
    ``p`` lie in the closed disk of radius ``r``. A root of ``p`` at ``z = r``
    shows up as a degree drop (``coeffs[0] == 0``).
    """
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    a = np.asarray(_coeff_array(p), dtype=np.float64)
    n = a.size - 1
    out = np.zeros(n + 1)
    plus = [np.array([1.0])]
    minus = [np.array([1.0])]
    for _ in range(n):
        plus.append(np.convolve(plus[-1], [1.0, 1.0]))
        minus.append(np.convolve(minus[-1], [1.0, -1.0]))
    for k in range(n + 1):
        # a_k z^(n-k) -> a_k r^(n-k) (s+1)^(n-k) (s-1)^k
        out += a[k] * r ** (n - k) * np.convolve(plus[n - k], minus[k])
    return BilinearPoly(out, float(r))


def disk_stability(p, r: float = 1.0) -> Stability:
    """Routh-Hurwitz classification of ``p``'s roots against the circle ``|z| = r``."""
    b = bilinear_coeffs(p, r).coeffs
    result = routh_hurwitz_stable(b)
    # a vanishing s^n coefficient is a root at z = r, i.e. on the circle
    if abs(b[0]) <= ROUTH_ZERO_TOL * np.max(np.abs(b)) and result is Stability.STABLE:
        return Stability.MARGINAL
    return result
