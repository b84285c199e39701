"""Weighted undirected graphs, Laplacians and their spectra.

Eigen-decomposition uses a cyclic Jacobi solver, which is accurate to
working precision for the small dense Laplacians used in consensus
experiments. Distinct nonzero eigenvalues are obtained by clustering
numerically equal eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import Disconnected, NonConvergence, ParseError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
CLUSTER_TOL = 1e-8
CONNECTIVITY_TOL = 1e-9


@dataclass(frozen=True)
class Graph:
    """Undirected graph with positive edge weights.

    Nodes are numbered ``0 .. node_count - 1``. Each unordered pair appears
    at most once in ``edges``.
    """

    node_count: int
    edges: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError(f"node_count must be positive, got {self.node_count}")
        seen = set()
        clean = []
        for edge in self.edges:
            if len(edge) == 2:
                i, j = edge
                w = 1.0
            else:
                i, j, w = edge
            i, j, w = int(i), int(j), float(w)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge ({i}, {j}) outside 0..{self.node_count - 1}")
            if not (w > 0 and math.isfinite(w)):
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            clean.append((i, j, w))
        object.__setattr__(self, "edges", tuple(clean))

    def adjacency(self) -> NDArray[np.float64]:
        adj = np.zeros((self.node_count, self.node_count))
        for i, j, w in self.edges:
            adj[i, j] = w
            adj[j, i] = w
        return adj

    def scaled(self, alpha: float) -> Graph:
        """Copy of the graph with every edge weight multiplied by ``alpha``."""
        return Graph(self.node_count, tuple((i, j, w * alpha) for i, j, w in self.edges))

    def relabeled(self, perm) -> Graph:
        """Copy with node ``i`` renamed to ``perm[i]``."""
        perm = [int(p) for p in perm]
        return Graph(self.node_count, tuple((perm[i], perm[j], w) for i, j, w in self.edges))


@dataclass(frozen=True)
class Spectrum:
    """Ordered Laplacian eigen-decomposition.

    ``eigenvalues`` are ascending and column ``i`` of ``eigenvectors`` pairs
    with ``eigenvalues[i]``. ``distinct_nonzero`` is strictly descending, with
    ``multiplicities`` aligned to it.
    """

    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]
    distinct_nonzero: tuple[float, ...]
    multiplicities: tuple[int, ...]
    connected: bool
    laplacian: NDArray[np.float64] = field(repr=False)

    @property
    def lambda_2(self) -> float:
        return float(self.eigenvalues[1]) if len(self.eigenvalues) > 1 else 0.0

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def distinct_count(self) -> int:
        return len(self.distinct_nonzero)

    def require_connected(self):
        if not self.connected:
            raise Disconnected(
                f"graph is disconnected (lambda_2 = {self.lambda_2:.3e})"
            )


def laplacian(g: Graph) -> NDArray[np.float64]:
    """Return ``D - A``. The diagonal is the negated off-diagonal row sum."""
    lap = -g.adjacency()
    np.fill_diagonal(lap, 0.0)
    np.fill_diagonal(lap, -lap.sum(axis=1))
    return lap


def _off_norm(a) -> float:
    # direct sum; ||a||^2 - ||diag||^2 cancels to noise near convergence
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(
    a: NDArray[np.float64],
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all off-diagonal pairs in row order until the Frobenius norm of
    the off-diagonal part drops below ``tol * ||a||_F``.

    Returns:
        (eigenvalues, V) with eigenvalues ascending and ``a = V diag(w) V^T``.

    Raises:
        NonConvergence: if ``max_sweeps`` sweeps do not reach the tolerance.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    size = a.shape[0]
    v = np.eye(size)
    scale = np.linalg.norm(a)
    if scale == 0.0 or size == 1:
        return _sorted_pairs(np.diag(a).copy(), v)

    threshold = tol * scale
    for _ in range(max_sweeps):
        off = _off_norm(a)
        if off <= threshold:
            return _sorted_pairs(np.diag(a).copy(), v)
        for p in range(size - 1):
            for q in range(p + 1, size):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    # theta^2 would overflow; t ~ 1 / (2 theta)
                    t = 0.5 / theta
                elif theta >= 0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    off = _off_norm(a)
    if off <= threshold:
        return _sorted_pairs(np.diag(a).copy(), v)
    raise NonConvergence(
        f"Jacobi solver did not converge in {max_sweeps} sweeps "
        f"(off-diagonal norm {off:.3e} > {threshold:.3e})"
    )


def _sorted_pairs(w, v):
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    # deterministic sign: largest-magnitude entry of each column is positive
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return w, v * signs


def _cluster_groups(values, lambda_max: float, rel_tol: float) -> list[list[int]]:
    # indices of ascending ``values`` grouped by neighbour gap
    gap = rel_tol * max(1.0, lambda_max)
    order = np.argsort(np.asarray(values, dtype=np.float64), kind="stable")
    groups: list[list[int]] = []
    for i in order:
        if groups and values[i] - values[groups[-1][-1]] <= gap:
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    return groups


def cluster_eigenvalues(
    values, lambda_max: float, rel_tol: float = CLUSTER_TOL
) -> tuple[tuple[float, ...], tuple[int, ...]]:
    """Group ascending ``values`` whose neighbour gap is at most ``rel_tol * max(1, lambda_max)``.

    Returns cluster means in descending order with their sizes.
    """
    values = [float(x) for x in values]
    groups = _cluster_groups(values, lambda_max, rel_tol)[::-1]
    means = tuple(float(np.mean([values[i] for i in g])) for g in groups)
    return means, tuple(len(g) for g in groups)


def refined_distinct(s: Spectrum, dtype=np.longdouble) -> NDArray:
    """Distinct nonzero eigenvalues recomputed as Rayleigh quotients in ``dtype``.

    The Jacobi eigenvectors are accurate to working precision, so the quotient
    ``v^T L v / v^T v`` evaluated in extended precision carries only a
    second-order error. Cluster members are averaged; the result is aligned
    with ``s.distinct_nonzero``.
    """
    lap = s.laplacian.astype(dtype)
    vecs = s.eigenvectors.astype(dtype)
    quotients = np.einsum("ij,ik,kj->j", vecs, lap, vecs) / np.einsum("ij,ij->j", vecs, vecs)
    zero_tol = CONNECTIVITY_TOL * max(1.0, s.lambda_max)
    nonzero = np.flatnonzero(s.eigenvalues > zero_tol)
    groups = _cluster_groups([float(s.eigenvalues[i]) for i in nonzero], s.lambda_max, CLUSTER_TOL)
    out = [quotients[nonzero[g]].mean() for g in groups[::-1]]
    return np.array(out, dtype=dtype)


def spectrum(g: Graph | NDArray[np.float64], tol: float = JACOBI_TOL) -> Spectrum:
    """Full Laplacian spectrum of ``g`` (a Graph or a Laplacian matrix)."""
    lap = laplacian(g) if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)
    w, v = jacobi_eigh(lap, tol=tol)
    lam_max = float(w[-1])
    zero_tol = CONNECTIVITY_TOL * max(1.0, lam_max)
    connected = len(w) == 1 or bool(w[1] > zero_tol)
    nonzero = w[w > zero_tol]
    distinct, mult = cluster_eigenvalues(nonzero, lam_max)
    return Spectrum(
        eigenvalues=w,
        eigenvectors=v,
        distinct_nonzero=distinct,
        multiplicities=mult,
        connected=connected,
        laplacian=lap,
    )


def eigenratio(s: Spectrum) -> float:
    """Laplacian eigenratio lambda_N / lambda_2."""
    s.require_connected()
    return s.lambda_max / s.lambda_2


# -- named families -------------------------------------------------------

def cycle_graph(n: int) -> Graph:
    if n < 3:
        raise ValueError("a cycle needs at least 3 nodes")
    return Graph(n, tuple((i, (i + 1) % n, 1.0) for i in range(n)))


def path_graph(n: int) -> Graph:
    return Graph(n, tuple((i, i + 1, 1.0) for i in range(n - 1)))


def star_graph(n: int) -> Graph:
    """Star on ``n`` nodes: hub 0 joined to ``n - 1`` leaves (K_{1,n-1})."""
    return Graph(n, tuple((0, i, 1.0) for i in range(1, n)))


def complete_graph(n: int) -> Graph:
    return Graph(n, tuple((i, j, 1.0) for i in range(n) for j in range(i + 1, n)))


def complete_bipartite_graph(a: int, b: int) -> Graph:
    return Graph(a + b, tuple((i, a + j, 1.0) for i in range(a) for j in range(b)))


def random_connected_graph(
    n: int, rng: np.random.Generator, p: float = 0.3, weighted: bool = False
) -> Graph:
    """Random spanning tree plus Erdos-Renyi extra edges; always connected."""
    edges = {}
    order = rng.permutation(n)
    for k in range(1, n):
        i = int(order[k])
        j = int(order[rng.integers(k)])
        edges[(min(i, j), max(i, j))] = None
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges[(i, j)] = None
    return Graph(
        n,
        tuple(
            (i, j, float(rng.uniform(0.2, 2.0)) if weighted else 1.0)
            for i, j in sorted(edges)
        ),
    )


# -- edge-list files ------------------------------------------------------

def parse_edge_list(text: str) -> Graph:
    """Parse the text edge-list format.

    The first non-comment line is ``N <node_count>``; each following line is
    ``i j [weight]`` with 1-based node indices. Lines starting with ``#`` and
    blank lines are ignored.
    """
    node_count = None
    edges = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if node_count is None:
            if len(parts) != 2 or parts[0] != "N":
                raise ParseError("expected header 'N <node_count>'", lineno)
            try:
                node_count = int(parts[1])
            except ValueError:
                raise ParseError(f"bad node count {parts[1]!r}", lineno) from None
            if node_count < 1:
                raise ParseError("node count must be positive", lineno)
            continue
        if len(parts) not in (2, 3):
            raise ParseError(f"expected 'i j [weight]', got {line!r}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno) from None
        if not (1 <= i <= node_count and 1 <= j <= node_count):
            raise ParseError(f"node index out of range 1..{node_count}", lineno)
        if i == j:
            raise ParseError("self-loop", lineno)
        if not (w > 0 and math.isfinite(w)):
            raise ParseError(f"weight must be positive, got {w}", lineno)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParseError(f"duplicate edge {i} {j}", lineno)
        seen.add(key)
        edges.append((i - 1, j - 1, w))
    if node_count is None:
        raise ParseError("missing 'N <node_count>' header")
    return Graph(node_count, tuple(edges))


def read_edge_list(path: str | Path) -> Graph:
    return parse_edge_list(Path(path).read_text(encoding="utf-8"))


def format_edge_list(g: Graph) -> str:
    lines = [f"N {g.node_count}"]
    lines += [f"{i + 1} {j + 1} {w!r}" for i, j, w in g.edges]
    return "\n".join(lines) + "\n"
