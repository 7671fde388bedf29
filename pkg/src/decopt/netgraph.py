"""Communication graphs, Metropolis mixing matrices, and the consensus
difference operator.

Stacked vectors are ``(n, d)`` float arrays throughout the package: row ``i``
is the block held by agent ``i``.  The consensus difference operator maps a
stacked vector ``x`` to ``x - Wx`` blockwise, i.e. it applies
``(I - W) (x) kron-wise`` per coordinate; its null space is exactly the set of
stacked vectors whose blocks all agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TypeAlias

import numpy as np
import scipy.sparse as sp

StackedVector: TypeAlias = np.ndarray

REDRAW_LIMIT = 1000
ROW_SUM_TOL = 1e-12
EIG_TOL = 1e-12

# rng domain tags so topology draws and data draws never share a stream
_RNG_TOPOLOGY = 1


class TopologyError(ValueError):
    """Random topology generation kept producing disconnected graphs."""


class MixingValidationError(ValueError):
    """A requirement on the mixing matrix is violated."""


class NonnegativityError(MixingValidationError):
    """Mixing weights must be nonnegative."""


class DecentralizationError(MixingValidationError):
    """Nonzero weight between agents that share no edge."""


class SymmetryError(MixingValidationError):
    """Mixing matrix must equal its transpose exactly."""


class StochasticityError(MixingValidationError):
    """Row sums must equal one (within ROW_SUM_TOL)."""


class SpectralBoundError(MixingValidationError):
    """Eigenvalues must lie in (-1, 1] and the matrix must contract."""


def _find(parent: list[int], a: int) -> int:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def _is_connected(n: int, edges) -> bool:
    parent = list(range(n))
    for i, j in edges:
        ri, rj = _find(parent, i), _find(parent, j)
        if ri != rj:
            parent[ri] = rj
    root = _find(parent, 0)
    return all(_find(parent, i) == root for i in range(n))


@dataclass(frozen=True)
class Graph:
    """Connected undirected simple graph on agents ``0 .. n-1``.

    ``edges`` holds normalized pairs ``(i, j)`` with ``i < j``; ``seed`` is
    the generation seed (0 for hand-built graphs).
    """

    n: int
    edges: frozenset
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two agents")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at agent {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not _is_connected(self.n, self.edges):
            raise ValueError("graph is not connected")

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[set] = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return tuple(tuple(sorted(s)) for s in adj)

    @cached_property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(nb) for nb in self.neighbors)


def default_geometric_radius(n: int) -> float:
    """Standard connectivity-threshold radius for n uniform points in the unit square."""
    return math.sqrt(2.0 * math.log(n) / n)


def build_topology(kind: str, n: int, seed: int, *, p: float = 0.2,
                   radius: float | None = None) -> Graph:
    """Build a connected topology of the given kind, deterministically in seed.

    ``ring`` is deterministic; ``erdos_renyi`` draws each pair independently
    with probability ``p``; ``geometric`` connects uniform points in the unit
    square within ``radius`` (default :func:`default_geometric_radius`).
    Random kinds are redrawn until connected, up to ``REDRAW_LIMIT`` times.
    """
    if n < 2:
        raise ValueError("need at least two agents")
    kind = kind.lower().replace("-", "_")
    if kind == "ring":
        edges = {(min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)}
        return Graph(n, frozenset(edges), seed)

    rng = np.random.default_rng([seed, _RNG_TOPOLOGY])
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(REDRAW_LIMIT):
        if kind == "erdos_renyi":
            if not 0.0 < p <= 1.0:
                raise ValueError("edge probability must lie in (0, 1]")
            mask = rng.random(iu.size) < p
        elif kind == "geometric":
            r = default_geometric_radius(n) if radius is None else radius
            if r <= 0.0:
                raise ValueError("radius must be positive")
            pts = rng.random((n, 2))
            dist = np.hypot(pts[iu, 0] - pts[ju, 0], pts[iu, 1] - pts[ju, 1])
            mask = dist <= r
        else:
            raise ValueError(f"unknown topology kind {kind!r}")
        edges = frozenset((int(i), int(j)) for i, j in zip(iu[mask], ju[mask]))
        if edges and _is_connected(n, edges):
            return Graph(n, edges, seed)
    raise TopologyError(
        f"{kind}: no connected draw in {REDRAW_LIMIT} attempts; parameters too sparse")


class BlockMixer:
    """Row-ordered weighted neighborhood sums.

    Applies ``x_i <- sum_j w_ij x_j`` over ``j in N_i ∪ {i}`` in ascending
    agent order, which is exactly the combination an agent forms from one
    round of received neighbor blocks.  Backed by a CSR matrix so the
    accumulation order matches the per-agent loop.
    """

    def __init__(self, weights: np.ndarray, graph: Graph):
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (graph.n, graph.n):
            raise ValueError("weight matrix shape does not match graph")
        rows, cols, vals = [], [], []
        for i in range(graph.n):
            for j in sorted(set(graph.neighbors[i]) | {i}):
                rows.append(i)
                cols.append(j)
                vals.append(weights[i, j])
        self._csr = sp.csr_matrix((vals, (rows, cols)), shape=(graph.n, graph.n))
        self._csr.sort_indices()
        self.graph = graph

    def apply(self, x: StackedVector) -> StackedVector:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.graph.n:
            raise ValueError("expected an (n, d) stacked vector")
        return self._csr @ x


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Symmetric doubly stochastic weights aligned with a connected graph."""

    weights: np.ndarray
    graph: Graph

    @property
    def n(self) -> int:
        return self.graph.n

    @cached_property
    def mixer(self) -> BlockMixer:
        return BlockMixer(self.weights, self.graph)

    @cached_property
    def spectral(self) -> "SpectralReport":
        return validate_mixing(self)


def metropolis_weights(graph: Graph) -> MixingMatrix:
    """Metropolis rule: ``w_ij = 1 / (1 + max(deg_i, deg_j))`` on edges,
    diagonal filled to make rows sum to one."""
    n = graph.n
    deg = graph.degrees
    w = np.zeros((n, n))
    for i, j in sorted(graph.edges):
        val = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, j] = val
        w[j, i] = val
    for i in range(n):
        w[i, i] = 1.0 - w[i].sum()
    return MixingMatrix(w, graph)


@dataclass(frozen=True)
class SpectralReport:
    """Spectral summary of a valid mixing matrix.

    ``contraction`` is ``max(|λ₂|, |λ_n|)`` of the weights (strictly below 1
    for a valid matrix); ``condition`` is ``(1 + contraction)/(1 - contraction)``;
    ``z_eig_min_pos`` and ``z_eig_max`` are the smallest positive and largest
    eigenvalues of ``I - W``, which bound the consensus operator's curvature.
    """

    contraction: float
    condition: float
    z_eig_min_pos: float
    z_eig_max: float


def validate_mixing(mixing: MixingMatrix) -> SpectralReport:
    """Check every mixing-matrix requirement; raise a distinct error per clause.

    Clauses checked in order: nonnegativity, decentralization (zeros off the
    edge set), exact symmetry, row sums within ``ROW_SUM_TOL`` of one, and the
    spectral bounds (eigenvalues in ``(-1, 1]`` with contraction strictly
    below one so the matrix actually mixes).
    """
    w = np.asarray(mixing.weights, dtype=float)
    g = mixing.graph
    n = g.n
    if w.shape != (n, n):
        raise MixingValidationError("weight matrix shape does not match graph")
    if np.any(w < 0.0):
        i, j = np.argwhere(w < 0.0)[0]
        raise NonnegativityError(f"negative weight at ({i}, {j})")
    edge_set = g.edges
    off = np.argwhere(w != 0.0)
    for i, j in off:
        i, j = int(i), int(j)
        if i != j and (min(i, j), max(i, j)) not in edge_set:
            raise DecentralizationError(f"nonzero weight at non-edge ({i}, {j})")
    if not np.array_equal(w, w.T):
        raise SymmetryError("weights are not exactly symmetric")
    row_err = np.abs(w.sum(axis=1) - 1.0).max()
    if row_err > ROW_SUM_TOL:
        raise StochasticityError(f"row sums deviate from 1 by {row_err:.3e}")
    eigs = np.linalg.eigvalsh(w)
    if eigs[0] <= -1.0 + EIG_TOL:
        raise SpectralBoundError(f"eigenvalue {eigs[0]:.17g} too close to -1")
    if eigs[-1] > 1.0 + EIG_TOL:
        raise SpectralBoundError(f"eigenvalue {eigs[-1]:.17g} exceeds 1")
    lam2 = min(eigs[-2], 1.0)
    lamn = max(eigs[0], -1.0)
    contraction = max(abs(lam2), abs(lamn))
    if contraction >= 1.0 - EIG_TOL:
        raise SpectralBoundError(
            "second-largest eigenvalue magnitude is 1: the matrix never mixes")
    return SpectralReport(
        contraction=float(contraction),
        condition=float((1.0 + contraction) / (1.0 - contraction)),
        z_eig_min_pos=float(1.0 - lam2),
        z_eig_max=float(1.0 - lamn),
    )


def apply_Z(x: StackedVector, mixing: MixingMatrix) -> StackedVector:
    """Blockwise ``x_i - sum_j w_ij x_j``; equals the dense ``(I-W) ⊗ I`` product."""
    x = np.asarray(x, dtype=float)
    return x - mixing.mixer.apply(x)


def quadratic_Z(x: StackedVector, mixing: MixingMatrix) -> float:
    """Quadratic form ``<x, Zx>``, clamped at zero when roundoff makes it
    tiny and negative (consensus inputs)."""
    x = np.asarray(x, dtype=float)
    val = float(np.vdot(x, apply_Z(x, mixing)))
    if val < 0.0:
        scale = 1.0 + float(np.vdot(x, x))
        if val >= -1e-10 * scale:
            return 0.0
        raise ValueError(f"quadratic form is negative ({val:.3e}): invalid mixing")
    return val


def save_graph(graph: Graph, path) -> None:
    """Edge-list text format: first line ``n m``, then one ``i j`` line per
    edge, 1-based."""
    lines = [f"{graph.n} {len(graph.edges)}"]
    lines += [f"{i + 1} {j + 1}" for i, j in sorted(graph.edges)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_graph(path, seed: int = 0) -> Graph:
    tokens = Path(path).read_text().split()
    if len(tokens) < 2:
        raise ValueError(f"{path}: malformed edge list header")
    n, m = int(tokens[0]), int(tokens[1])
    if len(tokens) != 2 + 2 * m:
        raise ValueError(f"{path}: expected {m} edges, found {(len(tokens) - 2) // 2}")
    edges = set()
    for k in range(m):
        i, j = int(tokens[2 + 2 * k]) - 1, int(tokens[3 + 2 * k]) - 1
        edges.add((min(i, j), max(i, j)))
    return Graph(n, frozenset(edges), seed)


def save_mixing(mixing: MixingMatrix, path) -> None:
    np.savetxt(path, mixing.weights, fmt="%.17g")


def load_mixing(path) -> MixingMatrix:
    """Rebuild a mixing matrix from its dense text dump; the edge set is
    inferred from the off-diagonal sparsity pattern."""
    w = np.atleast_2d(np.loadtxt(path))
    n = w.shape[0]
    edges = {(i, j) for i in range(n) for j in range(i + 1, n) if w[i, j] != 0.0}
    return MixingMatrix(w, Graph(n, frozenset(edges)))
