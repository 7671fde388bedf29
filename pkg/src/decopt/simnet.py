"""Synchronous round-based message passing with communication accounting.

Solvers see other agents' data only through this interface:

* :meth:`SimNetwork.neighbor_exchange` — every agent broadcasts its
  ``d``-dimensional block to its neighbors; counted in ``vector_rounds``,
  which is the round count reported in benchmark tables.
* :meth:`SimNetwork.scalar_allreduce` — network-wide sum of at most eight
  scalars per agent, summed in fixed agent-index order so the floating-point
  result is deterministic; counted separately in ``scalar_rounds`` and
  excluded from the reported round count (each agent ships a handful of
  scalars, not a block).

Stopping-rule communication (consensus residuals, network averages) goes
through the ``metric_*`` variants and is tallied in
``metric_vector_rounds`` so round counts stay comparable across solvers
regardless of how often each one checks for termination.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netgraph import BlockMixer, Graph, MixingMatrix, StackedVector

MAX_ALLREDUCE_ARITY = 8

_KINDS = ("vector_rounds", "scalar_rounds", "metric_vector_rounds")


@dataclass
class CommStats:
    """Monotone communication counters, with a per-scope breakdown."""

    vector_rounds: int = 0
    scalar_rounds: int = 0
    metric_vector_rounds: int = 0
    per_scope: dict = field(default_factory=dict)


class NeighborViews:
    """Result of one synchronous broadcast round.

    ``of(i)`` returns exactly the blocks agent ``i`` received, keyed by
    sender.  ``combine(mixer)`` forms the weighted neighborhood sums every
    agent computes locally from its received blocks (ascending sender
    order, identical to the per-agent loop).
    """

    def __init__(self, snapshot: np.ndarray, graph: Graph):
        snapshot.setflags(write=False)
        self._snapshot = snapshot
        self._graph = graph

    def of(self, agent: int) -> dict[int, np.ndarray]:
        return {j: self._snapshot[j] for j in self._graph.neighbors[agent]}

    def combine(self, mixer: BlockMixer) -> StackedVector:
        return mixer.apply(self._snapshot)


class SimNetwork:
    """Lockstep simulation handle for one solver run on a fixed topology."""

    def __init__(self, mixing: MixingMatrix, d: int):
        self.mixing = mixing
        self.graph = mixing.graph
        self.d = int(d)
        self.spectral = mixing.spectral  # validates the matrix up front
        self.scope = "default"
        self._counts = dict.fromkeys(_KINDS, 0)
        self._per_scope: dict[str, dict[str, int]] = {}

    @property
    def n(self) -> int:
        return self.graph.n

    def set_scope(self, name: str) -> None:
        self.scope = str(name)

    def _bump(self, kind: str) -> None:
        self._counts[kind] += 1
        bucket = self._per_scope.setdefault(self.scope, dict.fromkeys(_KINDS, 0))
        bucket[kind] += 1

    def _snapshot(self, x: StackedVector) -> np.ndarray:
        arr = np.array(x, dtype=float, copy=True)
        if arr.shape != (self.n, self.d):
            raise ValueError(f"expected a ({self.n}, {self.d}) stacked vector, got {arr.shape}")
        return arr

    def neighbor_exchange(self, x: StackedVector) -> NeighborViews:
        """One broadcast of every agent's block to its neighbors."""
        self._bump("vector_rounds")
        return NeighborViews(self._snapshot(x), self.graph)

    def metric_exchange(self, x: StackedVector) -> NeighborViews:
        """Like :meth:`neighbor_exchange`, but charged to the metric bucket."""
        self._bump("metric_vector_rounds")
        return NeighborViews(self._snapshot(x), self.graph)

    def exchange_z(self, x: StackedVector, *, metric: bool = False) -> StackedVector:
        """One exchange plus the local combination ``x_i - sum_j w_ij x_j``."""
        views = self.metric_exchange(x) if metric else self.neighbor_exchange(x)
        return np.asarray(x, dtype=float) - views.combine(self.mixing.mixer)

    def scalar_allreduce(self, rows) -> np.ndarray:
        """Sum per-agent scalar tuples over the network, in agent-index order.

        Every agent ends up holding the same summed tuple; the fixed order
        makes the floating-point result identical across repeated runs.
        """
        arr = np.asarray(rows, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] != self.n:
            raise ValueError(f"expected {self.n} per-agent tuples")
        if arr.shape[1] > MAX_ALLREDUCE_ARITY:
            raise ValueError(f"tuple arity {arr.shape[1]} exceeds {MAX_ALLREDUCE_ARITY}")
        self._bump("scalar_rounds")
        total = arr[0].copy()
        for i in range(1, arr.shape[0]):
            total += arr[i]
        return total

    def metric_gather(self, x: StackedVector) -> np.ndarray:
        """Network average of the blocks, for stopping rules only."""
        arr = self._snapshot(x)
        self._bump("metric_vector_rounds")
        total = arr[0].copy()
        for i in range(1, self.n):
            total += arr[i]
        return total / self.n

    def comm_report(self) -> CommStats:
        return CommStats(
            vector_rounds=self._counts["vector_rounds"],
            scalar_rounds=self._counts["scalar_rounds"],
            metric_vector_rounds=self._counts["metric_vector_rounds"],
            per_scope={k: dict(v) for k, v in self._per_scope.items()},
        )
