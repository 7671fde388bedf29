"""Stopping rules and diagnostics.

Two stopping residuals are used, matching the benchmark problems:

* smooth problems: ``max(|sqrt(Z) x|, |grad F(x) + omega|)`` where ``omega``
  is the transformed dual variable a double-loop solver maintains;
* LASSO: ``max(|sqrt(Z) x|, r)`` with ``r`` the normalized prox residual of
  the centralized problem evaluated at the network average (after zeroing
  coordinates below 1e-8 of the largest, since averages of sparse solutions
  come out dense).

Both use one neighbor exchange for the consensus term unless the caller
passes the cached mixed vector; all stopping communication is charged to
the metric buckets so the reported round counts stay comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .objectives import ProblemInstance, soft_threshold
from .simnet import SimNetwork

REFINE_RELATIVE_CUTOFF = 1e-8


@dataclass(frozen=True)
class KktReport:
    consensus_res: float
    stationarity_res: float

    @property
    def kkt(self) -> float:
        return max(self.consensus_res, self.stationarity_res)


@dataclass
class DiagnosticRecord:
    """Per-outer-iteration decay quantities of the double-loop solver."""

    k: int
    sigma: float
    tau: float
    norm_delta: float   # error term of the accepted inner solve
    norm_p: float       # norm_delta minus the proximal drift term
    norm_u: float       # consensus residual |sqrt(Z) x|
    kkt: float
    vector_rounds: int


@dataclass
class SolveResult:
    """Common result record for every solver in the package."""

    x_final: np.ndarray
    outer_iters: int
    vector_rounds: int
    scalar_rounds: int
    metric_vector_rounds: int
    status: str
    kkt_report: KktReport
    kkt_history: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    omega_final: np.ndarray | None = None
    trace: list = field(default_factory=list)
    wall_time_ms: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _consensus_res(net: SimNetwork, x: np.ndarray, zx: np.ndarray | None):
    if zx is None:
        zx = net.exchange_z(x, metric=True)
    pieces = np.einsum("nd,nd->n", np.asarray(x, dtype=float), zx)
    return zx, pieces


def kkt_smooth(problem: ProblemInstance, net: SimNetwork, x: np.ndarray,
               omega: np.ndarray, zx: np.ndarray | None = None) -> KktReport:
    """Residual for smooth problems with a transformed dual variable.

    One neighbor exchange (skipped when ``zx`` is supplied) plus one scalar
    aggregation of the two squared residual pieces.
    """
    zx, cons_pieces = _consensus_res(net, x, zx)
    station = problem.smooth_grads(x) + omega
    pieces = np.column_stack([cons_pieces, np.einsum("nd,nd->n", station, station)])
    cons_sq, stat_sq = net.scalar_allreduce(pieces)
    return KktReport(float(np.sqrt(max(cons_sq, 0.0))), float(np.sqrt(max(stat_sq, 0.0))))


def refine_average(xbar: np.ndarray, cutoff: float = REFINE_RELATIVE_CUTOFF) -> np.ndarray:
    """Zero coordinates below ``cutoff`` of the largest magnitude entry."""
    xbar = np.asarray(xbar, dtype=float)
    top = float(np.abs(xbar).max()) if xbar.size else 0.0
    if top == 0.0:
        return xbar.copy()
    out = xbar.copy()
    out[np.abs(out) / top < cutoff] = 0.0
    return out


def kkt_lasso(problem: ProblemInstance, net: SimNetwork, x: np.ndarray,
              zx: np.ndarray | None = None) -> KktReport:
    """Residual for the LASSO family, evaluated at the refined network average."""
    zx, cons_pieces = _consensus_res(net, x, zx)
    cons_sq = float(net.scalar_allreduce(cons_pieces)[0])
    xbar = refine_average(net.metric_gather(x))
    stacked = problem.stacked()
    a, b = stacked["A"], stacked["b"].ravel()
    lam = problem.meta.lam
    r = a @ xbar - b
    prox_pt = soft_threshold(xbar - a.T @ r, lam)
    stationarity = float(np.linalg.norm(xbar - prox_pt)
                         / (1.0 + np.linalg.norm(r) + np.linalg.norm(xbar)))
    return KktReport(float(np.sqrt(max(cons_sq, 0.0))), stationarity)


def kkt_average_smooth(problem: ProblemInstance, net: SimNetwork, x: np.ndarray,
                       zx: np.ndarray | None = None) -> KktReport:
    """Residual for smooth problems solved without a dual variable: the
    aggregate gradient at the network average plus the consensus term."""
    zx, cons_pieces = _consensus_res(net, x, zx)
    cons_sq = float(net.scalar_allreduce(cons_pieces)[0])
    xbar = net.metric_gather(x)
    grad = problem.centralized_smooth_grad(xbar)
    return KktReport(float(np.sqrt(max(cons_sq, 0.0))), float(np.linalg.norm(grad)))


def kkt_report(problem: ProblemInstance, net: SimNetwork, x: np.ndarray,
               omega: np.ndarray | None = None,
               zx: np.ndarray | None = None) -> KktReport:
    """Dispatch on the problem family (and on whether a dual is available)."""
    if problem.meta.family == "lasso" or problem.has_nonsmooth:
        return kkt_lasso(problem, net, x, zx)
    if omega is not None:
        return kkt_smooth(problem, net, x, omega, zx)
    return kkt_average_smooth(problem, net, x, zx)


def decay_summary(diagnostics: list[DiagnosticRecord]) -> dict:
    """First/last values of the decay quantities and whether each shrank."""
    if not diagnostics:
        return {"records": 0}
    first, last_rec = diagnostics[0], diagnostics[-1]
    out = {"records": len(diagnostics)}
    for name in ("norm_delta", "norm_p", "norm_u", "kkt"):
        a, b = getattr(first, name), getattr(last_rec, name)
        out[f"first_{name}"] = a
        out[f"final_{name}"] = b
        out[f"decayed_{name}"] = bool(b < a)
    return out


DIAGNOSTIC_COLUMNS = ["k", "sigma_k", "tau_k", "norm_delta", "norm_p", "norm_u",
                      "kkt", "vector_rounds"]


def save_diagnostics_csv(result: SolveResult, path) -> None:
    """Dump the per-outer decay history of a double-loop run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for rec in result.diagnostics:
            writer.writerow([rec.k, repr(rec.sigma), repr(rec.tau),
                             repr(rec.norm_delta), repr(rec.norm_p),
                             repr(rec.norm_u), repr(rec.kkt), rec.vector_rounds])
