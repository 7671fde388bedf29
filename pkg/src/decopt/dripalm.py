"""Double-loop decentralized solver with a relative inner-termination rule
(D-ripALM).

Outer iteration ``k`` minimizes the penalized subproblem

    Psi_k(x) = F(x) + <omega, x> + (sigma_k / 2) <x, Zx>
             + (tau_k / (2 sigma_k)) |x - x_k|^2

inexactly, accepting the first inner candidate ``x+`` whose error term
``delta`` (a residual of the subproblem's optimality inclusion) satisfies
the relative test

    2 |<w - x+, sigma delta>| + |sigma delta|^2
        <= rho * (sigma^2 <x+, Zx+> + tau |x+ - x_k|^2),

verified with a single network-wide sum of three scalars per agent.  The
transformed dual then advances by ``omega += sigma Zx+`` (reusing the mixed
vector cached by the accepting step, so the dual update is free of
communication) and the auxiliary vector by ``w -= sigma delta``, with a
periodic reset ``w <- x+`` on the restart schedule.

A single knob ``rho in (0, 1)`` controls how precisely subproblems are
solved; the test's right-hand side scales with the current iterate, so no
tolerance sequence needs tuning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import metrics
from .metrics import DiagnosticRecord, KktReport, SolveResult
from .objectives import ProblemInstance
from .simnet import SimNetwork
from .subsolvers import SubsolverConfig, lipschitz_bound, run_inner

SIGMA_CAP = 1.0e4


class ConfigurationError(ValueError):
    """Solver configuration that cannot work (e.g. rho = 0 with an
    iterative inner solver)."""


class InnerCapError(RuntimeError):
    """The inner solver hit its iteration cap before the relative test passed."""

    def __init__(self, rho: float, outer_index: int, inner_iters: int):
        super().__init__(
            f"relative test (rho={rho}) not met after {inner_iters} inner "
            f"iterations at outer step {outer_index}")
        self.rho = rho
        self.outer_index = outer_index
        self.inner_iters = inner_iters


def default_sigma_schedule(k: int) -> float:
    """Geometrically increasing penalty, capped: ``min(1.5^k, 1e4)``."""
    return min(1.5 ** k, SIGMA_CAP)


def default_tau_schedule(k: int) -> float:
    """Constant proximal weight ``1e-3``."""
    return 1.0e-3


def restart_decision(k: int) -> bool:
    """Reset cadence for the auxiliary vector: every outer iteration up to
    k=3, every second one for 4 <= k <= 10, every third one afterwards."""
    if k <= 3:
        return True
    if k <= 10:
        return (k - 4) % 2 == 0
    return (k - 11) % 3 == 0


@dataclass
class DripalmConfig:
    rho: float = 0.99
    sigma_schedule: Callable[[int], float] = default_sigma_schedule
    tau_schedule: Callable[[int], float] = default_tau_schedule
    restart_schedule: Callable[[int], bool] = restart_decision
    max_outer: int = 200
    max_total_comm: int = 30000
    kkt_tol: float = 1e-6
    check_every: int = 10
    subsolver: SubsolverConfig = field(default_factory=SubsolverConfig)
    record_trace: bool = False


@dataclass
class SolverState:
    """State carried between outer iterations.

    ``zx`` caches the mixed vector of ``x`` from the accepting inner step,
    and ``omega`` is the transformed dual (always in the range of the
    consensus operator, so its blocks sum to zero).
    """

    k: int
    x: np.ndarray
    w: np.ndarray
    omega: np.ndarray
    zx: np.ndarray


class PsiOracle:
    """Gradient/prox/value oracle for the penalized subproblem at one outer
    step.  With ``tau = 0`` this is the plain penalty objective (no proximal
    anchor), which the absolute-criterion baseline reuses."""

    def __init__(self, problem: ProblemInstance, net: SimNetwork,
                 omega: np.ndarray, anchor: np.ndarray,
                 sigma: float, tau: float):
        self.problem = problem
        self.net = net
        self.omega = omega
        self.anchor = anchor
        self.sigma = sigma
        self.tau = tau
        self.ratio = tau / sigma
        self.lipschitz = lipschitz_bound(problem, sigma, tau, net.spectral)

    def exchange(self, x: np.ndarray) -> np.ndarray:
        """One neighbor round; returns the mixed vector ``Zx``."""
        return self.net.exchange_z(x)

    def grad(self, x: np.ndarray, zx: np.ndarray) -> np.ndarray:
        g = self.problem.smooth_grads(x) + self.omega + self.sigma * zx
        if self.ratio != 0.0:
            g = g + self.ratio * (x - self.anchor)
        return g

    def smooth_pieces(self, x: np.ndarray, zx: np.ndarray) -> np.ndarray:
        pieces = (self.problem.smooth_values(x)
                  + np.einsum("nd,nd->n", self.omega, x)
                  + 0.5 * self.sigma * np.einsum("nd,nd->n", x, zx))
        if self.ratio != 0.0:
            diff = x - self.anchor
            pieces = pieces + 0.5 * self.ratio * np.einsum("nd,nd->n", diff, diff)
        return pieces

    def nonsmooth_pieces(self, x: np.ndarray) -> np.ndarray:
        return self.problem.nonsmooth_values(x)

    def prox(self, x: np.ndarray, eta: float) -> np.ndarray:
        return self.problem.prox(x, eta)


def subproblem_oracle(state: SolverState, problem: ProblemInstance,
                      net: SimNetwork, config: DripalmConfig) -> PsiOracle:
    """Oracle for the subproblem the next outer iteration will solve."""
    return PsiOracle(problem, net, state.omega, state.x,
                     config.sigma_schedule(state.k), config.tau_schedule(state.k))


def compute_error_term(oracle: PsiOracle, x_cand: np.ndarray, zx_cand: np.ndarray,
                       pre_prox: np.ndarray | None = None,
                       step: float | None = None) -> np.ndarray:
    """Error term of the subproblem's optimality inclusion at a candidate.

    For smooth problems this is the subproblem gradient.  After a prox step
    ``x+ = prox_{eta h}(v)`` the residual ``(v - x+) / eta`` is a subgradient
    of the nonsmooth part at ``x+`` (prox optimality), so adding it to the
    smooth gradient lands in the inclusion.
    """
    delta = oracle.grad(x_cand, zx_cand)
    if pre_prox is not None:
        if step is None or step <= 0.0:
            raise ValueError("prox residual needs the step that produced the candidate")
        delta = delta + (pre_prox - x_cand) / step
    return delta


def criterion_stack(sigma: float, tau: float, w: np.ndarray, x_anchor: np.ndarray,
                    x_cand: np.ndarray, zx_cand: np.ndarray,
                    delta: np.ndarray) -> np.ndarray:
    """Per-agent scalar triples whose network sums decide the relative test."""
    sdelta = sigma * delta
    e1 = np.einsum("nd,nd->n", w - x_cand, sdelta)
    e2 = np.einsum("nd,nd->n", sdelta, sdelta)
    dx = x_cand - x_anchor
    e3 = (sigma * sigma) * np.einsum("nd,nd->n", x_cand, zx_cand) \
        + tau * np.einsum("nd,nd->n", dx, dx)
    return np.column_stack([e1, e2, e3])


def _criterion_sums(rho, sigma, tau, w, x_anchor, x_cand, zx_cand, delta, net):
    stack = criterion_stack(sigma, tau, w, x_anchor, x_cand, zx_cand, delta)
    s1, s2, s3 = net.scalar_allreduce(stack)
    lhs = 2.0 * abs(s1) + s2
    return lhs <= rho * s3, float(lhs), float(s1), float(s2), float(s3)


def check_criterion(rho: float, sigma: float, tau: float, w: np.ndarray,
                    x_anchor: np.ndarray, x_cand: np.ndarray, zx_cand: np.ndarray,
                    delta: np.ndarray, net: SimNetwork) -> bool:
    """Relative acceptance test; one three-scalar aggregation, same verdict
    at every agent."""
    ok, *_ = _criterion_sums(rho, sigma, tau, w, x_anchor, x_cand, zx_cand, delta, net)
    return ok


@dataclass
class _OuterRecord:
    sigma: float
    tau: float
    inner_iters: int
    delta: np.ndarray
    norm_delta: float
    norm_p: float
    norm_u: float
    stop_report: KktReport | None = None  # run-level tolerance met mid-solve


def _trial_kkt(problem, net, cand, z_cand, delta, ratio, anchor) -> KktReport:
    """Stopping residual at a candidate, with the dual it would induce.

    The induced dual is ``omega + sigma * Z cand``, so for smooth problems
    the stationarity residual equals the error term minus the proximal
    drift; the consensus part comes from the cached mixed vector.  For
    nonsmooth problems the averaged-solution residual applies instead.
    """
    if problem.has_nonsmooth:
        return metrics.kkt_lasso(problem, net, cand, zx=z_cand)
    p = delta - ratio * (cand - anchor) if ratio != 0.0 else delta
    pieces = np.column_stack([
        np.einsum("nd,nd->n", cand, z_cand),
        np.einsum("nd,nd->n", p, p),
    ])
    cons_sq, stat_sq = net.scalar_allreduce(pieces)
    return KktReport(float(np.sqrt(max(cons_sq, 0.0))),
                     float(np.sqrt(max(stat_sq, 0.0))))


def outer_iteration(state: SolverState, problem: ProblemInstance, net: SimNetwork,
                    config: DripalmConfig) -> tuple[SolverState, _OuterRecord]:
    """Run one outer step: inner solve until the relative test passes, then
    the dual/auxiliary updates (with the scheduled reset).

    Every ``check_every`` inner iterations the run-level stopping residual
    is also evaluated at the current candidate (same cadence as the
    single-loop solvers); crossing it accepts the candidate right there.
    """
    k = state.k
    sigma = config.sigma_schedule(k)
    tau = config.tau_schedule(k)
    ratio = tau / sigma
    oracle = PsiOracle(problem, net, state.omega, state.x, sigma, tau)
    use_residual = problem.has_nonsmooth
    stop_box: dict[str, KktReport] = {}

    def accept(cand, z_cand, pre_prox, eta, j):
        delta = compute_error_term(oracle, cand, z_cand,
                                   pre_prox if use_residual else None,
                                   eta if use_residual else None)
        ok, lhs, s1, s2, s3 = _criterion_sums(
            config.rho, sigma, tau, state.w, state.x, cand, z_cand, delta, net)
        if not ok and config.kkt_tol > 0.0 and j % config.check_every == 0:
            report = _trial_kkt(problem, net, cand, z_cand, delta, ratio, state.x)
            if report.kkt <= config.kkt_tol:
                stop_box["report"] = report
                return True, (delta, lhs, s2, s3)
        return ok, (delta, lhs, s2, s3)

    def budget_hit():
        return net.comm_report().vector_rounds >= config.max_total_comm

    res = run_inner(oracle, state.x, state.zx, config.subsolver, accept, net,
                    stop_when=budget_hit)
    if not res.accepted:
        if budget_hit():
            raise _BudgetExhausted()
        raise InnerCapError(config.rho, k, res.iterations)

    delta, lhs, s2, s3 = res.payload
    stop_report = stop_box.get("report")
    # the accepting candidate satisfies the test exactly as evaluated,
    # unless the run-level tolerance ended the solve early
    assert stop_report is not None or lhs <= config.rho * s3
    omega = state.omega + sigma * res.Zx
    if config.restart_schedule(k):
        w = res.x.copy()
    else:
        w = state.w - sigma * delta

    dx = res.x - state.x
    norm_delta = float(np.sqrt(max(s2, 0.0))) / sigma
    norm_p = float(np.linalg.norm(delta - ratio * dx))
    norm_u = float(np.sqrt(max(np.vdot(res.x, res.Zx), 0.0)))
    record = _OuterRecord(sigma, tau, res.iterations, delta,
                          norm_delta, norm_p, norm_u, stop_report)
    return SolverState(k + 1, res.x, w, omega, res.Zx), record


class _BudgetExhausted(Exception):
    pass


def run(config: DripalmConfig, problem: ProblemInstance, net: SimNetwork,
        x0: np.ndarray | None = None) -> SolveResult:
    """Iterate outer steps until the stopping residual drops below
    ``kkt_tol``, the communication budget is spent, or ``max_outer`` is hit.

    Non-convergence is reported through ``status``, never raised.  The
    default start is the all-zero stacked vector, whose mixed vector is
    known without communication; a nonzero ``x0`` costs one bootstrap
    exchange.
    """
    if not 0.0 <= config.rho < 1.0:
        raise ConfigurationError("rho must lie in [0, 1)")
    if config.rho == 0.0:
        raise ConfigurationError(
            "rho = 0 demands exact subproblem solves, which an iterative "
            "inner solver cannot certify; use rho > 0")
    net.set_scope("dripalm")
    start = net.comm_report()
    n, d = problem.n, problem.d
    if x0 is None:
        x = np.zeros((n, d))
        zx = np.zeros((n, d))
    else:
        x = np.array(x0, dtype=float, copy=True)
        zx = net.exchange_z(x) if x.any() else np.zeros((n, d))
    state = SolverState(0, x, x.copy(), np.zeros((n, d)), zx)

    diagnostics: list[DiagnosticRecord] = []
    kkt_history: list[KktReport] = []
    trace: list[dict] = []
    status = "max_outer"
    report: KktReport | None = None

    while state.k < config.max_outer:
        if net.comm_report().vector_rounds >= config.max_total_comm:
            status = "max_comm"
            break
        try:
            state, rec = outer_iteration(state, problem, net, config)
        except _BudgetExhausted:
            status = "max_comm"
            break
        except InnerCapError:
            status = "inner_cap"
            break
        if rec.stop_report is not None:
            report = rec.stop_report
        else:
            report = metrics.kkt_report(problem, net, state.x,
                                        omega=state.omega, zx=state.zx)
        kkt_history.append(report)
        rounds = net.comm_report().vector_rounds - start.vector_rounds
        diagnostics.append(DiagnosticRecord(
            k=state.k, sigma=rec.sigma, tau=rec.tau,
            norm_delta=rec.norm_delta, norm_p=rec.norm_p, norm_u=rec.norm_u,
            kkt=report.kkt, vector_rounds=rounds))
        if config.record_trace:
            trace.append({"k": state.k, "sigma": rec.sigma, "tau": rec.tau,
                          "x": state.x.copy(), "omega": state.omega.copy(),
                          "w": state.w.copy(), "delta": rec.delta.copy()})
        if report.kkt <= config.kkt_tol:
            status = "converged"
            break

    if report is None:
        report = metrics.kkt_report(problem, net, state.x,
                                    omega=state.omega, zx=state.zx)
    end = net.comm_report()
    return SolveResult(
        x_final=state.x,
        outer_iters=state.k,
        vector_rounds=end.vector_rounds - start.vector_rounds,
        scalar_rounds=end.scalar_rounds - start.scalar_rounds,
        metric_vector_rounds=end.metric_vector_rounds - start.metric_vector_rounds,
        status=status,
        kkt_report=report,
        kkt_history=kkt_history,
        diagnostics=diagnostics,
        omega_final=state.omega,
        trace=trace,
    )
