"""Reference decentralized solvers.

* PG-EXTRA (Shi, Ling, Wu, Yin, 2015): single-loop proximal first-order
  method mixing with ``W`` and ``(I + W)/2``.
* NIDS (Li, Shi, Yan, 2019): single-loop method with network-independent
  step sizes; the ``(I + W)/2`` combination is applied to a corrected
  midpoint, which allows steps up to ``2/L``.
* IDEAL-style double-loop method (after Arjevani et al., 2020): inexact
  augmented-Lagrangian outer loop whose inner solves stop against an
  absolute, geometrically decaying tolerance sequence
  ``eps_k = eps0 * decay^k`` via ``(1/mu^2) |grad L(x)|^2 <= eps_k`` with
  ``mu`` the strong-convexity modulus.  It needs smooth strongly convex
  objectives; nonsmooth problems are rejected.

All three communicate exclusively through the network simulation, so their
round counts are directly comparable with the double-loop relative-rule
solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import metrics
from .dripalm import ConfigurationError, PsiOracle, default_sigma_schedule
from .metrics import KktReport, SolveResult
from .objectives import ProblemInstance
from .simnet import SimNetwork
from .subsolvers import SubsolverConfig, run_inner

DIVERGENCE_GUARD = 1e12


@dataclass
class BaselineConfig:
    """Shared stopping rules plus per-method knobs.

    ``step`` overrides the default step sizes (``1/(2 max L)`` for PG-EXTRA,
    ``1/max L`` for NIDS).  The ``eps0 / eps_decay / sc_modulus`` fields and
    the penalty schedule only matter for the absolute-criterion method.
    """

    step: float | None = None
    kkt_tol: float = 1e-6
    max_comm: int = 30000
    check_every: int = 10
    eps0: float = 0.01
    eps_decay: float = 0.2
    sc_modulus: float | None = None
    sigma_schedule: Callable[[int], float] = default_sigma_schedule
    subsolver: SubsolverConfig = field(default_factory=SubsolverConfig)
    max_outer: int = 200
    max_inner: int = 20000


def _default_step(problem: ProblemInstance, scale: float, override):
    if override is not None:
        if override <= 0.0:
            raise ConfigurationError("step size must be positive")
        return float(override)
    max_l = problem.max_lipschitz
    if max_l is None or max_l <= 0.0:
        raise ConfigurationError("no Lipschitz hints available; pass an explicit step")
    return scale / max_l


def _finish(net, start, x, iters, status, report) -> SolveResult:
    end = net.comm_report()
    return SolveResult(
        x_final=x, outer_iters=iters,
        vector_rounds=end.vector_rounds - start.vector_rounds,
        scalar_rounds=end.scalar_rounds - start.scalar_rounds,
        metric_vector_rounds=end.metric_vector_rounds - start.metric_vector_rounds,
        status=status, kkt_report=report)


def pg_extra_run(problem: ProblemInstance, net: SimNetwork,
                 config: BaselineConfig) -> SolveResult:
    """PG-EXTRA: one neighbor exchange per iteration.

    y_0 = W x_0 - a grad s(x_0);  x_1 = prox_{a h}(y_0)
    y_k = y_{k-1} + W x_k - (I+W)/2 x_{k-1} - a (grad s(x_k) - grad s(x_{k-1}))
    x_{k+1} = prox_{a h}(y_k)

    The ``(I+W)/2 x_{k-1}`` term reuses the previous round's mixed vector.
    """
    net.set_scope("pg_extra")
    start = net.comm_report()
    alpha = _default_step(problem, 0.5, config.step)
    mixer = net.mixing.mixer
    n, d = problem.n, problem.d

    x_prev = np.zeros((n, d))
    wx_prev = net.neighbor_exchange(x_prev).combine(mixer)
    g_prev = problem.smooth_grads(x_prev)
    y = wx_prev - alpha * g_prev
    x = problem.prox(y, alpha)
    iters = 1
    status = "max_comm"
    report: KktReport | None = None

    while net.comm_report().vector_rounds - start.vector_rounds < config.max_comm:
        wx = net.neighbor_exchange(x).combine(mixer)
        g = problem.smooth_grads(x)
        y = y + wx - 0.5 * (x_prev + wx_prev) - alpha * (g - g_prev)
        x_prev, wx_prev, g_prev = x, wx, g
        x = problem.prox(y, alpha)
        iters += 1
        if np.abs(x).max() > DIVERGENCE_GUARD:
            status = "diverged"
            break
        if iters % config.check_every == 0:
            report = metrics.kkt_report(problem, net, x)
            if report.kkt <= config.kkt_tol:
                status = "converged"
                break
    if report is None or status == "max_comm":
        report = metrics.kkt_report(problem, net, x)
        if status == "max_comm" and report.kkt <= config.kkt_tol:
            status = "converged"
    return _finish(net, start, x, iters, status, report)


def nids_run(problem: ProblemInstance, net: SimNetwork,
             config: BaselineConfig) -> SolveResult:
    """NIDS with a uniform step (so the combination matrix is ``(I+W)/2``):

    z_1 = x_0 - a grad s(x_0);  x_1 = prox_{a h}(z_1)            (no exchange)
    z_{k+1} = z_k - x_k + (I+W)/2 (2 x_k - x_{k-1} - a (grad s(x_k) - grad s(x_{k-1})))
    x_{k+1} = prox_{a h}(z_{k+1})
    """
    net.set_scope("nids")
    start = net.comm_report()
    alpha = _default_step(problem, 1.0, config.step)
    mixer = net.mixing.mixer
    n, d = problem.n, problem.d

    x_prev = np.zeros((n, d))
    g_prev = problem.smooth_grads(x_prev)
    z = x_prev - alpha * g_prev
    x = problem.prox(z, alpha)
    iters = 1
    status = "max_comm"
    report: KktReport | None = None

    while net.comm_report().vector_rounds - start.vector_rounds < config.max_comm:
        g = problem.smooth_grads(x)
        mid = 2.0 * x - x_prev - alpha * (g - g_prev)
        combined = 0.5 * (mid + net.neighbor_exchange(mid).combine(mixer))
        z = z - x + combined
        x_prev, g_prev = x, g
        x = problem.prox(z, alpha)
        iters += 1
        if np.abs(x).max() > DIVERGENCE_GUARD:
            status = "diverged"
            break
        if iters % config.check_every == 0:
            report = metrics.kkt_report(problem, net, x)
            if report.kkt <= config.kkt_tol:
                status = "converged"
                break
    if report is None or status == "max_comm":
        report = metrics.kkt_report(problem, net, x)
        if status == "max_comm" and report.kkt <= config.kkt_tol:
            status = "converged"
    return _finish(net, start, x, iters, status, report)


def ideal_run(problem: ProblemInstance, net: SimNetwork,
              config: BaselineConfig) -> SolveResult:
    """Double-loop augmented-Lagrangian method with the absolute inner rule.

    Each outer step runs the accelerated inner solver on the (non-proximal)
    penalty objective until ``|grad L(x)|^2 <= mu^2 eps_k``, then advances
    the transformed dual and shrinks ``eps_k`` geometrically.
    """
    if problem.has_nonsmooth:
        raise ConfigurationError(
            "the absolute criterion needs a smooth strongly convex objective")
    mu = config.sc_modulus
    if mu is None:
        if problem.meta.family == "logreg":
            mu = problem.meta.lam
        elif problem.meta.family == "quadratic":
            mu = 1.0
    if mu is None or mu <= 0.0:
        raise ConfigurationError("a positive strong-convexity modulus is required")
    if config.eps0 <= 0.0 or not 0.0 < config.eps_decay < 1.0:
        raise ConfigurationError("need eps0 > 0 and decay in (0, 1)")

    net.set_scope("ideal")
    start = net.comm_report()
    n, d = problem.n, problem.d
    x = np.zeros((n, d))
    zx = np.zeros((n, d))
    omega = np.zeros((n, d))
    eps = config.eps0
    sub = SubsolverConfig(**{**config.subsolver.__dict__, "max_inner": config.max_inner})

    status = "max_outer"
    report: KktReport | None = None
    outer = 0
    while outer < config.max_outer:
        if net.comm_report().vector_rounds - start.vector_rounds >= config.max_comm:
            status = "max_comm"
            break
        sigma = config.sigma_schedule(outer)
        oracle = PsiOracle(problem, net, omega, x, sigma, tau=0.0)
        threshold = mu * mu * eps
        stop_box: dict[str, KktReport] = {}

        def accept(cand, z_cand, pre_prox, eta, j):
            # the penalty gradient doubles as the stationarity residual at
            # the induced dual, so the run-level check shares the reduce
            g = oracle.grad(cand, z_cand)
            if j % config.check_every == 0:
                pieces = np.column_stack([
                    np.einsum("nd,nd->n", g, g),
                    np.einsum("nd,nd->n", cand, z_cand),
                ])
                gsq, cons_sq = net.scalar_allreduce(pieces)
                trial = KktReport(float(np.sqrt(max(cons_sq, 0.0))),
                                  float(np.sqrt(max(gsq, 0.0))))
                if trial.kkt <= config.kkt_tol:
                    stop_box["report"] = trial
                    return True, gsq
            else:
                gsq = float(net.scalar_allreduce(np.einsum("nd,nd->n", g, g))[0])
            return gsq <= threshold, gsq

        def budget_hit():
            return net.comm_report().vector_rounds - start.vector_rounds >= config.max_comm

        res = run_inner(oracle, x, zx, sub, accept, net, stop_when=budget_hit)
        if not res.accepted:
            status = "max_comm" if budget_hit() else "inner_cap"
            break
        x, zx = res.x, res.Zx
        omega = omega + sigma * zx
        eps *= config.eps_decay
        outer += 1
        if stop_box.get("report") is not None:
            report = stop_box["report"]
        else:
            report = metrics.kkt_report(problem, net, x, omega=omega, zx=zx)
        if report.kkt <= config.kkt_tol:
            status = "converged"
            break

    if report is None:
        report = metrics.kkt_report(problem, net, x, omega=omega, zx=zx)
    result = _finish(net, start, x, outer, status, report)
    result.omega_final = omega
    return result
