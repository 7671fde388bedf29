"""Inner solvers for the outer-loop subproblems: FISTA and plain proximal
gradient, driven blockwise through the network simulation.

The oracle contract (see ``dripalm.PsiOracle`` for the concrete one):

* ``grad(x, Zx)``            smooth gradient given the cached mixed vector,
* ``smooth_pieces(x, Zx)``   per-agent smooth values (shape ``(n,)``),
* ``nonsmooth_pieces(x)``    per-agent nonsmooth values,
* ``prox(x, eta)``           blockwise prox of the nonsmooth part,
* ``exchange(x)``            one neighbor round returning the mixed vector,
* ``lipschitz``              upper bound on the smooth gradient's constant,
  or ``None`` to force backtracking.

Each iteration broadcasts exactly one stacked vector: the fresh candidate.
The gradient is taken at the extrapolated point, whose mixed vector is a
linear combination of the two cached ones, so extrapolation costs no
communication.  Momentum follows the classic accelerated recursion
``t+ = (1 + sqrt(1 + 4 t^2)) / 2`` (Beck & Teboulle, 2009) with an optional
function-value reset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .netgraph import SpectralReport
from .objectives import ProblemInstance
from .simnet import SimNetwork

AcceptTest = Callable[[np.ndarray, np.ndarray, np.ndarray, float, int], tuple[bool, object]]


@dataclass
class SubsolverConfig:
    """Inner-solver knobs.

    ``kind`` selects accelerated ("fista") or plain ("prox_grad") steps.
    ``step_rule`` "fixed" uses ``1/L`` from the oracle's Lipschitz bound and
    falls back to backtracking when the bound is unavailable; "backtracking"
    always backtracks, halving the step (``backtrack_factor``) from
    ``1/initial_lipschitz`` whenever the local descent condition fails.
    """

    kind: str = "fista"
    step_rule: str = "fixed"
    backtrack_factor: float = 0.5
    initial_lipschitz: float = 1.0
    max_inner: int = 20000
    value_restart: bool = True

    def __post_init__(self):
        if self.kind not in ("fista", "prox_grad"):
            raise ValueError(f"unknown subsolver kind {self.kind!r}")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.initial_lipschitz <= 0.0:
            raise ValueError("initial Lipschitz guess must be positive")


@dataclass
class InnerResult:
    x: np.ndarray
    Zx: np.ndarray
    iterations: int
    accepted: bool
    payload: object
    momentum_resets: int
    final_step: float


def lipschitz_bound(problem: ProblemInstance, sigma: float, tau: float,
                    spectral: SpectralReport) -> float | None:
    """Smooth-gradient bound for the penalized subproblem:
    ``max_i L_i + sigma * lambda_max(I - W) + tau / sigma``.

    Returns ``None`` when any agent lacks a Lipschitz hint, which switches
    the inner solver to backtracking.
    """
    max_l = problem.max_lipschitz
    if max_l is None:
        return None
    return max_l + sigma * spectral.z_eig_max + (tau / sigma if tau > 0.0 else 0.0)


def _global_sum(net: SimNetwork, pieces: np.ndarray) -> float:
    return float(net.scalar_allreduce(pieces[:, None])[0])


def _backtrack_step(oracle, net: SimNetwork, z, Zz, g, lip: float, factor: float,
                    max_doublings: int = 60):
    """Grow the local curvature estimate until the descent condition holds.

    Every trial broadcasts its candidate (the mixed vector is needed for the
    global value), so failed trials are charged as communication too.  The
    acceptance slack scales with the aggregated value magnitudes: the two
    sides are assembled from differently cached mixed vectors, so their
    roundoff floor sits at ``eps`` times the term magnitudes, far above
    machine epsilon when the penalty weight is large.
    """
    pieces_z = oracle.smooth_pieces(z, Zz)
    s_z = _global_sum(net, pieces_z)
    mag_z = _global_sum(net, np.abs(pieces_z))
    for _ in range(max_doublings):
        eta = 1.0 / lip
        v = z - eta * g
        cand = oracle.prox(v, eta)
        z_cand = oracle.exchange(cand)
        diff = cand - z
        pieces = np.column_stack([
            oracle.smooth_pieces(cand, z_cand),
            np.einsum("nd,nd->n", g, diff),
            np.einsum("nd,nd->n", diff, diff),
        ])
        s_cand, g_dot, sq = net.scalar_allreduce(pieces)
        if sq == 0.0 and np.isfinite(s_cand):
            return eta, v, cand, z_cand, lip  # step stalled at roundoff; no better move
        bound = s_z + g_dot + 0.5 * lip * sq
        slack = 1e-12 * (1.0 + abs(mag_z) + abs(bound))
        if np.isfinite(s_cand) and s_cand <= bound + slack:
            return eta, v, cand, z_cand, lip
        lip = lip / factor
    raise RuntimeError("backtracking failed to find a workable step")


def run_inner(oracle, x0: np.ndarray, zx0: np.ndarray, config: SubsolverConfig,
              accept_test: AcceptTest, net: SimNetwork,
              stop_when: Callable[[], bool] | None = None,
              trace: list | None = None) -> InnerResult:
    """Iterate until ``accept_test`` approves a candidate or budgets run out.

    ``accept_test(candidate, Zcandidate, pre_prox, eta, j)`` is called after
    every iteration (each candidate comes with its freshly exchanged mixed
    vector and the pre-prox point, so error terms can be formed without
    extra communication).  Returns the last candidate with
    ``accepted=False`` when the iteration cap or ``stop_when`` fires first.
    """
    x = np.array(x0, dtype=float, copy=True)
    zx = np.array(zx0, dtype=float, copy=True)
    x_prev, zx_prev = x, zx
    t = 1.0
    beta = 0.0
    resets = 0
    psi_cur: float | None = None
    fixed = config.step_rule == "fixed" and oracle.lipschitz is not None
    lip_bt = config.initial_lipschitz
    last: InnerResult | None = None

    for j in range(1, config.max_inner + 1):
        if stop_when is not None and stop_when():
            break
        if beta != 0.0:
            z = x + beta * (x - x_prev)
            zz = zx + beta * (zx - zx_prev)
        else:
            z, zz = x, zx
        g = oracle.grad(z, zz)
        if fixed:
            eta = 1.0 / oracle.lipschitz
            v = z - eta * g
            cand = oracle.prox(v, eta)
            z_cand = oracle.exchange(cand)
        else:
            eta, v, cand, z_cand, lip_bt = _backtrack_step(
                oracle, net, z, zz, g, lip_bt, config.backtrack_factor)
        ok, payload = accept_test(cand, z_cand, v, eta, j)
        last = InnerResult(cand, z_cand, j, ok, payload, resets, eta)
        if ok:
            return last

        reset_now = False
        if config.value_restart:
            pieces = oracle.smooth_pieces(cand, z_cand) + oracle.nonsmooth_pieces(cand)
            psi_new = _global_sum(net, pieces)
            # slack keeps roundoff-level wiggle near a minimum from
            # killing the momentum every other step
            if psi_cur is not None:
                reset_now = psi_new > psi_cur + 1e-12 * (1.0 + abs(psi_cur))
            psi_cur = psi_new
        if reset_now:
            # kill the momentum: next step extrapolates nowhere
            t = 1.0
            beta = 0.0
            resets += 1
        elif config.kind == "fista":
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            t = t_next
        if trace is not None:
            trace.append({"j": j, "t": t, "beta": beta, "eta": eta, "psi": psi_cur})
        x_prev, zx_prev = x, zx
        x, zx = cand, z_cand

    if last is None:
        last = InnerResult(x, zx, 0, False, None, resets, 0.0)
    else:
        last = InnerResult(last.x, last.Zx, last.iterations, False, last.payload,
                           resets, last.final_step)
    return last
