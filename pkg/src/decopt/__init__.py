"""Decentralized consensus optimization toolkit.

A double-loop proximal augmented Lagrangian solver whose inner loops stop
against a relative, iterate-scaled test (D-ripALM), single-loop baselines
(PG-EXTRA, NIDS) and an absolute-criterion double-loop baseline, synthetic
problem generators, a synchronous network simulator with communication
accounting, and a benchmark harness.
"""

from .baselines import BaselineConfig, ideal_run, nids_run, pg_extra_run
from .dripalm import DripalmConfig, run as dripalm_run
from .metrics import KktReport, SolveResult, kkt_lasso, kkt_report, kkt_smooth
from .netgraph import (Graph, MixingMatrix, SpectralReport, apply_Z,
                       build_topology, metropolis_weights, quadratic_Z,
                       validate_mixing)
from .objectives import (LocalObjective, ProblemInstance, gen_lasso,
                         gen_logreg, gen_quadratic, lasso_local, logreg_local,
                         load_instance, save_instance)
from .simnet import CommStats, SimNetwork
from .subsolvers import SubsolverConfig, lipschitz_bound

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "CommStats", "DripalmConfig", "Graph", "KktReport",
    "LocalObjective", "MixingMatrix", "ProblemInstance", "SimNetwork",
    "SolveResult", "SpectralReport", "SubsolverConfig", "apply_Z",
    "build_topology", "dripalm_run", "gen_lasso", "gen_logreg",
    "gen_quadratic", "ideal_run", "kkt_lasso", "kkt_report", "kkt_smooth",
    "lasso_local", "lipschitz_bound", "load_instance", "logreg_local",
    "metropolis_weights", "nids_run", "pg_extra_run", "quadratic_Z",
    "save_instance", "validate_mixing",
]
