"""Configuration-driven experiment runner.

Experiments are described by INI-style config files (see ``configs/``)::

    [experiment]
    name = table1
    repetitions = 10
    seed_base = 20240801

    [problem]
    family = logreg
    n = 10
    d = 1000
    m_total = 400
    lambda = 1e-2

    [topology]
    kinds = erdos_renyi
    p = 0.2

    [solver:dripalm]
    kind = dripalm
    rho = 0.99, 0.9, 0.7

List-valued fields expand into one run per combination; every solver in a
config sees the identical problem instance and topology per replicate
(replicate ``r`` uses seed ``seed_base + r``).  Results land in a CSV with
one detail row per solver/parameter/replicate plus one mean row per
group, byte-for-byte reproducible for a fixed config and seed.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from configparser import ConfigParser
from dataclasses import dataclass, field
from pathlib import Path

from . import baselines, dripalm, metrics
from .netgraph import build_topology, metropolis_weights
from .objectives import gen_lasso, gen_logreg
from .simnet import SimNetwork

CSV_COLUMNS = ["solver", "param1", "param2", "replicate", "vector_rounds",
               "scalar_rounds", "outer_iters", "kkt", "consensus_res",
               "stationarity_res", "wall_time_ms", "status"]

_NUMERIC = ["vector_rounds", "scalar_rounds", "outer_iters", "kkt",
            "consensus_res", "stationarity_res", "wall_time_ms"]


class ConfigError(ValueError):
    """Config file problem, with the offending section and field named."""


@dataclass
class SolverSpec:
    label: str
    kind: str
    combos: list  # list of parameter dicts, one per run variant


@dataclass
class ExperimentConfig:
    name: str
    repetitions: int
    seed_base: int
    problem: dict
    topologies: list
    variants: list          # instance-level parameter dicts (e.g. lambda_c)
    solvers: list
    kkt_tol: float = 1e-6
    max_comm: int = 30000
    check_every: int = 10


def _floats(text: str, where: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise ConfigError(f"{where}: {tok!r} is not a number") from None
    if not out:
        raise ConfigError(f"{where}: empty value")
    return out


def _int(section, key, where, default=None) -> int:
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"{where}: missing required field {key!r}")
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{where} {key}: {raw!r} is not an integer") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    cp = ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")

    if "experiment" not in cp:
        raise ConfigError(f"{path}: missing [experiment] section")
    exp = cp["experiment"]
    name = exp.get("name", path.stem)
    repetitions = _int(exp, "repetitions", "[experiment]", default=1)
    if repetitions < 1:
        raise ConfigError("[experiment] repetitions: must be at least 1")
    seed_base = _int(exp, "seed_base", "[experiment]", default=0)
    kkt_tol = float(exp.get("kkt_tol", "1e-6"))
    max_comm = _int(exp, "max_comm", "[experiment]", default=30000)
    check_every = _int(exp, "check_every", "[experiment]", default=10)

    if "problem" not in cp:
        raise ConfigError(f"{path}: missing [problem] section")
    prob = cp["problem"]
    family = prob.get("family")
    if family not in ("logreg", "lasso"):
        raise ConfigError(f"[problem] family: expected logreg or lasso, got {family!r}")
    problem = {
        "family": family,
        "n": _int(prob, "n", "[problem]"),
        "d": _int(prob, "d", "[problem]"),
        "m_total": _int(prob, "m_total", "[problem]"),
    }
    if family == "logreg":
        if "lambda" not in prob:
            raise ConfigError("[problem] lambda: required for logreg")
        problem["lam"] = _floats(prob["lambda"], "[problem] lambda")[0]
        variants = [{}]
    else:
        if "lambda_c" not in prob:
            raise ConfigError("[problem] lambda_c: required for lasso")
        variants = [{"lambda_c": v} for v in _floats(prob["lambda_c"], "[problem] lambda_c")]

    if "topology" not in cp:
        raise ConfigError(f"{path}: missing [topology] section")
    topo = cp["topology"]
    kinds = [k.strip() for k in topo.get("kinds", "").split(",") if k.strip()]
    if not kinds:
        raise ConfigError("[topology] kinds: need at least one topology kind")
    topologies = []
    for kind in kinds:
        if kind not in ("ring", "erdos_renyi", "geometric"):
            raise ConfigError(f"[topology] kinds: unknown kind {kind!r}")
        spec = {"kind": kind}
        if "p" in topo:
            spec["p"] = _floats(topo["p"], "[topology] p")[0]
        if "radius" in topo:
            spec["radius"] = _floats(topo["radius"], "[topology] radius")[0]
        topologies.append(spec)

    solvers = []
    for section in cp.sections():
        if not section.startswith("solver"):
            continue
        sec = cp[section]
        label = section.split(":", 1)[1].strip() if ":" in section else section
        kind = sec.get("kind", label)
        where = f"[{section}]"
        if kind == "dripalm":
            rhos = _floats(sec.get("rho", "0.99"), f"{where} rho")
            combos = [{"rho": r} for r in rhos]
        elif kind == "ideal":
            eps0s = _floats(sec.get("eps0", "0.01"), f"{where} eps0")
            alphas = _floats(sec.get("alpha", "0.2"), f"{where} alpha")
            combos = [{"eps0": e, "alpha": a} for e in eps0s for a in alphas]
        elif kind in ("pg_extra", "nids"):
            if "step" in sec:
                combos = [{"step": s} for s in _floats(sec["step"], f"{where} step")]
            else:
                combos = [{}]
        else:
            raise ConfigError(f"{where} kind: unknown solver {kind!r}")
        solvers.append(SolverSpec(label, kind, combos))
    if not solvers:
        raise ConfigError(f"{path}: no [solver:...] sections")

    return ExperimentConfig(name, repetitions, seed_base, problem, topologies,
                            variants, solvers, kkt_tol, max_comm, check_every)


def _param_string(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in params)


def _instance_string(topo: dict, variant: dict) -> str:
    parts = [f"topology={topo['kind']}"]
    parts += [f"{k}={v}" for k, v in variant.items()]
    return ";".join(parts)


def _build_problem(cfg: ExperimentConfig, variant: dict, seed: int):
    p = cfg.problem
    if p["family"] == "logreg":
        return gen_logreg(p["n"], p["d"], p["m_total"], p["lam"], seed)
    return gen_lasso(p["n"], p["d"], p["m_total"], variant["lambda_c"], seed)


def _run_solver(spec: SolverSpec, combo: dict, problem, mixing, cfg: ExperimentConfig):
    net = SimNetwork(mixing, problem.d)
    if spec.kind == "dripalm":
        config = dripalm.DripalmConfig(
            rho=combo["rho"], max_total_comm=cfg.max_comm, kkt_tol=cfg.kkt_tol)
        return dripalm.run(config, problem, net), net
    base = baselines.BaselineConfig(
        kkt_tol=cfg.kkt_tol, max_comm=cfg.max_comm, check_every=cfg.check_every)
    if spec.kind == "ideal":
        base.eps0 = combo["eps0"]
        base.eps_decay = combo["alpha"]
        return baselines.ideal_run(problem, net, base), net
    if "step" in combo:
        base.step = combo["step"]
    runner = baselines.pg_extra_run if spec.kind == "pg_extra" else baselines.nids_run
    return runner(problem, net, base), net


def _run_cell(args):
    """All solver runs for one (topology, variant, replicate) cell."""
    cfg, topo_idx, variant_idx, rep, timing, diag_dir = args
    topo = cfg.topologies[topo_idx]
    variant = cfg.variants[variant_idx]
    seed = cfg.seed_base + rep
    graph = build_topology(topo["kind"], cfg.problem["n"], seed,
                           p=topo.get("p", 0.2), radius=topo.get("radius"))
    mixing = metropolis_weights(graph)
    problem = _build_problem(cfg, variant, seed)
    rows = []
    for spec in cfg.solvers:
        for combo in spec.combos:
            row = {
                "solver": spec.label,
                "param1": _param_string(combo),
                "param2": _instance_string(topo, variant),
                "replicate": str(rep),
            }
            t0 = time.perf_counter()
            try:
                result, _ = _run_solver(spec, combo, problem, mixing, cfg)
            except Exception as exc:  # solver failure becomes a status, run continues
                elapsed = (time.perf_counter() - t0) * 1e3
                row.update({k: 0 for k in _NUMERIC})
                row["kkt"] = row["consensus_res"] = row["stationarity_res"] = float("inf")
                row["wall_time_ms"] = elapsed if timing else 0.0
                row["status"] = f"error:{type(exc).__name__}"
                rows.append(row)
                continue
            elapsed = (time.perf_counter() - t0) * 1e3
            row.update({
                "vector_rounds": result.vector_rounds,
                "scalar_rounds": result.scalar_rounds,
                "outer_iters": result.outer_iters,
                "kkt": result.kkt_report.kkt,
                "consensus_res": result.kkt_report.consensus_res,
                "stationarity_res": result.kkt_report.stationarity_res,
                "wall_time_ms": elapsed if timing else 0.0,
                "status": result.status,
            })
            rows.append(row)
            if diag_dir is not None and rep == 0 and result.diagnostics:
                stem = f"{spec.label}_{_param_string(combo) or 'default'}_{_instance_string(topo, variant)}"
                stem = stem.replace(";", "_").replace("=", "-").replace(".", "p")
                metrics.save_diagnostics_csv(result, Path(diag_dir) / f"{stem}.csv")
    return rows


def _mean(values: list[float]) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total / len(values)


def _mean_row(group_rows: list[dict]) -> dict:
    out = dict(group_rows[0])
    out["replicate"] = "mean"
    for col in _NUMERIC:
        out[col] = _mean([r[col] for r in group_rows])
    statuses = [r["status"] for r in group_rows]
    n_conv = sum(1 for s in statuses if s == "converged")
    out["status"] = "converged" if n_conv == len(statuses) else f"mixed({n_conv}/{len(statuses)})"
    return out


def _format(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_experiment(cfg: ExperimentConfig, out_dir, *, jobs: int = 1,
                   timing: bool = False, diagnostics: bool = False) -> Path:
    """Execute every run in the config and write ``<name>.csv`` to ``out_dir``.

    With ``timing`` off (the default) the wall-time column is written as
    zero so the CSV is bitwise reproducible; pass ``timing=True`` for real
    measurements at the cost of reproducible bytes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    diag_dir = out_dir / "diagnostics" if diagnostics else None
    if diag_dir is not None:
        diag_dir.mkdir(parents=True, exist_ok=True)

    cells = [(cfg, ti, vi, rep, timing, str(diag_dir) if diag_dir else None)
             for ti in range(len(cfg.topologies))
             for vi in range(len(cfg.variants))
             for rep in range(cfg.repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cell_rows = list(pool.map(_run_cell, cells))
    else:
        cell_rows = [_run_cell(c) for c in cells]

    # regroup: cells are replicate-major, the CSV is combo-major
    by_key: dict[tuple, list[dict]] = {}
    for rows in cell_rows:
        for row in rows:
            by_key.setdefault((row["solver"], row["param1"], row["param2"]), []).append(row)

    ordered_keys = []
    for ti in range(len(cfg.topologies)):
        for vi in range(len(cfg.variants)):
            inst = _instance_string(cfg.topologies[ti], cfg.variants[vi])
            for spec in cfg.solvers:
                for combo in spec.combos:
                    ordered_keys.append((spec.label, _param_string(combo), inst))

    csv_path = out_dir / f"{cfg.name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for key in ordered_keys:
            group = sorted(by_key[key], key=lambda r: int(r["replicate"]))
            for row in group:
                writer.writerow([_format(row[c]) for c in CSV_COLUMNS])
            mean = _mean_row(group)
            writer.writerow([_format(mean[c]) for c in CSV_COLUMNS])
    return csv_path


def read_rows(csv_path) -> list[dict]:
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{csv_path}: unexpected columns {reader.fieldnames}")
        return list(reader)


def _group_sort_key(key: tuple) -> tuple:
    solver, param1, param2 = key
    first_val = 0.0
    if "=" in param1:
        try:
            first_val = float(param1.split(";")[0].split("=", 1)[1])
        except ValueError:
            first_val = 0.0
    return (solver, param2, -first_val, param1)


def compare_table(csv_path) -> str:
    """Aligned text table of per-group means recomputed from the detail rows,
    ordered with the primary numeric parameter descending."""
    rows = read_rows(csv_path)
    detail = [r for r in rows if r["replicate"] != "mean"]
    groups: dict[tuple, list[dict]] = {}
    for row in detail:
        groups.setdefault((row["solver"], row["param1"], row["param2"]), []).append(row)

    header = ["solver", "params", "instance", "reps", "comm(#)", "outer", "kkt", "status"]
    lines = [header]
    for key in sorted(groups, key=_group_sort_key):
        grp = groups[key]
        comm = _mean([float(r["vector_rounds"]) for r in grp])
        outer = _mean([float(r["outer_iters"]) for r in grp])
        kkt = _mean([float(r["kkt"]) for r in grp])
        n_conv = sum(1 for r in grp if r["status"] == "converged")
        status = "converged" if n_conv == len(grp) else f"mixed({n_conv}/{len(grp)})"
        lines.append([key[0], key[1] or "-", key[2], str(len(grp)),
                      f"{comm:.1f}", f"{outer:.1f}", f"{kkt:.2e}", status])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    rendered = []
    for i, row in enumerate(lines):
        rendered.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            rendered.append("  ".join("-" * w for w in widths))
    return "\n".join(rendered)
