"""Per-agent objective oracles and synthetic problem generators.

Each agent holds a convex objective split into a smooth part (value and
gradient callback) and an optional proximable nonsmooth part.  The two
benchmark families are l2-regularized logistic regression (smooth) and
LASSO (smooth least squares plus a shared l1 term split evenly across
agents).  Generators are deterministic in their seed.
"""

from __future__ import annotations

import struct
from configparser import ConfigParser
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

# rng domain tags (see netgraph: topology uses tag 1)
_RNG_LOGREG = 2
_RNG_LASSO = 3
_RNG_QUADRATIC = 4

_MAGIC = b"DMAT"


def soft_threshold(x: np.ndarray, level: float) -> np.ndarray:
    """Shrink each entry toward zero by ``level``: the prox of ``level * |.|_1``."""
    return np.sign(x) * np.maximum(np.abs(x) - level, 0.0)


def gram_spectral_norm(a: np.ndarray, max_iter: int = 500, tol: float = 1e-14) -> float:
    """Largest eigenvalue of ``aᵀa`` by power iteration with a fixed start."""
    a = np.asarray(a, dtype=float)
    if a.size == 0 or not a.any():
        return 0.0
    d = a.shape[1]
    v = np.linspace(1.0, 2.0, d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = a @ v
        w = a.T @ u
        lam_new = float(v @ w)  # Rayleigh quotient, = |a v|^2
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


@dataclass
class NonsmoothOracle:
    """Proximable convex term: ``value(x)`` and ``prox(x, nu) = argmin_u
    value(u) + |u - x|^2 / (2 nu)``."""

    value: Callable[[np.ndarray], float]
    prox: Callable[[np.ndarray, float], np.ndarray]


@dataclass
class LocalObjective:
    """One agent's oracle: smooth (value, gradient) callback, optional
    proximable nonsmooth part, and an optional upper bound on the smooth
    gradient's Lipschitz constant."""

    smooth_eval: Callable[[np.ndarray], tuple[float, np.ndarray]]
    nonsmooth: NonsmoothOracle | None = None
    lipschitz_hint: float | None = None


def logreg_local(features: np.ndarray, labels: np.ndarray, lam: float) -> LocalObjective:
    """Logistic loss over the agent's samples plus ``(lam/2)|x|^2``.

    The value uses ``log1p(exp(.))`` via ``logaddexp`` and the gradient the
    sigmoid of the negated margin, so large margins do not overflow.
    """
    a = np.ascontiguousarray(features, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    if a.ndim != 2 or a.shape[0] != y.size:
        raise ValueError("features and labels disagree on sample count")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if lam <= 0.0:
        raise ValueError("ridge weight must be positive")
    ay = a * y[:, None]

    def smooth_eval(x: np.ndarray) -> tuple[float, np.ndarray]:
        margins = ay @ x
        value = float(np.logaddexp(0.0, -margins).sum()) + 0.5 * lam * float(x @ x)
        grad = lam * x - ay.T @ expit(-margins)
        return value, grad

    hint = 0.25 * gram_spectral_norm(a) + lam
    return LocalObjective(smooth_eval, None, hint)


def lasso_local(a: np.ndarray, b: np.ndarray, lam: float, n_agents: int) -> LocalObjective:
    """Least squares ``(1/2)|a x - b|^2`` plus the agent's ``(lam/n)|x|_1`` share."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if a.ndim != 2 or a.shape[0] != b.size:
        raise ValueError("design matrix and measurements disagree on sample count")
    if lam <= 0.0 or n_agents < 1:
        raise ValueError("need lam > 0 and at least one agent")
    share = lam / n_agents

    def smooth_eval(x: np.ndarray) -> tuple[float, np.ndarray]:
        r = a @ x - b
        return 0.5 * float(r @ r), a.T @ r

    nonsmooth = NonsmoothOracle(
        value=lambda x: share * float(np.abs(x).sum()),
        prox=lambda x, nu: soft_threshold(x, nu * share),
    )
    return LocalObjective(smooth_eval, nonsmooth, gram_spectral_norm(a))


def quadratic_local(center: np.ndarray) -> LocalObjective:
    """``(1/2)|x - c|^2``; handy for consensus sanity checks."""
    c = np.asarray(center, dtype=float).ravel()

    def smooth_eval(x: np.ndarray) -> tuple[float, np.ndarray]:
        r = x - c
        return 0.5 * float(r @ r), r

    return LocalObjective(smooth_eval, None, 1.0)


@dataclass(frozen=True)
class ProblemMeta:
    family: str
    seed: int
    n: int
    d: int
    m_per_agent: tuple = ()
    lam: float = 0.0
    lam_c: float | None = None


class ProblemInstance:
    """A full multi-agent problem: one :class:`LocalObjective` per agent plus
    the raw per-agent data (for centralized reference computations and
    serialization).

    Batch evaluation over the stacked ``(n, d)`` iterate is vectorized when
    every agent carries the same family and sample count; otherwise it falls
    back to the per-agent callbacks.
    """

    def __init__(self, locals_: list[LocalObjective], meta: ProblemMeta,
                 agent_data: list[dict]):
        if len(locals_) != meta.n or len(agent_data) != meta.n:
            raise ValueError("need one local objective and data record per agent")
        self.locals = list(locals_)
        self.meta = meta
        self.agent_data = agent_data
        self.n = meta.n
        self.d = meta.d
        self._batch = self._build_batch()

    # -- batched fast paths -------------------------------------------------

    def _build_batch(self):
        fam = self.meta.family
        data = self.agent_data
        if fam == "logreg":
            shapes = {d_["features"].shape for d_ in data}
            if len(shapes) == 1:
                a = np.stack([d_["features"] for d_ in data])
                y = np.stack([d_["labels"] for d_ in data])
                return {"ay": a * y[:, :, None], "lam": self.meta.lam}
        elif fam == "lasso":
            shapes = {d_["A"].shape for d_ in data}
            if len(shapes) == 1:
                return {"A": np.stack([d_["A"] for d_ in data]),
                        "At": np.stack([d_["A"].T for d_ in data]),
                        "b": np.stack([d_["b"] for d_ in data]),
                        "share": self.meta.lam / self.n}
        elif fam == "quadratic":
            return {"centers": np.stack([d_["center"] for d_ in data])}
        return None

    @property
    def has_nonsmooth(self) -> bool:
        return any(loc.nonsmooth is not None for loc in self.locals)

    @property
    def max_lipschitz(self) -> float | None:
        hints = [loc.lipschitz_hint for loc in self.locals]
        if any(h is None for h in hints):
            return None
        return max(hints)

    def smooth_grads(self, x: np.ndarray) -> np.ndarray:
        """Per-agent smooth gradients, stacked ``(n, d)``."""
        b = self._batch
        fam = self.meta.family
        if b is not None and fam == "logreg":
            margins = (b["ay"] @ x[:, :, None])[:, :, 0]
            return b["lam"] * x - (np.transpose(b["ay"], (0, 2, 1)) @ expit(-margins)[:, :, None])[:, :, 0]
        if b is not None and fam == "lasso":
            r = (b["A"] @ x[:, :, None])[:, :, 0] - b["b"]
            return (b["At"] @ r[:, :, None])[:, :, 0]
        if b is not None and fam == "quadratic":
            return x - b["centers"]
        return np.stack([self.locals[i].smooth_eval(x[i])[1] for i in range(self.n)])

    def smooth_values(self, x: np.ndarray) -> np.ndarray:
        """Per-agent smooth values, shape ``(n,)``."""
        b = self._batch
        fam = self.meta.family
        if b is not None and fam == "logreg":
            margins = (b["ay"] @ x[:, :, None])[:, :, 0]
            return np.logaddexp(0.0, -margins).sum(axis=1) + 0.5 * b["lam"] * (x * x).sum(axis=1)
        if b is not None and fam == "lasso":
            r = (b["A"] @ x[:, :, None])[:, :, 0] - b["b"]
            return 0.5 * (r * r).sum(axis=1)
        if b is not None and fam == "quadratic":
            r = x - b["centers"]
            return 0.5 * (r * r).sum(axis=1)
        return np.array([self.locals[i].smooth_eval(x[i])[0] for i in range(self.n)])

    def nonsmooth_values(self, x: np.ndarray) -> np.ndarray:
        b = self._batch
        if b is not None and self.meta.family == "lasso":
            return b["share"] * np.abs(x).sum(axis=1)
        if not self.has_nonsmooth:
            return np.zeros(self.n)
        return np.array([
            loc.nonsmooth.value(x[i]) if loc.nonsmooth is not None else 0.0
            for i, loc in enumerate(self.locals)
        ])

    def prox(self, x: np.ndarray, nu: float) -> np.ndarray:
        """Blockwise prox of the nonsmooth parts; identity when there are none."""
        b = self._batch
        if b is not None and self.meta.family == "lasso":
            return soft_threshold(x, nu * b["share"])
        if not self.has_nonsmooth:
            return x
        out = np.empty_like(x)
        for i, loc in enumerate(self.locals):
            out[i] = loc.nonsmooth.prox(x[i], nu) if loc.nonsmooth is not None else x[i]
        return out

    def total_value(self, x: np.ndarray) -> float:
        """Full objective at a stacked iterate (smooth plus nonsmooth parts)."""
        vals = self.smooth_values(x) + self.nonsmooth_values(x)
        total = float(vals[0])
        for i in range(1, self.n):
            total += float(vals[i])
        return total

    def value_at_consensus(self, v: np.ndarray) -> float:
        """Full objective with every block equal to ``v``."""
        return self.total_value(np.tile(np.asarray(v, dtype=float), (self.n, 1)))

    def centralized_smooth_grad(self, v: np.ndarray) -> np.ndarray:
        """Sum of the per-agent smooth gradients at a single point ``v``."""
        grads = self.smooth_grads(np.tile(np.asarray(v, dtype=float), (self.n, 1)))
        total = grads[0].copy()
        for i in range(1, self.n):
            total += grads[i]
        return total

    def stacked(self) -> dict[str, np.ndarray]:
        """Concatenated per-agent data, for centralized reference computations."""
        keys = self.agent_data[0].keys()
        out = {}
        for key in keys:
            parts = [np.atleast_1d(d_[key]) for d_ in self.agent_data]
            out[key] = np.concatenate(parts, axis=0) if parts[0].ndim > 0 else np.stack(parts)
        return out


def _split_counts(m_total: int, n: int) -> tuple[int, ...]:
    # even split, remainder handed out round-robin from agent 0
    base, rem = divmod(m_total, n)
    return tuple(base + (1 if i < rem else 0) for i in range(n))


def gen_logreg(n: int = 10, d: int = 1000, m_total: int = 400,
               lam: float = 1e-2, seed: int = 0) -> ProblemInstance:
    """Synthetic l2-regularized logistic regression.

    Features are i.i.d. standard normal; labels are the sign of
    ``aᵀ x_true + eps`` with ``x_true ~ N(0, I)`` and ``eps ~ N(0, 0.1^2)``,
    with ``sign(0)`` mapped to ``+1``.  Samples are split evenly across
    agents (remainder round-robin).
    """
    rng = np.random.default_rng([seed, _RNG_LOGREG])
    x_true = rng.standard_normal(d)
    counts = _split_counts(m_total, n)
    locals_, data = [], []
    for m_i in counts:
        a = rng.standard_normal((m_i, d))
        eps = rng.normal(0.0, 0.1, m_i)
        y = np.where(a @ x_true + eps >= 0.0, 1.0, -1.0)
        locals_.append(logreg_local(a, y, lam))
        data.append({"features": a, "labels": y})
    meta = ProblemMeta("logreg", seed, n, d, counts, lam=lam)
    return ProblemInstance(locals_, meta, data)


def gen_lasso(n: int = 20, d: int = 1000, m_total: int = 200,
              lam_c: float = 0.1, seed: int = 0) -> ProblemInstance:
    """Synthetic LASSO: gaussian sensing with unit-norm columns (stacked
    design), sparse ground truth of density 0.1, and
    ``lam = lam_c * |Aᵀb|_inf`` computed from the stacked data.

    Column normalization is the usual sparse-regression convention and
    keeps the per-sample curvature independent of ``m_total`` and ``d``.
    """
    if lam_c <= 0.0:
        raise ValueError("lam_c must be positive")
    rng = np.random.default_rng([seed, _RNG_LASSO])
    while True:
        mask = rng.random(d) < 0.1
        vals = rng.standard_normal(d)
        if mask.any():
            break
    x_true = np.where(mask, vals, 0.0)
    counts = _split_counts(m_total, n)
    raw = [rng.standard_normal((m_i, d)) for m_i in counts]
    scale = np.linalg.norm(np.concatenate(raw, axis=0), axis=0, keepdims=True)
    scale[scale == 0.0] = 1.0
    designs, measurements = [], []
    for block in raw:
        a = block / scale
        eps = rng.normal(0.0, 0.1, block.shape[0])
        designs.append(a)
        measurements.append(a @ x_true + eps)
    a_full = np.concatenate(designs, axis=0)
    b_full = np.concatenate(measurements, axis=0)
    lam = lam_c * float(np.abs(a_full.T @ b_full).max())
    if lam == 0.0:
        raise ValueError("degenerate instance: Aᵀb is identically zero")
    locals_ = [lasso_local(a, b, lam, n) for a, b in zip(designs, measurements)]
    data = [{"A": a, "b": b} for a, b in zip(designs, measurements)]
    meta = ProblemMeta("lasso", seed, n, d, counts, lam=lam, lam_c=lam_c)
    return ProblemInstance(locals_, meta, data)


def gen_quadratic(n: int, d: int, seed: int = 0, spread: float = 1.0) -> ProblemInstance:
    """Consensus test family ``f_i = (1/2)|x - c_i|^2`` with gaussian centers."""
    rng = np.random.default_rng([seed, _RNG_QUADRATIC])
    centers = spread * rng.standard_normal((n, d))
    locals_ = [quadratic_local(c) for c in centers]
    data = [{"center": c} for c in centers]
    return ProblemInstance(locals_, ProblemMeta("quadratic", seed, n, d, (0,) * n), data)


# -- serialization ----------------------------------------------------------

def _write_dmat(path: Path, arr: np.ndarray) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    if arr.ndim != 2:
        raise ValueError("only 1-D and 2-D arrays are supported")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def _read_dmat(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    rows, cols = struct.unpack("<QQ", raw[4:20])
    data = np.frombuffer(raw[20:], dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"{path}: payload size mismatch")
    return data.reshape(rows, cols).astype(float)


_FAMILY_KEYS = {"logreg": ("features", "labels"), "lasso": ("A", "b"),
                "quadratic": ("center",)}


def save_instance(problem: ProblemInstance, directory) -> None:
    """Write per-agent matrices (binary) plus a human-editable metadata file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = problem.meta
    cp = ConfigParser()
    cp["instance"] = {
        "family": meta.family,
        "n": str(meta.n),
        "d": str(meta.d),
        "seed": str(meta.seed),
        "lambda": repr(meta.lam),
        "m_per_agent": ",".join(str(m) for m in meta.m_per_agent),
    }
    if meta.lam_c is not None:
        cp["instance"]["lambda_c"] = repr(meta.lam_c)
    with open(directory / "meta.ini", "w") as fh:
        cp.write(fh)
    for i, record in enumerate(problem.agent_data):
        for key in _FAMILY_KEYS[meta.family]:
            _write_dmat(directory / f"{key}_{i:03d}.dmat", record[key])


def load_instance(directory) -> ProblemInstance:
    directory = Path(directory)
    cp = ConfigParser()
    if not cp.read(directory / "meta.ini"):
        raise FileNotFoundError(f"{directory}: missing meta.ini")
    sec = cp["instance"]
    family = sec["family"]
    if family not in _FAMILY_KEYS:
        raise ValueError(f"unknown problem family {family!r}")
    n, d, seed = sec.getint("n"), sec.getint("d"), sec.getint("seed")
    lam = float(sec.get("lambda", "0"))
    lam_c = float(sec["lambda_c"]) if "lambda_c" in sec else None
    m_per_agent = tuple(int(t) for t in sec["m_per_agent"].split(",") if t)
    locals_, data = [], []
    for i in range(n):
        record = {key: _read_dmat(directory / f"{key}_{i:03d}.dmat")
                  for key in _FAMILY_KEYS[family]}
        if family == "logreg":
            feats, labels = record["features"], record["labels"].ravel()
            locals_.append(logreg_local(feats, labels, lam))
            data.append({"features": feats, "labels": labels})
        elif family == "lasso":
            a, b = record["A"], record["b"].ravel()
            locals_.append(lasso_local(a, b, lam, n))
            data.append({"A": a, "b": b})
        else:
            c = record["center"].ravel()
            locals_.append(quadratic_local(c))
            data.append({"center": c})
    meta = ProblemMeta(family, seed, n, d, m_per_agent, lam=lam, lam_c=lam_c)
    return ProblemInstance(locals_, meta, data)
