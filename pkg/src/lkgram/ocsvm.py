"""One-class SVM with an RBF kernel, trained by pairwise (SMO-style) updates.

The dual solved here is

    min_a  1/2 sum_ij a_i a_j K(x_i, x_j)
    s.t.   0 <= a_i <= 1 / (nu * n),   sum_i a_i = 1

with K(x, y) = exp(-gamma * |x - y|^2).  Each iteration moves mass between
the maximal KKT-violating pair and stops once the violation drops below
``kkt_tolerance``.  The decision value of x is sum_i a_i K(s_i, x) - rho;
non-negative means normal.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .errors import (
    DetectorError,
    DimensionMismatch,
    Infeasible,
    NonConvergenceWarning,
    TooFewRows,
)
from .patterns import FeatureMatrix

# Table grid is the default; the listed alternative is kept as a preset.
NU_GRID_TABLES = (0.5, 0.2, 0.1, 0.05, 0.01)
NU_GRID_ALT = (0.5, 0.2, 0.1, 0.005, 0.001, 0.0005, 0.0001)

_TAU = 1e-12


@dataclass(frozen=True)
class KernelParams:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise DetectorError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class OcsvmParams:
    nu: float
    gamma: float | None = None  # None -> 1 / feature dimension
    kkt_tolerance: float = 1e-3
    max_iterations: int = 10_000_000
    cache_rows: int = 4096
    track_objective: bool = False

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise DetectorError(f"nu must lie in (0, 1], got {self.nu}")
        if not self.kkt_tolerance > 0:
            raise DetectorError("kkt_tolerance must be positive")
        if self.max_iterations < 1:
            raise DetectorError("max_iterations must be positive")
        if self.gamma is not None:
            KernelParams(self.gamma)


@dataclass(frozen=True)
class DecisionValue:
    value: float

    @property
    def sign(self) -> int:
        return 1 if self.value >= 0 else -1


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray  # (nsv, m)
    coefficients: np.ndarray  # (nsv,)
    rho: float
    kernel: KernelParams
    nu: float
    training_size: int
    converged: bool = True
    iterations: int = 0
    objective: float = float("nan")
    objective_history: tuple[float, ...] = field(default=(), repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def gamma(self) -> float:
        return self.kernel.gamma

    def decision_values(self, X) -> np.ndarray:
        X = _as_2d(X)
        if X.shape[1] != self.dimension:
            raise DimensionMismatch(f"model expects dimension {self.dimension}, got {X.shape[1]}")
        return kernel_expansion(X, self.support_vectors, self.coefficients, self.gamma) - self.rho

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_values(X) >= 0, 1, -1)


def _as_2d(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.values
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return X


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    d = x - y
    return math.exp(-gamma * float(d @ d))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel block K[i, j] = exp(-gamma |A_i - B_j|^2).

    Distances come from explicit differences, so duplicate rows give exactly 1.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, 4_000_000 // max(1, B.shape[0] * B.shape[1]))
    for s in range(0, A.shape[0], step):
        d = A[s:s + step, None, :] - B[None, :, :]
        out[s:s + step] = np.exp(-gamma * np.einsum("ijk,ijk->ij", d, d))
    return out


def kernel_expansion(A: np.ndarray, B: np.ndarray, coef: np.ndarray, gamma: float) -> np.ndarray:
    """sum_j coef_j K(A_i, B_j) for every row of A, reduced row by row."""
    return (rbf_matrix(A, B, gamma) * coef[None, :]).sum(axis=1)


def default_gamma(m: int) -> float:
    if m < 1:
        raise DetectorError("feature dimension must be positive")
    return 1.0 / m


class _KernelRows:
    """LRU cache of kernel matrix rows."""

    def __init__(self, X: np.ndarray, gamma: float, capacity: int):
        self.X = X
        self.gamma = gamma
        self.capacity = max(2, capacity)
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def __getitem__(self, i: int) -> np.ndarray:
        row = self._rows.get(i)
        if row is not None:
            self._rows.move_to_end(i)
            return row
        d = self.X - self.X[i]
        row = np.exp(-self.gamma * np.einsum("ij,ij->i", d, d))
        self._rows[i] = row
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return row


def initial_alpha(n: int, nu: float) -> np.ndarray:
    """Feasible start: the first floor(nu*n) entries at the box bound, one fractional entry."""
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    full = min(int(math.floor(nu * n)), n)
    alpha[:full] = C
    if full < n:
        alpha[full] = 1.0 - full * C
    alpha[alpha < 0] = 0.0
    return alpha


def _compute_rho(G: np.ndarray, alpha: np.ndarray, C: float) -> float:
    eps = 1e-12 * C
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        g = G[free]
        # clamp so identical free points sit exactly on the boundary
        return float(min(max(g.mean(), g.min()), g.max()))
    at_zero = alpha <= eps
    at_bound = alpha >= C - eps
    hi = G[at_zero].min() if at_zero.any() else G.max()
    lo = G[at_bound].max() if at_bound.any() else G.min()
    return float((hi + lo) / 2)


def solve_dual(X: np.ndarray, nu: float, gamma: float, tol: float = 1e-3,
               max_iterations: int = 10_000_000, cache_rows: int = 4096,
               track_objective: bool = False):
    """Solve the dual; returns (alpha, gradient, rho, iterations, converged, history)."""
    n = X.shape[0]
    C = 1.0 / (nu * n)
    alpha = initial_alpha(n, nu)
    K = _KernelRows(X, gamma, cache_rows)
    G = np.zeros(n)
    for i in np.flatnonzero(alpha):
        G += alpha[i] * K[i]
    history = [0.5 * float(alpha @ G)] if track_objective else []

    # tolerance is stated on the nu*n-scaled dual (sum a = nu*n), as in libsvm
    stop = tol / (nu * n)
    converged = False
    it = 0
    while it < max_iterations:
        up = alpha < C  # can increase
        down = alpha > 0  # can decrease
        Gu = np.where(up, G, np.inf)
        Gd = np.where(down, G, -np.inf)
        i = int(np.argmin(Gu))
        j = int(np.argmax(Gd))
        if Gd[j] - Gu[i] <= stop:
            converged = True
            break
        Ki, Kj = K[i], K[j]
        eta = Ki[i] + Kj[j] - 2.0 * Ki[j]
        t = (G[j] - G[i]) / max(eta, _TAU)
        t = min(t, C - alpha[i], alpha[j])
        alpha[i] += t
        alpha[j] -= t
        # snap to the box so the active sets stay exact
        if C - alpha[i] < 1e-14 * C:
            alpha[i] = C
        G += t * (Ki - Kj)
        it += 1
        if track_objective:
            history.append(0.5 * float(alpha @ G))
    # recompute the gradient along the prediction path; the running G drifts
    sv = np.flatnonzero(alpha > 0)
    G = kernel_expansion(X, X[sv], alpha[sv], gamma)
    rho = _compute_rho(G, alpha, C)
    return alpha, G, rho, it, converged, history


def train(train_matrix, params: OcsvmParams) -> OcsvmModel:
    if isinstance(train_matrix, FeatureMatrix):
        if np.any(train_matrix.labels != 1):
            raise DetectorError("one-class training rows must all be labeled +1")
    X = np.ascontiguousarray(_as_2d(train_matrix), dtype=float)
    n, m = X.shape
    if m == 0:
        raise DimensionMismatch("cannot train on zero-dimensional features")
    if n < 2:
        raise TooFewRows(f"need at least 2 training rows, got {n}")
    if params.nu * n < 1:
        raise Infeasible(f"nu * n = {params.nu * n:g} < 1")
    gamma = params.gamma if params.gamma is not None else default_gamma(m)
    alpha, G, rho, it, converged, history = solve_dual(
        X, params.nu, gamma, params.kkt_tolerance, params.max_iterations,
        params.cache_rows, params.track_objective)
    if not converged:
        warnings.warn(f"OCSVM solver stopped after {it} iterations without meeting "
                      f"tolerance {params.kkt_tolerance}", NonConvergenceWarning, stacklevel=2)
    sv = np.flatnonzero(alpha > 0)
    return OcsvmModel(
        support_vectors=X[sv].copy(),
        coefficients=alpha[sv].copy(),
        rho=rho,
        kernel=KernelParams(gamma),
        nu=params.nu,
        training_size=n,
        converged=converged,
        iterations=it,
        objective=0.5 * float(alpha @ G),
        objective_history=tuple(history),
    )


def decision_value(model: OcsvmModel, x) -> DecisionValue:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("decision_value takes a single vector")
    return DecisionValue(float(model.decision_values(x)[0]))


def predict(model: OcsvmModel, x) -> int:
    return decision_value(model, x).sign


def kfold_far(train_matrix, params: OcsvmParams, folds: int = 10, seed: int = 0,
              jobs: int = 1) -> float:
    """Mean fraction of held-out normal rows predicted abnormal over k folds."""
    X = _as_2d(train_matrix)
    n = X.shape[0]
    if folds < 2:
        raise TooFewRows("need at least 2 folds")
    if folds > n:
        raise TooFewRows(f"{folds} folds over {n} rows")
    parts = np.array_split(np.random.default_rng(seed).permutation(n), folds)
    if any(n - len(p) < 2 for p in parts):
        raise TooFewRows("each fold needs at least 2 training rows")

    def one(held: np.ndarray) -> float:
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        model = train(X[mask], params)
        return float(np.mean(model.predict(X[held]) == -1))

    if jobs > 1:
        rates = Parallel(n_jobs=jobs)(delayed(one)(p) for p in parts)
    else:
        rates = [one(p) for p in parts]
    return float(np.mean(rates))


def dumps_model(model: OcsvmModel) -> str:
    lines = [
        f"nu={model.nu!r}",
        f"gamma={model.gamma!r}",
        f"rho={model.rho!r}",
        f"dim={model.dimension}",
        f"nsv={len(model.coefficients)}",
    ]
    for a, sv in zip(model.coefficients, model.support_vectors):
        lines.append(" ".join(repr(float(v)) for v in (a, *sv)))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> OcsvmModel:
    lines = text.splitlines()
    header = {}
    for ln in lines[:5]:
        key, _, value = ln.partition("=")
        header[key.strip()] = value.strip()
    missing = {"nu", "gamma", "rho", "dim", "nsv"} - set(header)
    if missing:
        raise DetectorError(f"model file lacks header fields {sorted(missing)}")
    dim, nsv = int(header["dim"]), int(header["nsv"])
    body = [ln.split() for ln in lines[5:] if ln.strip()]
    if len(body) != nsv or any(len(r) != dim + 1 for r in body):
        raise DimensionMismatch(f"model body does not match nsv={nsv}, dim={dim}")
    data = np.array([[float(v) for v in r] for r in body]).reshape(nsv, dim + 1)
    return OcsvmModel(
        support_vectors=data[:, 1:].copy(),
        coefficients=data[:, 0].copy(),
        rho=float(header["rho"]),
        kernel=KernelParams(float(header["gamma"])),
        nu=float(header["nu"]),
        training_size=0,
    )


def save_model(model: OcsvmModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path: str | Path) -> OcsvmModel:
    return loads_model(Path(path).read_text())


__all__ = [
    "NU_GRID_ALT", "NU_GRID_TABLES", "DecisionValue", "KernelParams", "OcsvmModel",
    "OcsvmParams", "decision_value", "default_gamma", "dumps_model", "initial_alpha",
    "kfold_far", "load_model", "loads_model", "predict", "rbf_kernel", "rbf_matrix",
    "kernel_expansion", "save_model", "solve_dual", "train",
]
