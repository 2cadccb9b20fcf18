"""Baseline subtraction: the optimal per-slot solve and the online regressor.

The optimal baseline for decision slot t solves the normal equations
X b = y where X[tau, t] is the empirical second moment of the score terms
at slots t and tau and y collects the return-weighted cross moments.  The
solve is an analysis-scale tool; production training uses the online
least-squares regressor over cheap features instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BaselineSolve:
    X: np.ndarray
    y: np.ndarray
    b: np.ndarray
    degenerate: bool = False


def solve_normal_equations(X: np.ndarray, y: np.ndarray, ridge: float = 1e-6) -> BaselineSolve:
    """Tikhonov-regularized solve of X b = y; all-zero X is flagged and
    returns b = 0."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.any(X):
        return BaselineSolve(X=X, y=y, b=np.zeros_like(y), degenerate=True)
    b = np.linalg.solve(X + ridge * np.eye(len(X)), y)
    return BaselineSolve(X=X, y=y, b=b, degenerate=False)


def solve_optimal_baseline(returns: np.ndarray, slot_grads: np.ndarray,
                           ridge: float = 1e-6) -> BaselineSolve:
    """Optimal per-slot baseline for one coordinate group.

    returns: (N,) trace returns; slot_grads: (N, T, d) score-function
    gradients per trace and slot over the group's d coordinates.  The
    group shares one baseline value per slot, so the moments sum over the
    coordinate axis.
    """
    returns = np.asarray(returns, dtype=float)
    g = np.asarray(slot_grads, dtype=float)
    if g.ndim == 2:
        g = g[:, :, None]
    n = len(returns)
    if n == 0:
        raise ValueError("no traces")
    X = np.einsum("nti,nui->tu", g, g) / n
    total = g.sum(axis=1)                       # (N, d)
    y = np.einsum("n,nti,ni->t", returns, g, total) / n
    return solve_normal_equations(X, y, ridge)


def optimal_baselines_per_coordinate(returns: np.ndarray, grads: np.ndarray,
                                     ridge: float = 1e-6) -> np.ndarray:
    """Independent per-coordinate solves: grads (N, T, d) -> baselines (T, d)."""
    grads = np.asarray(grads, dtype=float)
    n, T, d = grads.shape
    out = np.empty((T, d))
    for i in range(d):
        out[:, i] = solve_optimal_baseline(returns, grads[:, :, i:i + 1], ridge).b
    return out


def estimator_moments(returns: np.ndarray, grads: np.ndarray,
                      baselines: np.ndarray | None = None):
    """Per-coordinate mean and variance of the estimator
    sum_t (R - b_{t,i}) g_{t,i} across traces."""
    grads = np.asarray(grads, dtype=float)
    r = np.asarray(returns, dtype=float)[:, None, None]
    b = 0.0 if baselines is None else np.asarray(baselines)[None, :, :]
    per_trace = ((r - b) * grads).sum(axis=1)   # (N, d)
    return per_trace.mean(axis=0), per_trace.var(axis=0)


@dataclass
class OnlineBaseline:
    """Running least squares of credited returns on decision features."""

    dim: int
    ridge: float = 1e-6
    A: np.ndarray = field(init=False)
    z: np.ndarray = field(init=False)
    count: int = field(init=False, default=0)

    def __post_init__(self):
        self.A = np.zeros((self.dim, self.dim))
        self.z = np.zeros(self.dim)
        self._w = np.zeros(self.dim)
        self._dirty = False

    def update(self, features: np.ndarray, target: float) -> None:
        self.A += np.outer(features, features)
        self.z += features * target
        self.count += 1
        self._dirty = True

    def weights(self) -> np.ndarray:
        if self._dirty:
            self._w = np.linalg.solve(self.A + self.ridge * np.eye(self.dim), self.z)
            self._dirty = False
        return self._w

    def predict(self, features: np.ndarray) -> float:
        if self.count == 0:
            return 0.0
        return float(features @ self.weights())


MODES = ("none", "constant-optimal", "online-regression")


class BaselineState:
    """Baseline used by the gradient estimator.

    Grouping is one value per (parameter set, decision slot): the constant
    table indexes (set, slot) pairs directly; the online regressor shares
    one weight vector over (set one-hot, slot, ego speed, distance to
    merge, bias) features.  Inputs never include the current action or
    anything later, so the subtraction leaves the estimator unbiased.
    """

    def __init__(self, mode: str, param_sets: tuple):
        if mode not in MODES:
            raise ValueError(f"baseline mode {mode!r} not one of {MODES}")
        self.mode = mode
        self.param_sets = tuple(param_sets)
        self._index = {name: k for k, name in enumerate(self.param_sets)}
        self.table: dict = {}
        self.online = OnlineBaseline(dim=len(self.param_sets) + 4)

    def set_index(self, param_set: str) -> int:
        return self._index[param_set]

    def features(self, param_set: str, slot: int, step_features) -> np.ndarray:
        phi = np.zeros(len(self.param_sets) + 4)
        phi[self._index[param_set]] = 1.0
        phi[-4] = slot / 100.0
        if step_features is not None:
            phi[-3] = step_features[0]
            phi[-2] = step_features[1]
        phi[-1] = 1.0
        return phi

    def observe_rows(self, rows: np.ndarray) -> None:
        """Apply compact (set index, slot, feat0, feat1, target) observation
        rows, e.g. shipped back from worker processes, in row order."""
        if self.mode != "online-regression":
            return
        for set_idx, slot, f0, f1, target in rows:
            phi = np.zeros(len(self.param_sets) + 4)
            phi[int(set_idx)] = 1.0
            phi[-4] = slot / 100.0
            phi[-3] = f0
            phi[-2] = f1
            phi[-1] = 1.0
            self.online.update(phi, float(target))

    def value(self, param_set: str, slot: int, step_features) -> float:
        if self.mode == "none":
            return 0.0
        if self.mode == "constant-optimal":
            return self.table.get((param_set, slot), 0.0)
        return self.online.predict(self.features(param_set, slot, step_features))

    def observe(self, param_set: str, slot: int, step_features, target: float) -> None:
        if self.mode == "online-regression":
            self.online.update(self.features(param_set, slot, step_features), target)

    def fit_constant_table(self, traces, params: dict, ridge: float = 1e-6) -> None:
        """Solve the optimal per-(set, slot) baselines from a batch of traces.

        The group moments stream one trace at a time: per trace and slot
        the set's score-function gradient vector is accumulated, then
        folded into the normal-equation moments, so nothing larger than
        one trace's (slots x coords) block is ever materialized.
        """
        from .. import net as _net

        for name in self.param_sets:
            slots = sorted({step.traversal.step for trace in traces
                            for step in trace.steps
                            if any(r.param_set == name for r in step.traversal.records)})
            if not slots:
                continue
            slot_of = {s: k for k, s in enumerate(slots)}
            d = params[name].n_params
            X = np.zeros((len(slots), len(slots)))
            y = np.zeros(len(slots))
            g_trace = np.empty((len(slots), d))
            for trace in traces:
                g_trace[:] = 0.0
                for step in trace.steps:
                    for rec in step.traversal.records:
                        if rec.param_set == name:
                            _net.logprob_grad_into(params[name], rec.tape, rec.choice_index,
                                                   1.0, g_trace[slot_of[step.traversal.step]])
                X += g_trace @ g_trace.T
                y += trace.total_return * (g_trace @ g_trace.sum(axis=0))
            n = len(traces)
            solve = solve_normal_equations(X / n, y / n, ridge)
            for s, k in slot_of.items():
                self.table[(name, s)] = float(solve.b[k])
