"""
Matrix nonnegative least squares on normal-equation data.

Every solver here minimizes

    q(W) = 0.5 * <W.T @ W, G> - <W, C>    subject to  W >= 0

where ``G = B.T @ B`` is an ``r x r`` Gram matrix and ``C = T_[i] @ B`` is the
MTTKRP result, so the tensor never enters the inner loop. Rows of ``W`` are
independent problems in ``r`` variables.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .tensor_core import lipschitz_constant

__all__ = [
    "NnlsProblem",
    "InnerStop",
    "DegenerateProblemError",
    "ActiveSetError",
    "quadratic_objective",
    "hals_pass",
    "ahals_solve",
    "nesterov_solve",
    "pgd_solve",
    "admm_solve",
    "active_set_solve",
    "SOLVERS",
]

HALS_DEGENERATE_EPS = 1e-12


class DegenerateProblemError(ValueError):
    """The Gram matrix is zero, so no gradient step size exists."""


class ActiveSetError(RuntimeError):
    """Raised when the active-set method cannot run or does not terminate."""


@dataclass
class NnlsProblem:
    gram: np.ndarray
    target: np.ndarray
    init: np.ndarray

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        self.init = np.asarray(self.init, dtype=float)
        r = self.gram.shape[0]
        if self.gram.shape != (r, r):
            raise ValueError("gram must be square")
        if self.target.ndim != 2 or self.target.shape[1] != r:
            raise ValueError(f"target must have {r} columns")
        if self.init.shape != self.target.shape:
            raise ValueError("init and target shapes differ")
        scale = max(np.abs(self.gram).max(initial=0.0), 1.0)
        if np.abs(self.gram - self.gram.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("gram must be symmetric")
        if (self.init < 0).any():
            raise ValueError("init must be entrywise nonnegative")


@dataclass(frozen=True)
class InnerStop:
    """
    Inner stopping rule: at most ``max_iters`` iterations, or stop once
    ``||W_s - W_{s-1}||_F <= rel_change_tol * ||W_1 - W_0||_F``.
    """

    max_iters: int = 50
    rel_change_tol: float = 1e-2

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_change_tol <= 0:
            raise ValueError("rel_change_tol must be positive")


class _ChangeMonitor:
    def __init__(self, stop: InnerStop):
        self.stop = stop
        self.first = None

    def done(self, W_new, W_old) -> bool:
        change = np.linalg.norm(W_new - W_old)
        if self.first is None:
            self.first = change
            return change == 0.0
        return change <= self.stop.rel_change_tol * self.first


def quadratic_objective(p: NnlsProblem, W: np.ndarray) -> float:
    return 0.5 * float(np.vdot(W.T @ W, p.gram)) - float(np.vdot(W, p.target))


def _no_worse_than_init(p: NnlsProblem, W: np.ndarray) -> np.ndarray:
    # non-monotone methods may end above the warm start
    if quadratic_objective(p, W) > quadratic_objective(p, p.init):
        return p.init.copy()
    return W


def hals_pass(p: NnlsProblem, W: np.ndarray) -> np.ndarray:
    """One cyclic pass of closed-form column updates; returns a new matrix."""
    G, C = p.gram, p.target
    W = np.array(W, dtype=float, copy=True)
    diag = np.diag(G)
    floor = HALS_DEGENERATE_EPS * max(diag.max(initial=0.0), 0.0)
    for j in range(G.shape[0]):
        if diag[j] <= floor or diag[j] <= 0.0:
            continue
        col = W[:, j] + (C[:, j] - W @ G[:, j]) / diag[j]
        W[:, j] = np.maximum(col, 0.0)
    return W


def ahals_solve(p: NnlsProblem, stop: InnerStop = InnerStop()) -> np.ndarray:
    W = p.init.copy()
    monitor = _ChangeMonitor(stop)
    for _ in range(stop.max_iters):
        W_new = hals_pass(p, W)
        converged = monitor.done(W_new, W)
        W = W_new
        if converged:
            break
    return W


def _step_size(G):
    L = lipschitz_constant(G)
    if L <= 0.0:
        raise DegenerateProblemError("zero Gram matrix: projected gradient step undefined")
    return L


def nesterov_solve(p: NnlsProblem, stop: InnerStop = InnerStop()) -> np.ndarray:
    """Accelerated projected gradient with the classical momentum sequence."""
    G, C = p.gram, p.target
    L = _step_size(G)
    W = p.init.copy()
    Y = W
    t = 1.0
    monitor = _ChangeMonitor(stop)
    for _ in range(stop.max_iters):
        W_new = np.maximum(Y - (Y @ G - C) / L, 0.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        Y = W_new + ((t - 1.0) / t_new) * (W_new - W)
        t = t_new
        converged = monitor.done(W_new, W)
        W = W_new
        if converged:
            break
    return _no_worse_than_init(p, W)


def pgd_solve(p: NnlsProblem, stop: InnerStop = InnerStop()) -> np.ndarray:
    """Projected gradient with fixed step ``1/L``; monotone."""
    G, C = p.gram, p.target
    L = _step_size(G)
    W = p.init.copy()
    monitor = _ChangeMonitor(stop)
    for _ in range(stop.max_iters):
        W_new = np.maximum(W - (W @ G - C) / L, 0.0)
        converged = monitor.done(W_new, W)
        W = W_new
        if converged:
            break
    return W


def admm_solve(p: NnlsProblem, stop: InnerStop = InnerStop()) -> np.ndarray:
    """
    ADMM on the split ``X = Z`` with ``Z >= 0`` and a scaled dual ``U``.

    The penalty is ``rho = trace(G) / r``; ``G + rho*I`` is Cholesky-factored
    once per call. The projected variable ``Z`` is returned.
    """
    G, C = p.gram, p.target
    r = G.shape[0]
    rho = float(np.trace(G)) / r
    if rho <= 0.0:
        rho = 1.0
    factor = scipy.linalg.cho_factor(G + rho * np.eye(r))
    Z = p.init.copy()
    U = np.zeros_like(Z)
    monitor = _ChangeMonitor(stop)
    for _ in range(stop.max_iters):
        # rows of X solve (G + rho I) x = c + rho (z - u); G is symmetric
        X = scipy.linalg.cho_solve(factor, (C + rho * (Z - U)).T).T
        Z_new = np.maximum(X + U, 0.0)
        U = U + X - Z_new
        converged = monitor.done(Z_new, Z)
        Z = Z_new
        if converged:
            break
    return _no_worse_than_init(p, Z)


def _nnls_row(G, c, tol, max_outer):
    """Lawson-Hanson active set for min 0.5 x'Gx - c'x, x >= 0."""
    r = G.shape[0]
    x = np.zeros(r)
    passive = np.zeros(r, dtype=bool)
    w = c - G @ x
    outer = 0
    while True:
        if passive.all() or not (w[~passive] > tol).any():
            return x
        outer += 1
        if outer > max_outer:
            raise ActiveSetError(f"active set exceeded {max_outer} outer iterations")
        cand = np.where(~passive, w, -np.inf)
        passive[int(np.argmax(cand))] = True
        while True:
            s = np.zeros(r)
            idx = np.flatnonzero(passive)
            s[idx] = np.linalg.solve(G[np.ix_(idx, idx)], c[idx])
            if (s[idx] > tol).all():
                break
            mask = passive & (s <= tol)
            denom = x[mask] - s[mask]
            ratios = np.where(denom > 0, x[mask] / np.where(denom > 0, denom, 1.0), 0.0)
            alpha = min(float(ratios.min()), 1.0)
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                s = np.zeros(r)
                break
        x = s
        w = c - G @ x


def active_set_solve(p: NnlsProblem) -> np.ndarray:
    """
    Exact NNLS solution, row by row, with a Lawson-Hanson active-set method.

    Requires a positive definite Gram matrix; ``init`` is ignored.
    """
    G, C = p.gram, p.target
    r = G.shape[0]
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ActiveSetError("Gram matrix is not positive definite") from exc
    scale = max(np.abs(G).max(), np.abs(C).max(initial=0.0), 1.0)
    tol = 1e-14 * scale
    W = np.empty_like(C)
    for row in range(C.shape[0]):
        W[row] = _nnls_row(G, C[row], tol, 3 * r)
    return W


SOLVERS = {
    "ahals": ahals_solve,
    "admm": admm_solve,
    "nesterov": nesterov_solve,
    "pgd": pgd_solve,
    "active_set": lambda p, stop=None: active_set_solve(p),
}
