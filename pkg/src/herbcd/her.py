"""
Heuristic extrapolation with restarts (HER) for block coordinate descent.

Each block is solved against the *extrapolated* copies of the other blocks,
then itself extrapolated (with projection onto the nonnegative orthant). After
a full sweep the mixed-point objective ``F_hat`` decides whether the
extrapolated sequence is kept or abandoned, and the weight ``beta`` grows or
shrinks accordingly.
"""
from dataclasses import dataclass, field

import numpy as np

from .ao import AoConfig, RunRecorder, current_objective, initial_state
from .nnls import SOLVERS, NnlsProblem
from .tensor_core import GramCache, KruskalModel, as_provider, fast_objective

__all__ = [
    "HerParams",
    "HerState",
    "extrapolate_block",
    "update_betas",
    "f_hat",
    "restart_step",
    "her_run",
]


@dataclass(frozen=True)
class HerParams:
    """Extrapolation weight ``beta0`` and its growth/decay rates.

    Must satisfy ``1 < gamma_bar <= gamma <= eta`` and ``0 < beta0 < 1``.
    """

    beta0: float = 0.5
    gamma: float = 1.05
    gamma_bar: float = 1.01
    eta: float = 1.5

    def __post_init__(self):
        if not 0.0 < self.beta0 < 1.0:
            raise ValueError("beta0 must lie in (0, 1)")
        if not 1.0 < self.gamma_bar <= self.gamma <= self.eta:
            raise ValueError("need 1 < gamma_bar <= gamma <= eta")


@dataclass
class HerState:
    hat_factors: list
    beta: float
    beta_bar: float = 1.0
    f_hat_prev: float = np.inf
    prev_factors: list = field(default_factory=list)


def extrapolate_block(A_new: np.ndarray, A_old: np.ndarray, beta: float) -> np.ndarray:
    """``max(0, A_new + beta * (A_new - A_old))``."""
    return np.maximum(A_new + beta * (A_new - A_old), 0.0)


def update_betas(state: HerState, restarted: bool, params: HerParams):
    """
    Next ``(beta, beta_bar)``.

    On a restart the cap drops to the failed ``beta`` and ``beta`` decays by
    ``eta``. Otherwise both grow, with ``beta`` capped by the previous cap.
    """
    if restarted:
        return state.beta / params.eta, state.beta
    beta_bar = min(1.0, state.beta_bar * params.gamma_bar)
    beta = min(state.beta_bar, state.beta * params.gamma)
    return beta, beta_bar


def f_hat(data, hat_factors, A_last: np.ndarray, cache: GramCache) -> float:
    """
    Objective at ``(hat_1, ..., hat_{N-1}, A_last)``.

    Uses the last-mode MTTKRP stored in ``cache.last_mttkrp`` when present
    (it is produced by the last block update), so no tensor pass is needed.
    ``cache`` must hold the Gram matrices of the extrapolated blocks.
    """
    n = len(cache.grams) - 1
    if cache.last_mttkrp is not None and cache.last_mttkrp[0] == n:
        C = cache.last_mttkrp[1]
    else:
        factors = list(hat_factors)[:n] + [A_last]
        C = as_provider(data).mttkrp(factors, n)
        cache.last_mttkrp = (n, C)
    return fast_objective(cache.tensor_norm_sq, A_last, C, cache.hadamard(n))


def restart_step(state: HerState, factors: list, fh: float, params: HerParams,
                 cache: GramCache) -> bool:
    """
    Accept or reject the extrapolated sweep whose objective is ``fh``.

    On rejection every ``hat`` block is reset to ``factors`` (and ``cache``
    refreshed to match); on acceptance every block of ``factors`` takes its
    ``hat`` value. Updates ``beta``, ``beta_bar`` and ``f_hat_prev`` and
    returns whether a restart happened.
    """
    hat = state.hat_factors
    restarted = fh > state.f_hat_prev
    if restarted:
        for i in range(len(factors)):
            hat[i] = factors[i].copy()
        cache.refresh(hat)
    else:
        for i in range(len(factors)):
            factors[i] = hat[i].copy()
    state.beta, state.beta_bar = update_betas(state, restarted, params)
    state.f_hat_prev = fh
    return restarted


def her_run(data, init, cfg: AoConfig = AoConfig(), params: HerParams = HerParams(),
            truth=None, record_true_f: bool = False):
    """
    Run HER around the NNLS solver named in ``cfg``.

    The trace stores ``F_hat`` as ``f`` (or the true objective at the accepted
    iterate when ``record_true_f`` is set, at one extra MTTKRP per sweep),
    the restart flag and the updated ``beta``.
    """
    provider, A, cache = initial_state(data, init)
    solve = SOLVERS[cfg.solver]
    N = len(A)
    state = HerState(hat_factors=[a.copy() for a in A], beta=params.beta0)
    rec = RunRecorder(cfg, truth)
    state.f_hat_prev = current_objective(provider, A, cache)
    rec.start(state.f_hat_prev, A)
    hat = state.hat_factors
    k = 0
    running = True
    while running:
        k += 1
        state.prev_factors = [a.copy() for a in A]
        for i in range(N):
            G = cache.hadamard(i)
            C = provider.mttkrp(hat, i)
            A[i] = solve(NnlsProblem(G, C, A[i]), cfg.inner_stop)
            hat[i] = extrapolate_block(A[i], state.prev_factors[i], state.beta)
            cache.update(i, hat[i])
        cache.last_mttkrp = (N - 1, C)
        fh = f_hat(provider, hat, A[N - 1], cache)
        restarted = restart_step(state, A, fh, params, cache)
        f = current_objective(provider, A, cache) if record_true_f else fh
        running = rec.record(k, f, A, restarted=restarted, beta=state.beta)
    return KruskalModel(A), rec.trace
