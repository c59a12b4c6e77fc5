"""
Competing accelerators for block coordinate descent.

* Bro / GR / LS extrapolation *after* block updates, either with one global
  weight applied to all blocks after a sweep (``form="original"``) or with a
  block-specific weight applied right after each block update
  (``form="modified"``). Extrapolated points are not projected.
* APG and iBPG: block proximal gradient with extrapolation *inside* the
  projected-gradient step.
"""
from dataclasses import dataclass

import numpy as np

from .ao import AoConfig, RunRecorder, current_objective, initial_state
from .nnls import SOLVERS, InnerStop, NnlsProblem
from .tensor_core import KruskalModel, as_provider, fast_objective, lipschitz_constant

__all__ = [
    "BroState",
    "MomentumState",
    "BaselineOptions",
    "SCHEMES",
    "FORMS",
    "bro_omega",
    "gr_omega_block",
    "ls_omega_block",
    "momentum_step",
    "extrapolation_weight",
    "extrapolated_ao_run",
    "apg_run",
    "ibpg_run",
]

SCHEMES = ("bro", "gr", "ls")
FORMS = ("original", "modified")


@dataclass
class BroState:
    h: int = 3
    no_increase_streak: int = 0
    omega: float = 0.0


@dataclass
class MomentumState:
    t: float = 1.0
    delta_w: float = 0.99
    inertia_multiplier: float = 1.01


@dataclass(frozen=True)
class BaselineOptions:
    """
    ``bro_suppress``: number of leading outer iterations without extrapolation
    in Bro's scheme. ``omega_scale`` multiplies every extrapolation weight
    (``0`` disables extrapolation entirely).
    """

    bro_suppress: int = 4
    omega_scale: float = 1.0


def _finite(w: float) -> float:
    return w if np.isfinite(w) else 0.0


def bro_omega(k: int, state: BroState, error_increased: bool, suppress: int = 4) -> float:
    """
    Bro's weight ``k**(1/h) - 1`` for iteration ``k``.

    ``h`` grows by one whenever the error increased on the previous iteration
    and is otherwise unchanged; the weight is zero for ``k <= suppress``.
    """
    if k < 1:
        raise ValueError("iteration index starts at 1")
    if error_increased:
        state.h += 1
        state.no_increase_streak = 0
    else:
        state.no_increase_streak += 1
    state.omega = 0.0 if k <= suppress else k ** (1.0 / state.h) - 1.0
    return state.omega


def gr_omega_block(grad_now: np.ndarray, grad_prev) -> float:
    """Ratio of Frobenius norms; zero when the previous gradient vanishes."""
    prev = grad_prev if np.isscalar(grad_prev) else np.linalg.norm(grad_prev)
    if prev == 0:
        return 0.0
    now = grad_now if np.isscalar(grad_now) else np.linalg.norm(grad_now)
    return float(now / prev)


def _ls_omega(G, C, A_new, D) -> float:
    a = 0.5 * float(np.vdot(D.T @ D, G))
    if a <= 1e-14 * np.linalg.norm(G):
        return 0.0
    b = float(np.vdot(D, A_new @ G - C))
    return -b / (2.0 * a)


def ls_omega_block(data, model, mode: int, A_new: np.ndarray, A_prev: np.ndarray, cache) -> float:
    """
    Exact minimizer of the objective along ``A_new + w (A_new - A_prev)``
    with the other blocks of ``model`` fixed.
    """
    factors = list(getattr(model, "factors", model))
    C = as_provider(data).mttkrp(factors, mode)
    return _ls_omega(cache.hadamard(mode), C, A_new, A_new - A_prev)


def extrapolated_ao_run(data, init, cfg: AoConfig = AoConfig(), scheme: str = "bro",
                        form: str = "modified", options: BaselineOptions = BaselineOptions(),
                        truth=None):
    """
    AO with Bro / GR / LS extrapolation.

    If the objective at the extrapolated point exceeds the reference value,
    the point is abandoned and the un-extrapolated blocks are kept. The
    reference is the sweep's un-extrapolated objective in the original form
    and the previous iterate's objective in the modified form.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    if scheme == "ls" and form == "original":
        raise ValueError("line search is only available in the modified (block-wise) form")
    provider, A, cache = initial_state(data, init)
    solve = SOLVERS[cfg.solver]
    N = len(A)
    bro = BroState()
    grad_prev = [0.0] * N
    grad_prev_global = 0.0
    rec = RunRecorder(cfg, truth)
    f_prev = current_objective(provider, A, cache)
    rec.start(f_prev, A)
    omega_bro = bro_omega(1, bro, False, options.bro_suppress)
    k = 0
    running = True
    while running:
        k += 1
        A_start = [a.copy() for a in A]
        A_half = [None] * N
        omegas = []
        grad_sq = 0.0
        for i in range(N):
            G = cache.hadamard(i)
            C = provider.mttkrp(A, i)
            # extrapolated blocks may be infeasible; warm-start from their projection
            A_half[i] = solve(NnlsProblem(G, C, np.maximum(A[i], 0.0)), cfg.inner_stop)
            if scheme == "gr":
                gnorm = float(np.linalg.norm(A_half[i] @ G - C))
                grad_sq += gnorm**2
            if form == "modified":
                if scheme == "bro":
                    w = omega_bro
                elif scheme == "gr":
                    w = gr_omega_block(gnorm, grad_prev[i])
                    grad_prev[i] = gnorm
                else:
                    w = _ls_omega(G, C, A_half[i], A_half[i] - A_start[i])
                w = _finite(w) * options.omega_scale
                omegas.append(w)
                A[i] = A_half[i] + w * (A_half[i] - A_start[i]) if w != 0 else A_half[i].copy()
            else:
                A[i] = A_half[i].copy()
            cache.update(i, A[i])
        f_sweep = fast_objective(cache.tensor_norm_sq, A[N - 1], C, G)
        increased = False
        if form == "modified":
            f = f_sweep
            if any(w != 0 for w in omegas) and not f_sweep <= f_prev:
                increased = True
                A = [a.copy() for a in A_half]
                cache.refresh(A)
                f = current_objective(provider, A, cache)
        else:
            if scheme == "bro":
                w = omega_bro
            else:
                gnorm = np.sqrt(grad_sq)
                w = gr_omega_block(gnorm, grad_prev_global)
                grad_prev_global = gnorm
            w = _finite(w) * options.omega_scale
            omegas.append(w)
            f = f_sweep
            if w != 0:
                X = [a + w * (a - s) for a, s in zip(A, A_start)]
                cache.refresh(X)
                f_ext = current_objective(provider, X, cache)
                if not f_ext <= f_sweep:
                    increased = True
                    cache.refresh(A)
                else:
                    A, f = X, f_ext
        if scheme == "bro":
            omega_bro = bro_omega(k + 1, bro, increased, options.bro_suppress)
        elif increased:
            # a restart clears the gradient history: the next sweep is plain AO
            grad_prev = [0.0] * N
            grad_prev_global = 0.0
        f_prev = f
        running = rec.record(k, f, A, restarted=increased, beta=float(np.mean(omegas)))
    return KruskalModel(A), rec.trace


def momentum_step(t: float) -> float:
    """``t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2``."""
    return 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))


def extrapolation_weight(w_hat: float, delta_w: float, L_older, L_now: float) -> float:
    """``min(w_hat, delta_w * sqrt(L_{k-2} / L_{k-1}))``; ratio taken as 1 when unknown."""
    if L_older is None or L_now <= 0:
        return min(w_hat, delta_w)
    return min(w_hat, delta_w * np.sqrt(L_older / L_now))


def _pg_step(base, point, G, C, L):
    return np.maximum(base - (point @ G - C) / L, 0.0)


def apg_run(data, init, cfg: AoConfig = AoConfig(), delta_w: float = 0.99, truth=None,
            init_prev=None):
    """
    Alternating proximal gradient with extrapolation and sweep-level restart.

    Each block takes one projected-gradient step from its extrapolated point.
    If the sweep increased the objective, it is redone from the previous
    iterate without extrapolation.
    """
    provider, A, cache = initial_state(data, init)
    N = len(A)
    A_prev = [a.copy() for a in A] if init_prev is None else [np.array(a, dtype=float) for a in init_prev]
    mom = MomentumState(delta_w=delta_w)
    L_hist = [None] * N
    rec = RunRecorder(cfg, truth)
    f_prev = current_objective(provider, A, cache)
    rec.start(f_prev, A)
    k = 0
    running = True
    while running:
        k += 1
        t_new = momentum_step(mom.t)
        w_hat = (mom.t - 1.0) / t_new
        mom.t = t_new
        A_old = [a.copy() for a in A]
        L_now = [None] * N

        def sweep(extrapolate: bool):
            for i in range(N):
                G = cache.hadamard(i)
                C = provider.mttkrp(A, i)
                L = lipschitz_constant(G)
                L_now[i] = L
                if L <= 0:
                    continue
                if extrapolate:
                    w = extrapolation_weight(w_hat, mom.delta_w, L_hist[i], L)
                    point = A_old[i] + w * (A_old[i] - A_prev[i])
                else:
                    point = A_old[i]
                A[i] = _pg_step(point, point, G, C, L)
                cache.update(i, A[i])
            return fast_objective(cache.tensor_norm_sq, A[N - 1], C, G)

        f = sweep(True)
        restarted = f > f_prev
        if restarted:
            for i in range(N):
                A[i] = A_old[i].copy()
            cache.refresh(A)
            f = sweep(False)
        L_hist = L_now
        A_prev = A_old
        f_prev = f
        running = rec.record(k, f, A, restarted=restarted, beta=w_hat)
    return KruskalModel(A), rec.trace


def ibpg_run(data, init, cfg: AoConfig = AoConfig(), delta_w: float = 0.99,
             inertia: float = 1.01, truth=None, init_prev=None):
    """
    Inertial block proximal gradient.

    Per block, repeated projected-gradient steps whose gradient is taken at
    one extrapolation point (weight ``w``) and whose base is a second, more
    inertial point (weight ``inertia * w``). The inner repeat follows
    ``cfg.inner_stop``; there is no restart.
    """
    provider, A, cache = initial_state(data, init)
    N = len(A)
    A_prev = [a.copy() for a in A] if init_prev is None else [np.array(a, dtype=float) for a in init_prev]
    mom = MomentumState(delta_w=delta_w, inertia_multiplier=inertia)
    stop: InnerStop = cfg.inner_stop
    L_hist = [None] * N
    rec = RunRecorder(cfg, truth)
    rec.start(current_objective(provider, A, cache), A)
    k = 0
    running = True
    while running:
        k += 1
        t_new = momentum_step(mom.t)
        w_hat = (mom.t - 1.0) / t_new
        mom.t = t_new
        for i in range(N):
            G = cache.hadamard(i)
            C = provider.mttkrp(A, i)
            L = lipschitz_constant(G)
            if L <= 0:
                continue
            w = extrapolation_weight(w_hat, mom.delta_w, L_hist[i], L)
            L_hist[i] = L
            cur, prev = A[i], A_prev[i]
            first = None
            for _ in range(stop.max_iters):
                d = cur - prev
                grad_point = cur + w * d
                base = cur + mom.inertia_multiplier * w * d
                prev = cur
                cur = _pg_step(base, grad_point, G, C, L)
                change = np.linalg.norm(cur - prev)
                if first is None:
                    first = change
                    if change == 0.0:
                        break
                elif change <= stop.rel_change_tol * first:
                    break
            A[i], A_prev[i] = cur, prev
            cache.update(i, A[i])
        f = fast_objective(cache.tensor_norm_sq, A[N - 1], C, G)
        running = rec.record(k, f, A, beta=w_hat)
    return KruskalModel(A), rec.trace
