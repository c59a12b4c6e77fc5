"""Alternating optimization (block coordinate descent) driver and run traces."""
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .metrics import factor_error
from .nnls import SOLVERS, InnerStop, NnlsProblem
from .tensor_core import GramCache, KruskalModel, as_provider, fast_objective

__all__ = ["AoConfig", "TraceRecord", "RunTrace", "RunRecorder", "ao_run", "initial_state"]


@dataclass(frozen=True)
class AoConfig:
    solver: str = "ahals"
    inner_stop: InnerStop = InnerStop()
    max_outer_iters: Optional[int] = 100
    max_time: Optional[float] = None
    record_factor_error: bool = False

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {sorted(SOLVERS)}")
        has_iters = self.max_outer_iters is not None and self.max_outer_iters >= 1
        has_time = self.max_time is not None and self.max_time > 0
        if not (has_iters or has_time):
            raise ValueError("set max_outer_iters >= 1 or max_time > 0")


class TraceRecord(NamedTuple):
    k: int
    t: float
    f: float
    e: Optional[float] = None
    restarted: Optional[bool] = None
    beta: Optional[float] = None


@dataclass
class RunTrace:
    """Per-outer-iteration history; ``f0`` is the objective at the initial point."""

    records: list = field(default_factory=list)
    f0: Optional[float] = None
    e0: Optional[float] = None

    def append(self, rec: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if rec.k <= last.k:
                raise ValueError("iteration index must be strictly increasing")
            if rec.t < last.t:
                raise ValueError("time stamps must be non-decreasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def f(self) -> np.ndarray:
        return self.column("f")

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def restarts(self) -> int:
        return sum(1 for r in self.records if r.restarted)


class RunRecorder:
    """Clock, budget and trace bookkeeping shared by all drivers.

    Time spent computing the factor error is excluded from the time stamps.
    """

    def __init__(self, cfg: AoConfig, truth=None):
        self.cfg = cfg
        self.truth = truth
        self.trace = RunTrace()
        self._excluded = 0.0
        self._start = time.perf_counter()

    def _factor_error(self, factors):
        if not (self.cfg.record_factor_error and self.truth is not None):
            return None
        tic = time.perf_counter()
        e = factor_error(factors, self.truth)
        self._excluded += time.perf_counter() - tic
        return e

    def start(self, f0: float, factors) -> None:
        self.trace.f0 = float(f0)
        self.trace.e0 = self._factor_error(factors)
        self._excluded = 0.0
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._start - self._excluded

    def record(self, k: int, f: float, factors, restarted=None, beta=None) -> bool:
        """Append one record; return ``True`` while budget remains."""
        t = self.elapsed()
        e = self._factor_error(factors)
        self.trace.append(TraceRecord(k, t, float(f), e, restarted, beta))
        if self.cfg.max_outer_iters is not None and k >= self.cfg.max_outer_iters:
            return False
        if self.cfg.max_time is not None and self.cfg.max_time > 0 and t >= self.cfg.max_time:
            return False
        return True


def initial_state(data, init):
    """Validate ``init`` against ``data``; return ``(provider, factors, cache)``."""
    provider = as_provider(data)
    model = init if isinstance(init, KruskalModel) else KruskalModel(list(init))
    if tuple(model.shape) != tuple(provider.shape):
        raise ValueError(f"model shape {model.shape} does not match data shape {provider.shape}")
    factors = [A.copy() for A in model.factors]
    if any((A < 0).any() for A in factors):
        raise ValueError("initial factors must be entrywise nonnegative")
    cache = GramCache.from_factors(factors, provider.norm_sq)
    return provider, factors, cache


def current_objective(provider, factors, cache) -> float:
    """Objective at ``factors`` using one MTTKRP on the last mode."""
    n = len(factors) - 1
    C = provider.mttkrp(factors, n)
    cache.last_mttkrp = (n, C)
    return fast_objective(cache.tensor_norm_sq, factors[n], C, cache.hadamard(n))


def ao_run(data, init, cfg: AoConfig = AoConfig(), truth=None):
    """
    Alternating optimization: solve each block's NNLS in turn, warm-started
    from its current value, and record the objective once per sweep.

    ``data`` is a dense ndarray, a Tucker format, or an objective provider.
    Returns ``(KruskalModel, RunTrace)``.
    """
    provider, factors, cache = initial_state(data, init)
    solve = SOLVERS[cfg.solver]
    N = len(factors)
    rec = RunRecorder(cfg, truth)
    rec.start(current_objective(provider, factors, cache), factors)
    k = 0
    running = True
    while running:
        k += 1
        for i in range(N):
            G = cache.hadamard(i)
            C = provider.mttkrp(factors, i)
            factors[i] = solve(NnlsProblem(G, C, factors[i]), cfg.inner_stop)
            cache.update(i, factors[i])
        cache.last_mttkrp = (N - 1, C)
        f = fast_objective(cache.tensor_norm_sq, factors[-1], C, G)
        running = rec.record(k, f, factors)
    return KruskalModel(factors), rec.trace
