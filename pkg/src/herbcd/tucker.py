"""
Tucker-format compression and the compressed objective provider.

A tensor ``t ~ G x_1 U_1 ... x_N U_N`` with orthonormal ``U_p`` lets every
MTTKRP be computed on the small core: ``U_i @ mttkrp(G, [U_p^T A_p], i)``.
Since ``||t||`` equals ``||G||`` for orthonormal bases, the solvers never need
the full tensor.
"""
from dataclasses import dataclass

import numpy as np

from .tensor_core import GramCache, fast_objective, hadamard_grams, mttkrp, unfold

__all__ = [
    "TuckerFormat",
    "TuckerProvider",
    "hosvd_compress",
    "expand",
    "compressed_gradient",
    "compressed_objective",
]


def _mode_product(t: np.ndarray, M: np.ndarray, mode: int) -> np.ndarray:
    """``t x_mode M``: contract axis ``mode`` of ``t`` with the columns of ``M``."""
    out = np.tensordot(M, t, axes=(1, mode))
    return np.moveaxis(out, 0, mode)


@dataclass
class TuckerFormat:
    """Core tensor with one orthonormal basis per mode."""

    core: np.ndarray
    bases: list

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=float)
        self.bases = [np.asarray(U, dtype=float) for U in self.bases]
        if self.core.ndim != len(self.bases):
            raise ValueError("need one basis per core mode")
        for p, U in enumerate(self.bases):
            if U.ndim != 2 or U.shape[1] != self.core.shape[p]:
                raise ValueError(f"basis {p} has shape {U.shape}, core mode size {self.core.shape[p]}")
            if U.shape[1] > U.shape[0]:
                raise ValueError(f"basis {p} has more columns than rows")
            if not np.allclose(U.T @ U, np.eye(U.shape[1]), rtol=0.0, atol=1e-10):
                raise ValueError(f"basis {p} is not orthonormal")

    @property
    def shape(self) -> tuple:
        return tuple(U.shape[0] for U in self.bases)

    @property
    def ranks(self) -> tuple:
        return self.core.shape

    def as_provider(self) -> "TuckerProvider":
        return TuckerProvider(self)

    def full(self) -> np.ndarray:
        return expand(self)


def hosvd_compress(t: np.ndarray, ranks) -> TuckerFormat:
    """
    Truncated higher-order SVD.

    ``U_p`` holds the leading ``ranks[p]`` left singular vectors of the
    mode-``p`` unfolding and the core is ``t`` contracted with every ``U_p^T``.
    """
    t = np.asarray(t, dtype=float)
    ranks = [int(r) for r in ranks]
    if len(ranks) != t.ndim:
        raise ValueError(f"need {t.ndim} ranks, got {len(ranks)}")
    for p, (r, I) in enumerate(zip(ranks, t.shape)):
        if not 1 <= r <= I:
            raise ValueError(f"rank {r} for mode {p} must lie in [1, {I}]")
    bases = []
    for p, r in enumerate(ranks):
        U, _, _ = np.linalg.svd(unfold(t, p), full_matrices=False)
        bases.append(U[:, :r])
    core = t
    for p, U in enumerate(bases):
        core = _mode_product(core, U.T, p)
    return TuckerFormat(core, bases)


def expand(fmt: TuckerFormat) -> np.ndarray:
    """Materialize the full tensor."""
    t = fmt.core
    for p, U in enumerate(fmt.bases):
        t = _mode_product(t, U, p)
    return t


class TuckerProvider:
    """Objective provider backed by a Tucker format."""

    def __init__(self, fmt: TuckerFormat):
        self.fmt = fmt
        self.norm_sq = float(np.vdot(fmt.core, fmt.core))

    @property
    def shape(self) -> tuple:
        return self.fmt.shape

    def mttkrp(self, factors, mode: int) -> np.ndarray:
        projected = [U.T @ A for U, A in zip(self.fmt.bases, factors)]
        return self.fmt.bases[mode] @ mttkrp(self.fmt.core, projected, mode)

    def full(self) -> np.ndarray:
        return expand(self.fmt)


def _factors(model):
    return list(getattr(model, "factors", model))


def compressed_gradient(fmt: TuckerFormat, model, mode: int, cache: GramCache) -> np.ndarray:
    """``A_i (*_{p != i} A_p^T A_p) - U_i G_[i] (KR_{p != i} U_p^T A_p)``."""
    factors = _factors(model)
    C = TuckerProvider(fmt).mttkrp(factors, mode)
    return factors[mode] @ hadamard_grams(cache, mode) - C


def compressed_objective(fmt: TuckerFormat, model, cache: GramCache) -> float:
    """Objective against the expanded tensor, from compressed quantities only."""
    factors = _factors(model)
    provider = TuckerProvider(fmt)
    n = len(factors) - 1
    C = provider.mttkrp(factors, n)
    return fast_objective(provider.norm_sq, factors[n], C, hadamard_grams(cache, n))
