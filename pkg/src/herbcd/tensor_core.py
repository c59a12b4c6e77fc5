"""
Dense multilinear kernels for nonnegative CP factorization.

Tensors are plain :class:`numpy.ndarray` objects stored in C order, i.e. the
*last* index varies fastest in the flat buffer. Factor matrices have shape
``(I_i, r)``.

Mode-``i`` unfoldings follow the convention

    T_[i] = A^(i) @ khatri_rao(A^(N), ..., A^(i+1), A^(i-1), ..., A^(1)).T

so that in the columns of ``T_[i]`` the lowest remaining mode varies fastest.
Every MTTKRP in this package is consistent with that convention.
"""
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "KruskalModel",
    "GramCache",
    "DenseProvider",
    "as_provider",
    "kronecker",
    "khatri_rao",
    "unfold",
    "fold",
    "mttkrp",
    "gram",
    "hadamard_grams",
    "reconstruct",
    "objective",
    "fast_objective",
    "block_gradient",
    "lipschitz_constant",
]


@dataclass
class KruskalModel:
    """Ordered list of ``N`` factor matrices sharing a column count ``r``."""

    factors: list

    def __post_init__(self):
        factors = [np.array(A, dtype=float, copy=True) for A in self.factors]
        if not factors:
            raise ValueError("a Kruskal model needs at least one factor")
        for A in factors:
            if A.ndim != 2:
                raise ValueError("factor matrices must be 2-D")
        r = factors[0].shape[1]
        if any(A.shape[1] != r for A in factors):
            raise ValueError("all factors must share the same number of columns")
        self.factors = factors

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple:
        return tuple(A.shape[0] for A in self.factors)

    def copy(self) -> "KruskalModel":
        return KruskalModel([A.copy() for A in self.factors])

    def full(self) -> np.ndarray:
        return reconstruct(self)

    def __len__(self):
        return len(self.factors)

    def __getitem__(self, i):
        return self.factors[i]

    def __iter__(self):
        return iter(self.factors)


def _factor_list(model) -> list:
    if isinstance(model, KruskalModel):
        return model.factors
    return list(model)


def kronecker(A, B) -> np.ndarray:
    """Kronecker product; block ``(p, q)`` of the result is ``A[p, q] * B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return np.kron(A, B)


def khatri_rao(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """
    Column-wise Kronecker product of ``matrices`` in the given order.

    Column ``j`` of the result is ``kron(M1[:, j], M2[:, j], ...)``, so the
    row index of the last matrix varies fastest.
    """
    mats = [np.asarray(M, dtype=float) for M in matrices]
    if not mats:
        raise ValueError("khatri_rao expects at least one matrix")
    r = mats[0].shape[1]
    if any(M.shape[1] != r for M in mats):
        raise ValueError("khatri_rao: all matrices must have the same column count")
    out = mats[0]
    for M in mats[1:]:
        out = (out[:, None, :] * M[None, :, :]).reshape(-1, r)
    return out


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (0-based), lowest remaining mode fastest."""
    t = np.asarray(t)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for order-{len(shape)} tensor")
    m = np.asarray(m)
    rest = int(np.prod(shape)) // shape[mode]
    if m.shape != (shape[mode], rest):
        raise ValueError(f"cannot fold matrix of shape {m.shape} into {shape} along mode {mode}")
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.ascontiguousarray(np.moveaxis(m.reshape(moved, order="F"), 0, mode))


def mttkrp(t: np.ndarray, model, mode: int) -> np.ndarray:
    """
    Matricized tensor times Khatri-Rao product for one mode.

    Equal to ``unfold(t, mode) @ khatri_rao(A^(N), ..., A^(1))`` with mode
    ``mode`` skipped, computed without forming the unfolding: the modes after
    ``mode`` are contracted with one GEMM, the modes before with a weighted sum.
    """
    factors = _factor_list(model)
    t = np.asarray(t, dtype=float)
    N = t.ndim
    if len(factors) != N:
        raise ValueError(f"model has {len(factors)} factors, tensor has order {N}")
    if not 0 <= mode < N:
        raise ValueError(f"mode {mode} out of range for order-{N} tensor")
    for i, A in enumerate(factors):
        if A.shape[0] != t.shape[i]:
            raise ValueError(f"factor {i} has {A.shape[0]} rows, tensor dimension is {t.shape[i]}")
    r = factors[0].shape[1]
    In = t.shape[mode]
    left = int(np.prod(t.shape[:mode]))
    if N == 1:
        return np.repeat(t.reshape(In, 1), r, axis=1)
    if mode < N - 1:
        right_kr = khatri_rao(factors[mode + 1:])
        partial = t.reshape(left * In, -1) @ right_kr
        if mode == 0:
            return partial
        left_kr = khatri_rao(factors[:mode])
        return np.einsum("lir,lr->ir", partial.reshape(left, In, r), left_kr)
    left_kr = khatri_rao(factors[:mode])
    return t.reshape(left, In).T @ left_kr


def gram(A: np.ndarray) -> np.ndarray:
    return A.T @ A


@dataclass
class GramCache:
    """
    Per-block Gram matrices plus the data norm.

    ``last_mttkrp`` holds ``(mode, C)`` for the most recent MTTKRP so that the
    objective can be evaluated after a block update at no extra tensor cost.
    """

    grams: list
    tensor_norm_sq: float
    last_mttkrp: tuple = field(default=None)

    @classmethod
    def from_factors(cls, factors, tensor_norm_sq: float) -> "GramCache":
        return cls([gram(A) for A in _factor_list(factors)], float(tensor_norm_sq))

    def update(self, mode: int, A: np.ndarray) -> None:
        self.grams[mode] = gram(A)

    def refresh(self, factors) -> None:
        self.grams = [gram(A) for A in _factor_list(factors)]

    def hadamard(self, skip: int) -> np.ndarray:
        return hadamard_grams(self, skip)


def hadamard_grams(cache: GramCache, skip: int) -> np.ndarray:
    """Elementwise product of all cached Gram matrices except ``skip``; equals ``B.T @ B``."""
    r = cache.grams[0].shape[0]
    out = np.ones((r, r))
    for l, G in enumerate(cache.grams):
        if l != skip:
            out = out * G
    return out


def reconstruct(model) -> np.ndarray:
    """Full tensor ``sum_p a_p^(1) o ... o a_p^(N)``."""
    factors = _factor_list(model)
    shape = tuple(A.shape[0] for A in factors)
    if len(factors) == 1:
        return factors[0].sum(axis=1)
    return (factors[0] @ khatri_rao(factors[1:]).T).reshape(shape)


def fast_objective(norm_sq: float, A: np.ndarray, C: np.ndarray, G: np.ndarray) -> float:
    """``0.5*||T||^2 - <A, C> + 0.5*<A.T A, G>`` for a pivot block ``A``."""
    return 0.5 * norm_sq - float(np.vdot(A, C)) + 0.5 * float(np.vdot(A.T @ A, G))


def objective(t: np.ndarray, model, cache: GramCache, pivot: int | None = None) -> float:
    """
    Least-squares fit ``0.5*||t - [[A^(1),...,A^(N)]]||_F^2`` without reconstruction.

    ``cache`` must hold the current Gram matrices of ``model``.
    """
    factors = _factor_list(model)
    i = len(factors) - 1 if pivot is None else pivot
    C = mttkrp(t, factors, i)
    return fast_objective(cache.tensor_norm_sq, factors[i], C, hadamard_grams(cache, i))


def lipschitz_constant(G: np.ndarray) -> float:
    """Spectral norm of a symmetric PSD matrix (largest eigenvalue)."""
    if G.size == 0:
        return 0.0
    return max(float(np.linalg.eigvalsh(G)[-1]), 0.0)


def block_gradient(t: np.ndarray, model, mode: int, cache: GramCache):
    """Return ``(grad, L)``: the block gradient and its Lipschitz constant."""
    factors = _factor_list(model)
    G = hadamard_grams(cache, mode)
    grad = factors[mode] @ G - mttkrp(t, factors, mode)
    return grad, lipschitz_constant(G)


class DenseProvider:
    """Objective provider backed by an in-memory dense tensor."""

    def __init__(self, tensor):
        self.tensor = np.ascontiguousarray(tensor, dtype=float)
        self.norm_sq = float(np.vdot(self.tensor, self.tensor))

    @property
    def shape(self) -> tuple:
        return self.tensor.shape

    def mttkrp(self, factors, mode: int) -> np.ndarray:
        return mttkrp(self.tensor, factors, mode)

    def full(self) -> np.ndarray:
        return self.tensor


def as_provider(data):
    """Wrap ``data`` (ndarray, Tucker format, or provider) as an objective provider."""
    if hasattr(data, "mttkrp") and hasattr(data, "norm_sq"):
        return data
    if hasattr(data, "as_provider"):
        return data.as_provider()
    return DenseProvider(data)
