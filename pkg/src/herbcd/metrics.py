"""Data-fit and factor-fit error measures, plus curve post-processing."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "PermutationAssignment",
    "normalize_columns",
    "hungarian",
    "factor_error",
    "interpolate_curve",
    "median_curve",
]


@dataclass(frozen=True)
class PermutationAssignment:
    """``mapping[j]`` is the column assigned to row ``j`` of the cost matrix."""

    mapping: tuple
    cost: float


def normalize_columns(A: np.ndarray) -> np.ndarray:
    """Scale every nonzero column to unit Euclidean norm; zero columns stay zero."""
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return A / safe


def hungarian(cost) -> PermutationAssignment:
    """Minimum-cost perfect matching on a square cost matrix."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    mapping = tuple(int(c) for c in cols[np.argsort(rows)])
    return PermutationAssignment(mapping, float(cost[rows, cols].sum()))


def _factors(model):
    return list(getattr(model, "factors", model))


def factor_error(est, truth) -> float:
    """
    Mean over modes of ``||n(A_true) - n(A_est) P||_F / ||n(A_true)||_F``.

    ``n`` normalizes columns and ``P`` is one permutation for all modes, chosen
    by a Hungarian matching on squared column distances summed over modes.
    """
    est, truth = _factors(est), _factors(truth)
    if len(est) != len(truth):
        raise ValueError("models have different orders")
    r = truth[0].shape[1]
    if any(A.shape[1] != r for A in est):
        raise ValueError("models have different ranks")
    n_est = [normalize_columns(A) for A in est]
    n_true = [normalize_columns(A) for A in truth]
    cost = np.zeros((r, r))
    for At, Ae in zip(n_true, n_est):
        # cost[p, q]: distance from true column p to estimated column q
        cost += (At * At).sum(0)[:, None] + (Ae * Ae).sum(0)[None, :] - 2.0 * At.T @ Ae
    perm = np.array(hungarian(cost).mapping)
    total = 0.0
    for At, Ae in zip(n_true, n_est):
        denom = np.linalg.norm(At)
        num = np.linalg.norm(At - Ae[:, perm])
        total += num / denom if denom > 0 else num
    return total / len(truth)


def interpolate_curve(trace, grid) -> np.ndarray:
    """
    Piecewise-linear interpolation of ``f`` over time onto ``grid``.

    ``trace`` is a :class:`~herbcd.ao.RunTrace` or a ``(times, values)`` pair.
    """
    if hasattr(trace, "records"):
        times, values = trace.t, trace.f
    else:
        times, values = trace
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0:
        raise ValueError("cannot interpolate an empty trace")
    if np.any(np.diff(times) < 0):
        raise ValueError("time stamps must be non-decreasing")
    return np.interp(np.asarray(grid, dtype=float), times, values)


def median_curve(curves) -> np.ndarray:
    """Pointwise median of equal-length curves (mean of the middle pair if even)."""
    curves = [np.asarray(c, dtype=float) for c in curves]
    if not curves:
        raise ValueError("median of no curves")
    if len({c.shape for c in curves}) != 1:
        raise ValueError("curves must have equal lengths")
    return np.median(np.vstack(curves), axis=0)
