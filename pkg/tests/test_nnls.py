import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from herbcd.nnls import (
    SOLVERS,
    ActiveSetError,
    InnerStop,
    NnlsProblem,
    active_set_solve,
    admm_solve,
    ahals_solve,
    hals_pass,
    nesterov_solve,
    pgd_solve,
    quadratic_objective,
)

FULL = InnerStop(max_iters=20000, rel_change_tol=1e-14)


def random_problem(rng, m, r, ridge=0.1):
    R = rng.standard_normal((3 * r + 2, r))
    G = R.T @ R + ridge * np.eye(r)
    C = rng.standard_normal((m, r)) * 2.0
    return NnlsProblem(G, C, rng.random((m, r)))


def exhaustive_nnls(G, C):
    """Best nonnegative stationary point over every support, row by row."""
    r = G.shape[0]
    out = np.zeros_like(C)
    for row, c in enumerate(C):
        best, best_val = np.zeros(r), 0.0
        for k in range(1, r + 1):
            for S in itertools.combinations(range(r), k):
                S = list(S)
                x = np.zeros(r)
                x[S] = np.linalg.solve(G[np.ix_(S, S)], c[S])
                if (x < 0).any():
                    continue
                val = 0.5 * x @ G @ x - c @ x
                if val < best_val:
                    best, best_val = x, val
        out[row] = best
    return out


def kkt_residual(G, C, W):
    grad = W @ G - C
    return max(np.abs(np.minimum(W, 0)).max(), np.abs(np.minimum(grad, 0)).max(),
               np.abs(W * grad).max())


# ---------------------------------------------------------------- types


def test_problem_validation():
    with pytest.raises(ValueError):
        NnlsProblem(np.ones((2, 3)), np.ones((1, 3)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        NnlsProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        NnlsProblem(np.eye(2), np.ones((1, 2)), -np.ones((1, 2)))
    with pytest.raises(ValueError):
        NnlsProblem(np.eye(2), np.ones((1, 3)), np.ones((1, 3)))


def test_inner_stop_validation():
    with pytest.raises(ValueError):
        InnerStop(max_iters=0)
    with pytest.raises(ValueError):
        InnerStop(rel_change_tol=0.0)


# ---------------------------------------------------------------- hals


def test_hals_identity_gram():
    C = np.array([[1.0, -2.0], [-0.5, 3.0]])
    p = NnlsProblem(np.eye(2), C, np.zeros((2, 2)))
    np.testing.assert_array_equal(hals_pass(p, p.init), np.maximum(C, 0))


def test_hals_nonpositive_target_stays_zero():
    rng = np.random.default_rng(0)
    R = rng.random((4, 3))
    p = NnlsProblem(R.T @ R, -rng.random((5, 3)), np.zeros((5, 3)))
    assert not hals_pass(p, p.init).any()


def test_hals_column_formula():
    G = np.array([[2.0, 0.5], [0.5, 1.0]])
    C = np.array([[1.0, 2.0], [3.0, -1.0]])
    W = np.array([[0.2, 0.4], [0.1, 0.3]])
    w0 = np.maximum(0.0, (C[:, 0] - W[:, 1] * G[1, 0]) / G[0, 0])
    w1 = np.maximum(0.0, (C[:, 1] - w0 * G[0, 1]) / G[1, 1])
    out = hals_pass(NnlsProblem(G, C, W), W)
    np.testing.assert_allclose(out, np.column_stack([w0, w1]), rtol=1e-14)


def test_hals_skips_degenerate_column():
    G = np.diag([1.0, 0.0])
    C = np.array([[1.0, 1.0]])
    W = np.array([[0.0, 0.7]])
    out = hals_pass(NnlsProblem(G, C, W), W)
    np.testing.assert_array_equal(out, [[1.0, 0.7]])


def test_ahals_optimal_init_unchanged():
    G = np.array([[2.0, 0.0], [0.0, 2.0]])
    C = np.array([[4.0, -2.0]])
    W0 = np.array([[2.0, 0.0]])
    np.testing.assert_array_equal(ahals_solve(NnlsProblem(G, C, W0), InnerStop(2)), W0)


def test_ahals_identity_one_pass():
    C = np.array([[1.0, -1.0, 0.5]])
    p = NnlsProblem(np.eye(3), C, np.ones((1, 3)))
    np.testing.assert_array_equal(ahals_solve(p, InnerStop(1)), np.maximum(C, 0))


def test_ahals_monotone_per_pass():
    rng = np.random.default_rng(1)
    p = random_problem(rng, 6, 4)
    W = p.init
    prev = quadratic_objective(p, W)
    for _ in range(20):
        W = hals_pass(p, W)
        cur = quadratic_objective(p, W)
        assert cur <= prev + 1e-12 * abs(prev)
        prev = cur


# ---------------------------------------------------------------- nesterov / pgd / admm


def test_nesterov_identity_first_step():
    c = np.array([[1.5, -0.5]])
    p = NnlsProblem(np.eye(2), c, np.zeros((1, 2)))
    np.testing.assert_allclose(nesterov_solve(p, InnerStop(1)), np.maximum(c, 0))


def test_nesterov_scalar_boundary():
    p = NnlsProblem(np.array([[2.0]]), np.array([[-1.0]]), np.array([[0.3]]))
    assert nesterov_solve(p, FULL)[0, 0] == 0.0


def test_pgd_identity_one_step():
    c = np.array([[2.0, -3.0, 0.0]])
    p = NnlsProblem(np.eye(3), c, np.ones((1, 3)))
    np.testing.assert_array_equal(pgd_solve(p, InnerStop(1)), np.maximum(c, 0))


def test_pgd_fixed_point_unchanged():
    G = np.array([[2.0, 0.0], [0.0, 2.0]])
    C = np.array([[4.0, -2.0]])
    W0 = np.array([[2.0, 0.0]])
    np.testing.assert_allclose(pgd_solve(NnlsProblem(G, C, W0), InnerStop(5)), W0)


def test_admm_identity_converges():
    c = np.array([[1.0, -1.0], [0.25, 3.0]])
    p = NnlsProblem(np.eye(2), c, np.zeros((2, 2)))
    np.testing.assert_allclose(admm_solve(p, FULL), np.maximum(c, 0), atol=1e-8)


def test_admm_zero_target():
    rng = np.random.default_rng(2)
    p = random_problem(rng, 4, 3)
    p = NnlsProblem(p.gram, np.zeros((4, 3)), p.init)
    np.testing.assert_allclose(admm_solve(p, FULL), 0.0, atol=1e-10)


@pytest.mark.parametrize("name", ["admm", "nesterov"])
def test_non_monotone_solvers_never_worse_than_init(name):
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_problem(rng, 5, 3, ridge=1e-3)
        W = SOLVERS[name](p, InnerStop(2))
        assert quadratic_objective(p, W) <= quadratic_objective(p, p.init)


# ---------------------------------------------------------------- active set


def test_active_set_unconstrained_interior():
    rng = np.random.default_rng(4)
    R = rng.random((6, 3))
    G = R.T @ R + np.eye(3)
    X = rng.random((4, 3)) + 0.1
    W = active_set_solve(NnlsProblem(G, X @ G, np.zeros((4, 3))))
    np.testing.assert_allclose(W, X, rtol=1e-10)


def test_active_set_decoupled():
    W = active_set_solve(NnlsProblem(np.diag([2.0, 2.0]), np.array([[4.0, -2.0]]), np.zeros((1, 2))))
    np.testing.assert_array_equal(W, [[2.0, 0.0]])


def test_active_set_matches_exhaustive():
    rng = np.random.default_rng(5)
    p = random_problem(rng, 6, 4)
    np.testing.assert_allclose(active_set_solve(p), exhaustive_nnls(p.gram, p.target), atol=1e-10)


def test_active_set_rejects_singular_gram():
    G = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ActiveSetError):
        active_set_solve(NnlsProblem(G, np.ones((1, 2)), np.zeros((1, 2))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_active_set_kkt_property(r, m, seed):
    p = random_problem(np.random.default_rng(seed), m, r)
    W = active_set_solve(p)
    scale = max(np.abs(p.target).max(), np.abs(p.gram).max(), 1.0)
    assert kkt_residual(p.gram, p.target, W) <= 1e-9 * scale
    np.testing.assert_allclose(W, exhaustive_nnls(p.gram, p.target), atol=1e-9)


# ---------------------------------------------------------------- cross-solver


@pytest.mark.parametrize("name", ["ahals", "admm", "nesterov", "pgd"])
def test_iterative_solvers_agree_with_active_set(name):
    rng = np.random.default_rng(6)
    for _ in range(5):
        p = random_problem(rng, 5, 3)
        W = SOLVERS[name](p, FULL)
        assert np.linalg.norm(W - active_set_solve(p)) <= 1e-6


@pytest.mark.parametrize("name", sorted(SOLVERS))
def test_solvers_return_nonnegative(name):
    rng = np.random.default_rng(7)
    p = random_problem(rng, 8, 4)
    assert (SOLVERS[name](p, InnerStop(3)) >= 0).all()
