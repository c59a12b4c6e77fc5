import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from herbcd.ao import AoConfig, ao_run
from herbcd.baselines import (
    BaselineOptions,
    BroState,
    apg_run,
    bro_omega,
    extrapolated_ao_run,
    extrapolation_weight,
    gr_omega_block,
    ibpg_run,
    ls_omega_block,
    momentum_step,
)
from herbcd.datagen import SyntheticSpec, generate, random_init
from herbcd.nnls import InnerStop
from herbcd.tensor_core import GramCache, KruskalModel, hadamard_grams, mttkrp, reconstruct


def F(t, factors):
    return 0.5 * float(np.sum((t - reconstruct(KruskalModel(factors))) ** 2))


def noisy(seed, shape=(6, 5, 4), r=3, sigma=0.05):
    t, truth = generate(SyntheticSpec(shape, r, noise_sigma=sigma, seed=seed))
    return t, truth, random_init(shape, r, seed=seed)


# ---------------------------------------------------------------- weights


def test_bro_omega_examples():
    assert bro_omega(1, BroState(h=3), False) == 0.0
    assert bro_omega(8, BroState(h=3), False) == pytest.approx(1.0)


def test_bro_omega_suppressed():
    s = BroState(h=3)
    assert all(bro_omega(k, s, False, suppress=4) == 0.0 for k in range(1, 5))
    assert bro_omega(5, s, False, suppress=4) > 0.0


def test_bro_h_trajectory_matches_rule():
    script = [False, True, False, False, True, True, False, True, False, False]
    s = BroState(h=3)
    h, streak, hs = 3, 0, []
    for k, inc in enumerate(script, start=1):
        if inc:
            h, streak = h + 1, 0
        else:
            streak += 1
        w = bro_omega(k, s, inc, suppress=0)
        assert (s.h, s.no_increase_streak) == (h, streak)
        assert w == pytest.approx(k ** (1.0 / h) - 1.0)
        hs.append(s.h)
    assert hs == [3, 4, 4, 4, 5, 6, 6, 7, 7, 7]


def test_bro_rejects_k_zero():
    with pytest.raises(ValueError):
        bro_omega(0, BroState(), False)


def test_gr_omega_examples():
    g = np.ones((3, 2))
    assert gr_omega_block(g, 2 * g / 2) == pytest.approx(1.0)
    assert gr_omega_block(np.zeros((3, 2)), g) == 0.0
    assert gr_omega_block(g, np.zeros((3, 2))) == 0.0
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    assert gr_omega_block(a, b) == pytest.approx(np.sqrt(np.sum(a**2) / np.sum(b**2)), rel=1e-14)


def _ls_setup(seed):
    rng = np.random.default_rng(seed)
    t = rng.random((4, 3, 5))
    fs = [rng.random((I, 2)) for I in t.shape]
    cache = GramCache.from_factors(fs, float(np.sum(t**2)))
    return rng, t, fs, cache


def test_ls_omega_zero_direction():
    _, t, fs, cache = _ls_setup(1)
    assert ls_omega_block(t, fs, 1, fs[1], fs[1].copy(), cache) == 0.0


def test_ls_omega_at_line_minimizer():
    rng, t, fs, cache = _ls_setup(2)
    G = hadamard_grams(cache, 0)
    C = mttkrp(t, fs, 0)
    A_star = np.linalg.solve(G, C.T).T  # unconstrained block minimizer
    D = rng.standard_normal(A_star.shape)
    w = ls_omega_block(t, [A_star] + fs[1:], 0, A_star, A_star - D, cache)
    assert abs(w) <= 1e-8


def test_ls_omega_matches_golden_section():
    for seed in range(5):
        rng, t, fs, cache = _ls_setup(10 + seed)
        mode = seed % 3
        A_new = fs[mode]
        A_prev = A_new + 0.3 * rng.standard_normal(A_new.shape)
        w = ls_omega_block(t, fs, mode, A_new, A_prev, cache)

        def along(x):
            trial = list(fs)
            trial[mode] = A_new + x * (A_new - A_prev)
            return F(t, trial)

        ref = minimize_scalar(along, bracket=(-50.0, 0.0, 50.0), method="golden", tol=1e-12).x
        assert w == pytest.approx(ref, abs=1e-6)


def test_momentum_step_golden_ratio():
    assert momentum_step(1.0) == pytest.approx((1 + np.sqrt(5)) / 2, abs=1e-10)


def test_extrapolation_weight_formula():
    assert extrapolation_weight(0.5, 0.99, 2.0, 2.0) == 0.5
    assert extrapolation_weight(0.999, 0.99, 2.0, 2.0) == 0.99
    assert extrapolation_weight(0.9, 0.99, None, 2.0) == 0.9
    assert extrapolation_weight(0.9, 0.99, 1.0, 4.0) == pytest.approx(0.495)


# ---------------------------------------------------------------- extrapolated AO


def test_bro_suppressed_equals_ao():
    t, _, init = noisy(3)
    cfg = AoConfig(max_outer_iters=4)
    _, ao = ao_run(t, init, cfg)
    _, bro = extrapolated_ao_run(t, init, cfg, "bro", "modified", BaselineOptions(bro_suppress=4))
    np.testing.assert_allclose(bro.f, ao.f, rtol=1e-14)


def test_gr_stationary_init_equals_ao():
    # small integers keep every product exact, so the gradients vanish exactly
    rng = np.random.default_rng(4)
    truth = KruskalModel([rng.integers(1, 4, size=(I, 2)).astype(float) for I in (5, 4, 3)])
    t = reconstruct(truth)
    cfg = AoConfig(max_outer_iters=5)
    _, ao = ao_run(t, truth, cfg)
    for form in ("original", "modified"):
        _, gr = extrapolated_ao_run(t, truth, cfg, "gr", form)
        np.testing.assert_array_equal(gr.f, ao.f)
        assert all(r.beta == 0.0 for r in gr)


def test_zero_scale_equals_ao():
    t, _, init = noisy(5)
    cfg = AoConfig(max_outer_iters=10)
    _, ao = ao_run(t, init, cfg)
    for scheme, form in [("bro", "original"), ("gr", "modified"), ("ls", "modified")]:
        _, tr = extrapolated_ao_run(t, init, cfg, scheme, form, BaselineOptions(omega_scale=0.0))
        np.testing.assert_allclose(tr.f, ao.f, rtol=1e-12)


def test_ls_original_rejected():
    t, _, init = noisy(6)
    with pytest.raises(ValueError):
        extrapolated_ao_run(t, init, AoConfig(), "ls", "original")
    with pytest.raises(ValueError):
        extrapolated_ao_run(t, init, AoConfig(), "xx", "modified")


@pytest.mark.parametrize("scheme,form", [("bro", "original"), ("bro", "modified"), ("gr", "original"),
                                         ("gr", "modified"), ("ls", "modified")])
def test_schemes_trace_is_true_objective(scheme, form):
    t, _, init = noisy(7, shape=(8, 7, 6))
    model, trace = extrapolated_ao_run(t, init, AoConfig(max_outer_iters=40), scheme, form)
    assert np.isfinite(trace.f).all()
    assert trace.f[-1] == pytest.approx(F(t, model.factors), rel=1e-8)
    assert trace.f[-1] < trace.f0


def test_original_form_never_increases():
    t, _, init = noisy(8, shape=(8, 7, 6))
    for scheme in ("bro", "gr"):
        _, trace = extrapolated_ao_run(t, init, AoConfig(max_outer_iters=40), scheme, "original")
        f = np.concatenate([[trace.f0], trace.f])
        assert np.all(np.diff(f) <= 1e-12 * trace.f0)


def test_gr_stays_finite_on_cube():
    t, _ = generate(SyntheticSpec((20, 20, 20), 6, seed=2))
    init = random_init(t.shape, 6, seed=2)
    _, trace = extrapolated_ao_run(t, init, AoConfig(max_outer_iters=80), "gr", "modified")
    assert np.isfinite(trace.f).all()


# ---------------------------------------------------------------- APG / iBPG


def test_apg_first_iteration_is_plain_pg():
    t, _, init = noisy(9)
    model, trace = apg_run(t, init, AoConfig(max_outer_iters=1))
    fs = [A.copy() for A in init.factors]
    for i in range(3):
        G = hadamard_grams(GramCache.from_factors(fs, 0.0), i)
        L = np.linalg.eigvalsh(G).max()
        fs[i] = np.maximum(fs[i] - (fs[i] @ G - mttkrp(t, fs, i)) / L, 0.0)
    for A, B in zip(model.factors, fs):
        np.testing.assert_allclose(A, B, rtol=1e-12)
    assert trace.f[0] <= trace.f0


def test_apg_monotone():
    t, _, init = noisy(10, shape=(8, 7, 6))
    _, trace = apg_run(t, init, AoConfig(max_outer_iters=100))
    f = np.concatenate([[trace.f0], trace.f])
    assert np.all(np.diff(f) <= 1e-12 * trace.f0)


def test_ibpg_zero_weight_is_projected_gradient():
    t, _, init = noisy(11)
    stop = InnerStop(max_iters=3, rel_change_tol=1e-12)
    model, _ = ibpg_run(t, init, AoConfig(max_outer_iters=1, inner_stop=stop), delta_w=0.0)
    fs = [A.copy() for A in init.factors]
    for i in range(3):
        G = hadamard_grams(GramCache.from_factors(fs, 0.0), i)
        C = mttkrp(t, fs, i)
        L = np.linalg.eigvalsh(G).max()
        for _ in range(3):
            fs[i] = np.maximum(fs[i] - (fs[i] @ G - C) / L, 0.0)
    for A, B in zip(model.factors, fs):
        np.testing.assert_allclose(A, B, rtol=1e-12)


def test_ibpg_decreases_tenfold():
    t, _ = generate(SyntheticSpec((20, 20, 20), 4, seed=12))
    init = random_init(t.shape, 4, seed=12)
    _, trace = ibpg_run(t, init, AoConfig(max_outer_iters=200))
    assert trace.f[-1] <= trace.f0 / 10
