import numpy as np
import pytest

from unfolded_precoder import (PgdParams, SystemConfig, generate_channel, lagrangian,
                               metrics_report, oracle_solve, pgd_objective, pgd_step, solve_pgd,
                               zf_precoder)
from unfolded_precoder.errors import ConfigError
from unfolded_precoder.oracle import kkt_residual
from unfolded_precoder.pgd import largest_gram_eigenvalue

LAM = 1 / 15


@pytest.fixture(scope="module")
def solved(ref_cfg):
    H = generate_channel(ref_cfg, 31, n=50)
    return H, oracle_solve(H, ref_cfg, LAM)


def test_kkt_conditions(ref_cfg, solved):
    H, W = solved
    assert np.max(kkt_residual(W, H, ref_cfg, LAM)) < 1e-9


def test_fixed_point(ref_cfg, solved):
    H, W = solved
    eta = 1 / largest_gram_eigenvalue(H)
    step = pgd_step(W, H, ref_cfg, LAM, eta)
    assert np.max(np.linalg.norm(step - W, axis=(-2, -1))) < 1e-6
    step = pgd_step(W, H, ref_cfg, LAM, 1 / ref_cfg.mp_bound)
    assert np.max(np.linalg.norm(step - W, axis=(-2, -1))) < 1e-6


def test_beats_long_pgd(ref_cfg, solved):
    H, W = solved
    Wp, _ = solve_pgd(H, ref_cfg, PgdParams(lam=LAM, eta="exact", max_iters=5000, trace_every=0))
    assert np.all(lagrangian(W, H, ref_cfg, LAM) <= lagrangian(Wp, H, ref_cfg, LAM))
    assert np.all(pgd_objective(W, H, ref_cfg, LAM) <= pgd_objective(Wp, H, ref_cfg, LAM))


def test_more_iterations_do_not_move_it(ref_cfg, solved):
    H, W = solved
    before = lagrangian(W, H, ref_cfg, LAM)
    Wm, _ = solve_pgd(H, ref_cfg, PgdParams(lam=LAM, eta="exact", max_iters=2000, trace_every=0),
                      W0=W)
    after = lagrangian(Wm, H, ref_cfg, LAM)
    assert np.max(np.abs(after - before) / before) < 1e-8


def test_agrees_with_long_run_pgd():
    cfg = SystemConfig.from_db(M=16, K=4)
    H = generate_channel(cfg, 3, n=3)
    exact = oracle_solve(H, cfg, 0.2)
    slow = oracle_solve(H, cfg, 0.2, method="pgd")
    assert np.max(np.abs(pgd_objective(slow, H, cfg, 0.2) - pgd_objective(exact, H, cfg, 0.2))) < 1e-9
    assert np.max(np.abs(slow - exact)) < 1e-4


def test_agrees_with_conic_solver(ref_cfg):
    cp = pytest.importorskip("cvxpy")
    H = generate_channel(ref_cfg, 77, n=2)
    W = oracle_solve(H, ref_cfg, LAM)
    for h, w in zip(H, W):
        X = cp.Variable((8, 64), complex=True)
        cost = LAM * cp.sum(cp.norm(X, 2, axis=0)) + 0.5 * cp.sum_squares(h @ X.T - ref_cfg.target_matrix)
        prob = cp.Problem(cp.Minimize(cost))
        prob.solve(solver="CLARABEL")
        ours = pgd_objective(w, h, ref_cfg, LAM)
        assert ours <= prob.value + 1e-7
        assert abs(ours - prob.value) < 1e-6 * prob.value
        assert np.linalg.norm(X.value - w) < 1e-3


def test_population_pcg(ref_cfg):
    H = generate_channel(ref_cfg, 500, n=200)
    pcg = metrics_report(H, oracle_solve(H, ref_cfg, LAM), ref_cfg).pcg
    assert abs(np.mean(pcg) - 1.116) <= 0.05


def test_zero_lambda_and_validation(small_cfg, channels_small):
    assert np.allclose(oracle_solve(channels_small, small_cfg, 0.0), zf_precoder(channels_small, small_cfg))
    with pytest.raises(ConfigError):
        oracle_solve(channels_small, small_cfg, -1.0)
    with pytest.raises(ConfigError):
        oracle_solve(channels_small, small_cfg, 0.1, method="interior-point")


def test_threads_give_same_result(small_cfg, channels_small):
    a = oracle_solve(channels_small, small_cfg, 0.3)
    b = oracle_solve(channels_small, small_cfg, 0.3, workers=3)
    assert np.array_equal(a, b)


def test_large_lambda_gives_zero(small_cfg, channels_small):
    # beyond max_m ||(B H^*)_m|| the zero precoder is optimal
    lam = 1.01 * np.max(np.linalg.norm(small_cfg.target_matrix @ np.conj(channels_small), axis=-2))
    W = oracle_solve(channels_small, small_cfg, lam)
    assert np.max(np.abs(W)) < 1e-8
