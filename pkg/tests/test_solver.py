"""Warm-basis alternating solver and baselines."""

import numpy as np
import pytest

from wbipm.errors import ValidationError
from wbipm.forward import DenseMatrixOperator
from wbipm.gk import undeflated
from wbipm.reg import MmConfig, Preconditioner, build_preconditioner
from wbipm.solver import (
    Decomposition,
    WarmBasis,
    _projection_solve,
    deflate,
    fhybr_solve,
    warmstart_solve,
    wbipm_solve,
)
from wbipm.warmbasis import synthetic_warm_basis


def random_problem(seed, m=40, n=30, noise=0.05, theta=30.0):
    rng = np.random.default_rng(seed)
    op = DenseMatrixOperator(rng.standard_normal((m, n)))
    x_star = rng.standard_normal(n)
    b = op.apply(x_star) + noise * rng.standard_normal(m)
    wb = WarmBasis.from_direction(op, synthetic_warm_basis(x_star, theta, seed + 17))
    return op, x_star, b, wb


# ---------------------------------------------------------------------------
# deflate

def test_deflate_identity_example():
    op = DenseMatrixOperator(np.eye(3))
    wb = WarmBasis.from_direction(op, np.array([1.0, 0.0, 0.0]))
    b = np.array([1.0, 2.0, 3.0])
    ds = deflate(op, b, wb)
    assert np.allclose(wb.y, [1.0, 0.0, 0.0])
    assert wb.gamma == 1.0
    assert np.allclose(ds.b_tilde, [0.0, 2.0, 3.0])
    atil = np.column_stack([ds.apply_tilde(e) for e in np.eye(3)])
    assert np.allclose(atil, np.diag([0.0, 1.0, 1.0]))


def test_deflate_split_identity():
    rng = np.random.default_rng(9)
    op = DenseMatrixOperator(rng.standard_normal((10, 8)))
    x_star = rng.standard_normal(8)
    b = rng.standard_normal(10)
    wb = WarmBasis.from_direction(op, synthetic_warm_basis(x_star, 25.0, 1))
    ds = deflate(op, b, wb)
    for _ in range(20):
        c = rng.standard_normal()
        z = rng.standard_normal(8)
        z -= wb.x_nn_hat * (wb.x_nn_hat @ z)
        x = c * wb.x_nn_hat + z
        lhs = np.linalg.norm(op.apply(x) - b) ** 2
        rhs = np.linalg.norm(ds.apply_tilde(z) - ds.b_tilde) ** 2 \
            + (wb.gamma * c + wb.y @ op.apply(z) - wb.y @ b) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_warm_basis_in_kernel_errors():
    a = np.zeros((4, 3))
    a[:, 1:] = np.random.default_rng(0).standard_normal((4, 2))
    op = DenseMatrixOperator(a)
    with pytest.raises(ValidationError, match="kernel"):
        WarmBasis.from_direction(op, np.array([1.0, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# wbipm_solve

def test_perfect_warm_basis_noiseless():
    rng = np.random.default_rng(3)
    op = DenseMatrixOperator(rng.standard_normal((20, 12)))
    x_star = rng.standard_normal(12)
    b = op.apply(x_star)
    wb = WarmBasis.from_direction(op, x_star / np.linalg.norm(x_star))
    cfg = MmConfig(alpha_rule="fixed", alpha_value=0.0)
    res = wbipm_solve(op, b, wb, cfg, ground_truth=x_star)
    assert len(res.history) == 1
    assert res.stop_reason == "explained"
    assert res.c == pytest.approx(np.linalg.norm(x_star), rel=1e-10)
    assert np.linalg.norm(res.z) <= 1e-8 * np.linalg.norm(x_star)
    assert res.final_rel_error <= 1e-8


def test_zero_measurement_returns_zero():
    op, x_star, _, wb = random_problem(1)
    res = wbipm_solve(op, np.zeros(op.shape[0]), wb, MmConfig())
    assert res.iterations == 0
    assert np.array_equal(res.x, np.zeros(op.shape[1]))
    assert res.c == 0.0


def test_solution_assembly_and_orthogonality():
    op, x_star, b, wb = random_problem(5)
    res = wbipm_solve(op, b, wb, MmConfig(max_outer=15), ground_truth=x_star)
    assert np.linalg.norm(res.x - (res.c * wb.x_nn_hat + res.z)) <= 1e-12
    assert abs(res.z @ wb.x_nn_hat) <= 1e-10


def test_full_dimension_matches_closed_form():
    from wbipm.analysis import closed_form_solution
    for seed in (0, 1, 2):
        op, x_star, b, wb = random_problem(seed, theta=90.0)
        n = op.shape[1]
        cfg = MmConfig(lambda_rule="fixed", lambda_value=0.1,
                       alpha_rule="fixed", alpha_value=0.1,
                       max_outer=n - 1, precond="identity", stagnation_tol=1e-300)
        res = wbipm_solve(op, b, wb, cfg)
        _, _, x_w = closed_form_solution(op, b, wb, 0.1, 0.1, Preconditioner.identity(n))
        assert np.linalg.norm(res.x - x_w) <= 1e-6 * np.linalg.norm(x_w)


def test_monotone_projected_residual_fixed_lambda():
    for seed in range(10):
        op, x_star, b, wb = random_problem(seed)
        cfg = MmConfig(lambda_rule="fixed", lambda_value=0.1, max_outer=25,
                       stagnation_tol=1e-300)
        res = wbipm_solve(op, b, wb, cfg)
        pres = np.array([h.res_projected for h in res.history])
        assert np.all(np.diff(pres) <= 1e-10 * np.abs(pres[:-1]) + 1e-14)


def test_histories_are_deterministic():
    op, x_star, b, wb = random_problem(11)
    cfg = MmConfig(max_outer=10)
    r1 = wbipm_solve(op, b, wb, cfg, ground_truth=x_star)
    r2 = wbipm_solve(op, b, wb, cfg, ground_truth=x_star)
    for h1, h2 in zip(r1.history, r2.history):
        assert (h1.k, h1.lam, h1.alpha, h1.res_projected, h1.res_full, h1.rel_error) \
            == (h2.k, h2.lam, h2.alpha, h2.res_projected, h2.res_full, h2.rel_error)


def test_ground_truth_length_validated():
    op, x_star, b, wb = random_problem(2)
    with pytest.raises(ValidationError):
        wbipm_solve(op, b, wb, MmConfig(), ground_truth=np.ones(3))


def test_snapshots_collected():
    op, x_star, b, wb = random_problem(4)
    res = wbipm_solve(op, b, wb, MmConfig(max_outer=12, stagnation_tol=1e-300),
                      snapshot_iters=(5, 10, 50))
    assert set(res.snapshots) == {5, 10}


# ---------------------------------------------------------------------------
# fhybr baseline

def test_fhybr_converges_to_least_squares():
    rng = np.random.default_rng(5)
    m, n = 40, 30
    a = rng.standard_normal((m, n))
    op = DenseMatrixOperator(a)
    b = rng.standard_normal(m)
    cfg = MmConfig(lambda_rule="fixed", lambda_value=0.0, max_outer=n,
                   precond="identity", stagnation_tol=1e-300)
    res = fhybr_solve(op, b, cfg)
    x_ls = np.linalg.lstsq(a, b, rcond=None)[0]
    assert np.linalg.norm(res.x - x_ls) <= 1e-8 * np.linalg.norm(x_ls)


def test_fhybr_deterministic_histories():
    op, x_star, b, _ = random_problem(8)
    cfg = MmConfig(max_outer=10)
    r1 = fhybr_solve(op, b, cfg, ground_truth=x_star)
    r2 = fhybr_solve(op, b, cfg, ground_truth=x_star)
    assert [h.res_full for h in r1.history] == [h.res_full for h in r2.history]
    assert r1.c == 0.0


def test_useless_warm_basis_not_catastrophic():
    # prior orthogonal to the truth: residual still within 2x of the baseline
    ratios = []
    for seed in range(10):
        op, x_star, b, _ = random_problem(seed + 50, theta=30.0)
        wb = WarmBasis.from_direction(op, synthetic_warm_basis(x_star, 90.0, seed))
        cfg = MmConfig(max_outer=29)
        rw = wbipm_solve(op, b, wb, cfg)
        rf = fhybr_solve(op, b, cfg)
        ratios.append(rw.final_res_full / rf.final_res_full)
    assert max(ratios) <= 2.0


# ---------------------------------------------------------------------------
# warmstart baseline

def test_warmstart_zero_prior_equals_fhybr_with_l0():
    op, x_star, b, _ = random_problem(13)
    cfg = MmConfig(max_outer=10, stagnation_tol=1e-300)
    rs = warmstart_solve(op, b, np.zeros(op.shape[1]), cfg, ground_truth=x_star)
    ds = undeflated(op, b)
    first = build_preconditioner(np.zeros(op.shape[1]), cfg.epsilon)
    ref = _projection_solve(op, b, ds, cfg, x_star, method="fhybr",
                            first_precond=first, snapshot_iters=())
    for h1, h2 in zip(rs.history, ref.history):
        assert h1.res_full == pytest.approx(h2.res_full, rel=1e-12)
        assert h1.rel_error == pytest.approx(h2.rel_error, rel=1e-12)


def test_warmstart_with_truth_beats_cold_start():
    # noiseless sparse targets, error at k = 10 (ensemble mean)
    gains = []
    for seed in range(10):
        rng = np.random.default_rng(300 + seed)
        op = DenseMatrixOperator(rng.standard_normal((40, 30)))
        x_star = rng.standard_normal(30) * (rng.random(30) < 0.2)
        if not np.any(x_star):
            x_star[0] = 1.0
        b = op.apply(x_star)
        cfg = MmConfig(lambda_rule="fixed", lambda_value=0.05, max_outer=10,
                       stagnation_tol=1e-300)
        rw = warmstart_solve(op, b, x_star, cfg, ground_truth=x_star)
        rf = fhybr_solve(op, b, cfg, ground_truth=x_star)
        gains.append(rf.final_rel_error - rw.final_rel_error)
    assert np.mean(gains) >= 0


def test_warmstart_length_validated():
    op, x_star, b, _ = random_problem(6)
    with pytest.raises(ValidationError):
        warmstart_solve(op, b, np.ones(5), MmConfig())


def test_decomposition_orthogonality():
    rng = np.random.default_rng(21)
    x_star = rng.standard_normal(12)
    x_hat = synthetic_warm_basis(x_star, 35.0, 3)
    dec = Decomposition.of(x_star, x_hat)
    assert abs(dec.z_star @ x_hat) <= 1e-12 * np.linalg.norm(x_star)
    assert np.allclose(dec.c_star * x_hat + dec.z_star, x_star)
