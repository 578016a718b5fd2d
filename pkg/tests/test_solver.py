import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steinpcg.kernels import DenseAction, KernelAction, SteinKernel, assemble_dense
from steinpcg.precond import BlockJacobi, IdentityPreconditioner, Nystrom, Spectral
from steinpcg.samples import SampleSet
from steinpcg.solver import DenseSolveError, SolveConfig, SolveTrace, cg, dense_solve, pcg, worst_case_error

from conftest import logistic_nodes


@pytest.fixture(scope="module")
def sys100():
    s = logistic_nodes(100, seed=11)
    kern = SteinKernel(0.2)
    K = assemble_dense(s, kern)
    return s, kern, K, dense_solve(s, kern)


def ground_truth(sol, **kw):
    return SolveConfig(criterion="ground-truth", reference_sigma=sol.sigma, **kw)


def knorm(K, e):
    return math.sqrt(max(float(e @ K @ e), 0.0))


def test_identity_operator_one_iteration():
    tr = cg(DenseAction(np.eye(7)))
    assert tr.iterations == 1 and tr.converged
    np.testing.assert_array_equal(tr.w, np.ones(7))


def test_exact_initial_guess_stops_at_zero(sys100):
    _, _, K, sol = sys100
    tr = cg(DenseAction(K), config=ground_truth(sol), w0=sol.w)
    assert tr.iterations == 0 and tr.converged


def test_cg_matches_dense_in_k_norm(sys100):
    _, _, K, sol = sys100
    tr = cg(DenseAction(K), config=SolveConfig(tau_res=1e-12))
    assert knorm(K, tr.w - sol.w) <= 1e-6 * knorm(K, sol.w)


def test_pcg_identity_reproduces_cg_bitwise(sys100):
    _, _, K, sol = sys100
    A = DenseAction(K)
    cfg = ground_truth(sol)
    a = cg(A, config=cfg)
    b = pcg(A, IdentityPreconditioner(100), config=cfg)
    assert a.iterations == b.iterations
    for f in ("w", "res_norm", "sigma", "alpha", "beta"):
        assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True)


def test_full_block_jacobi_one_iteration(sys100):
    _, _, K, sol = sys100
    A = DenseAction(K)
    tr = pcg(A, BlockJacobi(A, 100), config=ground_truth(sol))
    assert tr.iterations == 1


def test_one_action_per_iteration(sys100):
    _, _, K, sol = sys100
    A = DenseAction(K)
    calls = []

    def inv(v):
        calls.append(1)
        return v / np.diag(K)

    tr = pcg(A, inv, config=SolveConfig(criterion="fixed", max_iters=30, sigma_refresh=1000))
    # w_0 = 0 needs no action; one action per iteration, one M^{-1} at start and one per iteration
    assert A.n_calls == tr.iterations
    assert len(calls) == tr.iterations + 1


def test_rkhs_one_action_per_iteration(sys100):
    _, _, K, _ = sys100
    A = DenseAction(K)
    P = Spectral(A, n=20, r=5, seed=0)
    tr = pcg(A, P, config=SolveConfig(criterion="fixed", max_iters=25, sigma_refresh=1000), inner="rkhs")
    # plus K z_0 at start-up
    assert A.n_calls == tr.iterations + 1


def test_ground_truth_stop_is_first_crossing(sys100):
    _, _, K, sol = sys100
    A = DenseAction(K)
    cfg = ground_truth(sol, sigma_refresh=7)
    tr = cg(A, config=cfg)
    assert tr.converged
    assert worst_case_error(tr.w, A) < 1.01 * sol.sigma
    # a fully traced run with exact sigma agrees on the stopping index
    full = cg(A, config=SolveConfig(criterion="fixed", max_iters=tr.iterations, sigma_refresh=1))
    below = np.flatnonzero(full.sigma < 1.01 * sol.sigma)
    assert below.size and below[0] == tr.iterations


def test_recurrence_sigma_tracks_exact(sys100):
    _, _, K, _ = sys100
    A = DenseAction(K)
    fast = cg(A, config=SolveConfig(criterion="fixed", max_iters=60, sigma_refresh=50))
    exact = cg(A, config=SolveConfig(criterion="fixed", max_iters=60, sigma_refresh=1))
    np.testing.assert_allclose(fast.sigma[1:], exact.sigma[1:], rtol=1e-6)


def test_k_norm_error_monotone(sys100):
    _, _, K, sol = sys100
    A = DenseAction(K)
    errs = []
    for m in range(1, 60):
        tr = cg(A, config=SolveConfig(criterion="fixed", max_iters=m))
        errs.append(knorm(K, tr.w - sol.w))
    assert all(b <= a * (1 + 1e-8) for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("family", ["jacobi", "nystrom"])
def test_contraction_bound(family):
    s = logistic_nodes(80, seed=12)
    K = assemble_dense(s, SteinKernel(0.1))
    A = DenseAction(K)
    P = BlockJacobi(A, 1) if family == "jacobi" else Nystrom(A, n=20, eta=1.0, seed=0)
    M = np.column_stack([P(e) for e in np.eye(80)])
    ev = np.linalg.eigvals(M @ K).real
    kappa = ev.max() / ev.min()
    w_star = np.linalg.solve(K, np.ones(80))
    factor = math.sqrt(1 - 1 / kappa)
    prev = knorm(K, w_star)
    for m in range(1, 15):
        tr = pcg(A, P, config=SolveConfig(criterion="fixed", max_iters=m))
        cur = knorm(K, tr.w - w_star)
        assert cur <= factor * prev * (1 + 1e-8) + 1e-12
        prev = cur


def test_residual_criterion(sys100):
    _, _, K, _ = sys100
    tr = cg(DenseAction(K), config=SolveConfig(criterion="residual", tau_res=1e-6))
    assert tr.converged
    assert tr.res_norm[-1] <= 1e-6 * tr.res_norm[0]
    assert np.all(tr.res_norm[:-1] > 1e-6 * tr.res_norm[0])


def test_max_iters_reported(sys100):
    _, _, K, sol = sys100
    tr = cg(DenseAction(K), config=ground_truth(sol, max_iters=3))
    assert tr.iterations == 3 and tr.reason == "max_iters" and not tr.converged


def test_breakdown_on_indefinite():
    K = np.diag([1.0, -1.0])
    tr = cg(DenseAction(K), rhs=np.array([1.0, 1.0]))
    assert tr.reason == "breakdown"


def test_preconditioner_failure():
    def bad(v):
        return np.full_like(v, np.nan)

    tr = pcg(DenseAction(np.eye(3)), bad)
    assert tr.reason == "preconditioner failure"


def test_sigma_undefined_sentinel():
    # an iterate with negative weight sum has sigma recorded as NaN
    K = np.array([[1.0, 0.0], [0.0, 1.0]])
    tr = cg(DenseAction(K), rhs=np.array([1.0, -3.0]), config=SolveConfig(criterion="fixed", max_iters=1))
    assert np.isnan(tr.sigma).all()
    assert worst_case_error(np.array([1.0, -3.0]), DenseAction(K)) is None


def test_worst_case_error_values():
    assert worst_case_error(np.array([1.0, 0.0, 0.0]), DenseAction(np.eye(3))) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_worst_case_error_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(6, 6))
    A = DenseAction(B @ B.T + np.eye(6))
    w = rng.uniform(0.1, 1.0, size=6)
    assert worst_case_error(c * w, A) == pytest.approx(worst_case_error(w, A), rel=1e-12)


def test_dense_solution_identities(sys100):
    _, _, K, sol = sys100
    assert np.linalg.norm(K @ sol.w - 1) <= 1e-10 * math.sqrt(100) * np.abs(K).max() * np.abs(sol.w).max() * 100
    assert sol.sigma == pytest.approx(sol.sigma_identity, rel=1e-10)
    assert sol.sigma_identity == pytest.approx(float(np.ones(100) @ np.linalg.solve(K, np.ones(100))) ** -0.5, rel=1e-10)


def test_dense_residual_small():
    s = logistic_nodes(80, seed=2)
    sol = dense_solve(s, SteinKernel(0.1))
    r = sol.K @ sol.w - 1
    assert np.linalg.norm(r) <= 1e-10 * math.sqrt(80)


def test_dense_singleton():
    s = SampleSet(np.array([[0.3, 0.1]]), np.array([[1.0, 2.0]]))
    sol = dense_solve(s, SteinKernel(1.0))
    assert sol.w[0] == pytest.approx(1 / 7.0, rel=1e-15)


def test_dense_duplicate_nodes_fail():
    X = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    with pytest.warns(UserWarning):
        s = SampleSet(X, X)
    with pytest.raises(DenseSolveError):
        dense_solve(s, SteinKernel(1.0))


def test_matrix_free_matches_dense_solver(sys100):
    s, kern, K, sol = sys100
    a = cg(KernelAction(s, kern, bandwidth=17), config=ground_truth(sol))
    b = cg(DenseAction(K), config=ground_truth(sol))
    assert abs(a.iterations - b.iterations) <= 2


def test_trace_csv(tmp_path, sys100):
    _, _, K, _ = sys100
    tr = cg(DenseAction(K), config=SolveConfig(criterion="fixed", max_iters=5))
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,res_norm,sigma,alpha,beta"
    assert len(lines) == 7
    assert lines[-1].endswith(",,")
    assert float(lines[3].split(",")[2]) == tr.sigma[2]


@pytest.mark.parametrize(
    "kw",
    [
        {"criterion": "bogus"},
        {"criterion": "ground-truth", "tau": 1.0, "reference_sigma": 1.0},
        {"criterion": "ground-truth"},
        {"criterion": "residual", "tau_res": 1.0},
        {"max_iters": 0},
        {"criterion": "fixed"},
        {"sigma_refresh": 0},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolveConfig(**kw)


def test_trace_final_sigma_empty():
    assert math.isnan(SolveTrace(w=np.zeros(1), iterations=0, reason="x").final_sigma)
