import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steinpcg.kernels import (
    DenseAction,
    DenseLimitError,
    IMQProfile,
    KernelAction,
    SteinKernel,
    assemble_dense,
    bandwidth_for_budget,
)
from steinpcg.samples import SampleSet

from conftest import random_nodes


def imq(x, y, ls):
    return (1 + np.sum((x - y) ** 2) / ls**2) ** -0.5


def fd_grad(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_div12(x, y, ls, h=1e-4):
    # sum_i d^2 k / dx_i dy_i by a four-point stencil
    total = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        total += (imq(x + e, y + e, ls) - imq(x + e, y - e, ls) - imq(x - e, y + e, ls) + imq(x - e, y - e, ls)) / (4 * h * h)
    return total


def rel(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@pytest.mark.parametrize("d", [1, 4, 10])
def test_derivatives_match_finite_differences(d):
    rng = np.random.default_rng(d)
    for _ in range(20):
        ls = rng.uniform(0.5, 2.0)
        x, y = rng.normal(size=d), rng.normal(size=d)
        kern = SteinKernel(ls)
        k, g1, g2, div = kern.base_eval(x, y)
        assert k == pytest.approx(imq(x, y, ls), rel=1e-14)
        assert rel(g1, fd_grad(lambda z: imq(z, y, ls), x)) <= 1e-5
        assert rel(g2, fd_grad(lambda z: imq(x, z, ls), y)) <= 1e-5
        assert rel(div, fd_div12(x, y, ls)) <= 1e-5


def test_hand_values_d1():
    k, g1, g2, div = SteinKernel(1.0).base_eval(np.array([0.0]), np.array([1.0]))
    assert k == pytest.approx(2**-0.5, rel=1e-15)
    # grad_2 k = (x - x') s^{-3/2} / l^2, negative here since x < x'
    assert g2[0] == pytest.approx(-(2**-1.5), rel=1e-15)
    assert abs(g2[0]) == pytest.approx(0.3535533905932738, rel=1e-15)
    assert g1[0] == pytest.approx(2**-1.5, rel=1e-15)
    assert div == pytest.approx(2**-1.5 - 3 * 2**-2.5, rel=1e-14)
    assert div == pytest.approx(-0.1767766952966369, rel=1e-12)


@pytest.mark.parametrize("d", [1, 4, 10])
def test_coincident_points(d):
    x = np.linspace(-1, 1, d)
    k, g1, g2, div = SteinKernel(0.7).base_eval(x, x)
    assert k == 1.0
    assert not g1.any() and not g2.any()
    assert div == pytest.approx(d / 0.49, rel=1e-15)


def test_profile_contract():
    p = IMQProfile()
    assert p.value_at_zero() == 1.0
    t = np.linspace(0, 10, 50)
    assert np.all(np.diff(p.psi(t)) < 0)
    # closed-form Laplacian agrees with the generic 2 d psi'(0)
    for d in (1, 3, 7):
        assert p.laplacian_at_zero(d) == 2 * d * p.dpsi(0.0) == -d


def test_stein_zero_scores_is_laplacian_term():
    x = np.array([0.3, -1.0, 2.0, 0.1])
    assert SteinKernel(1.0)(x, np.zeros(4), x, np.zeros(4)) == pytest.approx(4.0, rel=1e-15)


def test_stein_diagonal_known_value():
    x = np.array([0.1, 0.2, 0.3, 0.4])
    g = np.array([2.0, 1.0, 2.0, 0.0])  # |g|^2 = 9
    assert SteinKernel(1.0)(x, g, x, g) == pytest.approx(13.0, rel=1e-15)


@pytest.mark.parametrize("d", [1, 4, 10])
def test_diagonal_identity(d):
    s = random_nodes(30, d, seed=d)
    for ls in (0.1, 1.0, 3.0):
        kern = SteinKernel(ls)
        direct = np.array([kern(x, g, x, g) for x, g in zip(s.X, s.G)])
        closed = d / ls**2 + np.sum(s.G**2, axis=1)
        np.testing.assert_allclose(direct, closed, rtol=0, atol=1e-12 * np.max(closed))
        np.testing.assert_allclose(kern.diag(s.G), closed, rtol=1e-15)


def test_lengthscale_doubling_quarters_first_diag_term():
    G = np.zeros((3, 5))
    assert SteinKernel(2.0).diag(G)[0] == SteinKernel(1.0).diag(G)[0] / 4


vec4 = arrays(np.float64, 4, elements=st.floats(-3, 3))


@settings(max_examples=60, deadline=None)
@given(vec4, vec4, vec4, vec4, st.floats(0.1, 5.0))
def test_stein_kernel_symmetric(x, gx, y, gy, ls):
    kern = SteinKernel(ls)
    a, b = kern(x, gx, y, gy), kern(y, gy, x, gx)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)
    assert kern.base_eval(x, y)[0] == kern.base_eval(y, x)[0]


def test_matrix_matches_pointwise():
    s = random_nodes(12, 3, seed=1)
    kern = SteinKernel(0.8)
    M = kern.matrix(s.X, s.G, s.X, s.G)
    ref = np.array([[kern(s.X[i], s.G[i], s.X[j], s.G[j]) for j in range(12)] for i in range(12)])
    np.testing.assert_allclose(M, ref, rtol=1e-13, atol=1e-13)


def test_assemble_dense_symmetric_and_singleton():
    s = random_nodes(40, 4, seed=2)
    K = assemble_dense(s, SteinKernel(1.0))
    assert np.array_equal(K, K.T)
    one = SampleSet(s.X[:1], s.G[:1])
    K1 = assemble_dense(one, SteinKernel(1.0))
    assert K1.shape == (1, 1)
    assert K1[0, 0] == SteinKernel(1.0)(s.X[0], s.G[0], s.X[0], s.G[0])


def test_assemble_dense_limit():
    s = random_nodes(20, 2)
    with pytest.raises(DenseLimitError):
        assemble_dense(s, SteinKernel(1.0), limit=10)


@pytest.mark.parametrize("seed", range(4))
def test_positive_definite_on_distinct_nodes(seed):
    s = random_nodes(150, 4, seed=seed)
    ev = np.linalg.eigvalsh(assemble_dense(s, SteinKernel(0.5)))
    assert ev.min() > 0


def test_positive_definite_logistic(nodes200):
    ev = np.linalg.eigvalsh(assemble_dense(nodes200, SteinKernel(0.1)))
    assert ev.min() > 0


@pytest.mark.parametrize("B", [1, 7, 64, None])
def test_action_matches_dense(nodes200, B):
    kern = SteinKernel(0.3)
    K = assemble_dense(nodes200, kern)
    act = KernelAction(nodes200, kern, bandwidth=B)
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.normal(size=200)
        ref = K @ v
        assert np.linalg.norm(act(v) - ref) <= 1e-10 * np.linalg.norm(ref)
    assert act.n_calls == 5


def test_action_zero_and_bandwidth_independence(nodes100):
    kern = SteinKernel(1.0)
    v = np.random.default_rng(3).normal(size=100)
    a1 = KernelAction(nodes100, kern, bandwidth=1)(v)
    aN = KernelAction(nodes100, kern, bandwidth=100)(v)
    assert np.linalg.norm(a1 - aN) <= 1e-12 * np.linalg.norm(aN)
    assert not KernelAction(nodes100, kern)(np.zeros(100)).any()


def test_action_threads_bit_identical(nodes100):
    kern = SteinKernel(0.5)
    v = np.random.default_rng(4).normal(size=100)
    a = KernelAction(nodes100, kern, bandwidth=9, threads=1)(v)
    b = KernelAction(nodes100, kern, bandwidth=9, threads=4)(v)
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31))
def test_action_linear(alpha, beta, seed):
    s = random_nodes(25, 3, seed=7)
    act = KernelAction(s, SteinKernel(1.0), bandwidth=4)
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=25), rng.normal(size=25)
    lhs = act(alpha * u + beta * v)
    rhs = alpha * act(u) + beta * act(v)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), np.linalg.norm(lhs), 1e-300) + 1e-12


def test_action_cache_and_budget(nodes100):
    kern = SteinKernel(0.5)
    act = KernelAction(nodes100, kern, cache=True)
    v = np.ones(100)
    assert np.array_equal(act(v), act(v))
    np.testing.assert_allclose(act.matmat(np.eye(100)), assemble_dense(nodes100, kern), rtol=1e-12, atol=1e-9)
    with pytest.raises(ValueError):
        KernelAction(nodes100, kern, cache=True, budget_bytes=1000)


def test_action_shape_checks(nodes100):
    act = KernelAction(nodes100, SteinKernel(1.0))
    with pytest.raises(ValueError):
        act(np.ones(99))
    with pytest.raises(ValueError):
        act.matmat(np.ones(100))


def test_rows_entries_diag_agree(nodes100):
    kern = SteinKernel(0.4)
    K = assemble_dense(nodes100, kern)
    for act in (KernelAction(nodes100, kern), DenseAction(K)):
        np.testing.assert_allclose(act.rows([3, 50]), K[[3, 50]], rtol=1e-12, atol=1e-10)
        np.testing.assert_allclose(act.entries([1, 2], [5, 7, 9]), K[np.ix_([1, 2], [5, 7, 9])], rtol=1e-12, atol=1e-10)
        np.testing.assert_allclose(act.diag(), np.diag(K), rtol=1e-12)


def test_bandwidth_budget():
    assert bandwidth_for_budget(1000, 4, budget_bytes=8 * 1000 * 10 * 7) == 7
    assert bandwidth_for_budget(10, 4) == 10
    assert bandwidth_for_budget(10**7, 4, budget_bytes=10) == 1


def test_invalid_lengthscale():
    with pytest.raises(ValueError):
        SteinKernel(0.0)
