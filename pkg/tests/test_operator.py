from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ppma import forms, operator
from ppma.errors import PositivityError, VerificationFailure
from ppma.grid import TorusGrid


def rng(seed=0):
    return np.random.default_rng(seed)


def direction(Z, eta, p):
    return forms.wedge_11(eta, np.eye(comb(eta.shape[0], p - 1)), p)


# -- Z and the residual -------------------------------------------------------

def test_build_Z_examples():
    X = oracles.random_pd(rng(), 3)
    np.testing.assert_array_equal(operator.build_Z(np.zeros((3, 3)), X, None, 2), X)
    lam = np.array([0.1, -0.2, 0.3])
    Z = operator.build_Z(np.diag(lam), np.eye(3), None, 2)
    np.testing.assert_allclose(np.diag(Z), 1 + np.array([lam[0] + lam[1], lam[0] + lam[2], lam[1] + lam[2]]))


def test_build_Z_on_grid_matches_tensor_oracle():
    grid = TorusGrid(3, 8, "reduced")
    x1, x2, x3 = grid.x
    u = 0.05 * np.cos(x1 + 2 * x2) + 0.03 * np.sin(x3 - x1)
    g = np.eye(3) + 0.1 * np.diag([1.0, 2.0, 3.0])
    X = np.broadcast_to(forms.minor_matrix(g, 2), grid.shape + (3, 3))
    hess = grid.spectral_hessian(u)
    Z = operator.build_Z(hess, X, g, 2)
    for point in [(0, 0, 0), (3, 5, 1), (7, 2, 6)]:
        expected = X[point] + oracles.tensor_wedge_11(hess[point], g, 2)
        np.testing.assert_allclose(Z[point], expected, atol=1e-13)


def test_residual_flat_zero():
    grid = TorusGrid(2, 8)
    g = np.broadcast_to(np.eye(2), grid.shape + (2, 2))
    r = operator.residual(np.broadcast_to(np.eye(2), grid.shape + (2, 2)), g, 0.0, 0.0, 1)
    assert np.max(np.abs(r)) == 0.0


def test_residual_p1_matches_classical():
    grid = TorusGrid(2, 8)
    x1, x2, y1, y2 = grid.axes
    u = 0.05 * np.cos(x1 + y2) + 0.02 * np.sin(x2 - y1)
    g = np.broadcast_to(np.diag([1.0, 1.5]), grid.shape + (2, 2)).astype(complex)
    psi = 0.1 * np.cos(x1)
    Z = operator.build_Z(grid.spectral_hessian(u), g, g, 1)
    ours = operator.residual(Z, g, psi, 0.3, 1)
    np.testing.assert_allclose(ours, oracles.classical_residual(u, 0.3, g, psi), atol=1e-13)


def test_log_det_raises_on_indefinite():
    with pytest.raises(PositivityError):
        operator.log_det(np.diag([1.0, -1.0, 2.0]))
    with pytest.raises(PositivityError):
        operator.log_det(np.diag([1.0, -1.0]))


# -- linearization -------------------------------------------------------------

def test_linearization_p1_is_inverse():
    Z = oracles.random_pd(rng(1), 3)
    np.testing.assert_allclose(operator.linearization(Z, 1), np.linalg.inv(Z).T, atol=1e-12)


def test_linearization_diagonal_formula():
    Z = np.diag([2.0, 3.0, 5.0])  # ordered (1,2), (1,3), (2,3)
    G = operator.linearization(Z, 2)
    assert G[0, 0] == pytest.approx(1 / 2 + 1 / 3)
    assert G[1, 1] == pytest.approx(1 / 2 + 1 / 5)
    assert G[2, 2] == pytest.approx(1 / 3 + 1 / 5)
    assert np.allclose(G - np.diag(np.diag(G)), 0)


@pytest.mark.parametrize("n,p", [(3, 2), (4, 2), (4, 3), (3, 1)])
def test_linearization_finite_differences(n, p):
    r = rng(n * p)
    N = comb(n, p)
    Z = oracles.random_pd(r, N, eps=0.5)
    G = operator.linearization(Z, p)
    E = operator.wedge_basis(n, p)
    h = 1e-5
    for i in range(n):
        for j in range(n):
            fd = (operator.log_det(Z + h * E[i, j] + h * E[j, i]) - operator.log_det(Z - h * E[i, j] - h * E[j, i])) / (2 * h)
            assert fd == pytest.approx(2 * np.real(G[i, j]) if i != j else 2 * G[i, i].real, rel=1e-6, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([(3, 2), (4, 2), (5, 3), (3, 1)]))
def test_linearization_hermitian_positive(seed, np_pair):
    n, p = np_pair
    Z = oracles.random_pd(rng(seed), comb(n, p), eps=1e-3)
    G = operator.linearization(Z, p)
    assert forms.is_hermitian(G, atol=1e-10)
    assert np.linalg.eigvalsh(G)[0] > 0


# -- concavity -----------------------------------------------------------------

def test_concavity_p1_formula():
    Z = oracles.random_pd(rng(2), 3)
    Zi = np.linalg.inv(Z)
    H = operator.concavity_hessian(Z, 1)
    expected = -np.einsum("jk,li->ijkl", Zi, Zi)
    np.testing.assert_allclose(H, expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([(3, 2), (4, 2), (4, 3)]))
def test_concavity_form_nonpositive_and_consistent(seed, np_pair):
    n, p = np_pair
    r = rng(seed)
    Z = oracles.random_pd(r, comb(n, p), eps=1e-3)
    eta = oracles.random_hermitian(r, n)
    q = operator.concavity_form(Z, eta, p)
    assert q <= 1e-12 * (1 + abs(q))
    H = operator.concavity_hessian(Z, p)
    assert operator.hessian_form(H, eta) == pytest.approx(q, rel=1e-9, abs=1e-12)


def test_concavity_second_differences():
    r = rng(3)
    n, p = 3, 2
    Z = oracles.random_pd(r, 3, eps=1.0)
    eta = oracles.random_hermitian(r, n, scale=0.3)
    W = direction(Z, eta, p)
    h = 1e-3
    fd = (operator.log_det(Z + h * W) - 2 * operator.log_det(Z) + operator.log_det(Z - h * W)) / h**2
    assert fd == pytest.approx(operator.concavity_form(Z, eta, p), rel=1e-5)


def test_restricted_hessian_limits():
    r = rng(4)
    n, p = 4, 2
    Z = oracles.random_pd(r, 6)
    assert np.all(operator.restricted_hessian(Z, [], None, p) == 0)
    np.testing.assert_allclose(operator.restricted_hessian(Z, None, None, p),
                               operator.concavity_hessian(Z, p))
    full = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
    np.testing.assert_allclose(operator.restricted_hessian(Z, full, range(6), p),
                               operator.concavity_hessian(Z, p), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_restricted_form_matches_eigen_oracle(seed):
    r = rng(seed)
    n, p, N = 4, 2, 6
    Z = oracles.random_pd(r, N, eps=1e-2)
    S1 = [k for k in range(N) if r.random() < 0.5]
    S2 = [k for k in range(N) if r.random() < 0.5]
    eta = oracles.random_hermitian(r, n)
    H = operator.restricted_hessian(Z, S1, S2, p)
    value = operator.hessian_form(H, eta)
    # oracle: -sum_kl a_k c_l |v_k^* W w_l|^2 from eigen-decompositions of the restricted inverses
    Zi = np.linalg.inv(Z)
    P1 = np.diag([1.0 if k in S1 else 0.0 for k in range(N)])
    P2 = np.diag([1.0 if k in S2 else 0.0 for k in range(N)])
    a, V = np.linalg.eigh(P2 @ Zi @ P2)
    c, Wv = np.linalg.eigh(P1 @ Zi @ P1)
    W = direction(Z, eta, p)
    expected = -np.sum(a[:, None] * c[None, :] * np.abs(V.conj().T @ W @ Wv) ** 2)
    assert value == pytest.approx(expected, rel=1e-8, abs=1e-10)
    assert value <= 1e-12


# -- Ric_p, p-plurisubharmonicity, trace identity ------------------------------

def test_ric_p_constant_is_zero():
    grid = TorusGrid(3, 8, "reduced")
    g = np.broadcast_to(np.eye(3), grid.shape + (3, 3))
    Omega = np.broadcast_to(oracles.random_pd(rng(5), 3), grid.shape + (3, 3))
    assert np.max(np.abs(operator.ric_p(Omega, g, 2, grid))) < 1e-12


def test_ric_p_conformal_two_pass():
    grid = TorusGrid(3, 8, "reduced")
    x1, x2, x3 = grid.x
    f = 0.3 * np.cos(x1) * np.sin(x2 + x3)
    g = np.broadcast_to(np.eye(3), grid.shape + (3, 3))
    Omega = np.exp(f)[..., None, None] * np.eye(3)
    ric = operator.ric_p(Omega, g, 2, grid)
    expected = -(3 / 2) * forms.wedge_11(grid.spectral_hessian(f), np.eye(3), 2)
    np.testing.assert_allclose(ric, expected, atol=1e-12)
    assert np.max(np.abs(np.mean(ric, axis=(0, 1, 2)))) < 1e-12


def test_p_psh_examples():
    assert operator.p_psh_check(np.diag([0.1, 0.2, 0.3]), 1)[0]
    ok, worst = operator.p_psh_check(np.diag([-1.0, 1.0, 1.0]), 2)
    assert not ok and worst == pytest.approx(0.0)
    r = rng(6)
    H = np.stack([oracles.random_hermitian(r, 4) for _ in range(20)])
    for p in (1, 2, 3):
        ok, worst = operator.p_psh_check(H, p)
        sums = [np.sum(np.sort(np.linalg.eigvalsh(h))[:p]) for h in H]
        assert worst == pytest.approx(min(sums))
        assert ok == (min(sums) > 0)


def test_trace_identity_examples():
    Z = oracles.random_pd(rng(7), 6)
    assert operator.trace_identity_check(Z, Z, np.zeros_like(Z), 2) < 1e-12
    Z = np.diag([2.0, 3.0])
    Zi = np.linalg.inv(Z)
    assert np.sum(Zi.T * Z) == pytest.approx(2.0)
    assert operator.trace_identity_check(Z, Z, 0 * Z, 1) < 1e-14


def test_trace_identity_random_split_and_bound():
    r = rng(8)
    for _ in range(20):
        X = oracles.random_pd(r, 6, eps=1e-2)
        U = oracles.random_pd(r, 6) - 0.2 * np.eye(6)
        Z = X + U
        if np.linalg.eigvalsh(Z)[0] <= 0:
            continue
        assert operator.trace_identity_check(Z, X, U, 2) < 1e-10
        assert np.all(operator.a_coefficient_margin(Z, X, 2) >= -1e-12)


def test_trace_identity_detects_bad_split():
    Z = oracles.random_pd(rng(9), 3)
    with pytest.raises(VerificationFailure):
        operator.trace_identity_check(Z, Z, 0.1 * np.eye(3), 2)
