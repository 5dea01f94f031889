"""Pointwise algebra of real (p,p)-forms through their coefficient matrices.

A real (p,p)-form is stored as the Hermitian ``N x N`` matrix of its
coefficients ``Omega[I, J]`` (``N = C(n, p)``, rows/columns in lexicographic
multi-index order).  No factorial prefactors are carried: the matrix of
``omega^p`` is the compound matrix of the metric, and the matrix of
``i a ^ Theta`` is built by signed insertion (see :func:`wedge_11`).

Every function accepts arbitrary leading batch dimensions, so a field on a
grid is just an array of shape ``grid_shape + (N, N)``.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, PositivityError
from .multiindex import binomial, build_index_table, complement_sign, insertion_tensor

# log of the density normalisation: with the matrix of omega^p equal to
# C_p(g), det(C_p(g))^(n/(pN)) = det(g) exactly, so no correction is needed.
LOG_VOLUME_CALIBRATION = 0.0

PD_RELATIVE_FLOOR = 1e-10


def _minor_index_arrays(n, p):
    table = build_index_table(n, p)
    return np.array(table.indices, dtype=int) - 1


def compound(A, p: int) -> np.ndarray:
    """p-th compound matrix: ``C[I, J] = det A[I, J]`` (p x p minors)."""
    A = np.asarray(A)
    n = A.shape[-1]
    if A.shape[-2] != n:
        raise ParameterError(f"expected square matrices, got shape {A.shape}")
    if p == 1:
        return A.copy()
    rows = _minor_index_arrays(n, p)
    if p == n:
        return np.linalg.det(A)[..., None, None]
    # sub[..., I, J, a, b] = A[..., rows[I, a], rows[J, b]]
    sub = A[..., rows[:, None, :, None], rows[None, :, None, :]]
    return np.linalg.det(sub)


def is_hermitian(A, atol=1e-12) -> bool:
    A = np.asarray(A)
    scale = 1.0 + np.max(np.abs(A), initial=0.0)
    return bool(np.all(np.abs(A - np.conj(np.swapaxes(A, -1, -2))) <= atol * scale))


def hermitian_part(A):
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def minor_matrix(g, p: int) -> np.ndarray:
    """Coefficient matrix of ``omega^p`` for the metric ``g``."""
    g = np.asarray(g)
    if not is_hermitian(g, atol=1e-10):
        raise ParameterError("metric is not Hermitian")
    return compound(g, p)


def power_matrix(g, k: int) -> np.ndarray:
    """Matrix of ``omega^k`` allowing ``k = 0`` (the scalar 1)."""
    g = np.asarray(g)
    if k == 0:
        return np.ones(g.shape[:-2] + (1, 1), dtype=g.dtype)
    return minor_matrix(g, k)


def wedge_11(a, theta, p: int) -> np.ndarray:
    """Matrix of ``i a_{ij} dz_i ^ dzbar_j ^ Theta`` for a degree ``p-1`` form Theta.

    ``out[I'_i, J'_j] += s(i, I') s(j, J') a[i, j] Theta[I', J']`` with the
    insertion signs of :func:`ppma.multiindex.insert_with_sign`.
    """
    a = np.asarray(a)
    theta = np.asarray(theta)
    n = a.shape[-1]
    if not 1 <= p <= n:
        raise ParameterError(f"output degree p={p} outside 1..{n}")
    if theta.shape[-1] != binomial(n, p - 1):
        raise ParameterError(
            f"Theta has size {theta.shape[-1]}, expected C({n},{p - 1})={binomial(n, p - 1)}"
        )
    if p == 1:
        return a * theta[..., :1, :1]
    T = insertion_tensor(n, p)
    N1, N = T.shape[1], T.shape[2]
    # S_i = sum_j a_ij T_j, R_i = Theta S_i, out = sum_i T_i^T R_i
    S = np.einsum("...ij,jBJ->...iBJ", a, T)
    R = theta[..., None, :, :] @ S
    R = R.reshape(R.shape[:-3] + (n * N1, N))
    return T.reshape(n * N1, N).T @ R


def contraction(M, theta, n: int, p: int) -> np.ndarray:
    """Adjoint of :func:`wedge_11` under ``<A, B> = sum A[I, J] B[I, J]``.

    ``sum_ij out[i, j] a[i, j] == sum_IJ M[I, J] wedge_11(a, theta)[I, J]``.
    """
    T = insertion_tensor(n, p)
    return np.einsum("iAI,jBJ,...IJ,...AB->...ij", T, T, M, theta, optimize=True)


def pd_floor(omega) -> np.ndarray:
    """Scale-aware positivity floor ``1e-10 (1 + trace / N)``."""
    N = omega.shape[-1]
    tr = np.sum(np.real(np.diagonal(omega, axis1=-2, axis2=-1)), axis=-1)
    return PD_RELATIVE_FLOOR * (1.0 + np.abs(tr) / N)


def min_eigenvalue(omega) -> np.ndarray:
    omega = np.asarray(omega)
    if omega.shape[-1] == 1:
        return np.real(omega[..., 0, 0])
    if omega.shape[-1] == 2:
        a = np.real(omega[..., 0, 0])
        d = np.real(omega[..., 1, 1])
        off = 0.5 * (omega[..., 0, 1] + np.conj(omega[..., 1, 0]))
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + np.abs(off) ** 2)
    return np.linalg.eigvalsh(hermitian_part(omega))[..., 0]


def check_positive(omega, what="form"):
    """Raise :class:`PositivityError` unless every matrix is positive-definite.

    Returns the array of smallest eigenvalues.
    """
    omega = np.asarray(omega)
    if not np.all(np.isfinite(omega)):
        raise PositivityError(f"{what} has non-finite entries")
    lam = min_eigenvalue(omega)
    bad = lam <= pd_floor(omega)
    if np.any(bad):
        worst = np.unravel_index(np.argmin(lam - pd_floor(omega)), lam.shape) if lam.ndim else None
        raise PositivityError(f"{what} is not positive-definite", float(np.min(lam)), worst)
    return lam


def log_volume_density(omega, n: int, p: int, check=True) -> np.ndarray:
    """``log det(Omega)^(n/(pN))`` via Cholesky (raises on non-PD input)."""
    omega = hermitian_part(np.asarray(omega, dtype=complex))
    N = omega.shape[-1]
    if N != binomial(n, p):
        raise ParameterError(f"matrix size {N} does not match C({n},{p})")
    if check:
        check_positive(omega)
    L = np.linalg.cholesky(omega)
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)
    return (n / (p * N)) * logdet + LOG_VOLUME_CALIBRATION


def volume_density(omega, n: int, p: int):
    """``det(Omega)^(n/(pN))`` for a positive-definite coefficient matrix."""
    return np.exp(log_volume_density(omega, n, p))


def relative_eigenvalues(omega, g, p: int) -> np.ndarray:
    """Roots of ``det(Omega - t omega^p) = 0``, sorted descending."""
    omega = hermitian_part(np.asarray(omega, dtype=complex))
    gp = minor_matrix(np.asarray(g, dtype=complex), p)
    try:
        L = np.linalg.cholesky(gp)
    except np.linalg.LinAlgError:
        raise PositivityError("metric is not positive-definite", float(np.min(min_eigenvalue(gp))))
    Linv = np.linalg.inv(L)
    reduced = Linv @ omega @ np.conj(np.swapaxes(Linv, -1, -2))
    return np.linalg.eigvalsh(hermitian_part(reduced))[..., ::-1]


def min_relative_eigenvalue(omega, g, p: int) -> np.ndarray:
    return relative_eigenvalues(omega, g, p)[..., -1]


def decomposable_coefficients(alpha, n: int) -> np.ndarray:
    """Coefficients ``alpha_K`` of ``alpha_1 ^ ... ^ alpha_q`` in the basis ``dz_K``.

    ``alpha`` has shape ``(q, n)``; row ``i`` holds the coefficients of the
    1-form ``alpha_i``.  ``alpha_K`` is the minor on columns ``K``.
    """
    alpha = np.asarray(alpha)
    q = alpha.shape[0]
    cols = _minor_index_arrays(n, q)
    return np.linalg.det(alpha[:, cols].transpose(1, 0, 2))


def current_pairing_vector(alpha, n: int, p: int) -> np.ndarray:
    """``xi_I = (-1)^(I|I^c) alpha_{I^c}`` for a decomposable (n-p)-form."""
    table = build_index_table(n, p)
    coeffs = decomposable_coefficients(alpha, n)
    lower = build_index_table(n, n - p)
    xi = np.empty(len(table), dtype=complex)
    for k, I in enumerate(table):
        xi[k] = complement_sign(I, n) * coeffs[lower.rank(table.complement(I))]
    return xi


def current_positivity_probe(omega, n: int, p: int, trials: int = 1000, rng_seed: int = 0):
    """Pair ``Omega`` with random strongly positive elementary (n-p, n-p)-forms.

    Returns ``(all_positive, min_pairing)`` where each pairing is
    ``sum_IJ Omega[I, J] xi_I conj(xi_J)``.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if not 1 <= p < n:
        raise ParameterError(f"probe needs 1 <= p < n, got n={n}, p={p}")
    omega = np.asarray(omega, dtype=complex)
    rng = np.random.Generator(np.random.Philox(rng_seed))
    q = n - p
    table_c = build_index_table(n, q)
    table = build_index_table(n, p)
    signs = np.array([complement_sign(I, n) for I in table])
    comp = np.array([table_c.rank(table.complement(I)) for I in table])
    cols = _minor_index_arrays(n, q)

    alpha = rng.standard_normal((trials, q, n)) + 1j * rng.standard_normal((trials, q, n))
    coeffs = np.linalg.det(alpha[:, :, cols].transpose(0, 2, 1, 3))
    xi = signs * coeffs[:, comp]
    pairing = np.real(np.einsum("IJ,tI,tJ->t", omega, xi, np.conj(xi)))
    min_pairing = float(np.min(pairing))
    return bool(min_pairing > 0.0), min_pairing
