"""The (p,p) Monge-Ampere operator ``u -> log det(X + U[u])`` and its derivatives.

Index convention for the linearisation: ``G[..., i, j]`` is the derivative
of ``log det Z`` with respect to the Hessian entry ``u_{i jbar}``, so that
``d log det Z = sum_ij G[i, j] du[i, j]``.  For ``p = 1`` this is
``inv(Z).T``, i.e. the upper-index inverse ``Z^{i jbar}``.

``g=None`` everywhere means an orthonormal frame (``omega^(p-1)`` has the
identity matrix).
"""

from __future__ import annotations

import numpy as np

from . import forms
from .errors import ParameterError, PositivityError, VerificationFailure
from .multiindex import binomial, build_index_table


def _theta(n, p, g=None, batch_shape=()):
    if g is None:
        N1 = binomial(n, p - 1)
        return np.broadcast_to(np.eye(N1), batch_shape + (N1, N1))
    return forms.power_matrix(g, p - 1)


def density_exponent(n, p):
    """The power ``n / (pN)`` relating ``det Z`` to the volume density."""
    return n / (p * binomial(n, p))


def build_Z(hess_u, X, g, p: int) -> np.ndarray:
    """``Z = X + wedge_11(hess_u, omega^(p-1))`` pointwise."""
    hess_u = np.asarray(hess_u)
    X = np.asarray(X)
    n = hess_u.shape[-1]
    N = binomial(n, p)
    if X.shape[-1] != N or X.shape[:-2] != hess_u.shape[:-2]:
        raise ParameterError(
            f"shape mismatch: Hessian {hess_u.shape} vs background {X.shape} for p={p}"
        )
    theta = _theta(n, p, g, hess_u.shape[:-2])
    return X + forms.wedge_11(hess_u, theta, p)


def log_det(Z) -> np.ndarray:
    """``log det`` of Hermitian PD matrices by Cholesky, raising with location."""
    Z = np.asarray(Z)
    if Z.shape[-1] <= 2:
        if Z.shape[-1] == 1:
            det = np.real(Z[..., 0, 0])
        else:
            det = np.real(Z[..., 0, 0]) * np.real(Z[..., 1, 1]) - np.abs(Z[..., 0, 1]) ** 2
        if np.any(det <= 0) or np.any(np.real(Z[..., 0, 0]) <= 0):
            forms.check_positive(Z, "Z")
        return np.log(det)
    Z = forms.hermitian_part(Z.astype(complex, copy=False))
    try:
        L = np.linalg.cholesky(Z)
    except np.linalg.LinAlgError:
        forms.check_positive(Z, "Z")
        raise
    diag = np.real(np.diagonal(L, axis1=-2, axis2=-1))
    if np.any(diag <= 0):
        forms.check_positive(Z, "Z")
    return 2.0 * np.sum(np.log(diag), axis=-1)


def residual(Z, g, psi, b, p: int) -> np.ndarray:
    """``(n/(pN)) log det Z - log det g - psi - b`` on the grid.

    Zero exactly when ``mu_Z = e^(psi + b) omega^n`` in the artifact's
    normalisation (``omega^n`` read as the density ``det g``).
    """
    Z = np.asarray(Z)
    g = np.asarray(g)
    n = g.shape[-1]
    forms.check_positive(Z, "Z")
    return (
        density_exponent(n, p) * log_det(Z)
        - log_det(g)
        - forms.LOG_VOLUME_CALIBRATION
        - psi
        - b
    )


def wedge_basis(n: int, p: int, g=None) -> np.ndarray:
    """``E[i, j] = dZ / du_{i jbar}``, shape ``(..., n, n, N, N)``."""
    T = forms.insertion_tensor(n, p)
    theta = _theta(n, p, g)
    return np.einsum("iAI,jBJ,...AB->...ijIJ", T, T, theta, optimize=True)


def linearization(Z, p: int, g=None) -> np.ndarray:
    """``G^{i jbar} = d log det Z / d u_{i jbar}`` pointwise, Hermitian PD for PD ``Z``."""
    Z = np.asarray(Z, dtype=complex)
    N = Z.shape[-1]
    n = _dimension(N, p, g)
    forms.check_positive(Z, "Z")
    Zinv = np.linalg.inv(Z)
    theta = _theta(n, p, g, Z.shape[:-2])
    return forms.contraction(np.swapaxes(Zinv, -1, -2), theta, n, p)


def _dimension(N, p, g):
    if g is not None:
        return np.asarray(g).shape[-1]
    for n in range(p, 9):
        if binomial(n, p) == N:
            return n
    raise ParameterError(f"no n with C(n,{p}) = {N}")


def concavity_hessian(Z, p: int, g=None) -> np.ndarray:
    """Second derivative tensor ``G^{i jbar, k lbar}`` at a single point.

    ``H[i, j, k, l] = -tr(Z^-1 E_kl Z^-1 E_ij)`` with ``E_ij = dZ/du_{i jbar}``.
    """
    return restricted_hessian(Z, None, None, p, g)


def restricted_hessian(Z, S1, S2, p: int, g=None) -> np.ndarray:
    """Hessian with the inverse entries restricted to multi-index subsets.

    ``Z^{I'_i Jbar'_l}`` is kept only for ``I'_i, J'_l`` in ``S1`` and
    ``Z^{J'_k Ibar'_j}`` only for ``J'_k, I'_j`` in ``S2``.  ``None`` means all
    of the index set.  Subsets may be given as multi-indices or 0-based ranks.
    """
    Z = np.asarray(Z, dtype=complex)
    N = Z.shape[-1]
    n = _dimension(N, p, g)
    forms.check_positive(Z, "Z")
    Zinv = np.linalg.inv(Z)
    P1 = _projector(S1, n, p)
    P2 = _projector(S2, n, p)
    E = wedge_basis(n, p, g)
    A = P2 @ Zinv @ P2
    C = P1 @ Zinv @ P1
    # -sum A[a, b] E_kl[b, c] C[c, d] E_ij[d, a]
    return -np.einsum("ab,klbc,cd,ijda->ijkl", A, E, C, E, optimize=True)


def _projector(S, n, p):
    N = binomial(n, p)
    if S is None:
        return np.eye(N)
    table = build_index_table(n, p)
    P = np.zeros((N, N))
    for s in S:
        k = s if isinstance(s, (int, np.integer)) else table.rank(tuple(s))
        P[k, k] = 1.0
    return P


def hessian_form(H, eta) -> float:
    """``sum H[i, j, k, l] eta[i, j] eta[k, l]`` (real for Hermitian ``eta``)."""
    return float(np.real(np.einsum("ijkl,ij,kl->", H, eta, eta)))


def concavity_form(Z, eta, p: int, g=None) -> float:
    """Quadratic form of the concavity Hessian without building the 4-tensor."""
    Z = np.asarray(Z, dtype=complex)
    Zinv = np.linalg.inv(Z)
    theta = _theta(eta.shape[-1], p, g)
    W = forms.wedge_11(eta, theta, p)
    M = Zinv @ W
    return float(-np.real(np.trace(M @ M)))


def ric_p(omega, g, p: int, grid) -> np.ndarray:
    """``Ric_p(Omega) = -wedge_11(ddbar log mu_Omega, omega^(p-1))`` on a torus grid."""
    omega = np.asarray(omega)
    g = np.asarray(g)
    n = g.shape[-1]
    logmu = forms.log_volume_density(omega, n, p)
    hess = grid.spectral_hessian(logmu)
    theta = forms.power_matrix(g, p - 1)
    return -forms.wedge_11(hess, theta, p)


def p_psh_check(hess_u, p: int):
    """``(ok, worst_sum)``: sum of the ``p`` smallest Hessian eigenvalues is > 0 everywhere."""
    lam = np.linalg.eigvalsh(forms.hermitian_part(np.asarray(hess_u)))
    sums = np.sum(lam[..., :p], axis=-1)
    worst = float(np.min(sums))
    return bool(worst > 0.0), worst


def smallest_relative_eigenvalue(X, p: int, g=None) -> float:
    """Grid minimum of the smallest eigenvalue of ``X`` relative to ``omega^p``."""
    X = np.asarray(X)
    if g is None:
        return float(np.min(forms.min_eigenvalue(X)))
    return float(np.min(forms.min_relative_eigenvalue(X, g, p)))


def a_coefficient_margin(Z, X, p: int, g=None, alpha=None) -> np.ndarray:
    """``sum Z^{I Jbar} X_{I Jbar} - alpha sum_I Z^{I Ibar}`` (nonnegative).

    With a metric, ``sum_I Z^{I Ibar}`` is read as the trace of ``Z^-1``
    against ``omega^p``, which agrees in an orthonormal frame.
    """
    Z = np.asarray(Z, dtype=complex)
    X = np.asarray(X, dtype=complex)
    if alpha is None:
        alpha = smallest_relative_eigenvalue(X, p, g)
    Zinv = np.linalg.inv(Z)
    pairing = np.real(np.einsum("...JI,...IJ->...", Zinv, X))
    if g is None:
        reference = np.real(np.trace(Zinv, axis1=-2, axis2=-1))
    else:
        gp = forms.minor_matrix(g, p)
        reference = np.real(np.einsum("...JI,...IJ->...", Zinv, gp))
    return pairing - alpha * reference


def trace_identity_check(Z, X, U, p: int, g=None, tol=1e-10) -> float:
    """Return ``max |sum Z^{I Jbar} Z_{I Jbar} - N|``.

    Also checks that ``Z = X + U`` and the lower bound of
    :func:`a_coefficient_margin`; raises :class:`VerificationFailure` if either
    fails beyond ``tol`` (relative).
    """
    Z = np.asarray(Z, dtype=complex)
    X = np.asarray(X, dtype=complex)
    U = np.asarray(U, dtype=complex)
    N = Z.shape[-1]
    forms.check_positive(Z, "Z")
    scale = 1.0 + np.max(np.abs(Z))
    if np.max(np.abs(Z - X - U)) > tol * scale:
        raise VerificationFailure("Z is not X + U")
    Zinv = np.linalg.inv(Z)
    total = np.real(np.einsum("...JI,...IJ->...", Zinv, Z))
    margin = a_coefficient_margin(Z, X, p, g)
    pairing_scale = 1.0 + np.abs(np.real(np.einsum("...JI,...IJ->...", Zinv, X)))
    if np.any(margin < -tol * pairing_scale):
        raise VerificationFailure(
            f"trace lower bound violated: margin {float(np.min(margin)):.3e}"
        )
    return float(np.max(np.abs(total - N)))
