"""Periodic grids on the torus C^n / (2 pi Z)^(2n) and Fourier differentiation.

Full mode stores fields on all ``2n`` real axes, ordered
``(x_1, ..., x_n, y_1, ..., y_n)`` with ``z_j = x_j + i y_j``.  Reduced mode
keeps only ``x_1..x_n``: fields independent of ``y`` have real symmetric
complex Hessians ``u_{i jbar} = u_{x_i x_j} / 4``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import forms, operator
from .errors import ParameterError, PositivityError


def _workers():
    value = os.environ.get("PPMA_THREADS")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        return 1


@dataclass(frozen=True)
class TorusGrid:
    n: int
    m: int
    mode: str = "full"

    def __post_init__(self):
        if self.mode not in ("full", "reduced"):
            raise ParameterError(f"mode must be 'full' or 'reduced', got {self.mode!r}")
        if self.m < 8 and not (self.mode == "full" and self.m == 6 and self.n >= 3):
            raise ParameterError(f"m must be >= 8, got {self.m}")
        if self.m % 2:
            raise ParameterError(f"m must be even, got {self.m}")
        if not 1 <= self.n <= 8:
            raise ParameterError(f"n must be in 1..8, got {self.n}")

    @property
    def naxes(self) -> int:
        return 2 * self.n if self.mode == "full" else self.n

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.naxes

    @property
    def size(self) -> int:
        return self.m ** self.naxes

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.m

    @cached_property
    def axes(self):
        """Open-mesh coordinate arrays for each real axis."""
        pts = self.spacing * np.arange(self.m)
        out = []
        for a in range(self.naxes):
            shape = [1] * self.naxes
            shape[a] = self.m
            out.append(pts.reshape(shape))
        return tuple(out)

    @property
    def x(self):
        return self.axes[: self.n]

    @property
    def y(self):
        """``y`` coordinates; zeros in reduced mode."""
        if self.mode == "reduced":
            return tuple(np.zeros((1,) * self.naxes) for _ in range(self.n))
        return self.axes[self.n:]

    def zeros(self, dtype=float):
        return np.zeros(self.shape, dtype=dtype)

    def broadcast(self, f):
        return np.broadcast_to(np.asarray(f, dtype=float), self.shape).copy()

    def _field(self, u):
        """Real field on the grid; arrays broadcastable to the grid shape are expanded."""
        u = np.asarray(u, dtype=float)
        if u.shape == self.shape:
            return u
        try:
            return np.broadcast_to(u, self.shape)
        except ValueError:
            raise ParameterError(f"field shape {u.shape} does not match grid {self.shape}") from None

    # -- spectral machinery ------------------------------------------------

    @cached_property
    def _wavenumbers(self):
        """Per-axis integer wavenumbers, shaped for the rfftn layout."""
        out = []
        for a in range(self.naxes):
            if a == self.naxes - 1:
                k = sfft.rfftfreq(self.m, 1.0 / self.m)
                nk = self.m // 2 + 1
            else:
                k = sfft.fftfreq(self.m, 1.0 / self.m)
                nk = self.m
            shape = [1] * self.naxes
            shape[a] = nk
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def _first_derivative(self):
        """``i k`` per axis with the Nyquist mode zeroed."""
        out = []
        for k in self._wavenumbers:
            kk = k.copy()
            kk[np.abs(kk) == self.m // 2] = 0.0
            out.append(1j * kk)
        return tuple(out)

    def second_derivative_symbol(self, a: int, b: int) -> np.ndarray:
        """Real multiplier of ``d^2 / dq_a dq_b`` in rfftn space."""
        if a == b:
            return -(self._wavenumbers[a] ** 2)
        return np.real(self._first_derivative[a] * self._first_derivative[b])

    @cached_property
    def hessian_symbols(self):
        """Real multipliers ``(A, B)`` with ``u_{i jbar} = A_ij[u] + i B_ij[u]``.

        Each has shape ``(n, n) + spectral_shape`` after broadcasting.
        """
        n = self.n
        spec_shape = self.shape[:-1] + (self.m // 2 + 1,)
        A = np.zeros((n, n) + spec_shape)
        B = np.zeros((n, n) + spec_shape)
        for i in range(n):
            for j in range(n):
                A[i, j] = 0.25 * self.second_derivative_symbol(i, j)
                if self.mode == "full":
                    A[i, j] += 0.25 * self.second_derivative_symbol(n + i, n + j)
                    B[i, j] = 0.25 * (
                        self.second_derivative_symbol(i, n + j)
                        - self.second_derivative_symbol(n + i, j)
                    )
        return A, B

    def fft(self, u):
        return sfft.rfftn(u, workers=_workers())

    def ifft(self, uh):
        return sfft.irfftn(uh, s=self.shape, workers=_workers())

    def hessian_parts(self, u):
        """Real and imaginary parts ``(A, B)`` of the complex Hessian, shape ``(n, n) + grid``."""
        u = self._field(u)
        if not np.all(np.isfinite(u)):
            raise ParameterError("field has non-finite values")
        uh = self.fft(u)
        SA, SB = self.hessian_symbols
        n = self.n
        A = np.empty((n, n) + self.shape)
        B = np.zeros((n, n) + self.shape)
        for i in range(n):
            for j in range(i, n):
                A[i, j] = self.ifft(SA[i, j] * uh)
                A[j, i] = A[i, j]
                if self.mode == "full" and j > i:
                    B[i, j] = self.ifft(SB[i, j] * uh)
                    B[j, i] = -B[i, j]
        if self.mode == "full":
            for i in range(n):
                B[i, i] = 0.0
        return A, B

    def spectral_hessian(self, u) -> np.ndarray:
        """Complex Hessian ``u_{i jbar}`` as a Hermitian field ``grid + (n, n)``."""
        u = self._field(u)
        if not np.all(np.isfinite(u)):
            raise ParameterError("field has non-finite values")
        uh = self.fft(u)
        SA, SB = self.hessian_symbols
        n = self.n
        H = np.zeros(self.shape + (n, n), dtype=complex)
        for i in range(n):
            for j in range(i, n):
                re = self.ifft(SA[i, j] * uh)
                if self.mode == "full" and j > i:
                    im = self.ifft(SB[i, j] * uh)
                    H[..., i, j] = re + 1j * im
                    H[..., j, i] = re - 1j * im
                else:
                    H[..., i, j] = re
                    H[..., j, i] = re
        return H

    def derivative(self, u, axis: int, order: int = 1):
        """Fourier derivative of order 1 or 2 along one real axis."""
        uh = self.fft(self._field(u))
        if order == 1:
            return self.ifft(self._first_derivative[axis] * uh)
        if order == 2:
            return self.ifft(self.second_derivative_symbol(axis, axis) * uh)
        raise ParameterError("order must be 1 or 2")


def grid_mean(f, weight=None) -> float:
    """Weighted periodic average ``sum f w / sum w`` (spectrally accurate)."""
    f = np.asarray(f)
    if weight is None:
        return float(np.mean(f)) if np.isrealobj(f) else complex(np.mean(f))
    weight = np.broadcast_to(np.asarray(weight, dtype=float), f.shape)
    if np.any(weight <= 0):
        raise ParameterError("quadrature weight must be positive")
    return float(np.sum(f * weight) / np.sum(weight))


def make_metric(phi, grid: TorusGrid) -> np.ndarray:
    """``g = I + ddbar(phi)``; raises :class:`PositivityError` at the worst point."""
    phi = np.broadcast_to(np.asarray(phi, dtype=float), grid.shape)
    g = np.eye(grid.n) + grid.spectral_hessian(phi)
    forms.check_positive(g, "metric")
    return g


def mean_zero(u):
    return u - np.mean(u)


@dataclass
class ProblemSpec:
    """Geometry and data of ``mu_{X + U[u]} = e^(psi + b) omega^n`` on a torus.

    ``g`` is the metric field, ``X`` the background coefficient field and
    ``log_mu_ref`` the log of the reference density used by the flows
    (defaults to ``log det g``, i.e. the density of ``omega^p``).
    """

    grid: TorusGrid
    p: int
    g: np.ndarray
    X: np.ndarray
    psi: np.ndarray = None
    log_mu_ref: np.ndarray = None
    phi: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.n
        if not 1 <= self.p <= n:
            raise ParameterError(f"need 1 <= p <= n, got p={self.p}, n={n}")
        forms.check_positive(self.g, "metric")
        forms.check_positive(self.X, "background form")
        if self.psi is None:
            self.psi = self.grid.zeros()
        if self.log_mu_ref is None:
            self.log_mu_ref = operator.log_det(self.g)

    @property
    def n(self):
        return self.grid.n

    @cached_property
    def theta(self):
        return forms.power_matrix(self.g, self.p - 1)

    @cached_property
    def omega_p(self):
        return forms.minor_matrix(self.g, self.p)

    @cached_property
    def log_det_g(self):
        return operator.log_det(self.g)

    @cached_property
    def flat(self) -> bool:
        return bool(np.allclose(self.g, np.eye(self.n), atol=1e-14, rtol=0))

    @cached_property
    def _omega_p_inv_chol(self):
        return np.linalg.inv(np.linalg.cholesky(self.omega_p))

    @property
    def exponent(self):
        return operator.density_exponent(self.n, self.p)

    def Z(self, u, X=None):
        hess = self.grid.spectral_hessian(u)
        return (self.X if X is None else X) + forms.wedge_11(hess, self.theta, self.p)

    def min_relative_eigenvalue(self, Z) -> np.ndarray:
        if self.flat:
            return forms.min_eigenvalue(Z)
        L = self._omega_p_inv_chol
        reduced = L @ Z @ np.conj(np.swapaxes(L, -1, -2))
        return np.linalg.eigvalsh(forms.hermitian_part(reduced))[..., 0]

    def log_density(self, Z):
        """``log mu_Z = (n/(pN)) log det Z`` (raises on non-PD ``Z``)."""
        return self.exponent * operator.log_det(Z) + forms.LOG_VOLUME_CALIBRATION

    def residual(self, u, b=0.0, psi=None, X=None):
        Z = self.Z(u, X)
        psi = self.psi if psi is None else psi
        return operator.residual(Z, self.g, psi, b, self.p)


def flat_problem(grid: TorusGrid, p: int, psi=None, X=None, phi=None) -> ProblemSpec:
    """Problem with ``omega = omega_flat + i ddbar phi`` and ``X = omega^p`` by default."""
    if phi is None:
        g = np.broadcast_to(np.eye(grid.n), grid.shape + (grid.n, grid.n)).astype(complex)
    else:
        g = make_metric(phi, grid).astype(complex)
    if X is None:
        X = forms.minor_matrix(g, p)
    return ProblemSpec(grid=grid, p=p, g=g, X=np.asarray(X, dtype=complex), psi=psi, phi=phi)


def manufactured_problem(u_star, spec: ProblemSpec) -> np.ndarray:
    """``psi`` for which ``(u_star - mean, b = 0)`` solves the discrete equation exactly."""
    Z = spec.Z(u_star)
    forms.check_positive(Z, "Z[u_star]")
    return spec.exponent * operator.log_det(Z) - spec.log_det_g - forms.LOG_VOLUME_CALIBRATION


def max_safe_amplitude(profile, spec: ProblemSpec, hi=1e3, iters=60) -> float:
    """Largest ``a`` with ``Z[a * profile]`` positive-definite (bisection)."""
    def admissible(a):
        try:
            forms.check_positive(spec.Z(a * profile), "Z")
        except PositivityError:
            return False
        return True

    lo = 0.0
    if admissible(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            lo = mid
        else:
            hi = mid
    return lo
