"""Seeded verification campaigns for the exactly checkable identities.

Each suite draws its samples from one Philox stream, so a seed reproduces
the report bit for bit (``duration_ms`` aside).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import forms, operator
from .multiindex import binomial, build_index_table

PD_SHIFT = 1e-3


@dataclass
class SuiteReport:
    suite: str
    trials: int
    failures: int
    worst_margin: float
    seed: int
    duration_ms: float = 0.0
    details: dict = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_json(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "details"}
        return json.dumps(payload)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def random_pd(rng, k, shift=PD_SHIFT):
    """``B B* + shift I`` with complex Gaussian ``B``."""
    B = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    return B @ B.conj().T + shift * np.eye(k)


def random_hermitian(rng, k):
    B = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    return 0.5 * (B + B.conj().T)


def random_complex(rng, k):
    return rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))


class _Tally:
    def __init__(self):
        self.failures = 0
        self.worst = np.inf
        self.by_check = {}

    def add(self, name, margin):
        """Record a margin; a check passes when its margin is >= 0."""
        margin = float(margin)
        self.worst = min(self.worst, margin)
        entry = self.by_check.setdefault(name, {"failures": 0, "worst_margin": np.inf})
        entry["worst_margin"] = min(entry["worst_margin"], margin)
        if not margin >= 0:
            self.failures += 1
            entry["failures"] += 1


def _finish(name, trials, seed, tally, start):
    worst = tally.worst if np.isfinite(tally.worst) else 0.0
    return SuiteReport(name, trials, tally.failures, worst, seed,
                       1e3 * (time.perf_counter() - start), tally.by_check)


def run_inversion_lemma_suite(trials=1000, seed=0, n=5, matrices=None) -> SuiteReport:
    """``a^{i ibar} a_{i ibar} >= 1`` for random PD Hermitian ``A``.

    Margin: ``min_i a^{i ibar} a_{i ibar} - 1 + 1e-12``.
    """
    start = time.perf_counter()
    rng = rng_for(seed)
    tally = _Tally()
    if matrices is None:
        matrices = (random_pd(rng, n) for _ in range(trials))
    count = 0
    for A in matrices:
        Ainv = np.linalg.inv(A)
        prod = np.real(np.diag(Ainv)) * np.real(np.diag(A))
        tally.add("inverse_diagonal", np.min(prod) - 1.0 + 1e-12)
        count += 1
    return _finish("inversion_lemma", count, seed, tally, start)


def run_algebra_suite(trials=100, seed=0, n=4, p=2, tol=1e-10, compound_fn=None) -> SuiteReport:
    """Sylvester-Franke, compound functoriality, the trace identity and the
    trace lower bound, each at relative tolerance ``tol``.

    ``compound_fn`` replaces :func:`ppma.forms.compound` (negative controls).
    """
    start = time.perf_counter()
    compound_fn = compound_fn or forms.compound
    rng = rng_for(seed)
    N = binomial(n, p)
    power = p * N // n
    tally = _Tally()
    for _ in range(trials):
        A = random_complex(rng, n)
        B = random_complex(rng, n)
        CA = compound_fn(A, p)
        CB = compound_fn(B, p)
        CAB = compound_fn(A @ B, p)

        lhs = np.linalg.det(CA)
        rhs = np.linalg.det(A) ** power
        tally.add("sylvester_franke", tol - abs(lhs - rhs) / max(abs(rhs), 1e-300))

        err = np.linalg.norm(CAB - CA @ CB) / max(np.linalg.norm(CA) * np.linalg.norm(CB), 1e-300)
        tally.add("functoriality", tol - err)

        g = random_pd(rng, n)
        rel = np.linalg.det(compound_fn(g, p)) ** (n / (p * N))
        tally.add("volume_density", tol - abs(rel - np.linalg.det(g).real) / abs(np.linalg.det(g)))

        X = random_pd(rng, N)
        U = random_hermitian(rng, N)
        Z = X + U
        # shift U so that Z stays positive-definite
        lam = forms.min_eigenvalue(Z)
        if lam <= 0.1:
            U = U + (0.1 - lam) * np.eye(N)
            Z = X + U
        Zinv = np.linalg.inv(Z)
        total = np.real(np.trace(Zinv @ Z))
        tally.add("trace_identity", tol - abs(total - N) / N)
        margin = operator.a_coefficient_margin(Z, X, p)
        scale = 1.0 + abs(np.real(np.trace(Zinv @ X)))
        tally.add("trace_lower_bound", float(margin) / scale + tol)
    return _finish(f"algebra_n{n}_p{p}", trials, seed, tally, start)


def run_operator_suite(trials=500, seed=0, n=3, p=2, spec=None, fd_step=1e-4,
                       fd_tol=1e-6, concavity_ceiling=1e-12) -> SuiteReport:
    """Ellipticity, concavity, restricted-Hessian sign and finite-difference checks.

    Samples ``Z`` as random PD matrices, or, when a problem ``spec`` is given,
    as ``Z = X + wedge_11(a, omega^(p-1))`` at random grid points with a
    random Hermitian ``a`` scaled to keep ``Z`` positive.
    """
    start = time.perf_counter()
    rng = rng_for(seed)
    if spec is not None:
        n, p = spec.n, spec.p
    N = binomial(n, p)
    table = build_index_table(n, p)
    tally = _Tally()
    for _ in range(trials):
        if spec is None:
            g = None
            Z = random_pd(rng, N)
        else:
            flat_index = rng.integers(spec.grid.size)
            loc = np.unravel_index(flat_index, spec.grid.shape)
            g = spec.g[loc]
            X = spec.X[loc]
            a = random_hermitian(rng, n)
            W = forms.wedge_11(a, forms.power_matrix(g, p - 1), p)
            Z = X + _scaled_into_cone(X, W)
        G = operator.linearization(Z, p, g)
        tally.add("ellipticity", float(np.min(np.linalg.eigvalsh(G))))

        eta = random_hermitian(rng, n)
        q = operator.concavity_form(Z, eta, p, g)
        tally.add("concavity", concavity_ceiling - q)

        k1 = rng.integers(0, N + 1)
        k2 = rng.integers(0, N + 1)
        S1 = [table[i] for i in rng.choice(N, size=k1, replace=False)]
        S2 = [table[i] for i in rng.choice(N, size=k2, replace=False)]
        H = operator.restricted_hessian(Z, S1, S2, p, g)
        tally.add("restricted_concavity", concavity_ceiling - operator.hessian_form(H, eta))

        # step measured in the scale of Z: normalise so |Z^-1/2 W Z^-1/2| = 1
        theta = operator._theta(n, p, g)
        L = np.linalg.cholesky(Z)
        Linv = np.linalg.inv(L)
        W = forms.wedge_11(eta, theta, p)
        size = np.max(np.abs(np.linalg.eigvalsh(forms.hermitian_part(Linv @ W @ Linv.conj().T))))
        eta = eta / size
        W = W / size
        q = q / size**2
        h = fd_step

        def logdet(eps):
            return float(np.real(np.linalg.slogdet(Z + eps * W)[1]))

        fd_grad = (logdet(h) - logdet(-h)) / (2 * h)
        grad = float(np.real(np.sum(G * eta)))
        tally.add("gradient_fd", fd_tol - abs(fd_grad - grad) / max(abs(grad), 1.0))

        # log det(Z + sW) - log det Z = sum log1p(s mu_k) avoids cancellation
        mu = np.linalg.eigvalsh(forms.hermitian_part(Linv @ W @ Linv.conj().T))
        fd_hess = float(np.sum(np.log1p(h * mu) + np.log1p(-h * mu))) / h**2
        tally.add("hessian_fd", 1e-5 - abs(fd_hess - q) / max(abs(q), 1.0))
    return _finish(f"operator_n{n}_p{p}", trials, seed, tally, start)


def _scaled_into_cone(X, W):
    """Scale ``W`` so that ``X + W`` has relative eigenvalues >= 0.2."""
    L = np.linalg.cholesky(X)
    Linv = np.linalg.inv(L)
    lam = np.linalg.eigvalsh(forms.hermitian_part(Linv @ W @ Linv.conj().T))
    low = lam[0]
    if low < -0.8:
        return W * (0.8 / -low)
    return W


def run_current_positivity_suite(trials=1000, seed=0, n=4, p=2, probes=10) -> SuiteReport:
    """Pair a fresh random PD ``Z`` per trial with ``probes`` random strongly
    positive elementary forms; every pairing must be strictly positive.
    """
    start = time.perf_counter()
    rng = rng_for(seed)
    N = binomial(n, p)
    tally = _Tally()
    for _ in range(trials):
        Z = random_pd(rng, N)
        ok, worst = forms.current_positivity_probe(Z, n, p, probes, int(rng.integers(2**63)))
        tally.add("current_positive", worst if ok else -abs(worst))
    return _finish(f"current_positivity_n{n}_p{p}", trials, seed, tally, start)
