"""Newton, continuity and parabolic-flow solvers for the discrete equation

    (n/(pN)) log det Z[u] - log det g - psi - b = 0,   Z[u] = X + U[u],

on a torus grid, with ``u`` mean-zero and the constant ``b`` solved for.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from . import forms, operator
from .errors import (
    LinearSolveError,
    LineSearchError,
    NonConvergenceError,
    ParameterError,
    PositivityError,
    StiffnessError,
)
from .grid import ProblemSpec, mean_zero

log = logging.getLogger(__name__)

CSV_COLUMNS = ("iter", "t", "res_sup", "b", "min_eig", "udot_sup", "dt", "wallclock_ms")


@dataclass
class SolverState:
    u: np.ndarray
    b: float = 0.0
    t: float = 0.0
    residual_sup: float = np.inf
    min_eig: float = np.nan
    steps: int = 0
    udot_history: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def sup_normalized(self):
        """The pair ``(u - sup u, b)``: same equation, ``sup u = 0`` gauge."""
        return self.u - np.max(self.u), self.b


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 30
    krylov_tol: float = 1e-10
    krylov_maxiter: int = 500
    restart: int = 60
    positivity_margin: float = 0.1
    step_floor: float = 1e-8


class _Linearized:
    """``L v = (n/(pN)) sum_ij G^{i jbar} v_{i jbar}`` frozen at one ``Z``."""

    def __init__(self, spec: ProblemSpec, Z):
        self.spec = spec
        self.grid = spec.grid
        G = operator.linearization(Z, spec.p, spec.g)
        c = spec.exponent
        # move (i, j) to the front to match grid.hessian_parts
        G = np.moveaxis(G, (-2, -1), (0, 1))
        self.GA = c * np.real(G)
        self.GB = c * np.imag(G)
        SA, SB = self.grid.hessian_symbols
        Gbar = np.mean(G, axis=tuple(range(2, G.ndim)))
        symbol = np.einsum("ij,ij...->...", np.real(Gbar), SA) - np.einsum(
            "ij,ij...->...", np.imag(Gbar), SB
        )
        self.symbol = c * symbol
        self.lambda_max = float(np.max(np.linalg.eigvalsh(np.moveaxis(G, (0, 1), (-2, -1)))))

    def apply(self, v):
        A, B = self.grid.hessian_parts(v)
        return np.einsum("ij...,ij...->...", self.GA, A) - np.einsum(
            "ij...,ij...->...", self.GB, B
        )

    def apply_flat(self, v):
        return self.grid.ifft(self.symbol * self.grid.fft(v))

    def solve_flat(self, f):
        """Invert the mean-G operator on nonconstant modes (zero mode -> 0)."""
        fh = self.grid.fft(f)
        sym = self.symbol.copy()
        zero = (0,) * sym.ndim
        sym[zero] = 1.0
        out = fh / sym
        out[zero] = 0.0
        return self.grid.ifft(out)

    def solve_implicit(self, f, dt, shift=0.0):
        """Solve ``(1 - dt (L_flat - shift)) w = f`` on all modes."""
        fh = self.grid.fft(f)
        return self.grid.ifft(fh / (1.0 - dt * (self.symbol - shift)))


def _bordered_solve(lin: _Linearized, r, opts: NewtonOptions):
    """Solve ``L v - db = -r`` with ``mean(v) = 0``; returns ``(v, db, iterations)``."""
    grid = lin.grid
    shape = grid.shape
    size = grid.size

    def matvec(w):
        w = w.reshape(shape)
        mw = np.mean(w)
        return (lin.apply(w - mw) - mw).ravel()

    def precond(y):
        y = y.reshape(shape)
        my = np.mean(y)
        w = lin.solve_flat(y - my) - my
        return w.ravel()

    A = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
    M = spla.LinearOperator((size, size), matvec=precond, dtype=float)
    rhs = -np.asarray(r, dtype=float).ravel()
    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    x0 = precond(rhs)
    w, info = spla.gmres(
        A, rhs, x0=x0, M=M, rtol=opts.krylov_tol, atol=0.0, restart=opts.restart,
        maxiter=max(1, opts.krylov_maxiter // opts.restart), callback=cb,
        callback_type="pr_norm",
    )
    if info > 0:
        true_res = np.linalg.norm(matvec(w) - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if true_res > 1e3 * opts.krylov_tol:
            raise LinearSolveError(
                f"Krylov solve stagnated (relative residual {true_res:.2e})",
                {"iterations": counter["n"]},
            )
    w = w.reshape(shape)
    mw = float(np.mean(w))
    return w - mw, mw, counter["n"]


def _evaluate(spec: ProblemSpec, u, b, psi, X=None):
    Z = spec.Z(u, X)
    lam = spec.min_relative_eigenvalue(Z)
    min_eig = float(np.min(lam))
    if np.any(lam <= forms.pd_floor(Z)):
        loc = np.unravel_index(np.argmin(lam), lam.shape)
        raise PositivityError("Z left the positive cone", min_eig, loc)
    r = spec.exponent * operator.log_det(Z) - spec.log_det_g - forms.LOG_VOLUME_CALIBRATION - psi - b
    return Z, r, min_eig


def initial_state(spec: ProblemSpec, psi=None, u0=None, b0=0.0) -> SolverState:
    psi = spec.psi if psi is None else psi
    u = spec.grid.zeros() if u0 is None else mean_zero(np.asarray(u0, dtype=float))
    _, r, min_eig = _evaluate(spec, u, b0, psi)
    return SolverState(u=u, b=float(b0), residual_sup=float(np.max(np.abs(r))), min_eig=min_eig)


def newton_step(state: SolverState, spec: ProblemSpec, psi=None, opts: NewtonOptions = None):
    """One damped Newton step; returns ``(new_state, report)``."""
    opts = opts or NewtonOptions()
    psi = spec.psi if psi is None else psi
    Z, r, min_eig = _evaluate(spec, state.u, state.b, psi)
    res0 = float(np.max(np.abs(r)))
    lin = _Linearized(spec, Z)
    v, db, iters = _bordered_solve(lin, r, opts)

    s = 1.0
    while True:
        u_new = mean_zero(state.u + s * v)
        b_new = state.b + s * db
        try:
            _, r_new, eig_new = _evaluate(spec, u_new, b_new, psi)
            res_new = float(np.max(np.abs(r_new)))
            ok = eig_new >= opts.positivity_margin * min_eig and (
                res_new < res0 or res_new <= 1e-13
            )
        except PositivityError:
            ok = False
        if ok:
            break
        s *= 0.5
        if s < opts.step_floor:
            raise LineSearchError(
                "backtracking exhausted", {"residual_sup": res0, "min_eig": min_eig}
            )
    new = replace(
        state, u=u_new, b=float(b_new), residual_sup=res_new, min_eig=float(eig_new),
        steps=state.steps + 1, history=list(state.history),
    )
    report = {
        "step": s, "v_sup": float(np.max(np.abs(v))), "db": float(db),
        "krylov_iterations": iters, "res_before": res0, "res_after": res_new,
        "min_eig": float(eig_new),
    }
    return new, report


def newton_solve(spec: ProblemSpec, psi=None, tol=1e-10, max_iter=30, u0=None, b0=0.0,
                 opts: NewtonOptions = None, callback=None) -> SolverState:
    """Damped Newton-Krylov iteration for ``(u, b)``, ``u`` kept mean-zero."""
    opts = replace(opts or NewtonOptions(), tol=tol, max_iter=max_iter)
    psi = spec.psi if psi is None else psi
    clock = time.perf_counter()
    state = initial_state(spec, psi, u0, b0)
    _record(state, state.steps, 0.0, state.residual_sup, state.b, state.min_eig, np.nan, np.nan, clock)
    if callback:
        callback(state, None)
    while state.residual_sup > tol:
        if state.steps >= max_iter:
            raise NonConvergenceError(
                f"Newton did not reach tol={tol:g} in {max_iter} iterations",
                {"residual_sup": state.residual_sup, "b": state.b},
            )
        state, report = newton_step(state, spec, psi, opts)
        log.debug("newton %d: %s", state.steps, report)
        _record(state, state.steps, 0.0, state.residual_sup, state.b, state.min_eig,
                np.nan, report["step"], clock)
        if callback:
            callback(state, report)
    return state


def _record(state, it, t, res, b, min_eig, udot, dt, clock):
    state.history.append({
        "iter": it, "t": t, "res_sup": res, "b": b, "min_eig": min_eig,
        "udot_sup": udot, "dt": dt, "wallclock_ms": 1e3 * (time.perf_counter() - clock),
    })


def continuity_solve(spec: ProblemSpec, psi=None, steps=10, tol=1e-10, max_iter=30,
                     max_refinements=4) -> list:
    """Follow ``mu_{Z[u_t]} = e^(t psi' + b_t) mu_X`` from ``t = 0`` to ``t = 1``.

    ``psi'`` is chosen so that the ``t = 1`` problem is the one
    :func:`newton_solve` solves for ``psi``; ``u_0 = 0`` and ``b_0 = 0``.
    Returns one state per accepted value of ``t``.
    """
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    psi = spec.psi if psi is None else psi
    psi_start = spec.exponent * operator.log_det(spec.X) - spec.log_det_g - forms.LOG_VOLUME_CALIBRATION

    def target(t):
        return (1.0 - t) * psi_start + t * psi

    state = initial_state(spec, target(0.0))
    state.t = 0.0
    states = [state]
    t, dt = 0.0, 1.0 / steps
    refinements = 0
    while t < 1.0 - 1e-14:
        t_next = min(1.0, t + dt)
        try:
            new = newton_solve(spec, target(t_next), tol=tol, max_iter=max_iter,
                               u0=states[-1].u, b0=states[-1].b)
        except (NonConvergenceError, PositivityError) as exc:
            if refinements >= max_refinements:
                raise NonConvergenceError(f"continuity path failed at t={t_next:.6g}: {exc}",
                                          {"t": t_next}) from exc
            refinements += 1
            dt *= 0.5
            continue
        new.t = t_next
        states.append(new)
        t = t_next
    return states


@dataclass
class FlowConfig:
    """Settings for :func:`flow_run`.

    ``variant``: ``plain`` (du/dt = log mu_Z/mu_ref - psi), ``normalized``
    (du/dt = log mu_Z/(mu_ref e^psi) - u) or ``background`` (time-dependent
    background ``X(t)`` and density ``theta = mu_ref e^psi``).
    """

    variant: str = "plain"
    dt: float = None
    dt_floor: float = 1e-8
    positivity_margin: float = 0.1
    max_time: float = 50.0
    tol: float = 1e-10
    scheme: str = "explicit"
    log_mu_ref: np.ndarray = None
    background: object = None
    dt_safety: float = 0.5
    dt_update_every: int = 25
    record_every: int = 1

    def __post_init__(self):
        if self.variant not in ("plain", "normalized", "background"):
            raise ParameterError(f"unknown flow variant {self.variant!r}")
        if self.scheme not in ("explicit", "imex"):
            raise ParameterError(f"unknown time scheme {self.scheme!r}")
        if not self.dt_floor > 0:
            raise ParameterError("dt floor must be positive")
        if not 0 < self.positivity_margin < 1:
            raise ParameterError("positivity margin must lie in (0, 1)")
        if self.variant == "background" and self.background is None:
            raise ParameterError("background variant needs a background X(t)")


def linear_background(X0, X1, T_prime):
    """``X(t) = ((T' - t) X0 + t X1) / T'``, the interpolated background path."""
    def background(t):
        s = min(max(t / T_prime, 0.0), 1.0)
        return (1.0 - s) * X0 + s * X1
    return background


def flow_velocity(spec: ProblemSpec, u, t, psi, config: FlowConfig):
    """``du/dt`` for the configured variant, with ``Z`` and its min eigenvalue."""
    X = config.background(t) if config.variant == "background" else None
    log_ref = spec.log_mu_ref if config.log_mu_ref is None else config.log_mu_ref
    Z = spec.Z(u, X)
    lam = spec.min_relative_eigenvalue(Z)
    if np.any(lam <= forms.pd_floor(Z)):
        loc = np.unravel_index(np.argmin(lam), lam.shape)
        raise PositivityError("Z left the positive cone", float(np.min(lam)), loc)
    rate = spec.log_density(Z) - log_ref - psi
    if config.variant == "normalized":
        rate = rate - u
    return rate, Z, float(np.min(lam))


def flow_run(spec: ProblemSpec, psi=None, config: FlowConfig = None, u0=None):
    """Time-step a parabolic flow from ``u(0) = 0``.

    Returns ``(state, series)`` where ``series`` is the list of CSV rows.  The
    plain and background variants store the normalised ``u - mean(u)`` and reports
    ``b = mean(du/dt)``; it stops when the oscillation of ``du/dt`` drops below
    ``tol``.  The normalized variant stops when ``sup |du/dt| < tol``.
    """
    config = config or FlowConfig()
    psi = spec.psi if psi is None else psi
    clock = time.perf_counter()
    u = spec.grid.zeros() if u0 is None else np.array(u0, dtype=float)
    t = 0.0
    rate, Z, min_eig = flow_velocity(spec, u, t, psi, config)
    lin = _Linearized(spec, Z)
    dt = config.dt if config.dt is not None else _stable_dt(lin, spec, config)
    shift = 1.0 if config.variant == "normalized" else 0.0
    series = []
    state = SolverState(u=u, t=t, min_eig=min_eig)
    it = 0
    offset = 0.0  # accumulated mean removed from the plain flow

    def stat(rate):
        if config.variant != "normalized":
            mean_rate = float(np.mean(rate))
            return float(np.max(np.abs(rate - mean_rate))), mean_rate
        return float(np.max(np.abs(rate))), 0.0

    res, bhat = stat(rate)
    udot_sup = float(np.max(np.abs(rate)))
    row = dict(zip(CSV_COLUMNS, (0, t, res, bhat, min_eig, udot_sup, dt,
                                 1e3 * (time.perf_counter() - clock))))
    series.append(row)
    state.udot_history.append((t, udot_sup))

    while res >= config.tol and t < config.max_time - 1e-12:
        step = min(dt, config.max_time - t)
        while True:
            if config.scheme == "explicit":
                u_new = u + step * rate
            else:
                stiff = lin.apply_flat(u) - shift * u
                u_new = lin.solve_implicit(u + step * (rate - stiff), step, shift)
            try:
                rate_new, Z_new, eig_new = flow_velocity(spec, u_new, t + step, psi, config)
                ok = eig_new >= config.positivity_margin * min_eig
            except PositivityError:
                ok = False
            if ok:
                break
            step *= 0.5
            dt = step
            if step < config.dt_floor:
                loc = None
                try:
                    lam = spec.min_relative_eigenvalue(spec.Z(u_new))
                    loc = np.unravel_index(np.argmin(lam), lam.shape)
                except Exception:  # pragma: no cover - best-effort report
                    pass
                raise StiffnessError(
                    f"dt floor {config.dt_floor:g} reached at t={t:.6g}",
                    {"t": t, "worst_point": loc, "min_eig": min_eig},
                )
        it += 1
        t += step
        u, rate, Z, min_eig = u_new, rate_new, Z_new, eig_new
        if config.variant != "normalized":
            mu = float(np.mean(u))
            offset += mu
            u = u - mu
        if config.dt is None and config.scheme == "explicit" and it % config.dt_update_every == 0:
            lin = _Linearized(spec, Z)
            dt = min(max(dt, _stable_dt(lin, spec, config)), _stable_dt(lin, spec, config))
        res, bhat = stat(rate)
        udot_sup = float(np.max(np.abs(rate)))
        state.udot_history.append((t, udot_sup))
        if it % config.record_every == 0 or res < config.tol:
            series.append(dict(zip(CSV_COLUMNS, (it, t, res, bhat, min_eig, udot_sup, step,
                                                 1e3 * (time.perf_counter() - clock)))))
    state.u = u
    state.t = t
    state.steps = it
    state.b = bhat if config.variant != "normalized" else 0.0
    state.residual_sup = res
    state.min_eig = min_eig
    state.history = series
    return state, series


def _stable_dt(lin: _Linearized, spec: ProblemSpec, config: FlowConfig):
    if config.scheme == "imex":
        return 0.5
    grid = spec.grid
    kmax2 = grid.naxes * (grid.m // 2) ** 2
    lam = spec.exponent * lin.lambda_max * kmax2 / 4.0
    if config.variant == "normalized":
        lam += 1.0
    return config.dt_safety * 2.0 / lam


def form_flow_reconstruct(state: SolverState, spec: ProblemSpec, t=0.0, background=None,
                          class_tol=1e-8):
    """``Omega_u = X(t) + wedge_11(ddbar u, omega^(p-1))`` with positivity and class checks.

    The i ddbar part must have zero grid mean in every component; the check
    uses ``class_tol`` relative to the size of the background.
    """
    X = spec.X if background is None else background(t)
    Omega = X + forms.wedge_11(spec.grid.spectral_hessian(state.u), spec.theta, spec.p)
    lam = spec.min_relative_eigenvalue(Omega)
    if np.any(lam <= forms.pd_floor(Omega)):
        loc = np.unravel_index(np.argmin(lam), lam.shape)
        raise PositivityError("reconstructed form is not positive", float(np.min(lam)), loc)
    axes = tuple(range(spec.grid.naxes))
    defect = np.max(np.abs(np.mean(Omega, axis=axes) - np.mean(X, axis=axes)))
    if defect > class_tol * (1.0 + np.max(np.abs(X))):
        raise NonConvergenceError(f"class not preserved: component mean defect {defect:.2e}")
    return Omega


def fixed_point_defect(spec: ProblemSpec, Omega, log_mu_ref=None, psi=None):
    """``sup |Omega - X - wedge_11(ddbar log(mu_Omega / (mu_ref e^psi)))|``."""
    log_ref = spec.log_mu_ref if log_mu_ref is None else log_mu_ref
    psi = spec.psi if psi is None else psi
    f = spec.log_density(Omega) - log_ref - psi
    rhs = spec.X + forms.wedge_11(spec.grid.spectral_hessian(f), spec.theta, spec.p)
    return float(np.max(np.abs(Omega - rhs)))
