"""Manufactured problems from closed-form potentials.

Potentials are sympy expressions (or strings) in ``x1..xn, y1..yn``.  Their
complex Hessians are differentiated symbolically, so the resulting ``psi`` is
the continuum right-hand side sampled on the grid, and the discrete solution
differs from the potential by the discretisation error alone.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from . import forms, operator
from .errors import ParameterError
from .grid import ProblemSpec, TorusGrid


def symbols(n):
    xs = sp.symbols(f"x1:{n + 1}", real=True)
    ys = sp.symbols(f"y1:{n + 1}", real=True)
    return xs, ys


def parse(expr, n):
    xs, ys = symbols(n)
    if isinstance(expr, str):
        names = {str(s): s for s in xs + ys}
        names.update({"pi": sp.pi, "exp": sp.exp, "cos": sp.cos, "sin": sp.sin, "log": sp.log})
        expr = sp.sympify(expr, locals=names)
    return sp.sympify(expr)


def complex_hessian(expr, n):
    """Symbolic ``u_{i jbar} = (u_{x_i x_j} + u_{y_i y_j})/4 + i (u_{x_i y_j} - u_{y_i x_j})/4``."""
    xs, ys = symbols(n)
    u = parse(expr, n)
    H = sp.zeros(n, n)
    for i in range(n):
        for j in range(n):
            H[i, j] = sp.Rational(1, 4) * (
                sp.diff(u, xs[i], xs[j]) + sp.diff(u, ys[i], ys[j])
                + sp.I * (sp.diff(u, xs[i], ys[j]) - sp.diff(u, ys[i], xs[j]))
            )
    return H


def evaluate(expr, grid: TorusGrid, dtype=float):
    """Sample a scalar expression on the grid."""
    n = grid.n
    xs, ys = symbols(n)
    expr = parse(expr, n)
    if grid.mode == "reduced" and expr.free_symbols & set(ys):
        raise ParameterError("reduced-mode expressions must not depend on y")
    f = sp.lambdify(xs + ys, expr, "numpy")
    values = f(*grid.x, *grid.y)
    return np.broadcast_to(np.asarray(values, dtype=dtype), grid.shape).copy()


def evaluate_hessian(expr, grid: TorusGrid):
    n = grid.n
    H = complex_hessian(expr, n)
    out = np.zeros(grid.shape + (n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            out[..., i, j] = evaluate(H[i, j], grid, dtype=complex)
    return out


def exact_problem(u_expr, grid: TorusGrid, p: int, phi_expr=None, background=None):
    """``(spec, psi, u_star)`` with ``psi`` computed from exact derivatives.

    ``background`` is ``None`` (``X = omega^p``) or a callable taking the
    metric field and returning the ``X`` field.
    """
    n = grid.n
    g = np.broadcast_to(np.eye(n, dtype=complex), grid.shape + (n, n)).copy()
    phi = None
    if phi_expr is not None:
        g = g + evaluate_hessian(phi_expr, grid)
        phi = evaluate(phi_expr, grid)
    X = forms.minor_matrix(g, p) if background is None else background(g)
    spec = ProblemSpec(grid=grid, p=p, g=g, X=X, phi=phi)
    u_star = evaluate(u_expr, grid)
    Z = X + forms.wedge_11(evaluate_hessian(u_expr, grid), spec.theta, p)
    psi = spec.exponent * operator.log_det(Z) - spec.log_det_g - forms.LOG_VOLUME_CALIBRATION
    spec.psi = psi
    return spec, psi, u_star
