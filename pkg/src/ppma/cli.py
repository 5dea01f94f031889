"""Command-line front end: ``ppma {solve,continuity,flow,verify,study}``.

Configuration is flat ``key = value`` text with dotted sections, for example::

    command = solve
    geometry.n = 2
    geometry.p = 1
    geometry.m = 16
    data.amplitude = 0.05

Command-line flags override the file.  Every run writes ``config.txt`` (the
effective configuration), ``summary.json`` and at least one CSV into the
output directory, also when the run fails.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import forms, io, manufactured, verify
from .errors import ConfigError, PositivityError, PPMAError, VerificationFailure
from .grid import ProblemSpec, TorusGrid, make_metric, manufactured_problem, mean_zero
from .multiindex import MAX_DIM
from .solvers import (
    CSV_COLUMNS,
    FlowConfig,
    continuity_solve,
    flow_run,
    linear_background,
    newton_solve,
)

log = logging.getLogger(__name__)

COMMANDS = ("solve", "continuity", "flow", "verify", "study")
SUITES = ("inversion", "algebra", "operator", "current")
MAX_GRID_POINTS = 2 ** 21
STUDY_RESOLUTIONS = {"full": (8, 12, 16), "reduced": (8, 16, 32)}
STUDY_COLUMNS = ("m", "points", "error_sup", "ratio", "newton_iterations", "residual_sup", "b")


def _choice(*options):
    def check(value):
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value
    return check


def _int_list(value):
    return tuple(int(v) for v in value.split(",") if v.strip())


def _suite_list(value):
    items = tuple(v.strip() for v in value.split(",") if v.strip())
    for item in items:
        if item not in SUITES:
            raise ValueError(f"unknown suite {item!r}")
    return items


def _optional_float(value):
    return None if value in ("", "auto", "none") else float(value)


def _bool(value):
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


# key -> (parser, default)
SCHEMA = {
    "command": (_choice(*COMMANDS), "solve"),
    "out": (str, "runs/ppma"),
    "seed": (int, 0),
    "geometry.n": (int, 2),
    "geometry.p": (int, 1),
    "geometry.m": (int, 16),
    "geometry.mode": (_choice("full", "reduced"), "full"),
    "metric.potential": (str, "0"),
    "background.factor": (str, "1"),
    "data.kind": (_choice("manufactured", "exact", "psi", "file"), "manufactured"),
    "data.profile": (_choice("trig", "exp"), "trig"),
    "data.amplitude": (float, 0.05),
    "data.frequency": (int, 1),
    "data.potential": (str, ""),
    "data.psi": (str, "0"),
    "data.file": (str, ""),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 30),
    "continuity.steps": (int, 10),
    "flow.variant": (_choice("plain", "normalized", "background"), "plain"),
    "flow.scheme": (_choice("explicit", "imex"), "explicit"),
    "flow.dt": (_optional_float, None),
    "flow.max_time": (float, 50.0),
    "flow.record_every": (int, 1),
    "flow.background_start": (str, "1"),
    "flow.t_prime": (float, 1.0),
    "verify.suites": (_suite_list, ("inversion", "algebra", "operator")),
    "verify.trials": (int, 0),
    "study.resolutions": (_int_list, ()),
    "study.strict": (_bool, False),
}

ALIASES = {
    "n": "geometry.n", "p": "geometry.p", "m": "geometry.m", "mode": "geometry.mode",
    "tol": "solver.tol", "max_iter": "solver.max_iter", "variant": "flow.variant",
}


def _canonical(key):
    key = key.strip()
    key = ALIASES.get(key, key)
    if key not in SCHEMA:
        raise ConfigError("unknown configuration key", key)
    return key


def _render(value):
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


@dataclass
class RunConfig:
    """Fully resolved run configuration (dotted keys mapped to values)."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[_canonical(key)]

    @property
    def command(self):
        return self.values["command"]

    @property
    def out(self) -> Path:
        return Path(self.values["out"])

    def echo(self) -> str:
        return "".join(f"{k} = {_render(self.values[k])}\n" for k in SCHEMA)

    def write_echo(self, directory: Path):
        (directory / "config.txt").write_text(self.echo())


def read_config_text(text) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        raw[_canonical(key)] = value.strip()
    return raw


def parse_config(path=None, overrides=None) -> RunConfig:
    """Merge defaults, the optional file at ``path`` and ``overrides``, then validate."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found", "config")
        raw.update(read_config_text(path.read_text()))
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[_canonical(key)] = value
    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key not in raw:
            values[key] = default
            continue
        value = raw[key]
        if isinstance(value, str):
            try:
                value = parse(value.strip())
            except ValueError as exc:
                raise ConfigError(f"invalid value {raw[key]!r} ({exc})", key) from None
        values[key] = value
    _validate(values)
    return RunConfig(values)


def _validate(values):
    n, p, m, mode = (values[f"geometry.{k}"] for k in ("n", "p", "m", "mode"))
    if not 2 <= n <= MAX_DIM:
        raise ConfigError(f"n must lie in 2..{MAX_DIM}", "geometry.n")
    if not 1 <= p <= n - 1:
        raise ConfigError(f"p must satisfy 1 <= p <= n-1 (got p={p}, n={n})", "geometry.p")
    if m % 2:
        raise ConfigError(f"m must be even (got {m})", "geometry.m")
    if m < 8 and not (m == 6 and mode == "full" and n >= 3):
        raise ConfigError("m must be >= 8 (m = 6 only in full mode with n >= 3)", "geometry.m")
    points = m ** (2 * n if mode == "full" else n)
    if points > MAX_GRID_POINTS and values["command"] != "verify":
        raise ConfigError(f"grid has {points} points, cap is {MAX_GRID_POINTS}", "geometry.m")
    if not values["solver.tol"] > 0:
        raise ConfigError("tolerance must be positive", "solver.tol")
    if values["solver.max_iter"] < 1:
        raise ConfigError("max_iter must be >= 1", "solver.max_iter")
    if values["continuity.steps"] < 1:
        raise ConfigError("steps must be >= 1", "continuity.steps")
    if values["flow.dt"] is not None and not values["flow.dt"] > 0:
        raise ConfigError("dt must be positive", "flow.dt")
    if not values["flow.max_time"] > 0:
        raise ConfigError("max_time must be positive", "flow.max_time")
    if not values["flow.t_prime"] > 0:
        raise ConfigError("t_prime must be positive", "flow.t_prime")
    if values["data.kind"] == "file" and not values["data.file"]:
        raise ConfigError("data.kind = file needs data.file", "data.file")
    for m_i in values["study.resolutions"]:
        if m_i % 2 or m_i < 6:
            raise ConfigError(f"study resolution {m_i} must be even and >= 8", "study.resolutions")
    if values["verify.trials"] < 0:
        raise ConfigError("trials must be >= 0", "verify.trials")


# ---------------------------------------------------------------------------
# problem construction

def data_potential(cfg: RunConfig) -> str:
    """The manufactured ``u*`` as an expression string."""
    if cfg["data.potential"]:
        return cfg["data.potential"]
    n, a, k = cfg["geometry.n"], cfg["data.amplitude"], cfg["data.frequency"]
    if cfg["data.profile"] == "trig":
        return f"{a!r}*cos({k}*({' + '.join(f'x{i}' for i in range(1, n + 1))}))"
    return f"{a!r}*exp(cos({k}*x1) + sin({k}*x2))"


def _sample(expr, grid, key):
    try:
        return manufactured.evaluate(expr, grid)
    except PPMAError:
        raise
    except Exception as exc:  # sympy parse or evaluation failure
        raise ConfigError(f"cannot evaluate {expr!r}: {exc}", key) from None


def build_problem(cfg: RunConfig, m=None):
    """Return ``(spec, psi, u_star)``; ``u_star`` is ``None`` without a manufactured solution."""
    grid = TorusGrid(cfg["geometry.n"], m or cfg["geometry.m"], cfg["geometry.mode"])
    p = cfg["geometry.p"]
    kind = cfg["data.kind"]
    factor = _sample(cfg["background.factor"], grid, "background.factor")
    if np.any(factor <= 0):
        raise PositivityError("background factor must be positive", float(np.min(factor)))

    if kind == "exact":
        phi_expr = cfg["metric.potential"]
        u_expr = data_potential(cfg)
        _sample(u_expr, grid, "data.potential")
        spec, psi, u_star = manufactured.exact_problem(
            u_expr, grid, p, phi_expr=None if phi_expr.strip() == "0" else phi_expr,
            background=lambda g: factor[..., None, None] * forms.minor_matrix(g, p),
        )
        return spec, psi, mean_zero(u_star)

    phi = _sample(cfg["metric.potential"], grid, "metric.potential")
    g = make_metric(phi, grid).astype(complex)
    X = factor[..., None, None] * forms.minor_matrix(g, p)
    spec = ProblemSpec(grid=grid, p=p, g=g, X=X, phi=phi)
    u_star = None
    if kind == "manufactured":
        u_star = _sample(data_potential(cfg), grid, "data.potential")
        psi = manufactured_problem(u_star, spec)
        u_star = mean_zero(u_star)
    elif kind == "psi":
        psi = _sample(cfg["data.psi"], grid, "data.psi")
    else:
        header, psi = io.read_snapshot(cfg["data.file"])
        if (header["n"], header["m"], header["mode"]) != (grid.n, grid.m, grid.mode):
            raise ConfigError("snapshot geometry does not match the configuration", "data.file")
        psi = np.real(psi)
    spec.psi = psi
    return spec, psi, u_star


# ---------------------------------------------------------------------------
# commands

class _Run:
    """Collects outputs so they can be written whether or not the command succeeds."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = cfg.out
        self.rows = []
        self.csv_name = "diagnostics.csv"
        self.csv_columns = CSV_COLUMNS
        self.summary = {
            "schema": io.SUMMARY_SCHEMA,
            "command": cfg.command,
            "status": "ok",
            "failure_class": None,
            "message": None,
            "n": cfg["geometry.n"], "p": cfg["geometry.p"],
            "m": cfg["geometry.m"], "mode": cfg["geometry.mode"],
            "seed": cfg["seed"],
            "timings_ms": {},
        }
        self.fields = {}

    def snapshot(self, name, values, m=None):
        self.fields[name] = (values, m or self.cfg["geometry.m"])

    def flush(self):
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg.write_echo(self.out)
        io.write_csv(self.out / self.csv_name, self.rows, self.csv_columns)
        for name, (values, m) in self.fields.items():
            io.write_snapshot(self.out / f"{name}.bin", values, self.cfg["geometry.n"],
                              self.cfg["geometry.p"], m, self.cfg["geometry.mode"])
        io.write_json(self.out / "summary.json", self.summary)


def _recovery(run, u, b, u_star):
    if u_star is not None:
        run.summary["recovery_error_sup"] = float(np.max(np.abs(mean_zero(u) - u_star)))
    run.summary["b"] = float(b)


def cmd_solve(run: _Run):
    cfg = run.cfg
    t0 = time.perf_counter()
    spec, psi, u_star = build_problem(cfg)
    run.snapshot("psi", psi)
    run.summary["timings_ms"]["setup"] = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()

    def callback(state, _report):
        run.rows = state.history

    state = newton_solve(spec, psi, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                         callback=callback)
    run.summary["timings_ms"]["solve"] = 1e3 * (time.perf_counter() - t0)
    run.rows = state.history
    run.snapshot("u", state.u)
    run.summary.update(residual_sup=state.residual_sup, iterations=state.steps,
                       min_eig=state.min_eig)
    _recovery(run, state.u, state.b, u_star)


def cmd_continuity(run: _Run):
    cfg = run.cfg
    t0 = time.perf_counter()
    spec, psi, u_star = build_problem(cfg)
    run.snapshot("psi", psi)
    run.summary["timings_ms"]["setup"] = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()
    states = continuity_solve(spec, psi, steps=cfg["continuity.steps"], tol=cfg["solver.tol"],
                              max_iter=cfg["solver.max_iter"])
    run.summary["timings_ms"]["solve"] = 1e3 * (time.perf_counter() - t0)
    run.rows = [
        {"iter": k, "t": s.t, "res_sup": s.residual_sup, "b": s.b, "min_eig": s.min_eig,
         "udot_sup": math.nan, "dt": (s.t - states[k - 1].t) if k else math.nan,
         "wallclock_ms": math.nan}
        for k, s in enumerate(states)
    ]
    final = states[-1]
    run.snapshot("u", final.u)
    run.summary.update(residual_sup=final.residual_sup, path_points=len(states),
                       newton_iterations=sum(s.steps for s in states), min_eig=final.min_eig)
    _recovery(run, final.u, final.b, u_star)


def cmd_flow(run: _Run):
    cfg = run.cfg
    t0 = time.perf_counter()
    spec, psi, u_star = build_problem(cfg)
    run.snapshot("psi", psi)
    variant = cfg["flow.variant"]
    background = None
    if variant == "background":
        start = _sample(cfg["flow.background_start"], spec.grid, "flow.background_start")
        if np.any(start <= 0):
            raise PositivityError("background start factor must be positive", float(np.min(start)))
        X0 = start[..., None, None] * spec.omega_p
        background = linear_background(X0, spec.X, cfg["flow.t_prime"])
    config = FlowConfig(
        variant=variant, dt=cfg["flow.dt"], max_time=cfg["flow.max_time"], tol=cfg["solver.tol"],
        scheme=cfg["flow.scheme"], background=background, record_every=cfg["flow.record_every"],
    )
    run.summary["timings_ms"]["setup"] = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()
    state, series = flow_run(spec, psi, config)
    run.summary["timings_ms"]["solve"] = 1e3 * (time.perf_counter() - t0)
    run.rows = series
    run.snapshot("u", state.u)
    converged = state.residual_sup < config.tol
    run.summary.update(variant=variant, scheme=config.scheme, t_final=state.t, steps=state.steps,
                       stationarity_sup=state.residual_sup, converged=converged,
                       min_eig=state.min_eig)
    if variant == "normalized":
        run.summary["b"] = 0.0
    elif variant == "plain":
        _recovery(run, state.u, state.b, u_star)
    else:
        run.summary["b"] = float(state.b)
    if not converged:
        run.summary["status"] = "incomplete"
        run.summary["message"] = f"stationarity {state.residual_sup:.3e} at t = {state.t:g}"


def cmd_verify(run: _Run):
    cfg = run.cfg
    n, p, seed = cfg["geometry.n"], cfg["geometry.p"], cfg["seed"]
    trials = cfg["verify.trials"] or None
    runners = {
        "inversion": lambda: verify.run_inversion_lemma_suite(trials=trials or 1000, seed=seed),
        "algebra": lambda: verify.run_algebra_suite(trials=trials or 100, seed=seed, n=n, p=p),
        "operator": lambda: verify.run_operator_suite(trials=trials or 1000, seed=seed, n=n, p=p),
        "current": lambda: verify.run_current_positivity_suite(trials=trials or 1000, seed=seed,
                                                               n=n, p=p),
    }
    run.csv_name = "suites.csv"
    run.csv_columns = ("suite", "trials", "failures", "worst_margin", "seed", "duration_ms")
    run.out.mkdir(parents=True, exist_ok=True)
    failed = []
    run.summary["suites"] = {}
    for name in cfg["verify.suites"]:
        report = runners[name]()
        (run.out / f"suite_{name}.json").write_text(report.to_json() + "\n")
        row = {c: getattr(report, c) for c in run.csv_columns}
        run.rows.append(row)
        run.summary["suites"][name] = {"failures": report.failures,
                                       "worst_margin": report.worst_margin}
        run.summary["timings_ms"][name] = report.duration_ms
        if not report.passed:
            failed.append(name)
    if failed:
        raise VerificationFailure(f"suites failed: {', '.join(failed)}")


def convergence_study(cfg: RunConfig, run: _Run = None):
    """Recovery error of the Newton solver against exact data over a sweep of ``m``.

    Returns the list of table rows.  A failing sub-run re-raises after the
    partial table has been recorded on ``run``.
    """
    mode = cfg["geometry.mode"]
    resolutions = cfg["study.resolutions"] or STUDY_RESOLUTIONS[mode]
    rows = []
    if run is not None:
        run.csv_name = "study.csv"
        run.csv_columns = STUDY_COLUMNS
        run.rows = rows
    previous = None
    for m in resolutions:
        t0 = time.perf_counter()
        spec, psi, u_star = build_problem(cfg, m=m)
        state = newton_solve(spec, psi, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"])
        err = float(np.max(np.abs(mean_zero(state.u) - u_star)))
        rows.append({
            "m": m, "points": spec.grid.size, "error_sup": err,
            "ratio": previous / err if previous is not None and err > 0 else math.nan,
            "newton_iterations": state.steps, "residual_sup": state.residual_sup, "b": state.b,
        })
        previous = err
        if run is not None:
            run.summary["timings_ms"][f"m{m}"] = 1e3 * (time.perf_counter() - t0)
    return rows


def cmd_study(run: _Run):
    cfg = run.cfg
    if cfg["data.kind"] not in ("manufactured", "exact"):
        raise ConfigError("the convergence study needs a manufactured recipe", "data.kind")
    rows = convergence_study(cfg, run)
    errors = [r["error_sup"] for r in rows]
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    run.summary.update(errors=errors, resolutions=[r["m"] for r in rows], monotone=monotone)
    if cfg["study.strict"] and not monotone:
        raise VerificationFailure("recovery error is not monotonically decreasing")


HANDLERS = {
    "solve": cmd_solve, "continuity": cmd_continuity, "flow": cmd_flow,
    "verify": cmd_verify, "study": cmd_study,
}


def run(cfg: RunConfig) -> int:
    """Execute ``cfg.command``; returns the process exit code."""
    job = _Run(cfg)
    t0 = time.perf_counter()
    code = 0
    try:
        HANDLERS[cfg.command](job)
    except PPMAError as exc:
        code = exc.exit_code
        job.summary.update(status="failed", failure_class=type(exc).__name__, message=str(exc))
        for attr in ("min_eig", "location", "diagnostics", "key"):
            if getattr(exc, attr, None) is not None:
                value = getattr(exc, attr)
                job.summary[attr] = list(map(int, value)) if attr == "location" else value
        log.error("%s: %s", type(exc).__name__, exc)
    job.summary["timings_ms"]["total"] = 1e3 * (time.perf_counter() - t0)
    job.flush()
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppma", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS, nargs="?", default=None)
    parser.add_argument("--config", type=str, default=None, help="key = value configuration file")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--seed", type=str, default=None)
    parser.add_argument("--n", type=str, default=None)
    parser.add_argument("--p", type=str, default=None)
    parser.add_argument("--m", type=str, default=None)
    parser.add_argument("--mode", type=str, default=None, help="full | reduced")
    parser.add_argument("--tol", type=str, default=None)
    parser.add_argument("--variant", type=str, default=None, help="plain | normalized | background")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"ppma: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return ConfigError.exit_code
        key, value = item.split("=", 1)
        overrides[key] = value
    for key in ("command", "out", "seed", "n", "p", "m", "mode", "tol", "variant"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"ppma: configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
