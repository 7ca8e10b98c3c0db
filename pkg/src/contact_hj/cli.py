"""Command line runner: ``contact-hj <subcommand> --config run.json --out results/``.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 property failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1
SUBCOMMANDS = ("action", "evolve", "ergodic", "verify", "oracle", "bench")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PROPERTY = 0, 1, 2, 3

TOP_KEYS = {"family", "params", "grid", "dt", "box", "midpoint_L", "seed", *SUBCOMMANDS}
SECTION_KEYS = {
    "action": {"x0", "u0", "t", "direction", "record_every"},
    "evolve": {"phi", "T", "c", "direction", "mode", "record_every"},
    "ergodic": {"phi", "horizon", "tail_window", "tol_c", "dt", "c", "default_c", "n"},
    "verify": {"tolerances", "checks"},
    "oracle": {"phi", "T", "c", "levels"},
    "bench": {"steps", "n_values"},
}
DEFAULT_TOLERANCES = {
    "markov": 5e-3, "semigroup": 1e-2, "semigroup_identity": 0.0, "representation": 1e-2,
    "comparison": 0.0, "picard_agreement": 5e-8, "c_shift_ratio": 1.01, "variational_ineq": 1e-2,
    "variational_equality": 1e-2, "duality": 5e-3, "oracle_gap": 2e-2, "assumptions": 0.0,
}


@dataclass
class RunConfig:
    family: str = "classical"
    params: dict = field(default_factory=dict)
    dim: int = 1
    n: int = 200
    dt: float = 1e-3
    box: tuple = (-1.0, 1.0, 0.5, 1.0)
    midpoint_L: bool = False
    seed: int = 0
    sections: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def section(self, name):
        return self.sections.get(name, {})

    def echo(self):
        return {"family": self.family, "params": self.params, "grid": {"dim": self.dim, "n": self.n},
                "dt": self.dt, "box": list(self.box), "midpoint_L": self.midpoint_L, "seed": self.seed,
                **{k: v for k, v in sorted(self.sections.items())}}


def _cfg_error(msg):
    from .errors import ConfigError
    return ConfigError(msg)


def _number(value, name, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise _cfg_error(f"{name}: expected a finite number, got {value!r}")
    if positive and value <= 0:
        raise _cfg_error(f"{name}: must be positive, got {value}")
    return float(value)


def load_config(path=None, seed=None):
    """Parse and validate a JSON run configuration (``path=None`` gives the defaults)."""
    raw = {}
    base = Path(".")
    if path is not None:
        base = Path(path).resolve().parent
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise _cfg_error(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise _cfg_error(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise _cfg_error("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise _cfg_error(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(base_dir=base)
    cfg.family = raw.get("family", cfg.family)
    cfg.params = raw.get("params", {})
    if not isinstance(cfg.params, dict):
        raise _cfg_error("params: expected an object")
    grid = raw.get("grid", {})
    if not isinstance(grid, dict) or set(grid) - {"dim", "n"}:
        raise _cfg_error("grid: expected an object with keys dim, n")
    cfg.dim = grid.get("dim", 1)
    cfg.n = grid.get("n", 200)
    if cfg.dim not in (1, 2):
        raise _cfg_error(f"grid.dim: must be 1 or 2, got {cfg.dim!r}")
    if not isinstance(cfg.n, int) or isinstance(cfg.n, bool) or cfg.n < 4:
        raise _cfg_error(f"grid.n: must be an integer >= 4, got {cfg.n!r}")
    cfg.dt = _number(raw.get("dt", cfg.dt), "dt", positive=True)
    box = raw.get("box", list(cfg.box))
    if not isinstance(box, list) or len(box) != 4:
        raise _cfg_error("box: expected [a, b, delta, T]")
    a, b, delta, T = (_number(v, f"box[{i}]") for i, v in enumerate(box))
    if not a < b:
        raise _cfg_error(f"box: need a < b, got a={a}, b={b}")
    if not 0 < delta < T:
        raise _cfg_error(f"box: need 0 < delta < T, got delta={delta}, T={T}")
    cfg.box = (a, b, delta, T)
    cfg.midpoint_L = bool(raw.get("midpoint_L", False))
    cfg.seed = int(raw.get("seed", 0)) if seed is None else int(seed)
    for name in SUBCOMMANDS:
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            raise _cfg_error(f"{name}: expected an object")
        bad = set(sec) - SECTION_KEYS[name]
        if bad:
            raise _cfg_error(f"{name}: unknown keys {sorted(bad)}")
        if sec:
            cfg.sections[name] = sec
    system = build_system(cfg)
    if cfg.dt * system.lam > 0.5:
        raise _cfg_error(f"dt: dt*lam = {cfg.dt * system.lam:.4g} exceeds 0.5")
    return cfg


def build_system(cfg):
    from .system import builtin
    return builtin(cfg.family, cfg.params, dim=cfg.dim)


def build_phi(phi_spec, grid, base_dir=Path(".")):
    """Initial datum from {constant: r} | {distance_to: point} | {samples: csv path}."""
    import numpy as np

    from .grid import GridFunction, periodic_distance
    if phi_spec is None:
        phi_spec = {"constant": 0.0}
    if not isinstance(phi_spec, dict) or len(phi_spec) != 1:
        raise _cfg_error("phi: expected exactly one of constant, distance_to, samples")
    (kind, val), = phi_spec.items()
    if kind == "constant":
        return grid.constant(_number(val, "phi.constant"))
    if kind == "distance_to":
        pt = np.atleast_1d(np.asarray(val, float))
        if pt.shape != (grid.dim,):
            raise _cfg_error(f"phi.distance_to: expected {grid.dim} coordinates")
        return GridFunction(grid, periodic_distance(grid.coords, pt))
    if kind == "samples":
        path = Path(val)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise _cfg_error(f"phi.samples: file not found: {path}")
        return GridFunction.from_csv(path, grid)
    raise _cfg_error(f"phi: unknown kind {kind!r}")


def _phi_fn(phi_spec, base_dir):
    """Initial datum as a function of points (used where several grids are needed)."""
    import numpy as np

    from .grid import GridFunction, interpolate, periodic_distance
    phi_spec = phi_spec or {"constant": 0.0}
    (kind, val), = phi_spec.items()
    if kind == "constant":
        return lambda x: np.full(len(x), float(val))
    if kind == "distance_to":
        pt = np.atleast_1d(np.asarray(val, float))
        return lambda x: periodic_distance(x, pt)
    path = Path(val) if Path(val).is_absolute() else base_dir / val
    f = GridFunction.from_csv(path)
    return lambda x: interpolate(f, x)


class Report:
    """Residual table plus outputs list, written as report.json."""

    def __init__(self, subcommand, cfg, out_dir):
        self.subcommand = subcommand
        self.cfg = cfg
        self.out = Path(out_dir)
        self.rows = []
        self.results = {}
        self.files = []

    def check(self, name, residual, tolerance, passed=None, detail=None):
        residual = float(residual)
        ok = bool(residual <= tolerance) if passed is None else bool(passed)
        row = {"property": name, "residual": residual, "tolerance": float(tolerance), "passed": ok}
        if detail is not None:
            row["detail"] = detail
        self.rows.append(row)
        return ok

    def path(self, name):
        self.files.append(name)
        return self.out / name

    @property
    def passed(self):
        return all(r["passed"] for r in self.rows)

    def write(self, threads):
        doc = {"schema_version": SCHEMA_VERSION, "subcommand": self.subcommand, "config": self.cfg.echo(),
               "seed": self.cfg.seed, "threads": threads, "results": self.results,
               "residuals": self.rows, "passed": self.passed, "files": sorted(self.files)}
        with open(self.out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(_clean(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _clean(obj):
    import numpy as np
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _settings(cfg, dt=None, midpoint=None):
    from .action import SweepSettings
    return SweepSettings(dt=cfg.dt if dt is None else dt,
                         midpoint_L=cfg.midpoint_L if midpoint is None else midpoint, box=cfg.box)


def _grid(cfg, n=None):
    from .grid import PeriodicGrid
    return PeriodicGrid(cfg.dim, cfg.n if n is None else n)


def cmd_action(cfg, rep):
    from .action import backward_action, forward_action
    sec = cfg.section("action")
    system = build_system(cfg)
    grid = _grid(cfg)
    x0 = sec.get("x0", [0.0] * cfg.dim)
    u0 = _number(sec.get("u0", 0.0), "action.u0")
    t = _number(sec.get("t", cfg.box[3]), "action.t", positive=True)
    direction = sec.get("direction", "forward")
    if direction not in ("forward", "backward"):
        raise _cfg_error("action.direction: forward or backward")
    every = int(sec.get("record_every", max(1, int(round(t / cfg.dt)) // 10)))
    nsteps = int(round(t / cfg.dt))
    record = sorted(set(range(0, nsteps + 1, every)) | {nsteps})
    fn = forward_action if direction == "forward" else backward_action
    f = fn(system, x0, u0, t, grid, cfg.dt, record=record, settings=_settings(cfg))
    f.to_csv(rep.path(f"action_{direction}.csv"))
    f.to_json(rep.path(f"action_{direction}.json"))
    rep.results = {"value_at_anchor_end": f.query(x0, t), "slices": len(f.times)}


def cmd_evolve(cfg, rep):
    from .semigroup import backward_evolve, forward_evolve, viscosity_residual
    sec = cfg.section("evolve")
    system = build_system(cfg)
    grid = _grid(cfg)
    phi = build_phi(sec.get("phi"), grid, cfg.base_dir)
    T = _number(sec.get("T", 1.0), "evolve.T", positive=True)
    c = _number(sec.get("c", 0.0), "evolve.c")
    direction = sec.get("direction", "backward")
    mode = sec.get("mode", "direct")
    every = int(sec.get("record_every", 1))
    sys_c = system.shifted(c)
    if direction == "backward":
        f = backward_evolve(sys_c, phi, T, cfg.dt, mode=mode, record_every=every, settings=_settings(cfg))
    elif direction == "forward":
        f = forward_evolve(sys_c, phi, T, cfg.dt, record_every=every, settings=_settings(cfg))
    else:
        raise _cfg_error("evolve.direction: forward or backward")
    residuals = {}
    if direction == "backward" and len(f.times) >= 3:
        vr = viscosity_residual(system, f, c=c)
        residuals = vr.as_dict()
        rep.check("viscosity_residual", vr.max_residual, 5e-2)
    f.to_csv(rep.path(f"evolve_{direction}.csv"))
    f.to_json(rep.path(f"evolve_{direction}.json"), residuals)
    rep.results = {"final_min": float(f.values[-1].min()), "final_max": float(f.values[-1].max()),
                   "viscosity": residuals}


def cmd_ergodic(cfg, rep):
    from .ergodic import ERGODIC_DT, HORIZON, TAIL_WINDOW, solve_ergodic, weak_kam_solution
    sec = cfg.section("ergodic")
    system = build_system(cfg)
    n = int(sec.get("n", cfg.n))
    grid = _grid(cfg, n)
    phi = build_phi(sec.get("phi"), grid, cfg.base_dir)
    dt = _number(sec.get("dt", ERGODIC_DT), "ergodic.dt", positive=True)
    if dt * system.lam > 0.5:
        raise _cfg_error(f"ergodic.dt: dt*lam = {dt * system.lam:.4g} exceeds 0.5")
    horizon = _number(sec.get("horizon", HORIZON), "ergodic.horizon", positive=True)
    tail = _number(sec.get("tail_window", TAIL_WINDOW), "ergodic.tail_window", positive=True)
    if horizon < 5 or tail > horizon:
        raise _cfg_error("ergodic: need horizon >= 5 and tail_window <= horizon")
    tol_c = _number(sec.get("tol_c", 1e-2), "ergodic.tol_c", positive=True)
    settings = _settings(cfg, dt=dt, midpoint=True)
    if sec.get("c") is not None:
        res = weak_kam_solution(system, _number(sec["c"], "ergodic.c"), phi, horizon, tail, settings=settings)
    else:
        res = solve_ergodic(system, phi, tol_c=tol_c, horizon=horizon, tail_window=tail,
                            default_c=_number(sec.get("default_c", 0.0), "ergodic.default_c"), settings=settings)
    res.to_json(rep.path("ergodic.json"))
    res.to_csv(rep.path("phi_inf.csv"))
    rep.results = res.summary()
    for tau, v in res.details.get("fixed_point_by_tau", {}).items():
        rep.check(f"fixed_point_tau_{tau}", v, 1e-4)
    rep.check("stationary_residual", res.stationary_residual, 5e-2)


def cmd_oracle(cfg, rep):
    from .oracle import cross_validate, fd_evolve
    sec = cfg.section("oracle")
    system = build_system(cfg)
    grid = _grid(cfg)
    phi_spec = sec.get("phi")
    phi = build_phi(phi_spec, grid, cfg.base_dir)
    T = _number(sec.get("T", 1.0), "oracle.T", positive=True)
    c = _number(sec.get("c", 0.0), "oracle.c")
    levels = sec.get("levels", [[cfg.n, cfg.dt], [2 * cfg.n, cfg.dt / 2]])
    f = fd_evolve(system, phi, T, c=c)
    f.to_csv(rep.path("oracle_fd.csv"))
    f.to_json(rep.path("oracle_fd.json"))
    cv = cross_validate(system, _phi_fn(phi_spec, cfg.base_dir), T, c=c, levels=[tuple(v) for v in levels],
                        midpoint_L=cfg.midpoint_L, box=cfg.box)
    rep.results = {"fd": f.info, "cross_validation": cv.as_dict()}
    rep.check("oracle_gap_coarse", cv.gaps[0], 2e-2)
    rep.check("oracle_gap_shrinks", cv.gaps[-1], cv.gaps[0], passed=cv.shrinks)


def verify_suite(cfg, tolerances=None, checks=None):
    """Property checks at the configured family/grid/dt; returns a list of (name, residual, tol, passed, detail)."""
    import numpy as np

    from .action import c_shift_bound_check, duality_roundtrip, forward_action, markov_residual
    from .oracle import cross_validate
    from .semigroup import (backward_evolve, comparison_gap, representation_residual, semigroup_residual,
                            variational_solution_residual)
    from .system import check_assumptions
    tol = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
    system = build_system(cfg)
    grid = _grid(cfg)
    settings = _settings(cfg)
    dt = cfg.dt
    centre = [0.5] * cfg.dim
    phi = build_phi({"distance_to": centre}, grid)
    rng = np.random.default_rng(cfg.seed)
    out = []

    def add(name, residual, passed=None, detail=None):
        t = tol[name]
        ok = residual <= t if passed is None else passed
        out.append((name, float(residual), float(t), bool(ok), detail))

    wanted = set(checks) if checks else set(DEFAULT_TOLERANCES)
    if "assumptions" in wanted:
        res = check_assumptions(system, samples=200, seed=cfg.seed)
        bad = [k for k, r in res.items() if not r.passed]
        add("assumptions", float(len(bad)), detail={k: r.passed for k, r in res.items()})
    if "markov" in wanted:
        f = forward_action(system, [0.0] * cfg.dim, 0.0, 1.0, grid, dt, settings=settings)
        add("markov", markov_residual(f, 0.5, 0.5))
    if "semigroup" in wanted:
        add("semigroup", semigroup_residual(system, phi, 0.5, 0.5, dt, settings=settings))
    if "semigroup_identity" in wanted:
        add("semigroup_identity", semigroup_residual(system, phi, 0.5, 0.0, dt, settings=settings))
    if "representation" in wanted:
        add("representation", representation_residual(system, phi, 0.25, dt, settings=settings))
    if "comparison" in wanted:
        gaps = comparison_gap(system, phi, _shift(phi, -0.1), 0.5, dt, settings=settings)
        add("comparison", max(0.0, -float(gaps.min())), passed=bool(np.all(gaps > 0)),
            detail={"min_gap": float(gaps.min())})
    if "picard_agreement" in wanted:
        a = backward_evolve(system, phi, 0.25, dt, settings=settings).values[-1]
        b = backward_evolve(system, phi, 0.25, dt, mode="picard", settings=settings).values[-1]
        add("picard_agreement", float(np.max(np.abs(a - b))))
    if "c_shift_ratio" in wanted:
        r = c_shift_bound_check(system, [0.0] * cfg.dim, 0.0, 0.0, 0.1, cfg.box, grid, dt, settings=settings)
        add("c_shift_ratio", r)
    if "variational_ineq" in wanted or "variational_equality" in wanted:
        fld = backward_evolve(system, phi, 0.25, dt, settings=settings)
        ineq, gap = variational_solution_residual(system, fld, probe_curves=200, seed=cfg.seed)
        add("variational_ineq", ineq)
        add("variational_equality", gap)
    if "duality" in wanted:
        worst = 0.0
        for _ in range(3):
            x = rng.uniform(0, 1, cfg.dim)
            worst = max(worst, duality_roundtrip(system, [0.0] * cfg.dim, float(rng.uniform(-0.5, 0.5)), x, 0.5,
                                                 grid, dt, settings=settings))
        add("duality", worst)
    if "oracle_gap" in wanted and cfg.dim == 1:
        cv = cross_validate(system, _phi_fn({"distance_to": centre}, cfg.base_dir), 0.25, levels=[(cfg.n, dt)],
                            midpoint_L=cfg.midpoint_L, box=cfg.box)
        add("oracle_gap", cv.max_gap)
    return out


def _shift(phi, a):
    from .grid import GridFunction
    return GridFunction(phi.grid, phi.values + a)


def cmd_verify(cfg, rep):
    sec = cfg.section("verify")
    tol = sec.get("tolerances", {})
    bad = set(tol) - set(DEFAULT_TOLERANCES)
    if bad:
        raise _cfg_error(f"verify.tolerances: unknown properties {sorted(bad)}")
    checks = sec.get("checks")
    if checks is not None and set(checks) - set(DEFAULT_TOLERANCES):
        raise _cfg_error(f"verify.checks: unknown properties {sorted(set(checks) - set(DEFAULT_TOLERANCES))}")
    for name, residual, t, ok, detail in verify_suite(cfg, tol, checks):
        rep.check(name, residual, t, passed=ok, detail=detail)
    rep.results = {"checked": len(rep.rows), "failed": [r["property"] for r in rep.rows if not r["passed"]]}
    import csv
    with open(rep.path("verify.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["property", "residual", "tolerance", "passed"])
        for r in rep.rows:
            w.writerow([r["property"], f"{r['residual']:.12g}", f"{r['tolerance']:.12g}", r["passed"]])


def cmd_bench(cfg, rep):
    from .semigroup import backward_evolve
    sec = cfg.section("bench")
    system = build_system(cfg)
    steps = int(sec.get("steps", 200))
    timings = []
    for n in sec.get("n_values", [cfg.n]):
        grid = _grid(cfg, int(n))
        phi = build_phi({"distance_to": [0.5] * cfg.dim}, grid)
        t0 = time.perf_counter()
        backward_evolve(system, phi, steps * cfg.dt, cfg.dt, settings=_settings(cfg))
        el = time.perf_counter() - t0
        timings.append({"n": int(n), "steps": steps, "seconds": el, "seconds_per_step": el / steps})
    rep.results = {"timings": timings}


COMMANDS = {"action": cmd_action, "evolve": cmd_evolve, "ergodic": cmd_ergodic, "verify": cmd_verify,
            "oracle": cmd_oracle, "bench": cmd_bench}


def _apply_threads():
    n = os.environ.get("CONTACT_HJ_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)
        return int(n)
    return os.cpu_count() or 1


def run(subcommand, config_path=None, out_dir="contact_hj_out", seed=None, quiet=False):
    """Run one subcommand and return its exit code."""
    threads = _apply_threads()
    from .errors import ConfigError, InputError, SolverError

    def say(msg):
        if not quiet:
            print(msg)

    try:
        if subcommand not in COMMANDS:
            raise _cfg_error(f"unknown subcommand {subcommand!r}")
        cfg = load_config(config_path, seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rep = Report(subcommand, cfg, out)
        COMMANDS[subcommand](cfg, rep)
    except (ConfigError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    rep.write(threads)
    for r in rep.rows:
        say(f"{'PASS' if r['passed'] else 'FAIL'} {r['property']}: {r['residual']:.4g} (tol {r['tolerance']:.4g})")
    say(f"wrote {out / 'report.json'}")
    return EXIT_OK if rep.passed else EXIT_PROPERTY


def main(argv=None):
    parser = argparse.ArgumentParser(prog="contact-hj", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", default="contact_hj_out", help="output directory")
    parser.add_argument("--seed", type=int, help="seed for randomized property sampling")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.seed, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
