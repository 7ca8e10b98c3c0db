"""Ergodic problem H(x, u, Du) = c via long-time behaviour of T^c_t phi."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sweep
from .action import SweepSettings
from .characteristics import _directions, _sample_x, apriori_bounds
from .errors import ConvergenceError, InconsistencyError, InputError
from .grid import GridFunction
from .semigroup import backward_evolve, stationary_residual

ERGODIC_DT = 1e-2
HORIZON = 40.0
TAIL_WINDOW = 5.0
DRIFT_TOL = 1e-3
FP_TOL = 1e-5

LABELS = ("unique_c", "all_c_bounded", "half_line")


@dataclass
class ErgodicResult:
    c: float
    case_label: str
    phi_inf: GridFunction | None = None
    fixed_point_residual: float = float("nan")
    stationary_residual: float = float("nan")
    kink_count: int = 0
    horizon_used: float = 0.0
    certified: bool = False
    details: dict = field(default_factory=dict)

    def summary(self):
        return {"c": self.c, "case_label": self.case_label,
                "fixed_point_residual": self.fixed_point_residual,
                "stationary_residual": self.stationary_residual, "kink_count": self.kink_count,
                "horizon_used": self.horizon_used, "certified": self.certified, "details": self.details}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.summary()), fh, indent=2, sort_keys=True)

    def to_csv(self, path):
        if self.phi_inf is None:
            raise InputError("no stationary profile to write")
        self.phi_inf.to_csv(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _settings(dt, kw):
    s = kw.pop("settings", None)
    if s is not None:
        return s
    # long horizons amplify the O(dt) bias of arrival-point L; the midpoint rule removes it
    kw.setdefault("midpoint_L", True)
    return SweepSettings(dt=dt, **kw)


def initial_bracket(system, phi, dt=ERGODIC_DT, margin=0.5, retries=10, **kw):
    """Constants c_lo < c_hi with T^{c_hi}_1 phi >= phi and T^{c_lo}_1 phi <= phi.

    c_hi solves a + c > 2|phi| + 1 with a = inf L over |u| <= |phi|;
    c_lo is built from B = sup_{|v| <= diam} |L(x, 0, v)| and lam. Both
    are checked numerically and pushed outward (doubling the margin) on failure.
    """
    settings = _settings(dt, kw)
    norm = phi.sup_norm()
    lam = system.lam
    d = system.dim
    xs = _sample_x(d)
    us = np.array([-norm, 0.0, norm])
    X, U = np.broadcast_arrays(xs[:, None, :], us[None, :, None])
    a = float(-np.max(system.hamiltonian(X, U[..., 0], np.zeros_like(X))))
    diam = math.sqrt(d) / 2
    dirs = _directions(d)
    radii = np.linspace(0.0, diam, 9)
    V = (radii[:, None, None] * dirs[None]).reshape(-1, d)
    XV, VV = np.broadcast_arrays(xs[:, None, :], V[None])
    B = float(np.max(np.abs(system.lagrangian(XV, np.zeros(XV.shape[:-1]), VV))))
    c_hi = 2 * norm + 1 - a + margin
    if lam > 0:
        c2 = -B - lam * math.exp(lam / 2) * norm / math.expm1(lam / 2) - margin
        c4 = min(-B - norm * lam / -math.expm1(-lam), c2 - 1)
    else:
        c2 = -B - 2 * norm - margin
        c4 = min(-B - norm, c2 - 1)
    c_lo = c4
    for attempt in range(retries + 1):
        up = backward_evolve(system.shifted(c_hi), phi, 1.0, settings.dt, settings=settings).values[-1]
        ok_hi = bool(np.all(up >= phi.values - 1e-12))
        down = backward_evolve(system.shifted(c_lo), phi, 1.0, settings.dt, settings=settings).values[-1]
        ok_lo = bool(np.all(down <= phi.values + 1e-12))
        if ok_hi and ok_lo:
            return c_lo, c_hi
        step = margin * 2 ** (attempt + 1)
        if not ok_hi:
            c_hi += step
        if not ok_lo:
            c_lo -= step
    raise ConvergenceError("bracket verification failed after expansion")


@dataclass
class Classification:
    label: str
    c: float
    sup_env: float
    inf_env: float
    drift: float
    t_end: float
    final: np.ndarray = field(repr=False, default=None)
    tail: np.ndarray = field(repr=False, default=None)

    def as_dict(self):
        return {"label": self.label, "c": self.c, "sup": self.sup_env, "inf": self.inf_env,
                "drift": self.drift, "t_end": self.t_end}


def default_blowup_bound(system, phi, box=(-1.0, 1.0, 0.5, 1.0)):
    """10 times the a-priori constant C, with the box widened to contain phi."""
    a, b, delta, T = box
    norm = phi.sup_norm()
    return 10 * apriori_bounds(system, min(a, -norm), max(b, norm), delta, T).C


def classify_c(system, c, phi, horizon=HORIZON, blowup_bound=None, dt=ERGODIC_DT, drift_tol=DRIFT_TOL,
               keep_tail=None, **kw):
    """Label the orbit T^c_t phi as bounded, grows_up or grows_down.

    Crossing +-blowup_bound decides immediately; otherwise the slope of the
    spatial mean over the last half of the horizon is compared with drift_tol.
    """
    settings = _settings(dt, kw)
    if horizon < 5:
        raise InputError("classify_c needs horizon >= 5")
    if blowup_bound is None:
        blowup_bound = default_blowup_bound(system, phi, settings.box)
    sys_c = system.shifted(c)
    sweep.check_step(sys_c, settings.dt)
    R = settings.resolve_radius(sys_c, phi.grid)
    nsteps = int(round(horizon / settings.dt))
    cur = phi.values[None]
    means, times = [], []
    hi, lo = -np.inf, np.inf
    tail = []
    tail_from = nsteps - int(round(keep_tail / settings.dt)) if keep_tail else None
    for k in range(1, nsteps + 1):
        cur = sweep.step(sys_c, cur, settings.dt, 1, R, settings.midpoint_L)
        mx, mn = float(cur.max()), float(cur.min())
        hi, lo = max(hi, mx), min(lo, mn)
        t = k * settings.dt
        if mx > blowup_bound:
            return Classification("grows_up", c, hi, lo, math.nan, t, cur[0])
        if mn < -blowup_bound:
            return Classification("grows_down", c, hi, lo, math.nan, t, cur[0])
        if k >= nsteps // 2:
            means.append(float(cur.mean()))
            times.append(t)
        if tail_from is not None and k >= tail_from:
            tail.append(cur[0].copy())
    slope = float(np.polyfit(times, means, 1)[0]) if len(times) > 1 else 0.0
    label = "grows_up" if slope > drift_tol else "grows_down" if slope < -drift_tol else "bounded"
    out = Classification(label, c, hi, lo, slope, nsteps * settings.dt, cur[0])
    if tail_from is not None:
        out.tail = np.array(tail)
    return out


def find_critical_c(system, phi, tol_c=1e-2, horizon=HORIZON, dt=ERGODIC_DT, default_c=0.0,
                    blowup_bound=None, drift_tol=DRIFT_TOL, max_iter=60, **kw):
    """Bisect the bracket on classify_c outcomes; returns an ErgodicResult without phi_inf."""
    if tol_c < 1e-3:
        raise InputError("tol_c must be >= 1e-3")
    settings = _settings(dt, kw)
    if blowup_bound is None:
        blowup_bound = default_blowup_bound(system, phi, settings.box)
    c_lo, c_hi = initial_bracket(system, phi, settings=settings)
    log = []

    def classify(c):
        r = classify_c(system, c, phi, horizon, blowup_bound, drift_tol=drift_tol, settings=settings)
        log.append(r.as_dict())
        return r.label

    lab_lo, lab_hi = classify(c_lo), classify(c_hi)
    if lab_lo == "grows_up" or lab_hi == "grows_down":
        raise InconsistencyError(f"classification not monotone: {lab_lo} at {c_lo}, {lab_hi} at {c_hi}")
    details = {"bracket": [c_lo, c_hi], "classifications": log, "blowup_bound": blowup_bound}
    if lab_lo == "bounded" and lab_hi == "bounded":
        return ErgodicResult(c=float(default_c), case_label="all_c_bounded", horizon_used=horizon, details=details)
    lo, hi = c_lo, c_hi
    if lab_lo == "bounded" or lab_hi == "bounded":
        # one side bounded: locate the edge of the bounded half-line
        bounded_high = lab_hi == "bounded"
        for _ in range(max_iter):
            if hi - lo <= tol_c:
                break
            mid = 0.5 * (lo + hi)
            lab = classify(mid)
            if bounded_high:
                if lab == "grows_up":
                    raise InconsistencyError(f"grows_up at c={mid} below a bounded c={hi}")
                hi, lo = (mid, lo) if lab == "bounded" else (hi, mid)
            else:
                if lab == "grows_down":
                    raise InconsistencyError(f"grows_down at c={mid} above a bounded c={lo}")
                lo, hi = (mid, hi) if lab == "bounded" else (lo, mid)
        c = hi if bounded_high else lo
        return ErgodicResult(c=float(c), case_label="half_line", horizon_used=horizon, details=details)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        lab = classify(mid)
        if lab == "bounded":
            return ErgodicResult(c=float(mid), case_label="unique_c", horizon_used=horizon, details=details)
        if lab == "grows_up":
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol_c:
            break
    return ErgodicResult(c=float(0.5 * (lo + hi)), case_label="unique_c", horizon_used=horizon, details=details)


def weak_kam_solution(system, c, phi, horizon=HORIZON, tail_window=TAIL_WINDOW, dt=ERGODIC_DT, tau=1.0,
                      fp_tol=FP_TOL, max_polish=50, adjust_c=None, taus=(0.5, 1.0, 2.0), **kw):
    """phi_inf as the running min of T^c_t phi over the tail window, then polished.

    Polishing iterates psi <- T^c_tau psi. With ``adjust_c`` (default: when
    lam = 0) the mean increment is removed each round and folded into c,
    which makes the polish converge to the discrete critical constant.
    """
    settings = _settings(dt, kw)
    if tail_window <= 0 or tail_window > horizon:
        raise InputError("need 0 < tail_window <= horizon")
    adjust_c = system.lam == 0 if adjust_c is None else adjust_c
    cl = classify_c(system, c, phi, horizon, dt=settings.dt, keep_tail=tail_window, settings=settings)
    if cl.label != "bounded" and not adjust_c:
        raise InputError(f"classify_c({c}) = {cl.label}; weak_kam_solution needs a bounded orbit")
    psi = cl.tail.min(axis=0)
    grid = phi.grid
    certified = False
    history = []
    for _ in range(max_polish):
        nxt = backward_evolve(system.shifted(c), GridFunction(grid, psi), tau, settings.dt,
                              settings=settings).values[-1]
        inc = nxt - psi
        if adjust_c:
            shift = float(inc.mean())
            c -= shift / tau
            nxt = nxt - shift
            inc = nxt - psi
        gap = float(np.max(np.abs(inc)))
        history.append(gap)
        psi = nxt
        if gap <= fp_tol:
            certified = True
            break
    phi_inf = GridFunction(grid, psi)
    fps = {}
    for t_ in taus:
        out = backward_evolve(system.shifted(c), phi_inf, t_, settings.dt, settings=settings).values[-1]
        fps[str(t_)] = float(np.max(np.abs(out - psi)))
    res, kinks = stationary_residual(system, grid, psi, c)
    return ErgodicResult(c=float(c), case_label="unique_c" if adjust_c else "all_c_bounded", phi_inf=phi_inf,
                         fixed_point_residual=fps.get(str(float(tau)), history[-1] if history else math.nan),
                         stationary_residual=res, kink_count=kinks, horizon_used=horizon,
                         certified=certified and max(fps.values()) <= 10 * fp_tol,
                         details={"fixed_point_by_tau": fps, "polish_history": history,
                                  "classification": cl.as_dict()})


def solve_ergodic(system, phi, tol_c=1e-2, horizon=HORIZON, tail_window=TAIL_WINDOW, dt=ERGODIC_DT,
                  default_c=0.0, **kw):
    """find_critical_c followed by weak_kam_solution at the selected constant."""
    settings = _settings(dt, kw)
    crit = find_critical_c(system, phi, tol_c=tol_c, horizon=horizon, default_c=default_c, settings=settings)
    adjust = crit.case_label == "unique_c" and system.lam == 0
    res = weak_kam_solution(system, crit.c, phi, horizon, tail_window, settings=settings, adjust_c=adjust)
    res.case_label = crit.case_label
    res.details.update({"search": crit.details, "c_bisection": crit.c})
    return res
