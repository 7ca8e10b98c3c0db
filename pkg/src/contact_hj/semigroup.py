"""Backward and forward solution semigroups and their structural checks.

``backward_evolve`` computes T_t phi (the viscosity solution of
w_t + H(x, w, w_x) = 0 with w(., 0) = phi) either by the direct implicit
sweep or by Picard iteration of the frozen-u operator A_phi, whose unique
fixed point is the same discrete field. ``forward_evolve`` is the sup/sign
mirror. A c-shifted system (``system.shifted(c)``) evolves T^c_t.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sweep
from .action import SweepSettings, _write_slices, action_batch
from .errors import ConvergenceError, InputError
from .grid import GridFunction, PeriodicGrid, interpolate_values

PICARD_TOL = 1e-8
PICARD_CAP = 200


@dataclass
class ValueField:
    """Time slices of a semigroup orbit; slice 0 is the initial datum."""

    grid: PeriodicGrid
    times: np.ndarray
    values: np.ndarray
    initial: GridFunction
    direction: str
    c_shift: float
    settings: SweepSettings
    mode: str = "direct"
    system: object = field(default=None, repr=False, compare=False)
    info: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def dt(self):
        return self.settings.dt

    def slice_index(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise InputError(f"t={t} is not a recorded slice")
        return i

    def at(self, t=None):
        t = self.horizon if t is None else t
        return GridFunction(self.grid, self.values[self.slice_index(t)])

    def query(self, x, t=None):
        t = self.horizon if t is None else t
        out = interpolate_values(self.grid, self.values[self.slice_index(t)], x)
        return float(out) if np.ndim(out) == 0 else out

    def with_values(self, values):
        """Copy carrying different slice values (used for fault injection)."""
        return ValueField(self.grid, self.times, np.asarray(values, float), self.initial, self.direction,
                          self.c_shift, self.settings, self.mode, self.system, dict(self.info))

    def metadata(self, residuals=None):
        sysd = self.system.describe() if self.system is not None else {}
        return {"kind": "value_field", "direction": self.direction, "mode": self.mode,
                "family": sysd.get("family"), "lam": sysd.get("lam"), "c_shift": self.c_shift,
                "dt": self.dt, "n": self.grid.n, "dim": self.grid.dim, "slices": len(self.times),
                "settings": self.settings.as_dict(), "info": self.info, "residuals": residuals or {}}

    def to_csv(self, path):
        _write_slices(path, self.grid, self.times, self.values, "value")

    def to_json(self, path, residuals=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.metadata(residuals), fh, indent=2, sort_keys=True)


def _settings(dt, kw):
    s = kw.pop("settings", None)
    return s if s is not None else SweepSettings(dt=dt, **kw)


def _steps(T, dt):
    n = max(1, int(round(T / dt)))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise InputError(f"T={T} is not a multiple of dt={dt}")
    return n


def _sweep_orbit(system, phi, nsteps, sigma, settings, record_every=1):
    R = settings.resolve_radius(system, phi.grid)
    cur = phi.values[None]
    keep = [phi.values.copy()]
    idx = [0]
    for k in range(1, nsteps + 1):
        cur = sweep.step(system, cur, settings.dt, sigma, R, settings.midpoint_L)
        if k % record_every == 0 or k == nsteps:
            keep.append(cur[0].copy())
            idx.append(k)
    return np.array(idx, float) * settings.dt, np.array(keep)


def picard_apply(system, phi, u, settings=None):
    """A_phi[u]: the frozen-u sweep seeded with phi, read u's slices inside L."""
    settings = settings or u.settings
    R = settings.resolve_radius(system, phi.grid)
    sigma = 1 if u.direction == "backward" else -1
    out = np.empty_like(u.values)
    out[0] = phi.values
    cur = phi.values[None]
    for k in range(1, len(u.times)):
        cur = sweep.frozen_step(system, cur, settings.dt, sigma, R, u.values[k][None], settings.midpoint_L)
        out[k] = cur[0]
    return ValueField(phi.grid, u.times, out, phi, u.direction, system.c_shift, settings, "picard", system)


def backward_evolve(system, phi, T, dt, mode="direct", picard_tol=PICARD_TOL, max_iter=PICARD_CAP,
                    record_every=1, **kw):
    """T_t phi for t in [0, T] (the backward semigroup; min over feet)."""
    settings = _settings(dt, kw)
    sweep.check_step(system, dt)
    nsteps = _steps(T, dt)
    if mode == "direct":
        times, vals = _sweep_orbit(system, phi, nsteps, 1, settings, record_every)
        return ValueField(phi.grid, times, vals, phi, "backward", system.c_shift, settings, "direct", system)
    if mode != "picard":
        raise InputError(f"unknown mode {mode!r}")
    times = np.arange(nsteps + 1) * dt
    u = ValueField(phi.grid, times, np.broadcast_to(phi.values, (nsteps + 1,) + phi.grid.shape).copy(),
                   phi, "backward", system.c_shift, settings, "picard", system)
    gaps = []
    for _ in range(max_iter):
        nxt = picard_apply(system, phi, u, settings)
        gap = float(np.max(np.abs(nxt.values - u.values)))
        gaps.append(gap)
        u = nxt
        if gap <= picard_tol:
            break
    else:
        raise ConvergenceError(f"Picard iteration did not reach {picard_tol} in {max_iter} iterations")
    u.info["picard_gaps"] = gaps
    if record_every > 1:
        sel = np.unique(np.r_[np.arange(0, nsteps + 1, record_every), nsteps])
        u = ValueField(u.grid, u.times[sel], u.values[sel], phi, "backward", system.c_shift, settings,
                       "picard", system, u.info)
    return u


def picard_gaps(system, phi, T, dt, iterations=6, **kw):
    """Successive sup-norm gaps ||u^{j+1} - u^j|| of the Picard iteration from u^0 = phi."""
    settings = _settings(dt, kw)
    nsteps = _steps(T, dt)
    times = np.arange(nsteps + 1) * dt
    u = ValueField(phi.grid, times, np.broadcast_to(phi.values, (nsteps + 1,) + phi.grid.shape).copy(),
                   phi, "backward", system.c_shift, settings, "picard", system)
    gaps = []
    for _ in range(iterations + 1):
        nxt = picard_apply(system, phi, u, settings)
        gaps.append(float(np.max(np.abs(nxt.values - u.values))))
        u = nxt
    return gaps


def picard_bound(lam, T, n, nsteps=None):
    """(lam*T)^n / n!, times the discrete factor prod(1 + i/K) when K is given."""
    b = (lam * T) ** n / math.factorial(n)
    if nsteps:
        b *= math.prod(1 + i / nsteps for i in range(1, n))
    return b


def forward_evolve(system, phi, T, dt, record_every=1, **kw):
    """T^+_t phi for t in [0, T] (sup over feet, sign-flipped Lagrangian)."""
    settings = _settings(dt, kw)
    sweep.check_step(system, dt)
    times, vals = _sweep_orbit(system, phi, _steps(T, dt), -1, settings, record_every)
    return ValueField(phi.grid, times, vals, phi, "forward", system.c_shift, settings, "direct", system)


def representation_residual(system, phi, t, dt, stride=4, sample_count=None, seed=0, **kw):
    """max_x |T_t phi(x) - min_y h_{y, phi(y)}(x, t)| with y on every ``stride``-th node."""
    settings = _settings(dt, kw)
    if t < 10 * dt - 1e-12:
        raise InputError("representation_residual needs t >= 10*dt")
    grid = phi.grid
    lhs = backward_evolve(system, phi, t, dt, settings=settings).values[-1]
    nodes = [np.array(ix) for ix in np.ndindex(*grid.shape) if all(i % stride == 0 for i in ix)]
    anchors = [ix / grid.n for ix in nodes]
    u0s = [phi.values[tuple(ix)] for ix in nodes]
    nsteps = _steps(t, dt)
    rhs = np.full(grid.shape, np.inf)
    for start in range(0, len(anchors), 64):
        _, vals = action_batch(system, grid, anchors[start:start + 64], u0s[start:start + 64], t, settings,
                               "forward", record=[nsteps])
        rhs = np.minimum(rhs, vals[0].min(axis=0))
    diff = np.abs(lhs - rhs).reshape(-1)
    if sample_count is not None and sample_count < diff.size:
        pick = np.random.default_rng(seed).choice(diff.size, sample_count, replace=False)
        diff = diff[pick]
    return float(diff.max())


def semigroup_residual(system, phi, t, s, dt, **kw):
    """||T_{t+s} phi - T_t(T_s phi)||_inf with every orbit from backward_evolve."""
    settings = _settings(dt, kw)
    if s == 0:
        whole = backward_evolve(system, phi, t, dt, settings=settings).values[-1]
        again = backward_evolve(system, phi, t, dt, settings=settings).values[-1]
        return float(np.max(np.abs(whole - again)))
    if t < 10 * dt - 1e-12 or s < 10 * dt - 1e-12:
        raise InputError("semigroup_residual needs t, s >= 10*dt (or s = 0)")
    whole = backward_evolve(system, phi, t + s, dt, settings=settings).values[-1]
    mid = backward_evolve(system, phi, s, dt, settings=settings).at()
    comp = backward_evolve(system, mid, t, dt, settings=settings).values[-1]
    return float(np.max(np.abs(whole - comp)))


def comparison_gap(system, phi, psi, T, dt, **kw):
    """Per-slice min of T_t phi - T_t psi."""
    settings = _settings(dt, kw)
    a = backward_evolve(system, phi, T, dt, settings=settings).values
    b = backward_evolve(system, psi, T, dt, settings=settings).values
    return (a - b).reshape(len(a), -1).min(axis=1)


def comparison_check(system, phi, psi, T, dt, picard_tol=PICARD_TOL, **kw):
    """True iff T_t psi <= T_t phi at every slice, strictly when the initial gap exceeds 10*picard_tol."""
    gap0 = float(np.min(phi.values - psi.values))
    if not gap0 > 0:
        raise InputError("comparison_check needs psi < phi pointwise")
    gaps = comparison_gap(system, phi, psi, T, dt, **kw)
    if gap0 > 10 * picard_tol:
        return bool(np.all(gaps > 0))
    return bool(np.all(gaps >= -picard_tol))


def _running_cost(system, pts, u, v, dt):
    return float(np.sum(dt * system.lagrangian(pts, u, v)))


def _trace_foot(system, grid, prev, x, w, dt, R):
    """Best foot y for the one-step min at the (possibly off-node) point x."""
    d = grid.dim
    h = grid.spacing
    base = np.rint(np.asarray(x) * grid.n).astype(int)
    offs = np.arange(-R, R + 1)
    if d == 1:
        feet = [(base[0] + offs) * h]
        lo = (base[0] + offs[:-1]) * h
        s = (interpolate_values(grid, prev, lo + h) - interpolate_values(grid, prev, lo)) / h
        v = system.H_p(np.asarray(x)[None], np.full(len(s), w), s[:, None])[:, 0]
        foot = x[0] - v * dt
        inside = (foot > lo) & (foot < lo + h)
        feet.append(foot[inside])
        ys = np.concatenate(feet)[:, None]
    else:
        ox, oy = np.meshgrid(offs, offs, indexing="ij")
        nodes = (base + np.stack([ox.ravel(), oy.ravel()], -1)) * h
        lo = (base + np.stack([ox[:-1, :-1].ravel(), oy[:-1, :-1].ravel()], -1)) * h
        c = [interpolate_values(grid, prev, lo + np.array(o) * h) for o in ((0, 0), (1, 0), (0, 1), (1, 1))]
        g = np.stack([(c[1] + c[3] - c[0] - c[2]) / (2 * h), (c[2] + c[3] - c[0] - c[1]) / (2 * h)], -1)
        v = system.H_p(np.asarray(x)[None], np.full(len(g), w), g)
        foot = np.asarray(x)[None] - v * dt
        inside = np.all((foot > lo) & (foot < lo + h), axis=-1)
        ys = np.concatenate([nodes, foot[inside]])
    vel = (np.asarray(x)[None] - ys) / dt
    cost = interpolate_values(grid, prev, ys) + dt * system.lagrangian(np.asarray(x)[None], np.full(len(ys), w), vel)
    i = int(np.argmin(np.where(np.isfinite(cost), cost, np.inf)))
    return ys[i], vel[i]


def variational_solution_residual(system, field_, probe_curves=200, seed=0, x_end=None,
                                  segments=3, max_speed=None):
    """(ineq_violation, equality_gap) of the variational-solution property.

    ineq_violation is the largest positive part of
    u(g(t2), t2) - u(g(t1), t1) - sum dt*L(g, u(g, .), g') over one-step
    straight probes from every node foot at every slice plus random
    piecewise-linear probes; equality_gap is the same quantity, in absolute
    value, along the curve traced backwards through the per-step argmins.
    """
    if field_.direction != "backward":
        raise InputError("variational_solution_residual expects a backward_evolve field")
    grid, vals, dt = field_.grid, field_.values, field_.dt
    times = field_.times
    if not np.allclose(np.diff(times), dt):
        raise InputError("field must record every step")
    d = grid.dim
    R = field_.settings.resolve_radius(system, grid)
    h = grid.spacing
    rng = np.random.default_rng(seed)
    worst = 0.0

    # one-step probes from node feet
    offs = np.arange(-R, R + 1)
    for k in range(1, len(times)):
        cur, prev = vals[k], vals[k - 1]
        if d == 1:
            for j in offs:
                y = np.roll(prev, j)
                v = np.full((grid.n, 1), j * h / dt)
                lag = system.lagrangian(grid.coords, cur, v)
                worst = max(worst, float(np.max(cur - y - dt * lag)))
        else:
            for jx in offs:
                for jy in offs:
                    y = np.roll(prev, (jx, jy), axis=(0, 1))
                    v = np.broadcast_to(np.array([jx, jy]) * h / dt, grid.coords.shape)
                    lag = system.lagrangian(grid.coords, cur, v)
                    worst = max(worst, float(np.max(cur - y - dt * lag)))

    # random piecewise-linear probes
    K = len(times) - 1
    vmax = max_speed if max_speed is not None else 0.8 * R * h / dt
    for _ in range(probe_curves):
        k1, k2 = sorted(rng.choice(K + 1, 2, replace=False))
        cuts = np.sort(rng.integers(k1 + 1, k2 + 1, size=segments - 1)) if k2 - k1 > 1 else np.array([], int)
        bounds = [k1, *cuts.tolist(), k2]
        x = rng.random(d)
        start = float(interpolate_values(grid, vals[k1], x))
        cost = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            v = rng.uniform(-vmax, vmax, d)
            for k in range(a + 1, b + 1):
                x = x + v * dt
                uk = float(interpolate_values(grid, vals[k], x))
                cost += float(dt * system.lagrangian(np.mod(x, 1.0), uk, v))
        end = float(interpolate_values(grid, vals[k2], x))
        worst = max(worst, end - start - cost)

    # equality along the traced minimiser
    if x_end is None:
        x_end = np.full(d, 0.0)
    x = np.atleast_1d(np.asarray(x_end, float)).reshape(d)
    end = float(interpolate_values(grid, vals[K], x))
    cost = 0.0
    for k in range(K, 0, -1):
        w = float(interpolate_values(grid, vals[k], x))
        y, v = _trace_foot(system, grid, vals[k - 1], x, w, dt, R)
        cost += float(dt * system.lagrangian(x, w, v))
        x = y
    start = float(interpolate_values(grid, vals[0], x))
    gap = abs(end - start - cost)
    return max(worst, 0.0), gap


@dataclass
class ViscosityReport:
    max_residual: float
    kink_count: int
    kink_positions: list
    excluded: int
    checked: int

    def as_dict(self):
        return {"max_residual": self.max_residual, "kink_count": self.kink_count,
                "kink_positions": self.kink_positions, "excluded": self.excluded, "checked": self.checked}


def kink_mask(grid, values):
    """Nodes whose second difference exceeds max(10*median, spacing^1.5), dilated by one node."""
    d2 = np.zeros(grid.shape)
    for ax in range(grid.dim):
        d2 = np.maximum(d2, np.abs(np.roll(values, 1, ax) - 2 * values + np.roll(values, -1, ax)))
    thr = max(10 * float(np.median(d2)), grid.spacing ** 1.5)
    mask = d2 > thr
    grown = mask.copy()
    for ax in range(grid.dim):
        grown |= np.roll(mask, 1, ax) | np.roll(mask, -1, ax)
    return grown, mask


def central_gradient(grid, values):
    h = grid.spacing
    return np.stack([(np.roll(values, -1, ax) - np.roll(values, 1, ax)) / (2 * h) for ax in range(grid.dim)], -1)


def viscosity_residual(system, field_, c=None, t_min=None):
    """Smooth-point residual max |w_t + H(x, w, w_x) - c| on interior slices.

    ``H`` is the unshifted Hamiltonian and ``c`` defaults to the field's
    c_shift. Kink nodes (and their neighbours) of the three slices entering
    each central difference are excluded.
    """
    grid, vals, times = field_.grid, field_.values, field_.times
    c = field_.c_shift if c is None else c
    if len(times) < 3:
        raise InputError("viscosity_residual needs at least 3 slices")
    t_min = 10 * field_.dt if t_min is None else t_min
    worst, excluded, checked = 0.0, 0, 0
    masks = [kink_mask(grid, v)[0] for v in vals]
    for k in range(1, len(times) - 1):
        if times[k] < t_min - 1e-12:
            continue
        wt = (vals[k + 1] - vals[k - 1]) / (times[k + 1] - times[k - 1])
        p = central_gradient(grid, vals[k])
        res = np.abs(wt + system.H(grid.coords, vals[k], p) - c)
        bad = masks[k - 1] | masks[k] | masks[k + 1]
        excluded += int(bad.sum())
        checked += int((~bad).sum())
        if (~bad).any():
            worst = max(worst, float(res[~bad].max()))
    final_kinks = kink_mask(grid, vals[-1])[1]
    pos = [[float(i) / grid.n for i in ix] for ix in zip(*np.nonzero(final_kinks))]
    return ViscosityReport(worst, int(final_kinks.sum()), pos, excluded, checked)


def stationary_residual(system, grid, values, c):
    """Smooth-point max |H(x, u, Du) - c| for a stationary profile, with kink count."""
    grown, mask = kink_mask(grid, values)
    p = central_gradient(grid, values)
    res = np.abs(system.H(grid.coords, values, p) - c)
    ok = ~grown
    return (float(res[ok].max()) if ok.any() else 0.0), int(mask.sum())
