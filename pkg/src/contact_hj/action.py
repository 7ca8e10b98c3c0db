"""Forward and backward implicit action functions on the grid.

The forward action h_{x0,u0}(x,t) is the least terminal value of
u' = L(x, u, x') over curves from x0 (u(0) = u0) to x; the backward action
h^{x0,u0}(x,t) prescribes u(t) = u0 at x0 and returns the largest initial
value at x. Both are built by the implicit sweeps of :mod:`sweep` from a
point-anchored seed.

Seeding. Slice 0 holds u0 at the anchor node and ``u0 +- SEED_CAP``
elsewhere. Slices with ``t <= seed_time`` are filled by the straight
segment between anchor and node, integrated with the same implicit step
(no interpolation, so no numerical diffusion of the initial cone); later
slices come from the one-step sweep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import sweep
from .characteristics import apriori_bounds
from .errors import ContractionError, InputError, UnboundedError
from .grid import GridFunction, PeriodicGrid, displacement, fmt, interpolate_values

SEED_CAP = 1e6
SEED_TIME = 0.1
DEFAULT_BOX = (-1.0, 1.0, 0.5, 1.0)

_SIGMA = {"forward": 1, "backward": -1}


@dataclass
class SweepSettings:
    """Discretisation knobs shared by the action and semigroup sweeps."""

    dt: float
    radius: int | None = None
    midpoint_L: bool = False
    seed_time: float = SEED_TIME
    box: tuple = DEFAULT_BOX

    def resolve_radius(self, system, grid):
        if self.radius is not None:
            return int(self.radius)
        return sweep.window_radius(system, grid, self.dt, _bounds(system, self.box))

    def as_dict(self):
        return {"dt": self.dt, "radius": self.radius, "midpoint_L": self.midpoint_L,
                "seed_time": self.seed_time, "box": list(self.box)}


_BOUNDS_CACHE = {}


def _bounds(system, box):
    key = (id(system), tuple(box))
    hit = _BOUNDS_CACHE.get(key)
    if hit is None or hit[0] is not system:
        hit = (system, apriori_bounds(system, *box))
        _BOUNDS_CACHE[key] = hit
    return hit[1]


@dataclass
class ActionField:
    """Time slices of an implicit action function on a grid."""

    grid: PeriodicGrid
    times: np.ndarray
    values: np.ndarray
    anchor: tuple
    direction: str
    settings: SweepSettings
    system: object = field(default=None, repr=False, compare=False)

    @property
    def horizon(self):
        return float(self.times[-1])

    def slice_index(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise InputError(f"t={t} is not a recorded slice")
        return i

    def at(self, t):
        return GridFunction(self.grid, self.values[self.slice_index(t)])

    def query(self, x, t=None):
        """Interpolated value at ``(x, t)``; ``t`` defaults to the last slice."""
        t = self.horizon if t is None else float(t)
        if t < self.times[0] - 1e-12 or t > self.horizon * (1 + 1e-12) + 1e-12:
            raise InputError(f"t={t} outside [0, {self.horizon}]")
        j = int(np.searchsorted(self.times, t - 1e-12))
        j = min(max(j, 0), len(self.times) - 1)
        if abs(self.times[j] - t) <= 1e-9 * max(1.0, t) or j == 0:
            return _interp(self.grid, self.values[j], x)
        t0, t1 = self.times[j - 1], self.times[j]
        a = (t - t0) / (t1 - t0)
        return (1 - a) * _interp(self.grid, self.values[j - 1], x) + a * _interp(self.grid, self.values[j], x)

    def metadata(self):
        x0, u0 = self.anchor
        return {"kind": "action", "direction": self.direction,
                "anchor": {"x0": np.atleast_1d(x0).tolist(), "u0": u0},
                "grid": {"dim": self.grid.dim, "n": self.grid.n},
                "system": self.system.describe() if self.system is not None else None,
                "settings": self.settings.as_dict(), "seed_cap": SEED_CAP,
                "slices": len(self.times)}

    def to_csv(self, path):
        _write_slices(path, self.grid, self.times, self.values, "h")

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)


def _interp(grid, values, x):
    out = interpolate_values(grid, values, x)
    return float(out) if np.ndim(out) == 0 else out


def _write_slices(path, grid, times, values, name):
    coords = grid.points
    flat = values.reshape(len(times), -1)
    cols = ["x", "y"][: grid.dim]
    lines = ["t," + ",".join(cols) + "," + name]
    for k, t in enumerate(times):
        ts = fmt(t)
        for pt, val in zip(coords, flat[k]):
            lines.append(",".join([ts, *(fmt(c) for c in pt), fmt(val)]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _anchor_index(grid, x0):
    return np.asarray(grid.point_to_index(x0), dtype=int).reshape(-1, grid.dim)


def _straight_segments(system, grid, idx, u0, k0, dt, sigma, midpoint):
    """Values of straight segments between each anchor and every node, k = 1..k0 steps.

    Along the segment from the anchor (forward) or to the anchor (backward)
    the implicit Euler recursion of the sweep is applied with step dt, so
    the result matches the scheme without any interpolation. Returns an
    array shaped ``(k0, m, *grid.shape)``.
    """
    m = len(u0)
    d = grid.dim
    x = grid.coords[None]
    a = (idx / grid.n).reshape((m,) + (1,) * d + (d,))
    D = displacement(x, a)
    ks = np.arange(1, k0 + 1, dtype=float).reshape((k0,) + (1,) * (d + 1) + (1,))
    v = sigma * D[None] / (ks * dt)
    U = np.broadcast_to(np.asarray(u0, float).reshape((1, m) + (1,) * d), (k0, m) + grid.shape).copy()
    for j in range(1, k0 + 1):
        frac = (j - 0.5 if midpoint else j) / ks[j - 1:]
        pos = a + frac * D[None]
        prev = U[j - 1:]
        vj = v[j - 1:]
        if system.coupling is not None or system.lam == 0:
            base = prev + sigma * dt * system.lagrangian(pos, np.zeros_like(prev), vj)
            if system.lam == 0:
                U[j - 1:] = base
            else:
                U[j - 1:] = sweep._solve_separable(base, system.coupling, dt, sigma, prev)
            continue
        w = prev.copy()
        for _ in range(sweep.MAX_ITER):
            w_new = prev + sigma * dt * system.lagrangian(pos, w, vj)
            gap = np.max(np.abs(w_new - w))
            w = w_new
            if gap <= sweep.REL_TOL * max(1.0, float(np.max(np.abs(w)))):
                break
        else:
            raise ContractionError("straight-segment seed did not converge")
        U[j - 1:] = w
    return U


def action_batch(system, grid, anchors, u0s, t, settings, direction="forward", record=None):
    """Action fields for a batch of anchors.

    ``anchors`` are points (snapped to nodes), ``u0s`` their seed values.
    ``record`` lists the step indices to keep (default: all). Returns
    ``(times, values)`` with values shaped ``(len(record), m, *grid.shape)``.
    """
    sigma = _SIGMA[direction]
    dt = settings.dt
    sweep.check_step(system, dt)
    if t < dt * (1 - 1e-9):
        raise InputError(f"t={t} must be >= dt={dt}")
    nsteps = max(1, int(round(t / dt)))
    if abs(nsteps * dt - t) > 1e-9 * max(1.0, t):
        raise InputError(f"t={t} is not a multiple of dt={dt}")
    idx = np.concatenate([_anchor_index(grid, a) for a in anchors]) if len(anchors) else np.empty((0, grid.dim), int)
    u0s = np.asarray(u0s, dtype=float).reshape(-1)
    m = len(u0s)
    if len(idx) != m:
        raise InputError("anchors and u0s differ in length")
    R = settings.resolve_radius(system, grid)
    k0 = min(nsteps, max(int(round(settings.seed_time / dt)), 1))
    record = list(range(nsteps + 1)) if record is None else sorted(set(int(r) for r in record))
    keep = {r: i for i, r in enumerate(record)}
    out = np.empty((len(record), m) + grid.shape)

    seed = np.empty((m,) + grid.shape)
    for b in range(m):
        seed[b] = u0s[b] + sigma * SEED_CAP
        seed[(b,) + tuple(idx[b])] = u0s[b]
    if 0 in keep:
        out[keep[0]] = seed
    segs = _straight_segments(system, grid, idx, u0s, k0, dt, sigma, settings.midpoint_L)
    for k in range(1, k0 + 1):
        if k in keep:
            out[keep[k]] = segs[k - 1]
    cur = segs[-1]
    for k in range(k0 + 1, nsteps + 1):
        cur = sweep.step(system, cur, dt, sigma, R, settings.midpoint_L)
        if k in keep:
            out[keep[k]] = cur
    times = np.array(record, dtype=float) * dt
    return times, out


def _action(system, x0, u0, t, grid, dt, direction, record, **kw):
    settings = kw.pop("settings", None) or SweepSettings(dt=dt, **kw)
    times, vals = action_batch(system, grid, [x0], [u0], t, settings, direction, record)
    x0s = grid.snap(x0)
    return ActionField(grid=grid, times=times, values=vals[:, 0], anchor=(x0s, float(u0)),
                       direction=direction, settings=settings, system=system)


def forward_action(system, x0, u0, t, grid, dt, record=None, **kw):
    """h_{x0,u0} on ``grid`` for t in [0, t]; keyword arguments go to :class:`SweepSettings`."""
    return _action(system, x0, u0, t, grid, dt, "forward", record, **kw)


def backward_action(system, x0, u0, t, grid, dt, record=None, **kw):
    """h^{x0,u0}: terminal value u0 at x0 at time t, value at x at time 0."""
    return _action(system, x0, u0, t, grid, dt, "backward", record, **kw)


def dp_step(system, prev, dt, direction="forward", *, radius=None, midpoint_L=False, box=DEFAULT_BOX):
    """One implicit step of the forward (min) or backward (max) recursion."""
    sweep.check_step(system, dt)
    settings = SweepSettings(dt=dt, radius=radius, midpoint_L=midpoint_L, box=box)
    R = settings.resolve_radius(system, prev.grid)
    vals = sweep.step(system, prev.values[None], dt, _SIGMA[direction], R, midpoint_L)
    return GridFunction(prev.grid, vals[0])


def markov_residual(field, t, s, stride=4):
    """max_x |h(x,t+s) - min_y h_{y,h(y,t)}(x,s)| with y on every ``stride``-th node."""
    dt = field.settings.dt
    if t < 10 * dt - 1e-12 or s < 10 * dt - 1e-12:
        raise InputError("markov_residual needs t, s >= 10*dt")
    if t + s > field.horizon * (1 + 1e-12):
        raise InputError(f"t+s={t + s} exceeds the field horizon {field.horizon}")
    if field.direction != "forward":
        raise InputError("markov_residual expects a forward action field")
    grid = field.grid
    mid = field.values[field.slice_index(t)]
    target = field.values[field.slice_index(t + s)]
    nodes = [np.array(ix) for ix in np.ndindex(*grid.shape) if all(i % stride == 0 for i in ix)]
    anchors = [ix / grid.n for ix in nodes]
    u0s = [mid[tuple(ix)] for ix in nodes]
    finite = [i for i, u in enumerate(u0s) if abs(u) < SEED_CAP / 2]
    anchors = [anchors[i] for i in finite]
    u0s = [u0s[i] for i in finite]
    nsteps = int(round(s / dt))
    _, vals = action_batch(field.system, grid, anchors, u0s, s, field.settings, "forward", record=[nsteps])
    inner = vals[0].min(axis=0)
    ok = np.abs(target) < SEED_CAP / 2
    return float(np.max(np.abs(target - inner)[ok]))


def _field_value(system, x0, u0, x, t, grid, dt, direction, **kw):
    f = (forward_action if direction == "forward" else backward_action)(
        system, x0, u0, t, grid, dt, record=[int(round(t / dt))], **kw)
    return f.query(x, t)


def solve_initial_value(system, x0, x, t, target_u, grid, dt, tol=1e-6, max_doublings=60, **kw):
    """u0 with h_{x0,u0}(x,t) = target_u, by bracketed root finding in u0."""
    if t < 10 * dt - 1e-12:
        raise InputError("solve_initial_value needs t >= 10*dt")

    def f(u0):
        return _field_value(system, x0, u0, x, t, grid, dt, "forward", **kw) - target_u

    lo, hi = target_u - 1.0, target_u + 1.0
    flo, fhi = f(lo), f(hi)
    step = 1.0
    for _ in range(max_doublings):
        if flo <= 0 <= fhi:
            break
        step *= 2
        if flo > 0:
            lo, flo = lo - step, f(lo - step)
        if fhi < 0:
            hi, fhi = hi + step, f(hi + step)
    else:
        raise UnboundedError(f"no bracket for target {target_u} after {max_doublings} doublings")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    root = optimize.brentq(f, lo, hi, xtol=1e-12, rtol=1e-14, maxiter=200)
    if abs(f(root)) > tol:
        raise UnboundedError(f"root residual {abs(f(root)):.3g} exceeds {tol}")
    return float(root)


def duality_roundtrip(system, x0, u0, x, t, grid, dt, **kw):
    """|h^{x,u}(x0,t) - u0| with u = h_{x0,u0}(x,t) (x snapped to the grid)."""
    if t < 10 * dt - 1e-12:
        raise InputError("duality_roundtrip needs t >= 10*dt")
    xs = grid.snap(x)
    u = _field_value(system, x0, u0, xs, t, grid, dt, "forward", **kw)
    back = _field_value(system, xs, u, grid.snap(x0), t, grid, dt, "backward", **kw)
    return float(abs(back - u0))


def c_shift_bound_check(system, x0, u0, c1, c2, box, grid, dt, **kw):
    """max over (x,t) in the box of |h^{c1} - h^{c2}| / (e^{lam t} t |c1 - c2|)."""
    if c1 == c2:
        raise InputError("c_shift_bound_check needs c1 != c2")
    a, b, delta, T = box
    delta = max(delta, 10 * dt)
    f1 = forward_action(system.shifted(c1), x0, u0, T, grid, dt, **kw)
    f2 = forward_action(system.shifted(c2), x0, u0, T, grid, dt, **kw)
    sel = f1.times >= delta - 1e-12
    t = f1.times[sel]
    diff = np.abs(f1.values[sel] - f2.values[sel]).reshape(len(t), -1)
    ok = (np.abs(f1.values[sel]) < SEED_CAP / 2).reshape(len(t), -1)
    bound = (np.exp(system.lam * t) * t * abs(c1 - c2))[:, None]
    ratio = np.where(ok, diff / bound, 0.0)
    return float(ratio.max())


def short_time_value(system, x0, u0, x, tau, direction="forward", midpoint=False):
    """Single implicit straight-segment value, used for queries below 10*dt."""
    d = system.dim
    x0 = np.atleast_1d(np.asarray(x0, float)).reshape(d)
    x = np.atleast_1d(np.asarray(x, float)).reshape(d)
    sigma = _SIGMA[direction]
    v = (displacement(x, x0) if sigma > 0 else displacement(x0, x)) / tau
    xe = x - sigma * 0.5 * v * tau if midpoint else x
    w = float(u0)
    for _ in range(sweep.MAX_ITER):
        w_new = float(u0 + sigma * tau * system.lagrangian(xe, w, v))
        if abs(w_new - w) <= sweep.REL_TOL * max(1.0, abs(w_new)):
            return w_new
        w = w_new
    if math.isfinite(w):
        raise ContractionError("short-time value did not converge")
    return w
