"""Characteristics of the contact Hamilton equations, shooting and a-priori constants."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConfigError, InputError, ShootingError
from .grid import displacement, fmt, periodic_distance, wrap

DELTA_MIN = 1e-3
_ESCAPE = 1e12


@dataclass(frozen=True)
class ContactState:
    x: np.ndarray
    u: float
    p: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p)) and math.isfinite(self.u)):
            raise InputError("contact state must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "u", float(self.u))


@dataclass
class Trajectory:
    """Samples of a characteristic. ``x`` is wrapped to the torus, ``x_lift`` is not."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    x_lift: np.ndarray

    def __len__(self):
        return len(self.times)

    def state(self, i):
        return ContactState(self.x[i], self.u[i], self.p[i])

    @property
    def final(self):
        return self.state(-1)

    def energy(self, system):
        return system.hamiltonian(self.x, self.u, self.p)

    def to_csv(self, path, system):
        d = self.x.shape[1]
        energy = self.energy(system)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["s", *["x", "y"][:d], "u", *["p", "q"][:d], "H"])
            for i, s in enumerate(self.times):
                w.writerow([fmt(s), *map(fmt, self.x[i]), fmt(self.u[i]), *map(fmt, self.p[i]),
                            fmt(energy[i])])


def vector_field(system, state):
    """Right-hand side (dx, du, dp) of the contact Hamilton equations."""
    if isinstance(state, ContactState):
        x, u, p = state.x, state.u, state.p
    else:
        x, u, p = state
    dx, du, dp = _rhs(system, np.asarray(x, float), np.asarray(u, float), np.asarray(p, float))
    if isinstance(state, ContactState):
        return dx, float(du), dp
    return dx, du, dp


def _rhs(system, x, u, p):
    hp = system.H_p(x, u, p)
    dx = hp
    dp = -system.H_x(x, u, p) - system.H_u(x, u, p)[..., None] * p
    du = np.sum(p * hp, axis=-1) - system.hamiltonian(x, u, p)
    return dx, du, dp


def _rk4_step(system, x, u, p, h):
    k1 = _rhs(system, x, u, p)
    k2 = _rhs(system, x + 0.5 * h * k1[0], u + 0.5 * h * k1[1], p + 0.5 * h * k1[2])
    k3 = _rhs(system, x + 0.5 * h * k2[0], u + 0.5 * h * k2[1], p + 0.5 * h * k2[2])
    k4 = _rhs(system, x + h * k3[0], u + h * k3[1], p + h * k3[2])
    x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    u = u + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    p = p + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return x, u, p


def _integrate(system, x, u, p, t, nsteps, record=False):
    """Batched RK4 on unwrapped coordinates. Rows that escape become NaN."""
    h = t / nsteps
    with np.errstate(over="ignore", invalid="ignore"):
        hist = [(x, u, p)] if record else None
        for _ in range(nsteps):
            x, u, p = _rk4_step(system, x, u, p, h)
            bad = ~(np.all(np.abs(x) < _ESCAPE, axis=-1) & (np.abs(u) < _ESCAPE)
                    & np.all(np.abs(p) < _ESCAPE, axis=-1))
            if bad.any():
                x = np.where(bad[..., None], np.nan, x)
                u = np.where(bad, np.nan, u)
                p = np.where(bad[..., None], np.nan, p)
            if record:
                hist.append((x, u, p))
    return (x, u, p) if not record else hist


def flow(system, s0, t, dt):
    """Fixed-step RK4 integration of the contact Hamilton equations on [0, t]."""
    if not (t > 0 and dt > 0 and dt <= t):
        raise InputError(f"need 0 < dt <= t, got dt={dt}, t={t}")
    if dt * system.lam >= 0.1:
        raise InputError(f"dt*lam = {dt * system.lam:.3g} must be < 0.1")
    s0 = s0 if isinstance(s0, ContactState) else ContactState(*s0)
    nsteps = int(math.ceil(t / dt - 1e-9))
    h = t / nsteps
    d = system.dim
    xs = np.empty((nsteps + 1, d))
    us = np.empty(nsteps + 1)
    ps = np.empty((nsteps + 1, d))
    x, u, p = s0.x.reshape(d), np.float64(s0.u), s0.p.reshape(d)
    xs[0], us[0], ps[0] = x, u, p
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(nsteps):
            x, u, p = _rk4_step(system, x, u, p, h)
            if not (np.all(np.abs(x) < _ESCAPE) and abs(u) < _ESCAPE and np.all(np.abs(p) < _ESCAPE)):
                raise BlowUpError(f"characteristic escaped after s={i * h:.6g}", escape_time=i * h)
            xs[i + 1], us[i + 1], ps[i + 1] = x, u, p
    times = np.linspace(0.0, t, nsteps + 1)
    return Trajectory(times=times, x=wrap(xs), u=us, p=ps, x_lift=xs)


def energy_drift_residual(system, traj):
    """Max over interior samples of |dH/ds + H*H_u| by central differences."""
    if len(traj) < 3:
        raise InputError("trajectory needs at least 3 samples")
    energy = traj.energy(system)
    hu = system.H_u(traj.x, traj.u, traj.p)
    s = traj.times
    dH = (energy[2:] - energy[:-2]) / (s[2:] - s[:-2])
    return float(np.max(np.abs(dH + energy[1:-1] * hu[1:-1])))


@dataclass
class AprioriBounds:
    k: float
    A: float
    B: float
    C: float
    K: float
    D: float
    Q: float
    box: tuple

    @property
    def speed(self):
        """Velocity scale used for search windows: max(Q, 2k)."""
        return max(self.Q, 2.0 * self.k)

    def as_dict(self):
        return {"k": self.k, "A": self.A, "B": self.B, "C": self.C, "K": self.K,
                "D": self.D, "Q": self.Q, "box": list(self.box)}


def _growth(lam, T):
    """(e^{lam T} - 1)/lam with its limit T at lam = 0."""
    return T if lam == 0 else math.expm1(lam * T) / lam


def _sample_x(dim, n=64):
    axis = np.arange(n) / n
    if dim == 1:
        return axis[:, None]
    return np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)


def _directions(dim, n=32):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    ang = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], -1)


def apriori_bounds(system, a, b, delta, T):
    """Constants of the compactness estimates for the box (a, b, delta, T).

    k = diam/delta, A = sup_{|v|<=k} L(x,0,v), B = inf L(x,0,v) = -max_x H(x,0,0),
    C bounds |h| on the box, K bounds |h| along minimizers and Q is a speed
    threshold with a + Q*delta - |D|*T > K, where L >= |v| + D for |u| <= K.
    """
    if not (a < b and 0 < delta < T):
        raise ConfigError(f"need a < b and 0 < delta < T, got box {(a, b, delta, T)}")
    lam = float(system.lam)
    if lam < 0:
        raise ConfigError("lam must be >= 0")
    d = system.dim
    k = math.sqrt(d) / 2 / delta
    xs = _sample_x(d)
    dirs = _directions(d)
    X = np.repeat(xs, len(dirs), axis=0)
    Vv = np.tile(dirs * k, (len(xs), 1))
    A = float(np.max(system.lagrangian(X, np.zeros(len(X)), Vv)))
    B = 0.0 - float(np.max(system.hamiltonian(xs, np.zeros(len(xs)), np.zeros_like(xs))))
    g = _growth(lam, T)
    eT = math.exp(lam * T)
    C = max(abs(a) * eT + abs(B) * g, abs(b) * eT + abs(A) * g)
    if lam > 0:
        K = max(abs(B) / lam + (C + 1 + abs(B) / lam) * eT,
                abs(B) / lam + (2 + abs(B) / lam) * eT,
                abs(a) * eT + abs(B) * g)
    else:
        K = max(C + 1 + abs(B) * T, 2 + abs(B) * T)
    # L >= |v| + D over |u| <= K with D = -sup_{|p|<=1, |u|<=K} H
    us = np.array([-K, 0.0, K])
    radii = np.linspace(0.0, 1.0, 5)
    P = (radii[:, None, None] * dirs[None]).reshape(-1, d)
    XX, UU, PP = np.broadcast_arrays(xs[:, None, None, :], us[None, :, None, None], P[None, None])
    D = float(-np.max(system.hamiltonian(XX, UU[..., 0], PP)))
    Q = max((K - a + abs(D) * T) / delta + 1.0, 1.0)
    return AprioriBounds(k=k, A=A, B=B, C=C, K=K, D=D, Q=Q, box=(a, b, delta, T))


@dataclass
class ShootResult:
    """Best branch of the shooting problem plus every accepted branch."""

    traj: Trajectory
    u_end: float
    p0: np.ndarray
    branches: list = field(default_factory=list)

    def __iter__(self):
        yield self.traj
        yield self.u_end


def _momentum_radius(system, u0, speed):
    d = system.dim
    v = np.zeros((2, d))
    v[0, 0], v[1, 0] = speed, -speed
    from .system import legendre_values
    _, p = legendre_values(system, np.zeros((2, d)), np.full(2, float(u0)), v)
    return float(np.max(np.abs(p)))


def shoot_minimizer(system, x0, u0, x, t, multistart=401, *, dt=1e-2, shoot_tol=1e-2,
                    bounds=None, max_lift=None, max_branches=9):
    """Two-point shooting for characteristics from (x0, u0) reaching x at time t.

    Initial momenta are scanned over a ball whose radius comes from the
    a-priori speed bound. In 1-D every sign change of the endpoint map is
    refined by bisection; in 2-D the best seed per lift is refined by damped Newton.
    Among branches that hit x within ``shoot_tol`` the smallest terminal u
    wins, ties going to the smaller initial momentum.
    """
    if t < DELTA_MIN:
        raise InputError(f"t={t} below the minimum shooting time {DELTA_MIN}")
    d = system.dim
    x0 = np.atleast_1d(np.asarray(x0, float)).reshape(d)
    x = np.atleast_1d(np.asarray(x, float)).reshape(d)
    if bounds is None:
        bounds = apriori_bounds(system, min(-1.0, u0 - 1), max(1.0, u0 + 1), min(0.5, t / 2), max(1.0, t))
    speed = bounds.speed
    radius = 1.05 * _momentum_radius(system, u0, speed)
    nsteps = max(int(math.ceil(t / dt)), 10)
    if max_lift is None:
        max_lift = int(math.ceil(speed * t)) + 1
    target0 = x0 + displacement(x, x0)

    def endpoint(P):
        P = np.atleast_2d(P)
        X0 = np.broadcast_to(x0, P.shape).copy()
        U0 = np.full(len(P), float(u0))
        return _integrate(system, X0, U0, P, t, nsteps)

    roots = []
    if d == 1:
        grid = np.linspace(-radius, radius, max(int(multistart), 3))
        X, U, _ = endpoint(grid[:, None])
        Xe = X[:, 0]
        lifts = np.arange(-max_lift, max_lift + 1)
        for m in lifts:
            f = Xe - (target0[0] + m)
            ok = np.isfinite(f[:-1]) & np.isfinite(f[1:])
            idx = np.nonzero(ok & (np.sign(f[:-1]) * np.sign(f[1:]) <= 0))[0]
            for i in idx:
                roots.append((grid[i], grid[i + 1], target0[0] + m))
        if roots:
            lo = np.array([r[0] for r in roots])
            hi = np.array([r[1] for r in roots])
            tgt = np.array([r[2] for r in roots])
            flo = endpoint(lo[:, None])[0][:, 0] - tgt
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                fm = endpoint(mid[:, None])[0][:, 0] - tgt
                left = np.sign(fm) == np.sign(flo)
                lo = np.where(left, mid, lo)
                flo = np.where(left, fm, flo)
                hi = np.where(left, hi, mid)
                if np.all(hi - lo < 1e-13 * max(1.0, radius)):
                    break
            cands = 0.5 * (lo + hi)[:, None]
        else:
            cands = np.empty((0, 1))
    else:
        nr = max(int(round(math.sqrt(multistart / 8))), 2)
        rings = np.linspace(0.0, radius, nr + 1)[1:]
        ang = 2 * np.pi * np.arange(8 * nr) / (8 * nr)
        seeds = [np.zeros(2)] + [r * np.array([math.cos(a_), math.sin(a_)]) for r in rings for a_ in ang]
        seeds = np.array(seeds)
        X, _, _ = endpoint(seeds)
        finite = np.all(np.isfinite(X), axis=-1)
        lift = np.rint(np.where(finite[:, None], X, 0.0) - target0).astype(int)
        err = np.where(finite, np.linalg.norm(X - target0 - lift, axis=-1), np.inf)
        # best seed per lift, nearest lifts first
        by_lift = {}
        for i in np.argsort(err):
            if np.isfinite(err[i]):
                by_lift.setdefault(tuple(lift[i]), i)
        ranked = sorted(by_lift, key=lambda m: np.linalg.norm(target0 + np.array(m) - x0))
        lifts = ranked[:max_branches]
        if lifts:
            found = _newton_refine(endpoint, seeds[[by_lift[m] for m in lifts]],
                                   target0 + np.array(lifts, dtype=float))
        else:
            found = []
        cands = np.asarray(found).reshape(-1, 2)

    branches = []
    if len(cands):
        Xc, Uc, _ = endpoint(cands)
        miss = periodic_distance(wrap(np.where(np.isfinite(Xc), Xc, 0.0)), x)
        miss = np.where(np.all(np.isfinite(Xc), axis=-1), miss, np.inf)
        for P, ue, ms in zip(cands, Uc, miss):
            if ms <= shoot_tol and np.isfinite(ue):
                if not any(np.allclose(P, b["p0"], atol=1e-8) for b in branches):
                    branches.append({"p0": P.copy(), "u_end": float(ue), "miss": float(ms)})
    if not branches:
        raise ShootingError(f"no shooting seed reached x={x.tolist()} within {shoot_tol}")
    branches.sort(key=lambda b: (round(b["u_end"], 12), float(np.linalg.norm(b["p0"]))))
    best = branches[0]
    traj = flow(system, ContactState(x0, u0, best["p0"]), t, t / nsteps)
    return ShootResult(traj=traj, u_end=float(traj.u[-1]), p0=best["p0"], branches=branches)


def _newton_refine(endpoint, P, targets, iters=40, eps=1e-7):
    """Damped Newton on ``endpoint(P) = targets`` for a batch of 2-D momenta."""
    P = P.copy()
    m = len(P)
    for _ in range(iters):
        probes = np.concatenate([P, P + [eps, 0.0], P + [0.0, eps]])
        X = endpoint(probes)[0]
        F = X[:m] - targets
        J = np.stack([(X[m:2 * m] - X[:m]) / eps, (X[2 * m:] - X[:m]) / eps], axis=-1)
        ok = np.all(np.isfinite(F), axis=-1) & np.all(np.isfinite(J), axis=(-1, -2))
        if np.all(np.abs(F[ok]) < 1e-11):
            break
        step = np.zeros_like(P)
        with np.errstate(all="ignore"):
            det = np.linalg.det(J)
            good = ok & (np.abs(det) > 1e-14)
            if good.any():
                step[good] = np.linalg.solve(J[good], F[good][..., None])[..., 0]
        norm = np.linalg.norm(step, axis=-1, keepdims=True)
        scale = np.minimum(1.0, 1.0 / np.maximum(norm, 1e-300))
        P = P - step * scale
    return P
