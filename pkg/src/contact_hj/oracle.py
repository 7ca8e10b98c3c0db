"""Monotone Lax-Friedrichs solver for w_t + H(x, w, Dw) = c, used as an independent oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .action import SweepSettings
from .characteristics import _sample_x
from .errors import InputError, SchemeError
from .grid import GridFunction, PeriodicGrid
from .semigroup import ValueField, backward_evolve, central_gradient, kink_mask

CFL = 0.5
LAM_DT_CAP = 0.25
THETA_FACTOR = 1.25
PROBE_EPS = 1e-3


@dataclass
class FDConfig:
    """Scheme parameters: viscosity ``theta``, ``cfl`` and the derived step ``dt``."""

    grid: PeriodicGrid
    theta: float
    cfl: float = CFL
    dt: float = 0.0
    band: dict = field(default_factory=dict)
    local: bool = True

    def __post_init__(self):
        if not 0 < self.cfl <= 0.5:
            raise InputError(f"cfl must lie in (0, 0.5], got {self.cfl}")
        if not self.theta > 0:
            raise InputError("theta must be positive")
        if self.dt <= 0:
            self.dt = self.cfl * self.grid.spacing / (self.theta * self.grid.dim)

    def as_dict(self):
        return {"n": self.grid.n, "dim": self.grid.dim, "theta": self.theta, "cfl": self.cfl, "dt": self.dt,
                "band": self.band, "local": self.local}


def _max_gradient(grid, values):
    g = 0.0
    for ax in range(grid.dim):
        g = max(g, float(np.max(np.abs(np.roll(values, -1, ax) - values))) / grid.spacing)
    return g


def fd_config(system, phi, T, c=0.0, cfl=CFL, p_band=None, samples=64, local=True):
    """Choose theta = 1.25 * max |H_p| over a (u, p) band covering the solution.

    The p band defaults to 1.05 * Lip(phi) + 0.05; the u band is
    [min phi - M, max phi + M] with M = (|c| + max|H(x, 0, 0)| + 1) * T * e^{lam T} + 1.
    dt is further capped by the spacing and so that dt * lam <= 0.25.
    """
    grid = phi.grid
    d = system.dim
    P = 1.05 * _max_gradient(grid, phi.values) + 0.05 if p_band is None else float(p_band)
    xs = _sample_x(d, samples)
    h0 = float(np.max(np.abs(system.hamiltonian(xs, np.zeros(len(xs)), np.zeros_like(xs)))))
    M = (abs(c) + h0 + 1.0) * T * math.exp(system.lam * T) + 1.0
    u_lo, u_hi = float(phi.values.min()) - M, float(phi.values.max()) + M
    us = np.linspace(u_lo, u_hi, 9)
    ps1 = np.linspace(-P, P, 41)
    if d == 1:
        ps = ps1[:, None]
    else:
        ps = np.stack(np.meshgrid(ps1, ps1, indexing="ij"), -1).reshape(-1, 2)
    X, Pp = np.broadcast_arrays(xs[:, None, None, :], ps[None, None, :, :], subok=False)
    X = np.broadcast_to(X, (len(xs), len(us), len(ps), d))
    Pp = np.broadcast_to(Pp, X.shape)
    U = np.broadcast_to(us[None, :, None], X.shape[:-1])
    hp = np.abs(system.H_p(X, U, Pp))
    theta = THETA_FACTOR * max(float(np.max(hp)), 1e-3)
    cfg = FDConfig(grid, theta, cfl, band={"p": P, "u": [u_lo, u_hi]}, local=local)
    cfg.dt = min(cfg.dt, grid.spacing)
    if system.lam > 0 and cfg.dt * system.lam > LAM_DT_CAP:
        cfg.dt = LAM_DT_CAP / system.lam
    return cfg


def _lf_update(system, grid, w, dt, theta, c, local):
    """One explicit step; ``local`` uses the per-node viscosity max |H_p| over the one-sided slopes."""
    h = grid.spacing
    x = grid.coords
    p = central_gradient(grid, w)
    visc = np.zeros_like(w)
    with np.errstate(over="ignore", invalid="ignore"):
        for ax in range(grid.dim):
            fwd = np.roll(w, -1, ax) - w
            bwd = w - np.roll(w, 1, ax)
            if local:
                a = 0.0
                for s_ in (fwd, bwd):
                    q = p.copy()
                    q[..., ax] = s_ / h
                    a = np.maximum(a, np.abs(system.H_p(x, w, q)[..., ax]))
                a = np.minimum(a, theta)
            else:
                a = theta
            visc += a * (fwd - bwd)
        return w - dt * (system.hamiltonian(x, w, p) - c - visc / (2 * h))


class _BandExceeded(Exception):
    def __init__(self, grad):
        self.grad = grad


def fd_evolve(system, phi, T, cfg=None, c=0.0, record_every=1, probe=True, align=1, max_restarts=30):
    """Explicit Lax-Friedrichs evolution of w_t + H(x, w, Dw) = c from phi.

    Without an explicit ``cfg`` the p band starts at the Lipschitz constant
    of phi; whenever the discrete gradient leaves the band the run restarts
    with a wider band (and larger theta), so theta always dominates |H_p| on
    the differences actually seen. With ``probe`` a second orbit from
    phi + eps * (1 + bump) runs alongside; any crossing of the two violates
    the discrete comparison principle and raises SchemeError.
    """
    if not T >= 0:
        raise InputError("T must be non-negative")
    if cfg is not None:
        return _fd_run(system, phi, T, cfg, c, record_every, probe, align, None)
    P = None
    for _ in range(max_restarts):
        cfg = fd_config(system, phi, T, c, p_band=P)
        try:
            return _fd_run(system, phi, T, cfg, c, record_every, probe, align, cfg.band["p"])
        except _BandExceeded as exc:
            P = max(1.5 * cfg.band["p"], 1.1 * exc.grad)
    raise SchemeError("gradient band kept growing; data too rough for the oracle")


def _fd_run(system, phi, T, cfg, c, record_every, probe, align, band):
    grid = phi.grid
    nsteps = max(1, int(math.ceil(T / cfg.dt - 1e-9))) if T > 0 else 0
    nsteps = -(-nsteps // align) * align
    dt = T / nsteps if nsteps else cfg.dt
    w = phi.values.astype(float).copy()
    if probe:
        bump = 0.5 * (1 + np.cos(2 * np.pi * grid.coords[..., 0]))
        q = w + PROBE_EPS * (1 + bump)
    times, vals = [0.0], [w.copy()]
    for k in range(1, nsteps + 1):
        w = _lf_update(system, grid, w, dt, cfg.theta, c, cfg.local)
        if not np.all(np.isfinite(w)):
            raise SchemeError(f"non-finite values at step {k}")
        if band is not None:
            g = _max_gradient(grid, w)
            if g > band:
                raise _BandExceeded(g)
        if probe:
            q = _lf_update(system, grid, q, dt, cfg.theta, c, cfg.local)
            if np.any(q < w - 1e-12):
                raise SchemeError(f"comparison probe crossed at t={k * dt:.4g}; increase theta or lower cfl")
        if k % record_every == 0 or k == nsteps:
            times.append(k * dt)
            vals.append(w.copy())
    settings = SweepSettings(dt=dt)
    shifted = system.shifted(system.c_shift + c) if c else system
    info = {"fd": cfg.as_dict(), "steps": nsteps}
    return ValueField(grid, np.array(times), np.array(vals), phi, "backward", shifted.c_shift, settings,
                      "fd", shifted, info)


@dataclass
class CrossValidation:
    levels: list
    gaps: list
    max_gap: float
    shrinks: bool

    def as_dict(self):
        return {"levels": self.levels, "gaps": self.gaps, "max_gap": self.max_gap, "shrinks": self.shrinks}


def cross_validate(system, phi_fn, T, c=0.0, levels=((200, 1e-3), (400, 5e-4)), slices=4, exclude_kinks=False,
                   **kw):
    """Sup gap between the DP semigroup and the FD oracle at matching slices per refinement level.

    ``phi_fn`` maps grid points (m, d) to initial values so each level
    samples the same datum. With ``exclude_kinks`` the kink neighbourhoods
    of the DP slice are left out (used for stationary profiles).
    """
    gaps, lv = [], []
    for n, dt in levels:
        grid = PeriodicGrid(system.dim, n)
        phi = GridFunction(grid, np.asarray(phi_fn(grid.points), float).reshape(grid.shape))
        dp = backward_evolve(system.shifted(system.c_shift + c), phi, T, dt, **kw)
        fd = fd_evolve(system, phi, T, c=c, align=slices)
        worst = 0.0
        for t in np.linspace(0, T, slices + 1)[1:]:
            a = dp.values[int(np.argmin(np.abs(dp.times - t)))]
            b = fd.values[int(np.argmin(np.abs(fd.times - t)))]
            diff = np.abs(a - b)
            if exclude_kinks:
                diff = diff[~kink_mask(grid, a)[0]]
            worst = max(worst, float(diff.max()))
        gaps.append(worst)
        lv.append([n, dt, fd.dt])
    shrinks = all(b < a for a, b in zip(gaps, gaps[1:]))
    return CrossValidation(lv, gaps, max(gaps), shrinks)
