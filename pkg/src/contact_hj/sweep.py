"""One implicit dynamic-programming step on a periodic grid.

With ``sigma = +1`` (forward) each node x takes

    w(x) = min_y  prev(y) + dt * L(x_e, w(x), (x - y)/dt)

and with ``sigma = -1`` (backward)

    w(x) = max_y  prev(y) - dt * L(x_e, w(x), (y - x)/dt),

over feet y within ``radius`` nodes of x. ``prev`` is continued off the
nodes by its multilinear interpolant, so the minimisation runs over node
feet plus, for every cell of the window, the stationary point of the
convex one-cell problem (foot velocity ``v = H_p(x, w, slope)``). In 1-D
this makes the minimum over the interpolant exact. ``x_e`` is the arrival
point x, or the segment midpoint when ``midpoint`` is set.

The dependence on w(x) is resolved by fixed-point iteration of the whole
vector, which contracts with factor ``dt * lam``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractionError, InputError

MAX_ITER = 100
REL_TOL = 1e-13


def check_step(system, dt):
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    if dt * system.lam > 0.5:
        raise InputError(f"dt*lam = {dt * system.lam:.4g} exceeds the contraction margin 0.5")


def window_radius(system, grid, dt, bounds):
    """Window radius in nodes: ceil((max(Q, 2k)*dt + 2*spacing)/spacing), at least 2."""
    h = grid.spacing
    r = bounds.speed * dt + 2 * h
    return max(2, int(math.ceil(r / h - 1e-9)))


def step(system, prev, dt, sigma, radius, midpoint=False):
    """Advance a batch ``prev`` of shape ``(m, *grid.shape)`` by one step."""
    prev = np.asarray(prev, dtype=float)
    d = prev.ndim - 1
    if d == 1:
        kernel = _Kernel1D(system, prev, dt, sigma, radius, midpoint)
    else:
        kernel = _Kernel2D(system, prev, dt, sigma, radius, midpoint)
    if system.coupling is not None and system.lam > 0:
        return _solve_separable(kernel(np.zeros_like(prev)), system.coupling, dt, sigma, prev)
    return solve_implicit(kernel, prev, system.lam)


def _solve_separable(base, g, dt, sigma, start):
    """Solve w = base - sigma*dt*(g(w) - g(0)) nodewise."""
    g0 = float(g(0.0))
    w = start
    for _ in range(MAX_ITER):
        w_new = base - sigma * dt * (g(w) - g0)
        gap = np.max(np.abs(w_new - w))
        w = w_new
        if gap <= REL_TOL * max(1.0, float(np.max(np.abs(w)))):
            return w
    raise ContractionError(f"implicit step did not converge in {MAX_ITER} iterations (dt too large for lam?)")


def frozen_step(system, prev, dt, sigma, radius, u_frozen, midpoint=False):
    """One step with the u-argument of L read from ``u_frozen`` (no fixed point)."""
    prev = np.asarray(prev, dtype=float)
    kernel = (_Kernel1D if prev.ndim == 2 else _Kernel2D)(system, prev, dt, sigma, radius, midpoint)
    return kernel(np.asarray(u_frozen, dtype=float))


def solve_implicit(kernel, start, lam):
    w = kernel(start)
    if lam == 0:
        return w
    for _ in range(MAX_ITER):
        w_new = kernel(w)
        gap = np.max(np.abs(w_new - w))
        w = w_new
        if gap <= REL_TOL * max(1.0, float(np.max(np.abs(w)))):
            return w
    raise ContractionError(f"implicit step did not converge in {MAX_ITER} iterations (dt too large for lam?)")


def _select(cands, sigma):
    bad = np.inf if sigma > 0 else -np.inf
    cands = np.where(np.isfinite(cands), cands, bad)
    return cands.min(axis=-1) if sigma > 0 else cands.max(axis=-1)


class _Kernel1D:
    def __init__(self, system, prev, dt, sigma, radius, midpoint):
        m, n = prev.shape
        h = 1.0 / n
        self.system, self.dt, self.sigma, self.h, self.midpoint = system, dt, sigma, h, midpoint
        offs = np.arange(-radius, radius + 1)
        self.offs = offs
        # window[..., j] = prev at node i + offs[j]
        idx = (np.arange(n)[:, None] + offs[None, :]) % n
        self.win = prev[:, idx]
        self.slope = np.diff(self.win, axis=-1) / h
        self.x = (np.arange(n) * h)[:, None, None]
        self.v_node = (-sigma * offs * h / dt)[:, None]
        self.x_node = self.x + (offs * h / 2)[:, None] if midpoint else self.x
        self.u_free = system.lam == 0
        self._cache = None

    def __call__(self, w):
        sys_, dt, sigma, h = self.system, self.dt, self.sigma, self.h
        u = w[..., None]
        with np.errstate(over="ignore", invalid="ignore"):
            if self.u_free and self._cache is not None:
                return self._cache
            node = self.win + sigma * dt * sys_.lagrangian(self.x_node, u, self.v_node)
            s = self.slope[..., None]
            v = sys_.H_p(self.x, u, s)
            foot = -sigma * v[..., 0] * dt / h
            lo = self.offs[:-1]
            inside = (foot > lo) & (foot < lo + 1)
            if self.midpoint:
                lag = sys_.lagrangian(self.x + 0.5 * (foot * h)[..., None], u, v)
            else:
                lag = s[..., 0] * v[..., 0] - sys_.hamiltonian(self.x, u, s)
            cell = self.win[..., :-1] + self.slope * (foot - lo) * h + sigma * dt * lag
            cell = np.where(inside, cell, np.inf if sigma > 0 else -np.inf)
            out = _select(np.concatenate([node, cell], axis=-1), sigma)
        if self.u_free:
            self._cache = out
        return out


def _bilinear_grad(c00, c10, c01, c11, fx, fy, h):
    gx = ((1 - fy) * (c10 - c00) + fy * (c11 - c01)) / h
    gy = ((1 - fx) * (c01 - c00) + fx * (c11 - c10)) / h
    return np.stack([gx, gy], axis=-1)


class _Kernel2D:
    """Bilinear analogue of the 1-D kernel.

    Cell candidates use the gradient at the cell centre, then one refinement
    with the gradient at the resulting foot. Every candidate is the cost of
    an actual straight segment, so the step is an upper (forward) or lower
    (backward) bound of the exact window optimum.
    """

    def __init__(self, system, prev, dt, sigma, radius, midpoint):
        m, n, _ = prev.shape
        h = 1.0 / n
        self.system, self.dt, self.sigma, self.h, self.midpoint = system, dt, sigma, h, midpoint
        offs = np.arange(-radius, radius + 1)
        self.offs = offs
        k = len(offs)
        ii = (np.arange(n)[:, None] + offs[None, :]) % n
        # win[b, i, j, a, c] = prev[b, i + offs[a], j + offs[c]]
        self.win = prev[:, ii[:, None, :, None], ii[None, :, None, :]]
        ax = np.arange(n) * h
        X = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
        self.x = X[:, :, None, None, :]
        ox, oy = np.meshgrid(offs, offs, indexing="ij")
        self.v_node = -sigma * np.stack([ox, oy], -1) * h / dt
        disp = np.stack([ox, oy], -1) * h
        self.x_node = self.x + 0.5 * disp if midpoint else self.x
        self.lo = np.stack(np.meshgrid(offs[:-1], offs[:-1], indexing="ij"), -1).astype(float)
        W = self.win
        self.c = (W[..., :-1, :-1], W[..., 1:, :-1], W[..., :-1, 1:], W[..., 1:, 1:])
        self.u_free = system.lam == 0
        self._cache = None
        self.k = k

    def _cell(self, u, grad):
        sys_, dt, sigma, h = self.system, self.dt, self.sigma, self.h
        v = sys_.H_p(self.x, u, grad)
        foot = -sigma * v * dt / h
        f = foot - self.lo
        inside = np.all((f > 0) & (f < 1), axis=-1)
        fx = np.clip(f[..., 0], 0, 1)
        fy = np.clip(f[..., 1], 0, 1)
        c00, c10, c01, c11 = self.c
        val = (1 - fx) * (1 - fy) * c00 + fx * (1 - fy) * c10 + (1 - fx) * fy * c01 + fx * fy * c11
        xe = self.x + 0.5 * foot * h if self.midpoint else self.x
        lag = sys_.lagrangian(xe, u, v)
        out = np.where(inside, val + sigma * dt * lag, np.inf if sigma > 0 else -np.inf)
        return out, fx, fy

    def __call__(self, w):
        if self.u_free and self._cache is not None:
            return self._cache
        sys_, dt, sigma, h = self.system, self.dt, self.sigma, self.h
        u = w[..., None, None]
        with np.errstate(over="ignore", invalid="ignore"):
            node = self.win + sigma * dt * sys_.lagrangian(self.x_node, u, self.v_node)
            c00, c10, c01, c11 = self.c
            g0 = _bilinear_grad(c00, c10, c01, c11, 0.5, 0.5, h)
            cell0, fx, fy = self._cell(u, g0)
            g1 = _bilinear_grad(c00, c10, c01, c11, fx, fy, h)
            cell1, _, _ = self._cell(u, g1)
            m = w.shape[0]
            shp = w.shape[1:]
            flat = np.concatenate([node.reshape(m, *shp, -1), cell0.reshape(m, *shp, -1),
                                   cell1.reshape(m, *shp, -1)], axis=-1)
            out = _select(flat, sigma)
        if self.u_free:
            self._cache = out
        return out
