"""Contact Hamiltonians H(x, u, p), their Lagrangians and assumption checks.

Evaluator convention used throughout the package: ``x`` and ``p`` (or the
velocity ``v``) carry the coordinate axis last, shape ``(..., d)``; ``u``
has the leading shape ``(...)``. ``H``, ``H_u`` and ``L`` return arrays of
the leading shape, ``H_x`` and ``H_p`` return ``(..., d)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import ConfigError, ConvexityError

FAMILIES = ("classical", "discounted", "mechanical", "nonmonotone", "coshcase")

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ContactSystem:
    """A contact Hamiltonian with hand-coded partials and the (H3) bound ``lam``.

    ``L`` is an optional closed-form Lagrangian; without it the Lagrangian is
    computed by a numerical Legendre transform. ``c_shift`` is the constant
    added to the Lagrangian (equivalently subtracted from ``H``). When
    ``coupling`` is given, ``H = H0(x, p) + coupling(u)``; the sweeps use this
    to take the window minimum once per step.
    """

    dim: int
    H: Callable
    H_x: Callable
    H_u: Callable
    H_p: Callable
    lam: float
    L: Callable | None = None
    family: str | None = None
    params: dict = field(default_factory=dict)
    c_shift: float = 0.0
    coupling: Callable | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ConfigError(f"Lipschitz bound lam must be finite and >= 0, got {self.lam}")

    def hamiltonian(self, x, u, p):
        return self.H(x, u, p) - self.c_shift

    def lagrangian(self, x, u, v):
        if self.L is not None:
            return self.L(x, u, v) + self.c_shift
        return legendre_values(self, x, u, v)[0]

    def shifted(self, c):
        """System for ``L + c`` (i.e. ``H - c``)."""
        return dataclasses.replace(self, c_shift=self.c_shift + float(c))

    def describe(self):
        return {"family": self.family, "params": dict(self.params), "lam": self.lam,
                "dim": self.dim, "c_shift": self.c_shift}


def _sq(p):
    return np.sum(p * p, axis=-1)


def _potential(amp):
    if amp == 0:
        def V(x):
            return 0.0

        def dV(x):
            return np.zeros_like(x)

        return V, dV

    def V(x):
        return amp * np.cos(_TWO_PI * x[..., 0])

    def dV(x):
        g = np.zeros_like(x)
        g[..., 0] = -amp * _TWO_PI * np.sin(_TWO_PI * x[..., 0])
        return g

    return V, dV


def builtin(family, params=None, dim=1):
    """Construct one of the built-in model families.

    classical    H = |p|^2/2
    discounted   H = |p|^2/2 + lam*u + V(x)
    mechanical   H = |p|^2/2 + V(x)
    nonmonotone  H = |p|^2/2 + lam*sin(u) + V(x)
    coshcase     H = cosh(|p|) + lam*u

    with V(x) = amp*cos(2*pi*x_1).
    """
    params = dict(params or {})
    if "lambda" in params:
        params["lam"] = params.pop("lambda")
    unknown = set(params) - {"lam", "amp"}
    if unknown:
        raise ConfigError(f"unknown parameters for family {family!r}: {sorted(unknown)}")
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")

    lam = float(params.get("lam", 0.0 if family in ("classical", "mechanical") else 0.5))
    amp = float(params.get("amp", 1.0 if family == "mechanical" else 0.0))
    if family == "classical":
        lam, amp = 0.0, 0.0
    if family == "mechanical":
        lam = 0.0
    if family == "coshcase":
        amp = 0.0
    if lam < 0:
        raise ConfigError(f"lam must be >= 0, got {lam}")

    V, dV = _potential(amp)
    recorded = {"lam": lam, "amp": amp}

    if family == "nonmonotone":
        def coupling(u):
            return lam * np.sin(u)

        def coupling_u(u):
            return lam * np.cos(u)
    else:
        def coupling(u):
            return lam * np.asarray(u, dtype=float)

        def coupling_u(u):
            return np.full(np.shape(u), lam)

    if family == "coshcase":
        def H(x, u, p):
            return np.cosh(np.sqrt(_sq(p))) + coupling(u)

        def H_p(x, u, p):
            r = np.sqrt(_sq(p))
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(r > 1e-8, np.sinh(r) / np.where(r > 1e-8, r, 1.0), 1.0 + r * r / 6.0)
            return p * ratio[..., None]

        def H_x(x, u, p):
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(p)))

        def L(x, u, v):
            s = np.sqrt(_sq(v))
            return s * np.arcsinh(s) - np.sqrt(1.0 + s * s) - coupling(u)
    else:
        def H(x, u, p):
            return 0.5 * _sq(p) + coupling(u) + V(x)

        def H_p(x, u, p):
            return np.broadcast_to(p, np.broadcast_shapes(np.shape(x), np.shape(p))).astype(float)

        def H_x(x, u, p):
            return np.broadcast_to(dV(x), np.broadcast_shapes(np.shape(x), np.shape(p)))

        def L(x, u, v):
            return 0.5 * _sq(v) - coupling(u) - V(x)

    def H_u(x, u, p):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u), np.shape(p)[:-1])
        return np.broadcast_to(coupling_u(u), shape)

    return ContactSystem(dim=dim, H=H, H_x=H_x, H_u=H_u, H_p=H_p, lam=lam, L=L,
                         family=family, params=recorded, coupling=coupling)


def legendre_values(system, x, u, v, *, tol=1e-12, max_iter=200):
    """Vectorized numerical Legendre transform.

    Returns ``(L, p_star)`` with ``H_p(x, u, p_star) = v``. The 1-D case
    brackets the monotone map ``p -> H_p`` and bisects; the 2-D case runs a
    damped Newton ascent on ``<v,p> - H``.
    """
    d = system.dim
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape, v.shape[:-1])
    x = np.broadcast_to(x, shape + (d,))
    u = np.broadcast_to(u, shape)
    v = np.broadcast_to(v, shape + (d,))
    if d == 1:
        vs = v[..., 0]
        lo = np.full(shape, -1.0)
        hi = np.full(shape, 1.0)
        for _ in range(80):
            need_lo = system.H_p(x, u, lo[..., None])[..., 0] > vs
            need_hi = system.H_p(x, u, hi[..., None])[..., 0] < vs
            if not (need_lo.any() or need_hi.any()):
                break
            lo = np.where(need_lo, 2.0 * lo, lo)
            hi = np.where(need_hi, 2.0 * hi, hi)
        else:
            raise ConvexityError("could not bracket the Legendre maximizer (H not superlinear?)")
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            up = system.H_p(x, u, mid[..., None])[..., 0] < vs
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
            if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(mid))):
                break
        p = 0.5 * (lo + hi)[..., None]
    else:
        p = np.array(v, dtype=float, copy=True)
        eps = 1e-6
        for it in range(max_iter):
            g = v - system.H_p(x, u, p)
            if np.max(np.abs(g), initial=0.0) <= 1e-11:
                break
            J = np.empty(shape + (d, d))
            for k in range(d):
                e = np.zeros(d)
                e[k] = eps
                J[..., :, k] = (system.H_p(x, u, p + e) - system.H_p(x, u, p - e)) / (2 * eps)
            J = 0.5 * (J + np.swapaxes(J, -1, -2)) + 1e-12 * np.eye(d)
            step = np.linalg.solve(J, g[..., None])[..., 0]
            obj0 = np.sum(v * p, axis=-1) - system.H(x, u, p)
            t = np.ones(shape)
            for _ in range(40):
                trial = p + t[..., None] * step
                with np.errstate(over="ignore", invalid="ignore"):
                    obj = np.sum(v * trial, axis=-1) - system.H(x, u, trial)
                bad = ~(obj >= obj0 - 1e-14 * np.abs(obj0))
                if not bad.any():
                    break
                t = np.where(bad, 0.5 * t, t)
            p = p + t[..., None] * step
        else:
            raise ConvexityError("damped Newton ascent for the Legendre transform did not converge")
    value = np.sum(v * p, axis=-1) - system.hamiltonian(x, u, p)
    if not np.all(np.isfinite(value)):
        raise ConvexityError("Legendre transform produced non-finite values")
    return value, p


def legendre_transform(system, x, u, v):
    """``L(x,u,v) = sup_p <v,p> - H(x,u,p)`` at a single point, with its maximizer.

    1-D: golden-section search on a bracket of the concave objective, then a
    Newton polish of ``H_p(p) = v``. 2-D: damped Newton ascent.
    """
    d = system.dim
    xp = np.atleast_1d(np.asarray(x, dtype=float)).reshape(d)
    vp = np.atleast_1d(np.asarray(v, dtype=float)).reshape(d)
    u = float(u)
    if d == 2:
        val, p = legendre_values(system, xp, u, vp)
        return float(val), p.copy()

    def neg(p):
        with np.errstate(over="ignore"):
            return -(vp[0] * p - float(system.hamiltonian(xp, u, np.array([p]))))

    lo, hi = -1.0, 1.0
    for _ in range(80):
        hp_lo = float(system.H_p(xp, u, np.array([lo]))[0])
        hp_hi = float(system.H_p(xp, u, np.array([hi]))[0])
        if hp_lo <= vp[0] <= hp_hi:
            break
        if hp_lo > vp[0]:
            lo *= 2.0
        if hp_hi < vp[0]:
            hi *= 2.0
    else:
        raise ConvexityError(f"could not bracket the Legendre maximizer at v={vp[0]}")
    res = optimize.minimize_scalar(neg, bracket=(lo, hi), method="golden", tol=1e-12)
    p = float(res.x)
    # polish the first-order condition H_p(p) = v
    for _ in range(50):
        g = float(system.H_p(xp, u, np.array([p]))[0]) - vp[0]
        step = 1e-6 * max(1.0, abs(p))
        slope = (float(system.H_p(xp, u, np.array([p + step]))[0])
                 - float(system.H_p(xp, u, np.array([p - step]))[0])) / (2 * step)
        if slope <= 0:
            raise ConvexityError("H is not strictly convex in p near the maximizer")
        dp = g / slope
        p -= dp
        if abs(dp) <= 1e-12 * max(1.0, abs(p)):
            break
    if abs(float(system.H_p(xp, u, np.array([p]))[0]) - vp[0]) > 1e-8:
        raise ConvexityError("Legendre maximizer failed the first-order check")
    return float(-neg(p)), np.array([p])


@dataclass
class AssumptionResult:
    name: str
    passed: bool
    worst: float
    witness: dict

    def as_dict(self):
        return dataclasses.asdict(self)


def check_assumptions(system, sample_box=None, samples=200, seed=0):
    """Sample (H1) positive definiteness, an (H2) growth proxy and (H3) |H_u| <= lam.

    ``sample_box`` maps ``"u"`` and ``"p"`` to ``(lo, hi)`` ranges (``p`` per
    component). Failures are reported with a witness point, never raised.
    """
    box = {"u": (-2.0, 2.0), "p": (-4.0, 4.0)}
    box.update(sample_box or {})
    d = system.dim
    rng = np.random.default_rng(seed)
    x = rng.random((samples, d))
    u = rng.uniform(*box["u"], samples)
    p = rng.uniform(*box["p"], (samples, d))

    eps = 1e-5
    hess = np.empty((samples, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = eps
        hess[:, :, k] = (system.H_p(x, u, p + e) - system.H_p(x, u, p - e)) / (2 * eps)
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    min_eig = np.linalg.eigvalsh(hess)[:, 0]
    i1 = int(np.argmin(min_eig))
    h1 = AssumptionResult("H1", bool(min_eig[i1] > 1e-9), float(min_eig[i1]),
                          _witness(x[i1], u[i1], p[i1]))

    direction = rng.normal(size=(samples, d))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    base = system.hamiltonian(x, u, np.zeros((samples, d)))
    radii = (1.0, 2.0, 4.0, 8.0)
    with np.errstate(over="ignore"):
        g = np.stack([(system.hamiltonian(x, u, r * direction) - base) / r for r in radii], axis=-1)
    increasing = np.all(np.diff(g, axis=-1) > 0, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(g[:, 0] > 0, g[:, -1] / g[:, 0], np.where(g[:, -1] > 0, np.inf, 0.0))
    ratio = np.where(increasing, ratio, 0.0)
    i2 = int(np.argmin(ratio))
    h2 = AssumptionResult("H2", bool(ratio[i2] > 1.5), float(ratio[i2]),
                          _witness(x[i2], u[i2], direction[i2]))

    hu = np.abs(system.H_u(x, u, p))
    i3 = int(np.argmax(hu))
    h3 = AssumptionResult("H3", bool(hu[i3] <= system.lam + 1e-9), float(hu[i3]),
                          _witness(x[i3], u[i3], p[i3]))
    return {"H1": h1, "H2": h2, "H3": h3}


def _witness(x, u, p):
    return {"x": [float(t) for t in np.ravel(x)], "u": float(u), "p": [float(t) for t in np.ravel(p)]}


def custom(H, H_p, lam, dim=1, H_x=None, H_u=None, L=None, fd_step=1e-6):
    """Wrap user evaluators; missing partials are replaced by central differences."""

    def fd_x(x, u, p):
        x = np.asarray(x, dtype=float)
        out = np.empty(np.broadcast_shapes(x.shape, np.shape(p)))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = fd_step
            out[..., k] = (H(x + e, u, p) - H(x - e, u, p)) / (2 * fd_step)
        return out

    def fd_u(x, u, p):
        u = np.asarray(u, dtype=float)
        return (H(x, u + fd_step, p) - H(x, u - fd_step, p)) / (2 * fd_step)

    return ContactSystem(dim=dim, H=H, H_x=H_x or fd_x, H_u=H_u or fd_u, H_p=H_p,
                         lam=float(lam), L=L, family="custom")
