"""Flat unit torus T^d (d = 1, 2), its uniform lattice and grid functions."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, InputError


def _as_points(x, dim):
    """Return ``x`` as a float array of shape (..., dim)."""
    arr = np.asarray(x, dtype=float)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != dim:
        raise DomainError(f"expected points with trailing dimension {dim}, got shape {arr.shape}")
    return arr


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise DomainError("point has non-finite coordinates")


def wrap(x):
    """Reduce ``x`` modulo 1 componentwise into [0, 1)."""
    arr = np.asarray(x, dtype=float)
    _check_finite(arr)
    out = np.mod(arr, 1.0)
    # mod can return exactly 1.0 for tiny negative inputs
    out = np.where(out >= 1.0, 0.0, out)
    return out if out.ndim else float(out)


def displacement(x, y):
    """Componentwise shortest signed difference ``x - y`` on the torus, in [-1/2, 1/2)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return d - np.floor(d + 0.5)


def periodic_distance(x, y):
    """Flat-torus distance: Euclidean norm of the wrapped difference.

    Scalars are 1-D points; otherwise the trailing axis holds coordinates,
    so a batch of 1-D points must have shape (N, 1).
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    _check_finite(xa)
    _check_finite(ya)
    d = displacement(xa, ya)
    if d.ndim == 0:
        return float(abs(d))
    r = np.sqrt(np.sum(d * d, axis=-1))
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform lattice {0, 1/n, ..., (n-1)/n}^dim on the unit torus."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"grid dim must be 1 or 2, got {self.dim}")
        if int(self.n) != self.n or self.n < 4:
            raise ConfigError(f"grid n must be an integer >= 4, got {self.n}")

    @property
    def spacing(self):
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n**self.dim

    @property
    def diameter(self):
        return np.sqrt(self.dim) / 2.0

    @cached_property
    def axis(self):
        return np.arange(self.n) / self.n

    @cached_property
    def coords(self):
        """Node coordinates, shape ``(*shape, dim)``."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def points(self):
        """Node coordinates flattened to ``(size, dim)``."""
        return self.coords.reshape(-1, self.dim)

    def index_to_point(self, index):
        idx = np.atleast_1d(np.asarray(index))
        if idx.shape[-1] != self.dim or np.any(idx < 0) or np.any(idx >= self.n):
            raise InputError(f"index {index} outside 0..{self.n - 1}")
        return idx / self.n

    def point_to_index(self, x):
        """Index of the node nearest to ``x`` (ties resolved upward by rounding)."""
        p = _as_points(x, self.dim)
        _check_finite(p)
        idx = np.rint(np.mod(p, 1.0) * self.n).astype(int) % self.n
        return tuple(int(i) for i in idx.reshape(-1, self.dim)[0]) if p.ndim == 1 else idx

    def snap(self, x):
        """Nearest node to ``x`` as coordinates (float for d=1, tuple for d=2)."""
        idx = self.point_to_index(x)
        pt = np.asarray(idx, dtype=float) / self.n
        return float(pt[0]) if self.dim == 1 else tuple(float(v) for v in pt)

    def sample(self, func):
        """Evaluate ``func`` on the nodes; ``func`` receives points shaped (..., dim)."""
        vals = np.asarray(func(self.coords), dtype=float)
        if vals.shape == (*self.shape, 1):
            vals = vals[..., 0]
        return GridFunction(self, np.broadcast_to(vals, self.shape).copy())

    def constant(self, value):
        return GridFunction(self, np.full(self.shape, float(value)))


def interpolate_values(grid, values, x):
    """Multilinear periodic interpolation of node ``values`` at points ``x``.

    ``values`` has shape ``grid.shape``; ``x`` has shape (..., dim) (or any
    shape for dim 1). Returns an array of the leading shape of ``x``.
    """
    n = grid.n
    p = _as_points(x, grid.dim)
    s = np.mod(p, 1.0) * n
    i0 = np.floor(s).astype(int)
    frac = s - i0
    i0 %= n
    i1 = (i0 + 1) % n
    if grid.dim == 1:
        f = frac[..., 0]
        return (1.0 - f) * values[i0[..., 0]] + f * values[i1[..., 0]]
    fx, fy = frac[..., 0], frac[..., 1]
    ax0, ay0, ax1, ay1 = i0[..., 0], i0[..., 1], i1[..., 0], i1[..., 1]
    return (
        (1 - fx) * (1 - fy) * values[ax0, ay0]
        + fx * (1 - fy) * values[ax1, ay0]
        + (1 - fx) * fy * values[ax0, ay1]
        + fx * fy * values[ax1, ay1]
    )


@dataclass(frozen=True)
class GridFunction:
    """Finite values attached to the nodes of a periodic grid."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise InputError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise InputError("grid function has non-finite values")
        object.__setattr__(self, "values", vals)

    def __call__(self, x):
        return interpolate(self, x)

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path):
        """Write rows (index..., x..., value)."""
        g = self.grid
        idx_names = ["i", "j"][: g.dim]
        x_names = ["x", "y"][: g.dim]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([*idx_names, *x_names, "value"])
            for idx in itertools.product(range(g.n), repeat=g.dim):
                w.writerow([*idx, *(fmt(i / g.n) for i in idx), fmt(self.values[idx])])

    @classmethod
    def from_csv(cls, path, grid=None):
        with open(Path(path), newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InputError(f"{path}: empty grid function file")
        dim = 2 if "j" in rows[0] else 1
        idx = np.array([[int(r["i"])] + ([int(r["j"])] if dim == 2 else []) for r in rows])
        n = int(idx.max()) + 1
        if grid is None:
            grid = PeriodicGrid(dim, n)
        if grid.dim != dim or len(rows) != grid.size:
            raise InputError(f"{path}: rows do not cover a {grid.dim}-D grid with n={grid.n}")
        vals = np.empty(grid.shape)
        for r, ix in zip(rows, idx):
            vals[tuple(ix)] = float(r["value"])
        return cls(grid, vals)


def interpolate(f, x):
    """Value of grid function ``f`` at ``x``; exact at nodes, bounded by min/max of ``f``."""
    p = _as_points(x, f.grid.dim)
    _check_finite(p)
    out = interpolate_values(f.grid, f.values, p)
    return float(out) if np.ndim(out) == 0 else out


def fmt(value):
    """Format a float with 12 significant digits (used for every CSV value)."""
    return f"{float(value):.12g}"
