"""Discrete torus geometry, grid functions, norms and interpolation.

Sites of the torus with scale ``N`` in dimension ``d`` are the points
``{-1 + 1/N, ..., 1}^d`` of ``U^d = [-1, 1]^d`` with periodic wrap, i.e.
``(2N)^d`` sites in total. Internally a site is addressed by its integer
lattice index ``k in {0, ..., 2N-1}^d`` and the coordinate is
``u = -1 + (k + 1) / N``. Indices are flattened in C order.

Directions are encoded as integers ``0 .. 2d-1``: direction ``j`` moves along
axis ``j // 2``, forwards when ``j`` is even and backwards when it is odd.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import UsageError

MAX_DIM = 3


def direction_axis(direction: int) -> int:
    return direction // 2


def direction_sign(direction: int) -> int:
    return 1 if direction % 2 == 0 else -1


def reverse_direction(direction: int) -> int:
    return direction ^ 1


@dataclass(frozen=True)
class TorusGrid:
    d: int
    N: int

    def __post_init__(self):
        if not (1 <= self.d <= MAX_DIM):
            raise UsageError(f"dimension must be in 1..{MAX_DIM}, got {self.d}")
        if self.N < 1:
            raise UsageError(f"scale N must be >= 1, got {self.N}")

    @property
    def side(self) -> int:
        return 2 * self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def n_sites(self) -> int:
        return self.side**self.d

    @property
    def n_directions(self) -> int:
        return 2 * self.d

    @property
    def spacing(self) -> float:
        return 1.0 / self.N

    def site_index(self, lattice_coords) -> np.ndarray | int:
        k = np.asarray(lattice_coords, dtype=np.int64)
        if k.shape[-1] != self.d:
            raise UsageError(f"expected {self.d} lattice coordinates, got shape {k.shape}")
        k = np.mod(k, self.side)
        idx = np.ravel_multi_index(tuple(np.moveaxis(k, -1, 0)), self.shape)
        return int(idx) if np.ndim(idx) == 0 else idx

    def lattice_coords(self, index) -> np.ndarray:
        idx = np.asarray(index, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.n_sites):
            raise UsageError(f"site index out of range 0..{self.n_sites - 1}")
        return np.stack(np.unravel_index(idx, self.shape), axis=-1)

    def coordinates(self, index=None) -> np.ndarray:
        """Positions in U^d of the given sites (all sites by default), shape (..., d)."""
        k = self.all_lattice_coords if index is None else self.lattice_coords(index)
        return -1.0 + (k + 1.0) / self.N

    @cached_property
    def all_lattice_coords(self) -> np.ndarray:
        return self.lattice_coords(np.arange(self.n_sites))

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """Array of shape (n_sites, 2d): neighbor of each site in each direction."""
        k = self.all_lattice_coords
        table = np.empty((self.n_sites, self.n_directions), dtype=np.int64)
        for j in range(self.n_directions):
            shifted = k.copy()
            shifted[:, direction_axis(j)] += direction_sign(j)
            table[:, j] = self.site_index(shifted)
        table.setflags(write=False)
        return table

    def check_site(self, x: int) -> int:
        if not (0 <= int(x) < self.n_sites):
            raise UsageError(f"invalid site {x}: grid has {self.n_sites} sites")
        return int(x)

    def check_direction(self, direction: int) -> int:
        if not (0 <= int(direction) < self.n_directions):
            raise UsageError(f"invalid direction {direction} for d={self.d}")
        return int(direction)


def neighbors(grid: TorusGrid, x: int) -> list[tuple[int, int]]:
    """The 2d nearest neighbors of ``x`` as ``(site, direction)`` pairs."""
    x = grid.check_site(x)
    return [(int(y), j) for j, y in enumerate(grid.neighbor_table[x])]


@dataclass(frozen=True)
class GridFunction:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.grid.n_sites:
            raise UsageError(f"expected {self.grid.n_sites} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise UsageError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: TorusGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return cls(grid, fn(grid.coordinates()))

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values - other.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values + other.values)


def inner(f: GridFunction, h: GridFunction) -> float:
    """The ``L^2_N`` inner product ``N^-d sum f h``."""
    return float(np.dot(f.values, h.values)) / f.grid.N**f.grid.d


def discrete_norms(f: GridFunction) -> tuple[float, float]:
    """Return ``(||f||_{0,N}, ||f||_{1,N})``.

    The gradient part sums over ordered neighbor pairs, so every bond is
    counted twice.
    """
    grid = f.grid
    scale = float(grid.N) ** grid.d
    v = f.values
    norm0_sq = float(np.dot(v, v)) / scale
    diffs = v[grid.neighbor_table] - v[:, None]
    grad_sq = grid.N**2 * float(np.sum(diffs * diffs)) / scale
    return float(np.sqrt(norm0_sq)), float(np.sqrt(norm0_sq + grad_sq))


def sup_norm(f: GridFunction) -> float:
    return float(np.max(np.abs(f.values)))


def interpolate(f: GridFunction, order: int) -> Callable[[np.ndarray], np.ndarray]:
    """Interpolant of ``f`` on ``U^d``.

    ``order=0`` is piecewise constant on the half-open cells
    ``[x - 1/2N, x + 1/2N)``; ``order=1`` is the periodic multilinear
    interpolant on the cubes spanned by neighboring sites.
    The returned callable takes points of shape ``(..., d)`` (or ``(...)``
    when ``d = 1``) and returns values of shape ``(...)``.
    """
    if order not in (0, 1):
        raise UsageError(f"interpolation order must be 0 or 1, got {order}")
    grid = f.grid
    table = f.values.reshape(grid.shape)

    def _as_points(u):
        u = np.asarray(u, dtype=float)
        if grid.d == 1 and (u.ndim == 0 or u.shape[-1] != 1):
            u = u[..., None]
        if u.shape[-1] != grid.d:
            raise UsageError(f"points must have trailing dimension {grid.d}")
        return u

    def order0(u):
        u = _as_points(u)
        k = np.mod(np.floor(grid.N * (u + 1.0) - 0.5).astype(np.int64), grid.side)
        return table[tuple(np.moveaxis(k, -1, 0))]

    def order1(u):
        u = _as_points(u)
        s = grid.N * (u + 1.0) - 1.0
        k0 = np.floor(s).astype(np.int64)
        frac = s - k0
        out = np.zeros(u.shape[:-1])
        for corner in range(2**grid.d):
            bits = np.array([(corner >> i) & 1 for i in range(grid.d)])
            weight = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=-1)
            kk = np.mod(k0 + bits, grid.side)
            out = out + weight * table[tuple(np.moveaxis(kk, -1, 0))]
        return out

    return order0 if order == 0 else order1


def write_grid_function_csv(f: GridFunction, path) -> None:
    grid = f.grid
    coords = grid.coordinates()
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site_index"] + [f"coordinate_{i + 1}" for i in range(grid.d)] + ["value"])
        for x in range(grid.n_sites):
            writer.writerow([x] + [repr(float(c)) for c in coords[x]] + [repr(float(f.values[x]))])


def read_grid_function_csv(path, N: int | None = None) -> GridFunction:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    d = len(header) - 2
    n_sites = len(rows)
    if N is None:
        N = int(round(n_sites ** (1.0 / d))) // 2
    grid = TorusGrid(d, N)
    values = np.empty(grid.n_sites)
    for r in rows:
        values[int(r[0])] = float(r[-1])
    return GridFunction(grid, values)
