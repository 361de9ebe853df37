"""The macroscopic equation ``d_t rho = div(A grad phi(rho))`` on the periodic box.

Explicit conservative finite volumes on a :class:`TorusGrid` whose resolution
is unrelated to any particle system. For constant ``A`` the update is

    rho += dt * sum_kl A_kl D_k D_l phi(rho),

with the three-point second difference on the diagonal and the four-point
cross difference off it; both telescope, so mass is conserved to rounding.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, UsageError
from .functions import FourierFunction, FourierMode
from .lattice import TorusGrid
from .measures import FugacityTables


@dataclass(frozen=True)
class PhiInterpolant:
    """``phi`` and ``phi'`` by cubic-spline interpolation of tabulated values."""

    rho_max: float
    spline: CubicSpline = field(repr=False)
    exact_linear: float | None = None

    @classmethod
    def from_tables(cls, tables: FugacityTables, rho_max: float, n: int = 257) -> "PhiInterpolant":
        if not rho_max > 0:
            raise UsageError("rho_max must be positive")
        g = tables.g
        if g.is_linear:
            return cls.linear(g.slope, rho_max)
        rho = np.linspace(0.0, rho_max, n)
        vals = np.array([tables.phi(r) for r in rho])
        return cls(float(rho_max), CubicSpline(rho, vals))

    @classmethod
    def linear(cls, slope: float = 1.0, rho_max: float = 1e6) -> "PhiInterpolant":
        rho = np.array([0.0, rho_max])
        return cls(float(rho_max), CubicSpline(rho, slope * rho), float(slope))

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.exact_linear is not None:
            return self.exact_linear * rho
        return self.spline(rho)

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.exact_linear is not None:
            return np.full(rho.shape, self.exact_linear)
        return self.spline(rho, 1)

    def max_derivative(self, lo: float, hi: float) -> float:
        if self.exact_linear is not None:
            return self.exact_linear
        r = np.linspace(lo, hi, 513)
        return float(np.max(self.derivative(r)))


@dataclass(frozen=True)
class DensityField:
    grid: TorusGrid
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    dt: float
    masses: np.ndarray = field(repr=False)
    bound: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("times", "values", "masses"):
            getattr(self, name).setflags(write=False)

    @property
    def dx(self) -> float:
        return 1.0 / self.grid.N

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def mass_drift(self) -> float:
        m0 = self.masses[0]
        return float(np.max(np.abs(self.masses - m0)) / max(abs(m0), 1e-300))

    def write_csv(self, path) -> None:
        coords = self.grid.coordinates()
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"coordinate_{i + 1}" for i in range(self.grid.d)] + ["value"])
            for t, row in zip(self.times, self.values):
                for x in range(self.grid.n_sites):
                    writer.writerow([repr(float(t))] + [repr(float(c)) for c in coords[x]] + [repr(float(row[x]))])

    def metadata(self) -> dict:
        return {"d": self.grid.d, "N_pde": self.grid.N, "dx": self.dx, "dt": self.dt,
                "n_snapshots": int(self.times.size), "mass_drift": self.mass_drift(), "bound": self.bound,
                **self.meta}

    def write_metadata(self, path) -> None:
        Path(path).write_text(json.dumps(self.metadata(), sort_keys=True, indent=2) + "\n")


def _matrix(A, d: int) -> np.ndarray:
    M = np.asarray(getattr(A, "A", A), dtype=float).reshape(d, d)
    return 0.5 * (M + M.T)


def div_A_grad_discrete(v: np.ndarray, A: np.ndarray, dx: float) -> np.ndarray:
    """``sum_kl A_kl D_k D_l v`` on a periodic array of shape ``(side,)*d``."""
    d = v.ndim
    out = np.zeros_like(v)
    for k in range(d):
        out += A[k, k] * (np.roll(v, -1, k) - 2.0 * v + np.roll(v, 1, k))
        for l in range(k + 1, d):
            if A[k, l] != 0.0:
                cross = (np.roll(np.roll(v, -1, k), -1, l) - np.roll(np.roll(v, -1, k), 1, l)
                         - np.roll(np.roll(v, 1, k), -1, l) + np.roll(np.roll(v, 1, k), 1, l))
                out += 2.0 * A[k, l] * cross / 4.0
    return out / (dx * dx)


def cfl_limit(A, phi: PhiInterpolant, lo: float, hi: float, dx: float, d: int) -> float:
    lam = float(np.linalg.eigvalsh(_matrix(A, d)).max())
    slope = max(phi.max_derivative(lo, hi), 1e-300)
    return dx * dx / (2 * d * lam * slope)


def solve_hydrodynamic(rho0: Callable[[np.ndarray], np.ndarray], A, phi, T: float, dx: float,
                       dt: float | None = None, d: int = 1, record_every: int | None = None,
                       n_records: int = 11) -> DensityField:
    """Integrate the hydrodynamic equation from ``rho0`` up to time ``T``.

    ``phi`` is a :class:`PhiInterpolant` or a :class:`FugacityTables`. With
    ``dt=None`` the step is 0.9 of the stability limit. Snapshots are taken
    every ``record_every`` steps (default: about ``n_records`` evenly spaced)
    and always at ``T``.
    """
    N = int(round(1.0 / dx))
    if N < 1 or abs(N * dx - 1.0) > 1e-12:
        raise ConfigurationError(f"dx must be 1/N for an integer N, got {dx}")
    if not T >= 0:
        raise ConfigurationError("horizon must be nonnegative")
    grid = TorusGrid(d, N)
    rho = np.asarray(rho0(grid.coordinates()), dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise ConfigurationError("initial profile must be finite and nonnegative")
    lo, hi = float(rho.min()), float(rho.max())
    if isinstance(phi, FugacityTables):
        phi = PhiInterpolant.from_tables(phi, max(hi * 1.25, 1e-3))
    Amat = _matrix(A, d)
    limit = cfl_limit(Amat, phi, lo, hi, dx, d)
    if dt is None:
        n_steps = max(1, math.ceil(T / (0.9 * limit))) if T > 0 else 0
        dt = T / n_steps if n_steps else 0.9 * limit
    else:
        if dt > limit * (1 + 1e-12):
            raise ConfigurationError(f"time step {dt:.3e} violates the stability limit {limit:.3e}")
        n_steps = int(round(T / dt))
        if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
            raise ConfigurationError("T must be an integer multiple of dt")
    if record_every is None:
        record_every = max(1, n_steps // max(n_records - 1, 1))
    cell = dx**d
    times, snaps, masses = [0.0], [rho.reshape(-1).copy()], [float(rho.sum()) * cell]
    for step in range(1, n_steps + 1):
        rho = rho + dt * div_A_grad_discrete(phi(rho), Amat, dx)
        if step % record_every == 0 or step == n_steps:
            times.append(step * dt)
            snaps.append(rho.reshape(-1).copy())
            masses.append(float(rho.sum()) * cell)
    return DensityField(grid, np.array(times), np.array(snaps), float(dt), np.array(masses), hi,
                        {"A": Amat.tolist(), "T": float(T), "n_steps": int(n_steps)})


@dataclass(frozen=True)
class SpaceTimeTest:
    """Separable test function ``G(s, u) = h(s) G(u)`` with ``h' `` supplied."""

    space: FourierFunction
    h: Callable[[float], float] = lambda s: 1.0
    h_prime: Callable[[float], float] = lambda s: 0.0


def weak_residual(field_: DensityField, G, rho0: Callable[[np.ndarray], np.ndarray], phi, A) -> float:
    """``|int int {rho d_s G + phi(rho) div(A grad G)} + int rho0 G(0) - int rho(T) G(T)|``.

    Space integrals use the cell midpoint rule on the field's grid, time
    integrals the trapezoid rule over the recorded snapshots.
    """
    test = G if isinstance(G, SpaceTimeTest) else SpaceTimeTest(G)
    if not isinstance(test.space, FourierFunction):
        raise UsageError("weak residual needs a test function with analytic derivatives")
    grid = field_.grid
    if isinstance(phi, FugacityTables):
        phi = PhiInterpolant.from_tables(phi, max(float(field_.values.max()) * 1.25, 1e-3))
    pts = grid.coordinates()
    cell = (1.0 / grid.N) ** grid.d
    Gu = test.space(pts)
    LG = test.space.div_A_grad(pts, _matrix(A, grid.d))
    integrand = np.array([
        cell * float(np.sum(rho * Gu * test.h_prime(t) + phi(rho) * LG * test.h(t)))
        for t, rho in zip(field_.times, field_.values)
    ])
    time_int = float(np.trapezoid(integrand, field_.times)) if field_.times.size > 1 else 0.0
    init = cell * float(np.sum(np.asarray(rho0(pts), dtype=float) * Gu)) * test.h(0.0)
    final = cell * float(np.sum(field_.values[-1] * Gu)) * test.h(float(field_.times[-1]))
    return abs(time_int + init - final)


def semigroup_apply(G, t: float, c: float, A) -> FourierFunction:
    """``exp(t c div(A grad)) G`` for a finite Fourier expansion ``G``."""
    if not isinstance(G, FourierFunction):
        raise UsageError("the semigroup acts on finite Fourier expansions only")
    M = _matrix(A, G.d)
    modes = []
    for m in G.modes:
        k = np.pi * np.asarray(m.k, dtype=float)
        decay = math.exp(-t * c * float(k @ M @ k))
        modes.append(FourierMode(m.k, m.cos * decay, m.sin * decay))
    return FourierFunction(G.d, G.constant, tuple(modes))
