"""Functionals of trajectories: empirical and fluctuation fields, Dynkin
martingales, the Boltzmann-Gibbs and replacement statistics.

Every time integral is exact. Along an event log the integrands are
piecewise constant, and each one used here has the separable form
``sum_x W(x) H(eta(x))``, which the replay kernel updates in O(1) per event.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .dynamics import TrajectoryRecord, box_table, gtable_for
from .environment import Environment
from .errors import UsageError
from .functions import FourierFunction
from .lattice import GridFunction, TorusGrid
from .measures import FugacityTables, RateFunction
from .resolvent import ResolventSolution, apply_LN, corrected_test_function

FIELD_KINDS = ("empirical", "corrected_empirical", "fluctuation", "corrected_fluctuation")


def on_grid(G, grid: TorusGrid) -> np.ndarray:
    """Values of a test function at the sites (GridFunction, FourierFunction or callable)."""
    if isinstance(G, ResolventSolution):
        G = G.u
    if isinstance(G, GridFunction):
        if G.grid != grid:
            raise UsageError("test function lives on a different grid")
        return np.asarray(G.values, dtype=float)
    if callable(G):
        return np.asarray(G(grid.coordinates()), dtype=float).reshape(grid.n_sites)
    v = np.asarray(G, dtype=float).reshape(-1)
    if v.size != grid.n_sites:
        raise UsageError(f"expected {grid.n_sites} test-function values, got {v.size}")
    return v


def evaluate_fields(eta, grid: TorusGrid, G, G_lambda=None, rho: float | None = None) -> dict:
    """The four field pairings of one configuration; missing inputs give missing keys."""
    eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
    Nd = float(grid.N) ** grid.d
    g = on_grid(G, grid)
    out = {"empirical": float(np.dot(eta, g)) / Nd}
    if rho is not None:
        out["fluctuation"] = float(np.dot(g, eta - rho)) / math.sqrt(Nd)
    if G_lambda is not None:
        gl = on_grid(G_lambda, grid)
        out["corrected_empirical"] = float(np.dot(eta, gl)) / Nd
        if rho is not None:
            out["corrected_fluctuation"] = float(np.dot(gl, eta - rho)) / math.sqrt(Nd)
    return out


@dataclass(frozen=True)
class FieldSample:
    kind: str
    test_id: str
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise UsageError(f"unknown field kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise UsageError("field values must be finite")


def _replay(traj: TrajectoryRecord, weights: np.ndarray, tables: np.ndarray, lin: np.ndarray, tgrid):
    tgrid = np.asarray(tgrid, dtype=float)
    if tgrid.size and (np.any(np.diff(tgrid) < 0) or tgrid[0] < 0 or tgrid[-1] > traj.T * (1 + 1e-12)):
        raise UsageError("time grid must be sorted inside [0, T]")
    return _kernels.integrate_kernel(traj.initial, traj.times, traj.sources.astype(np.int64), traj.destinations,
                                     traj.T, np.ascontiguousarray(weights, dtype=float),
                                     np.ascontiguousarray(tables, dtype=float),
                                     np.ascontiguousarray(lin, dtype=float), tgrid)


def _occupancy_cap(traj: TrajectoryRecord) -> int:
    return int(traj.initial.sum()) + 1


def field_sample(traj: TrajectoryRecord, G, kind: str, times, rho: float | None = None,
                 test_id: str = "G") -> FieldSample:
    """A field pairing along the trajectory; for corrected kinds pass ``G_N^lam`` as ``G``."""
    grid = traj.grid
    g = on_grid(G, grid)
    Nd = float(grid.N) ** grid.d
    n = _occupancy_cap(traj)
    _, L = _replay(traj, np.zeros((0, grid.n_sites)), np.zeros((0, n + 1)), g[None, :], times)
    if kind in ("empirical", "corrected_empirical"):
        vals = L[:, 0] / Nd
    else:
        if rho is None:
            raise UsageError("fluctuation fields need the reference density")
        vals = (L[:, 0] - rho * g.sum()) / math.sqrt(Nd)
    return FieldSample(kind, test_id, np.asarray(times, dtype=float), vals)


@dataclass(frozen=True)
class MartingaleTrack:
    times: np.ndarray = field(repr=False)
    martingale: np.ndarray = field(repr=False)
    quadratic_variation: np.ndarray = field(repr=False)
    field_term: np.ndarray = field(repr=False)
    integral_term: np.ndarray = field(repr=False)
    lam: float = 1.0
    normalization: str = "fluctuation"
    seed: int = 0

    def write_csv(self, path, append: bool = False) -> None:
        mode = "a" if append else "w"
        with open(Path(path), mode, newline="") as fh:
            writer = csv.writer(fh)
            if not append:
                writer.writerow(["trial_seed", "time", "martingale", "quadratic_variation", "field_term",
                                 "integral_term"])
            for i in range(self.times.size):
                writer.writerow([self.seed, repr(float(self.times[i])), repr(float(self.martingale[i])),
                                 repr(float(self.quadratic_variation[i])), repr(float(self.field_term[i])),
                                 repr(float(self.integral_term[i]))])


def martingale_track(traj: TrajectoryRecord, G, lam: float, env: Environment, A, g: RateFunction,
                     times=None, normalization: str = "fluctuation",
                     G_lambda: ResolventSolution | GridFunction | None = None,
                     tol: float = 1e-10) -> MartingaleTrack:
    """Dynkin martingale of the corrected field and its predictable quadratic variation.

    ``M_t = s sum_x u(x) (eta_t(x) - eta_0(x)) - s int_0^t sum_x g(eta(x)) L_N u(x) ds`` and
    ``<M>_t = s^2 int_0^t sum_x g(eta(x)) sum_y p_N(x,y) (u(y) - u(x))^2 ds`` with
    ``u = G_N^lam`` and ``s = N^-d`` (density) or ``N^-d/2`` (fluctuation).
    """
    grid = env.grid
    if traj.grid != grid:
        raise UsageError("trajectory and environment live on different grids")
    if normalization not in ("density", "fluctuation"):
        raise UsageError(f"unknown normalization {normalization!r}")
    if G_lambda is None:
        if not isinstance(G, FourierFunction):
            raise UsageError("pass G_lambda or a FourierFunction G")
        G_lambda = corrected_test_function(G, lam, env, A, tol)
    u = G_lambda.u if isinstance(G_lambda, ResolventSolution) else G_lambda
    Lu = apply_LN(env, u).values
    diffs = u.values[grid.neighbor_table] - u.values[:, None]
    q = np.sum(env.rate_table * diffs * diffs, axis=1)
    gtab = gtable_for(g, traj.initial)
    times = np.array([traj.T]) if times is None else np.asarray(times, dtype=float)
    J, L = _replay(traj, np.stack([Lu, q]), np.stack([gtab, gtab]), u.values[None, :], times)
    Nd = float(grid.N) ** grid.d
    s = 1.0 / Nd if normalization == "density" else 1.0 / math.sqrt(Nd)
    field_term = s * (L[:, 0] - float(np.dot(u.values, traj.initial)))
    integral = s * J[:, 0]
    return MartingaleTrack(times, field_term - integral, s * s * J[:, 1], field_term, integral, float(lam),
                           normalization, int(traj.seed))


# -- local observables and the Boltzmann-Gibbs statistic ---------------------------


@dataclass(frozen=True)
class LocalObservable:
    """``f(x, eta) = w(x) h(eta(x))``: a site weight times a one-site function.

    ``w`` carries the environment dependence (e.g. the conductance of the bond
    leaving x). ``affine=(a, b)`` declares ``h(k) = a + b k`` exactly, which
    makes the density projection exact instead of numerical.
    """

    name: str
    weight: np.ndarray = field(repr=False)
    h: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz: float = 1.0
    affine: tuple[float, float] | None = None
    radius: int = 0

    def __post_init__(self):
        if self.radius != 0:
            raise UsageError("only one-site observables (support radius 0) are supported")
        if not math.isfinite(self.lipschitz):
            raise UsageError("observables need a finite Lipschitz constant")
        w = np.asarray(self.weight, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)

    def table(self, n_max: int) -> np.ndarray:
        return np.asarray(self.h(np.arange(n_max + 1)), dtype=float)

    def centering(self, rho: float, tables: FugacityTables) -> float:
        """``E_{nu_rho}[h(eta(0))]``."""
        if self.affine is not None:
            a, b = self.affine
            return a + b * rho
        return tables.expectation(self.h, rho)

    def slope(self, rho: float, tables: FugacityTables) -> float:
        """``d/drho`` of the site-averaged centering."""
        wbar = float(np.mean(self.weight))
        if self.affine is not None:
            return wbar * self.affine[1]
        return wbar * tables.density_derivative(self.h, rho)


def density_observable(grid: TorusGrid, rho: float) -> LocalObservable:
    """``f(x, eta) = eta(x) - rho``."""
    return LocalObservable("density", np.ones(grid.n_sites), lambda k: np.asarray(k, dtype=float) - rho,
                           1.0, (-float(rho), 1.0))


def rate_observable(grid: TorusGrid, g: RateFunction) -> LocalObservable:
    """``f(x, eta) = g(eta(x))``."""
    affine = (0.0, g.slope) if g.is_linear else None
    return LocalObservable("rate", np.ones(grid.n_sites), g, g.lipschitz_constant, affine)


def conductance_rate_observable(env: Environment, g: RateFunction, axis: int = 0) -> LocalObservable:
    """``f(x, eta) = a_axis(x) g(eta(x))`` with the conductance of the bond leaving x."""
    w = env.conductances[:, axis]
    affine = (0.0, g.slope) if g.is_linear else None
    return LocalObservable(f"conductance{axis + 1}_rate", w, g, g.lipschitz_constant / env.epsilon0, affine)


@dataclass(frozen=True)
class AdditiveFunctional:
    functional: float
    comparator: float
    slope: float

    @property
    def difference(self) -> float:
        return self.functional - self.comparator


def additive_functional(traj: TrajectoryRecord, G, f: LocalObservable, rho: float,
                        tables: FugacityTables) -> AdditiveFunctional:
    """``int_0^T N^-d/2 sum_x G(x) (f(x, eta_s) - E f(x, .)) ds`` and its density projection."""
    grid = traj.grid
    if f.weight.size != grid.n_sites:
        raise UsageError("observable weights do not match the trajectory grid")
    Gv = on_grid(G, grid)
    Gw = Gv * f.weight
    n = _occupancy_cap(traj)
    ident = np.arange(n + 1, dtype=float)
    T = traj.T
    root = math.sqrt(float(grid.N) ** grid.d)
    slope = f.slope(rho, tables)
    if f.affine is not None:
        b = f.affine[1]
        J, _ = _replay(traj, np.stack([Gw, Gv]), np.stack([ident, ident]), np.zeros((0, grid.n_sites)), [T])
        # the constant a cancels against the centering analytically
        functional = b * (J[0, 0] - T * rho * float(Gw.sum())) / root
    else:
        J, _ = _replay(traj, np.stack([Gw, Gv]), np.stack([f.table(n), ident]), np.zeros((0, grid.n_sites)), [T])
        functional = (J[0, 0] - T * f.centering(rho, tables) * float(Gw.sum())) / root
    integral_Y = (J[0, 1] - T * rho * float(Gv.sum())) / root
    return AdditiveFunctional(float(functional), float(slope * integral_Y), float(slope))


def bg_statistic(traj: TrajectoryRecord, G, f: LocalObservable, rho: float, tables: FugacityTables) -> float:
    """``int_0^T N^-d/2 sum_x G(x) V_f(x, eta_s) ds`` with the density-projected remainder ``V_f``."""
    return additive_functional(traj, G, f, rho, tables).difference


# -- replacement statistic ------------------------------------------------------------


def _phi_table(tables: FugacityTables, n_max: int, box: int) -> np.ndarray:
    if tables.g.is_linear:
        return tables.g.slope * np.arange(n_max + 1) / box
    return np.array([tables.phi(m / box) for m in range(n_max + 1)])


def replacement_value(eta, grid: TorusGrid, l: int, tables: FugacityTables) -> float:
    """``N^-d sum_x |box mean of g(eta) - phi(box mean of eta)|`` for one configuration."""
    eta = np.asarray(getattr(eta, "eta", eta), dtype=np.int64)
    if l < 1:
        raise UsageError("replacement boxes need half-width l >= 1")
    box = box_table(grid, l)
    g = tables.g
    gmean = np.mean(g(eta)[box], axis=1)
    dens = np.mean(eta[box], axis=1)
    phis = np.array([tables.phi(r) for r in dens]) if not g.is_linear else g.slope * dens
    return float(np.sum(np.abs(gmean - phis))) / float(grid.N) ** grid.d


def replacement_statistic(traj: TrajectoryRecord, eps: float, tables: FugacityTables) -> float:
    """``int_0^T N^-d sum_x V_l(eta_s, x) ds`` with ``l = floor(eps N)``."""
    grid = traj.grid
    l = int(math.floor(eps * grid.N))
    if l < 1:
        raise UsageError(f"eps * N = {eps * grid.N} gives an empty replacement box")
    box = box_table(grid, l)
    B = box.shape[1]
    total = int(traj.initial.sum())
    gtab = gtable_for(tables.g, traj.initial)
    phitab = _phi_table(tables, total, B)
    return float(_kernels.replacement_kernel(traj.initial, traj.times, traj.sources.astype(np.int64),
                                             traj.destinations, traj.T, box, gtab, phitab,
                                             1.0 / float(grid.N) ** grid.d))
