"""Exact continuous-time simulation of the zero-range process.

A particle leaves site x towards neighbor y at rate ``g(eta(x)) p_N(x, y)``.
Simulation is event driven (no time discretization): the aggregate clock is
exponential with the total intensity, the site is drawn from a sum tree over
``g(eta(x)) * sum_y p_N(x, y)`` and the direction proportionally to the bond
rates.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .environment import Environment
from .errors import PreconditionError, UsageError
from .lattice import TorusGrid
from .measures import FugacityTables, RateFunction


@dataclass(frozen=True)
class Configuration:
    grid: TorusGrid
    eta: np.ndarray = field(repr=False)

    def __post_init__(self):
        eta = np.array(self.eta, dtype=np.int64).reshape(-1)
        if eta.size != self.grid.n_sites:
            raise UsageError(f"expected {self.grid.n_sites} occupation numbers, got {eta.size}")
        if np.any(eta < 0):
            raise UsageError("occupation numbers must be nonnegative")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @property
    def total(self) -> int:
        return int(self.eta.sum())

    def intensity(self, env: Environment, g: RateFunction) -> float:
        """Total jump intensity ``sum_x g(eta(x)) sum_y p_N(x, y)``."""
        return float(np.dot(g(self.eta), env.site_rate_sum))


def _eta(config) -> np.ndarray:
    return config.eta if isinstance(config, Configuration) else np.asarray(config, dtype=np.int64)


def gtable_for(g: RateFunction, eta: np.ndarray, extra: int = 1) -> np.ndarray:
    """``g(0..total+extra)``: enough for any occupancy reachable from ``eta``."""
    return g.tabulate(int(np.sum(eta)) + extra)


@dataclass(frozen=True)
class TrajectoryRecord:
    grid: TorusGrid
    initial: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    sources: np.ndarray = field(repr=False)
    directions: np.ndarray = field(repr=False)
    T: float
    seed: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("initial", "times", "sources", "directions"):
            getattr(self, name).setflags(write=False)

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    @cached_property
    def destinations(self) -> np.ndarray:
        dst = self.grid.neighbor_table[self.sources.astype(np.int64), self.directions.astype(np.int64)]
        dst.setflags(write=False)
        return dst

    def final(self) -> np.ndarray:
        ok, eta = _kernels.replay_check_kernel(self.initial, self.times, self.sources.astype(np.int64),
                                               self.destinations, self.T)
        if not ok:
            raise UsageError("trajectory does not replay consistently")
        return eta

    def is_consistent(self) -> bool:
        ok, _ = _kernels.replay_check_kernel(self.initial, self.times, self.sources.astype(np.int64),
                                             self.destinations, self.T)
        return bool(ok)

    def snapshots(self, times) -> np.ndarray:
        tgrid = np.asarray(times, dtype=float)
        if np.any(np.diff(tgrid) < 0):
            raise UsageError("snapshot times must be sorted")
        return _kernels.snapshots_kernel(self.initial, self.times, self.sources.astype(np.int64),
                                         self.destinations, tgrid)

    def write_csv(self, path, header: dict | None = None) -> None:
        meta = {"d": self.grid.d, "N": self.grid.N, "T": self.T, "seed": self.seed,
                "initial": self.initial.tolist(), **self.meta, **(header or {})}
        with open(Path(path), "w", newline="") as fh:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
            writer = csv.writer(fh)
            writer.writerow(["event_index", "time", "source_site", "direction"])
            for i in range(self.n_events):
                writer.writerow([i, repr(float(self.times[i])), int(self.sources[i]), int(self.directions[i])])

    @classmethod
    def read_csv(cls, path) -> "TrajectoryRecord":
        with open(Path(path), newline="") as fh:
            meta = json.loads(fh.readline()[2:])
            rows = [r for r in csv.DictReader(fh)]
        grid = TorusGrid(int(meta.pop("d")), int(meta.pop("N")))
        return cls(grid, np.array(meta.pop("initial"), dtype=np.int64),
                   np.array([float(r["time"]) for r in rows]),
                   np.array([int(r["source_site"]) for r in rows], dtype=np.int32),
                   np.array([int(r["direction"]) for r in rows], dtype=np.int8),
                   float(meta.pop("T")), int(meta.pop("seed")), meta)


def _kernel_seed(seed: int) -> int:
    return int(seed) % (2**32)


def simulate(eta0, env: Environment, g: RateFunction, T: float, seed: int) -> TrajectoryRecord:
    if not T > 0:
        raise UsageError(f"horizon T must be positive, got {T}")
    eta = _eta(eta0).copy()
    if eta.size != env.grid.n_sites:
        raise UsageError("configuration does not match the environment grid")
    initial = eta.copy()
    gtab = gtable_for(g, eta)
    expected = float(np.dot(gtab[eta], env.site_rate_sum)) * T
    times, src, dirs = _kernels.simulate_kernel(eta, env.grid.neighbor_table, env.rate_table, gtab,
                                                float(T), _kernel_seed(seed), int(1.2 * expected) + 64)
    return TrajectoryRecord(env.grid, initial, times, src, dirs, float(T), int(seed))


def generator_apply(F: Callable[[np.ndarray], float], eta, env: Environment, g: RateFunction) -> float:
    """``L_N F(eta) = sum_{x,y} p_N(x,y) g(eta(x)) [F(eta^{xy}) - F(eta)]``."""
    eta = _eta(eta)
    base = F(eta)
    nbr = env.grid.neighbor_table
    total = 0.0
    for x in np.flatnonzero(eta > 0):
        gx = float(g(eta[x]))
        for j in range(env.grid.n_directions):
            y = nbr[x, j]
            moved = eta.copy()
            moved[x] -= 1
            moved[y] += 1
            total += env.rate_table[x, j] * gx * (F(moved) - base)
    return float(total)


def reversibility_residual(eta, x: int, direction: int, tables: FugacityTables, rho: float,
                           env: Environment, rate_table: np.ndarray | None = None) -> float:
    """Detailed-balance defect of the bond ``(x, x + direction)``, divided by ``nu_rho(eta)``.

    Returns ``g(eta(x)) p(x,y) - [nu(eta^{xy}) / nu(eta)] g(eta(y)+1) p(y,x)``
    with the probability ratio taken from the one-site marginals of
    ``nu_rho``. ``rate_table`` overrides the environment's rates.
    """
    eta = _eta(eta)
    grid = env.grid
    x = grid.check_site(x)
    direction = grid.check_direction(direction)
    if eta[x] < 1:
        raise PreconditionError(f"site {x} is empty; no jump can leave it")
    rates = env.rate_table if rate_table is None else np.asarray(rate_table)
    y = int(grid.neighbor_table[x, direction])
    back = direction ^ 1
    g = tables.g
    if not rho > 0:
        raise PreconditionError("detailed balance is checked against nu_rho with rho > 0")
    ex, ey = int(eta[x]), int(eta[y])
    la = math.log(tables.alpha(rho))
    lg = tables._log_gfact

    def lw(k):
        return k * la - lg[k]

    ratio = math.exp(lw(ex - 1) + lw(ey + 1) - lw(ex) - lw(ey))
    forward = float(g(eta[x])) * rates[x, direction]
    backward = ratio * float(g(eta[y] + 1)) * rates[y, back]
    return float(forward - backward)


@dataclass(frozen=True)
class CoupledTrajectory:
    lower: TrajectoryRecord
    upper: TrajectoryRecord
    violations: int


def coupled_simulate(eta_lo, eta_up, env: Environment, g: RateFunction, T: float, seed: int) -> CoupledTrajectory:
    lo = _eta(eta_lo).copy()
    up = _eta(eta_up).copy()
    if np.any(lo > up):
        raise PreconditionError("initial configurations are not ordered (lower <= upper fails)")
    if not g.non_decreasing:
        raise PreconditionError("the monotone coupling needs a non-decreasing rate function")
    if not T > 0:
        raise UsageError(f"horizon T must be positive, got {T}")
    init_lo, init_up = lo.copy(), up.copy()
    gtab = gtable_for(g, up)
    expected = float(np.dot(gtab[up], env.site_rate_sum)) * T
    out = _kernels.coupled_kernel(lo, up, env.grid.neighbor_table, env.rate_table, gtab, float(T),
                                  _kernel_seed(seed), int(1.2 * expected) + 64)
    t_lo, s_lo, d_lo, t_up, s_up, d_up, violations = out
    return CoupledTrajectory(
        TrajectoryRecord(env.grid, init_lo, t_lo, s_lo, d_lo, float(T), int(seed)),
        TrajectoryRecord(env.grid, init_up, t_up, s_up, d_up, float(T), int(seed)),
        int(violations),
    )


def audit_order(coupled: CoupledTrajectory) -> tuple[int, int]:
    """Replay both copies event by event; return ``(events checked, violations)``.

    Every lower-copy event shares its time stamp with an upper-copy event.
    """
    lo_t, up_t = coupled.lower.times, coupled.upper.times
    lo = coupled.lower.initial.copy()
    up = coupled.upper.initial.copy()
    lo_dst, up_dst = coupled.lower.destinations, coupled.upper.destinations
    violations = int(np.any(lo > up))
    k = 0
    for e in range(up_t.size):
        x, y = coupled.upper.sources[e], up_dst[e]
        up[x] -= 1
        up[y] += 1
        if k < lo_t.size and lo_t[k] == up_t[e]:
            lx, ly = coupled.lower.sources[k], lo_dst[k]
            lo[lx] -= 1
            lo[ly] += 1
            k += 1
        if lo[x] > up[x] or lo[y] > up[y] or np.any(lo < 0):
            violations += 1
    if k != lo_t.size:
        violations += 1
    return int(up_t.size), violations


def local_average(eta, grid: TorusGrid, x: int, l: int) -> float:
    """Average of ``eta`` over the periodic box of half-width ``l`` centred at ``x``."""
    if 2 * l + 1 > grid.side:
        raise UsageError(f"box of half-width {l} does not fit on a torus of side {grid.side}")
    if l < 0:
        raise UsageError("box half-width must be nonnegative")
    return float(np.mean(_eta(eta)[box_sites(grid, x, l)]))


def box_sites(grid: TorusGrid, x: int, l: int) -> np.ndarray:
    k = grid.lattice_coords(grid.check_site(x))
    offsets = np.stack(np.meshgrid(*[np.arange(-l, l + 1)] * grid.d, indexing="ij"), axis=-1).reshape(-1, grid.d)
    return np.asarray(grid.site_index(k + offsets), dtype=np.int64)


def box_table(grid: TorusGrid, l: int) -> np.ndarray:
    """Sites of every centred box, shape (n_sites, (2l+1)^d)."""
    if 2 * l + 1 > grid.side:
        raise UsageError(f"box of half-width {l} does not fit on a torus of side {grid.side}")
    offsets = np.stack(np.meshgrid(*[np.arange(-l, l + 1)] * grid.d, indexing="ij"), axis=-1).reshape(-1, grid.d)
    k = grid.all_lattice_coords
    return np.asarray(grid.site_index(k[:, None, :] + offsets[None, :, :]), dtype=np.int64)


def max_intensity(traj: TrajectoryRecord, env: Environment, g: RateFunction) -> float:
    gtab = gtable_for(g, traj.initial)
    return float(_kernels.max_intensity_kernel(traj.initial, traj.sources.astype(np.int64), traj.destinations,
                                               np.asarray(env.site_rate_sum), gtab))
