"""Random symmetric bond conductances and the jump rates they induce.

Every bond ``(x, x + e_i/N)`` carries one conductance ``a_i``; both jump
directions across the bond read the same stored value, so the rates are
symmetric by construction. Conductances of the iid models are a pure
function of ``(seed, bond_id)`` through a SplitMix64 hash, with
``bond_id = site_index * d + axis``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, UsageError
from .lattice import TorusGrid, direction_axis, direction_sign

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def bond_uniforms(seed: int, bond_ids) -> np.ndarray:
    """One uniform in [0, 1) per bond id, independent of evaluation order."""
    key = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    z = splitmix64(key ^ np.asarray(bond_ids, dtype=np.uint64))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


class EnvironmentModel:
    """Base class of the conductance models; subclasses are frozen dataclasses."""

    kind: str = ""

    @property
    def epsilon0(self) -> float:
        raise NotImplementedError

    def _draw(self, grid: TorusGrid, seed: int) -> np.ndarray:
        raise NotImplementedError

    def mean_conductance(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}

    def _check_band(self, *values):
        eps = self.epsilon0
        if not eps > 0:
            raise ConfigurationError(f"ellipticity parameter must be positive, got {eps}")
        for v in values:
            if not (eps * (1 - 1e-12) <= v <= (1 + 1e-12) / eps):
                raise ConfigurationError(f"conductance {v} outside ellipticity band [{eps}, {1 / eps}]")


def _tight_epsilon(*values) -> float:
    return float(min(min(values), min(1.0 / v for v in values)))


@dataclass(frozen=True)
class Constant(EnvironmentModel):
    c: float = 1.0
    kind = "constant"

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigurationError(f"constant conductance must be positive, got {self.c}")

    @property
    def epsilon0(self):
        return _tight_epsilon(self.c)

    def _draw(self, grid, seed):
        return np.full((grid.n_sites, grid.d), float(self.c))

    def mean_conductance(self):
        return float(self.c)


@dataclass(frozen=True)
class IidUniform(EnvironmentModel):
    eps: float = 0.5
    kind = "iid_uniform"

    def __post_init__(self):
        if not (0 < self.eps <= 1):
            raise ConfigurationError(f"IidUniform needs 0 < eps <= 1, got {self.eps}")

    @property
    def epsilon0(self):
        return float(self.eps)

    def _draw(self, grid, seed):
        ids = np.arange(grid.n_sites * grid.d, dtype=np.uint64)
        u = bond_uniforms(seed, ids).reshape(grid.n_sites, grid.d)
        return self.eps + u * (1.0 / self.eps - self.eps)

    def mean_conductance(self):
        return 0.5 * (self.eps + 1.0 / self.eps)


@dataclass(frozen=True)
class IidTwoPoint(EnvironmentModel):
    a_low: float = 1.0
    a_high: float = 2.0
    p: float = 0.5
    eps: float | None = None
    kind = "iid_two_point"

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ConfigurationError(f"probability p must lie in [0, 1], got {self.p}")
        if not (self.a_low > 0 and self.a_high > 0):
            raise ConfigurationError("two-point conductances must be positive")
        self._check_band(self.a_low, self.a_high)

    @property
    def epsilon0(self):
        return float(self.eps) if self.eps is not None else _tight_epsilon(self.a_low, self.a_high)

    def _draw(self, grid, seed):
        ids = np.arange(grid.n_sites * grid.d, dtype=np.uint64)
        u = bond_uniforms(seed, ids).reshape(grid.n_sites, grid.d)
        # p is the probability of the high value
        return np.where(u < self.p, float(self.a_high), float(self.a_low))

    def mean_conductance(self):
        return self.p * self.a_high + (1 - self.p) * self.a_low


@dataclass(frozen=True)
class PeriodicCheckerboard(EnvironmentModel):
    a_even: float = 1.0
    a_odd: float = 2.0
    eps: float | None = None
    kind = "periodic_checkerboard"

    def __post_init__(self):
        if not (self.a_even > 0 and self.a_odd > 0):
            raise ConfigurationError("checkerboard conductances must be positive")
        self._check_band(self.a_even, self.a_odd)

    @property
    def epsilon0(self):
        return float(self.eps) if self.eps is not None else _tight_epsilon(self.a_even, self.a_odd)

    def _draw(self, grid, seed):
        parity = grid.all_lattice_coords.sum(axis=1) % 2
        a = np.where(parity == 0, float(self.a_even), float(self.a_odd))
        return np.repeat(a[:, None], grid.d, axis=1)

    def mean_conductance(self):
        return 0.5 * (self.a_even + self.a_odd)


_MODELS = {cls.kind: cls for cls in (Constant, IidUniform, IidTwoPoint, PeriodicCheckerboard)}


def model_from_dict(data: dict) -> EnvironmentModel:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _MODELS:
        raise ConfigurationError(f"unknown environment model {kind!r}; expected one of {sorted(_MODELS)}")
    try:
        return _MODELS[kind](**data)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {kind}: {exc}") from None


@dataclass(frozen=True)
class Environment:
    grid: TorusGrid
    conductances: np.ndarray = field(repr=False)
    model: EnvironmentModel
    seed: int

    def __post_init__(self):
        a = np.array(self.conductances, dtype=float).reshape(self.grid.n_sites, self.grid.d)
        eps = self.model.epsilon0
        if np.any(a < eps * (1 - 1e-12)) or np.any(a > (1 + 1e-12) / eps):
            raise ConfigurationError("conductance field violates the ellipticity band")
        a.setflags(write=False)
        object.__setattr__(self, "conductances", a)

    @property
    def epsilon0(self) -> float:
        return self.model.epsilon0

    @cached_property
    def rate_table(self) -> np.ndarray:
        """``p_N(x, y)`` for every site and direction, shape (n_sites, 2d)."""
        grid = self.grid
        nbr = grid.neighbor_table
        rates = np.empty((grid.n_sites, grid.n_directions))
        for j in range(grid.n_directions):
            i = direction_axis(j)
            if direction_sign(j) > 0:
                rates[:, j] = self.conductances[:, i]
            else:
                rates[:, j] = self.conductances[nbr[:, j], i]
        rates *= float(grid.N) ** 2
        rates.setflags(write=False)
        return rates

    @cached_property
    def site_rate_sum(self) -> np.ndarray:
        s = self.rate_table.sum(axis=1)
        s.setflags(write=False)
        return s


def sample_environment(model: EnvironmentModel, grid: TorusGrid, seed: int) -> Environment:
    return Environment(grid, model._draw(grid, int(seed)), model, int(seed))


def jump_rate(env: Environment, x: int, direction: int) -> float:
    x = env.grid.check_site(x)
    direction = env.grid.check_direction(direction)
    return float(env.rate_table[x, direction])


def dump_environment(env: Environment, path) -> None:
    grid = env.grid
    header = {"model": env.model.to_dict(), "seed": env.seed, "d": grid.d, "N": grid.N}
    with open(Path(path), "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["bond_id", "site_index", "direction", "conductance"])
        for x in range(grid.n_sites):
            for i in range(grid.d):
                writer.writerow([x * grid.d + i, x, 2 * i, repr(float(env.conductances[x, i]))])


def load_environment(path) -> Environment:
    with open(Path(path), newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise UsageError("environment file is missing its JSON header line")
        header = json.loads(first[2:])
        reader = csv.DictReader(fh)
        rows = list(reader)
    grid = TorusGrid(int(header["d"]), int(header["N"]))
    a = np.empty((grid.n_sites, grid.d))
    for r in rows:
        a[int(r["site_index"]), int(r["direction"]) // 2] = float(r["conductance"])
    return Environment(grid, a, model_from_dict(header["model"]), int(header["seed"]))
