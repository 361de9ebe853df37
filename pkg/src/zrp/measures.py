"""Interaction rates, grand-canonical product measures and their samplers.

The one-site marginal of the product measure with fugacity ``alpha`` has
weights ``alpha^k / g(k)!`` with ``g(k)! = g(1) ... g(k)``. Everything is
computed from this series in log space, truncated once a geometric tail
bound (available thanks to the linear growth of ``g``) drops below ``tol``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, RangeError, ResourceError, UsageError
from .lattice import TorusGrid


@dataclass(frozen=True)
class RateFunction:
    """Interaction rate ``g``: tabulated on ``0..K`` with a linear tail.

    Beyond the table ``g`` continues along the last tabulated increment,
    ``g(n) = g(K) + (g(K) - g(K-1)) (n - K)``. The ``linear`` kind is
    ``g(n) = slope * n``.
    """

    values: tuple[float, ...]
    c0: float
    non_decreasing: bool
    kind: str = "table"
    slope: float = 1.0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ConfigurationError("a rate table needs at least g(0) and g(1)")
        if vals[0] != 0.0:
            raise ConfigurationError(f"g(0) must be 0, got {vals[0]}")
        if not self.c0 >= 1.0:
            raise ConfigurationError(f"linear-growth constant must be >= 1, got {self.c0}")
        n = np.arange(len(vals), dtype=float)
        g = np.array(vals)
        tail_step = vals[-1] - vals[-2]
        if not tail_step > 0:
            raise ConfigurationError("the linear tail of g must have a positive slope")
        for m, v in zip(n[1:], g[1:]):
            if not (m / self.c0 * (1 - 1e-12) <= v <= self.c0 * m * (1 + 1e-12)):
                raise ConfigurationError(f"g({int(m)}) = {v} violates linear growth with c0 = {self.c0}")
        if not (1.0 / self.c0 <= tail_step <= self.c0):
            raise ConfigurationError("tail slope of g violates linear growth")
        if self.non_decreasing and np.any(np.diff(g) < 0):
            raise ConfigurationError("g is flagged non-decreasing but the table decreases")

    @classmethod
    def linear(cls, slope: float = 1.0) -> "RateFunction":
        slope = float(slope)
        return cls((0.0, slope), max(slope, 1.0 / slope), True, "linear", slope)

    @classmethod
    def table(cls, values: Sequence[float], c0: float | None = None, non_decreasing: bool | None = None):
        g = np.asarray(values, dtype=float)
        if c0 is None:
            n = np.arange(1, g.size)
            ratios = np.concatenate([g[1:] / n, n / np.where(g[1:] > 0, g[1:], np.nan)])
            step = g[-1] - g[-2]
            c0 = float(max(np.nanmax(ratios), step, 1.0 / step if step > 0 else np.inf, 1.0))
        if non_decreasing is None:
            non_decreasing = bool(np.all(np.diff(g) >= 0))
        return cls(tuple(g), float(c0), bool(non_decreasing))

    @classmethod
    def from_dict(cls, data: dict) -> "RateFunction":
        kind = data.get("kind", "table")
        if kind == "linear":
            return cls.linear(float(data.get("slope", 1.0)))
        if kind != "table":
            raise ConfigurationError(f"unknown rate function kind {kind!r}")
        return cls.table(data["values"], data.get("c0"), data.get("non_decreasing"))

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {"kind": "linear", "slope": self.slope}
        return {"kind": "table", "values": list(self.values), "c0": self.c0,
                "non_decreasing": self.non_decreasing}

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    @property
    def lipschitz_constant(self) -> float:
        return float(np.max(np.abs(np.diff(self.values))))

    def __call__(self, n):
        if isinstance(n, (int, np.integer)):
            return self._scalar(int(n))
        n = np.asarray(n)
        if self.is_linear:
            return self.slope * n.astype(float)
        K = len(self.values) - 1
        g = np.asarray(self.values)
        step = g[-1] - g[-2]
        inside = np.minimum(n, K).astype(np.int64)
        return np.where(n <= K, g[inside], g[-1] + step * (n - K))

    def _scalar(self, n: int) -> float:
        if self.is_linear:
            return self.slope * n
        K = len(self.values) - 1
        if n <= K:
            return self.values[n]
        return self.values[-1] + (self.values[-1] - self.values[-2]) * (n - K)

    def tabulate(self, n_max: int) -> np.ndarray:
        """``g(0), ..., g(n_max)`` as a float array."""
        return np.asarray(self(np.arange(n_max + 1)), dtype=float)


def _logsumexp(a: np.ndarray) -> float:
    m = float(np.max(a))
    return m + math.log(float(np.sum(np.exp(a - m))))


@dataclass(frozen=True)
class FugacityTables:
    """Series machinery for the product measures of a given ``g``.

    ``cap`` is the largest number of terms the series may use; asking for a
    fugacity that needs more raises :class:`RangeError`.
    """

    g: RateFunction
    tol: float = 1e-13
    cap: int = 4000
    _log_gfact: np.ndarray = field(init=False, repr=False, compare=False)
    _cache: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if not self.tol > 0:
            raise UsageError("tol must be positive")
        lg = np.concatenate([[0.0], np.cumsum(np.log(self.g.tabulate(self.cap)[1:]))])
        object.__setattr__(self, "_log_gfact", lg)

    # -- series in alpha ---------------------------------------------------
    def n_terms(self, alpha: float) -> int:
        """Number of terms after which the geometric tail is below ``tol``."""
        if alpha < 0:
            raise RangeError(f"fugacity must be nonnegative, got {alpha}")
        if alpha == 0:
            return 1
        lw = self.log_weights(alpha, self.cap)
        log_partial = np.logaddexp.accumulate(lw)
        k = np.arange(self.cap, dtype=float)
        ratio = alpha * self.g.c0 / (k + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            # terms beyond k decay at least geometrically with this ratio;
            # the bound covers the k^2-weighted tail used for chi as well
            log_tail = lw - np.log1p(-np.minimum(ratio, 0.5)) + 2.0 * np.log(k + 2.0) + math.log(4.0)
        ok = (ratio < 0.5) & (log_tail - log_partial < math.log(self.tol))
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            raise RangeError(f"fugacity {alpha} needs more than {self.cap} series terms")
        return int(hits[0]) + 1

    def log_weights(self, alpha: float, n: int) -> np.ndarray:
        k = np.arange(n)
        with np.errstate(divide="ignore"):
            return k * math.log(alpha) - self._log_gfact[:n] if alpha > 0 else np.where(k == 0, 0.0, -np.inf)

    def pmf(self, alpha: float) -> np.ndarray:
        """Truncated, renormalized one-site marginal for fugacity ``alpha``."""
        key = ("pmf", float(alpha))
        if key not in self._cache:
            n = self.n_terms(alpha)
            lw = self.log_weights(alpha, n)
            p = np.exp(lw - _logsumexp(lw))
            p.setflags(write=False)
            self._cache[key] = p
        return self._cache[key]

    def Z(self, alpha: float) -> float:
        n = self.n_terms(alpha)
        return math.exp(_logsumexp(self.log_weights(alpha, n)))

    def density(self, alpha: float) -> float:
        n = self.n_terms(alpha)
        lw = self.log_weights(alpha, n)
        p = np.exp(lw - _logsumexp(lw))
        return float(np.dot(np.arange(p.size), p))

    def moments(self, alpha: float) -> tuple[float, float, float]:
        """Return ``(rho, phi, chi)`` at fugacity ``alpha``."""
        p = self.pmf(alpha)
        k = np.arange(p.size, dtype=float)
        rho = float(np.dot(k, p))
        phi = float(np.dot(self.g.tabulate(p.size - 1), p))
        chi = float(np.dot((k - rho) ** 2, p))
        return rho, phi, chi

    # -- functions of the density --------------------------------------------
    def alpha(self, rho: float) -> float:
        """Inverse of ``alpha -> rho(alpha)`` by bisection."""
        rho = float(rho)
        if rho < 0 or not np.isfinite(rho):
            raise RangeError(f"density must be finite and nonnegative, got {rho}")
        key = ("alpha", rho)
        if key not in self._cache:
            self._cache[key] = _alpha_of_rho(self, rho)
        return self._cache[key]

    def phi(self, rho: float) -> float:
        return self.moments(self.alpha(rho))[1]

    def chi(self, rho: float) -> float:
        return self.moments(self.alpha(rho))[2]

    def phi_prime(self, rho: float) -> float:
        """``d phi / d rho = alpha / chi`` (exact for the zero-range family)."""
        a = self.alpha(rho)
        if a == 0:
            p1 = math.exp(-self._log_gfact[1])
            return 1.0 / p1 if p1 > 0 else math.inf
        return a / self.moments(a)[2]

    def pmf_at_density(self, rho: float) -> np.ndarray:
        return self.pmf(self.alpha(rho))

    def expectation(self, h: Callable[[np.ndarray], np.ndarray], rho: float) -> float:
        """``E_{nu_rho}[h(eta(0))]`` for a one-site observable ``h``."""
        p = self.pmf_at_density(rho)
        return float(np.dot(np.asarray(h(np.arange(p.size)), dtype=float), p))

    def covariance_with_density(self, h: Callable[[np.ndarray], np.ndarray], rho: float) -> float:
        p = self.pmf_at_density(rho)
        k = np.arange(p.size, dtype=float)
        hv = np.asarray(h(np.arange(p.size)), dtype=float)
        return float(np.dot((hv - np.dot(hv, p)) * (k - np.dot(k, p)), p))

    def density_derivative(self, h: Callable[[np.ndarray], np.ndarray], rho: float) -> float:
        """``d/d rho E_{nu_rho}[h(eta(0))] = Cov(h, eta) / chi``."""
        return self.covariance_with_density(h, rho) / self.chi(rho)


def _alpha_of_rho(tables: FugacityTables, rho: float) -> float:
    if rho == 0.0:
        return 0.0
    lo, hi = 0.0, max(1.0, rho * tables.g.c0)
    while tables.density(hi) < rho:
        lo, hi = hi, 2.0 * hi
    # bisection to floating-point resolution; density is strictly increasing
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if tables.density(mid) < rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def build_fugacity_tables(g: RateFunction, tol: float = 1e-13, cap: int = 4000) -> FugacityTables:
    return FugacityTables(g, tol, cap)


# -- samplers --------------------------------------------------------------------

def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


def sample_equilibrium(tables: FugacityTables, rho: float, grid: TorusGrid, seed: int) -> np.ndarray:
    """Occupation numbers drawn iid from the marginal of ``nu_rho``."""
    rng = np.random.default_rng(seed)
    u = rng.random(grid.n_sites)
    if rho == 0:
        return np.zeros(grid.n_sites, dtype=np.int64)
    cdf = np.cumsum(tables.pmf_at_density(rho))
    cdf[-1] = 1.0
    return _inverse_cdf(cdf, u).astype(np.int64)


def sample_profile(tables: FugacityTables, profile: Callable[[np.ndarray], np.ndarray],
                   grid: TorusGrid, seed: int) -> np.ndarray:
    """Independent sites, site ``x`` distributed as the marginal of ``nu_{profile(x)}``."""
    rho = np.asarray(profile(grid.coordinates()), dtype=float).reshape(grid.n_sites)
    if not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise ConfigurationError("profile must be finite and nonnegative at every site")
    rng = np.random.default_rng(seed)
    u = rng.random(grid.n_sites)
    eta = np.zeros(grid.n_sites, dtype=np.int64)
    values, inverse = np.unique(rho, return_inverse=True)
    for i, r in enumerate(values):
        if r == 0:
            continue
        try:
            cdf = np.cumsum(tables.pmf_at_density(r))
        except RangeError as exc:
            raise ConfigurationError(f"profile value {r} outside table range: {exc}") from None
        cdf[-1] = 1.0
        sel = inverse == i
        eta[sel] = _inverse_cdf(cdf, u[sel])
    return eta


# -- equivalence of ensembles ------------------------------------------------------

ENUMERATION_CAP = 2_000_000


def _compositions(n: int, parts: int):
    """All occupation vectors of ``parts`` sites holding ``n`` particles."""
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(n + parts - 2 - prev)
        yield out


@dataclass(frozen=True)
class EnsembleComparison:
    canonical: float
    grand: float
    gap: float
    density: float


def canonical_vs_grand(h: Callable[[np.ndarray], float], box_size: int, n_particles: int,
                       tables: FugacityTables, d: int = 1, support: Sequence[int] = (0,)) -> EnsembleComparison:
    """Canonical versus grand-canonical expectation of a box observable.

    ``h`` receives the occupation vector of the ``box_size^d`` box (C order).
    The canonical law on ``{sum eta = n}`` has weights ``prod 1/g(eta(x))!``
    and is enumerated exactly. The grand-canonical expectation at density
    ``n / box_size^d`` sums over the sites listed in ``support`` (where ``h``
    must be supported) with all other box sites left empty.
    """
    parts = box_size**d
    count = math.comb(n_particles + parts - 1, parts - 1)
    if count > ENUMERATION_CAP:
        raise ResourceError(f"{count} configurations exceed the enumeration cap {ENUMERATION_CAP}")
    lg = tables._log_gfact
    logs, vals = [], []
    for comp in _compositions(n_particles, parts):
        eta = np.array(comp, dtype=np.int64)
        logs.append(-float(np.sum(lg[eta])))
        vals.append(float(h(eta)))
    logs = np.array(logs)
    w = np.exp(logs - logs.max())
    canonical = float(np.dot(w, vals) / w.sum())

    rho = n_particles / parts
    p = tables.pmf_at_density(rho)
    support = list(support)
    if len(support) > 3:
        raise ResourceError("grand-canonical summation supports at most 3 sites")
    grand = 0.0
    for occ in itertools.product(range(p.size), repeat=len(support)):
        eta = np.zeros(parts, dtype=np.int64)
        eta[support] = occ
        grand += float(np.prod(p[list(occ)])) * float(h(eta))
    return EnsembleComparison(canonical, grand, abs(canonical - grand), rho)
