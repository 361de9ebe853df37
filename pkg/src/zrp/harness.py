"""Experiment orchestration: configuration, seeded parallel trials, criteria.

Every random input is derived from the master seed by hashing
``(master, N, trial, stream)``, so a trial's result does not depend on which
worker ran it or in which order. Per-trial results come back in trial order
and are aggregated sequentially, which keeps reports byte-identical for any
worker count.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .dynamics import box_table, simulate
from .environment import EnvironmentModel, model_from_dict, sample_environment, splitmix64
from .errors import ConfigurationError, ZRPError
from .fields import (additive_functional, conductance_rate_observable, density_observable,
                     evaluate_fields, field_sample, martingale_track, rate_observable)
from .functions import FourierFunction
from .homogenization import effective_matrix, harmonic_mean_oracle_1d
from .lattice import GridFunction, TorusGrid, interpolate
from .measures import RateFunction, build_fugacity_tables, sample_equilibrium, sample_profile
from .pde import PhiInterpolant, semigroup_apply, solve_hydrodynamic
from .report import Criterion, ExperimentReport, Row
from .resolvent import corrected_test_function

KINDS = ("hydro", "fluctuation", "boltzmann_gibbs", "homogenize", "property_suite")

# seed streams
STREAM_ENV, STREAM_INIT, STREAM_DYN = 1, 2, 3


def derive_seed(master: int, N: int, trial: int, stream: int) -> int:
    """A 63-bit seed that is a pure function of its four keys."""
    z = np.uint64(int(master) & 0xFFFFFFFFFFFFFFFF)
    for key in (N, trial, stream):
        z = splitmix64(z ^ splitmix64(np.uint64(int(key) & 0xFFFFFFFFFFFFFFFF)))
    return int(z) >> 1


def load_schema() -> dict:
    text = resources.files("zrp").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    d: int
    N: tuple[int, ...]
    g: RateFunction
    environment: EnvironmentModel
    rho: float | None
    rho0: FourierFunction | None
    lam: float
    T: float
    trials: int
    seed: int
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(raw, load_schema())
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"config invalid at {path}: {exc.message}") from None
        Ns = tuple(int(n) for n in raw["N"])
        if list(Ns) != sorted(Ns) or len(set(Ns)) != len(Ns):
            raise ConfigurationError("N list must be strictly ascending")
        d = int(raw.get("d", 1))
        rho0 = FourierFunction.from_dict(raw["rho0"], d) if "rho0" in raw else None
        return cls(
            kind=raw["experiment"], d=d, N=Ns,
            g=RateFunction.from_dict(raw.get("g", {"kind": "linear", "slope": 1.0})),
            environment=model_from_dict(raw.get("environment", {"kind": "constant", "c": 1.0})),
            rho=float(raw["rho"]) if "rho" in raw else None, rho0=rho0,
            lam=float(raw.get("lambda", 1.0)), T=float(raw.get("T", 0.05)),
            trials=int(raw.get("trials", 10)), seed=int(raw.get("seed", 0)),
            params=dict(raw.get("params", {})), tolerances=dict(raw.get("tolerances", {})),
            output=raw.get("output"), raw=dict(raw),
        )

    def with_overrides(self, seed: int | None = None, output: str | None = None) -> "ExperimentConfig":
        raw = dict(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if output is not None:
            raw["output"] = str(output)
        return ExperimentConfig.from_dict(raw)

    def echo(self) -> dict:
        """The config as reported: the raw document minus the output location."""
        return {k: v for k, v in self.raw.items() if k != "output"}


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    return ExperimentConfig.from_dict(raw)


# -- parallel trial map ------------------------------------------------------------


def _run_chunk(args):
    fn, ctx, chunk = args
    return [fn(ctx, t) for t in chunk]


def map_trials(fn, ctx, trials, workers: int = 1) -> list:
    """``[fn(ctx, t) for t in trials]``, optionally across processes, in trial order."""
    trials = list(trials)
    if workers <= 1 or len(trials) <= 1:
        return [fn(ctx, t) for t in trials]
    n_chunks = min(len(trials), 4 * workers)
    chunks = [trials[i::n_chunks] for i in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(fn, ctx, c) for c in chunks]))
    by_trial = {}
    for c, res in zip(chunks, parts):
        by_trial.update(zip(c, res))
    return [by_trial[t] for t in trials]


# -- shared pieces ------------------------------------------------------------------


def _environment(cfg: ExperimentConfig, N: int):
    grid = TorusGrid(cfg.d, N)
    return grid, sample_environment(cfg.environment, grid, derive_seed(cfg.seed, N, 0, STREAM_ENV))


def _test_function(data, d: int) -> FourierFunction:
    return FourierFunction.from_dict(data, d)


def box_smooth(values: np.ndarray, grid: TorusGrid, l: int) -> np.ndarray:
    if l < 1:
        return np.asarray(values, dtype=float)
    return np.mean(np.asarray(values, dtype=float)[box_table(grid, l)], axis=1)


# -- hydrodynamic limit -------------------------------------------------------------


def _hydro_trial(ctx, trial):
    s_init = derive_seed(ctx["seed"], ctx["N"], trial, STREAM_INIT)
    s_dyn = derive_seed(ctx["seed"], ctx["N"], trial, STREAM_DYN)
    eta0 = sample_profile(ctx["tables"], ctx["rho0"], ctx["env"].grid, s_init)
    traj = simulate(eta0, ctx["env"], ctx["g"], ctx["T"], s_dyn)
    return s_dyn, traj.final()


def run_hydro(cfg: ExperimentConfig, workers: int, report: ExperimentReport) -> None:
    if cfg.rho0 is None:
        raise ConfigurationError("hydro experiments need an initial profile rho0")
    tables = build_fugacity_tables(cfg.g)
    eps = float(cfg.params.get("smoothing_eps", 0.05))
    dx = float(cfg.params.get("pde_dx", 1.0 / 256))
    pts_max = float(np.max(cfg.rho0(TorusGrid(cfg.d, 256).coordinates())))
    phi = PhiInterpolant.from_tables(tables, max(1.25 * pts_max, 1e-3))
    for N in cfg.N:
        grid, env = _environment(cfg, N)
        H = effective_matrix(env)
        ctx = {"seed": cfg.seed, "N": N, "tables": tables, "rho0": cfg.rho0, "env": env, "g": cfg.g, "T": cfg.T}
        results = map_trials(_hydro_trial, ctx, range(cfg.trials), workers)
        acc = np.zeros(grid.n_sites)
        for t, (seed, final) in enumerate(results):
            acc += final
            report.rows.append(Row("hydro", N, t, seed, "mass", float(final.sum()) / N**cfg.d))
        mean_profile = acc / cfg.trials
        smooth = box_smooth(mean_profile, grid, int(math.floor(eps * N)))
        pde = solve_hydrodynamic(cfg.rho0, H, phi, cfg.T, dx, d=cfg.d)
        emp = interpolate(GridFunction(grid, smooth), 0)(pde.grid.coordinates())
        err = emp - pde.final
        for name, value in (("l2_error", math.sqrt(float(np.mean(err * err)))),
                            ("sup_error", float(np.max(np.abs(err)))),
                            ("A_11", float(H.A[0, 0])),
                            ("pde_mass_drift", pde.mass_drift())):
            report.rows.append(Row("hydro", N, -1, env.seed, name, value))
    tol = cfg.tolerances
    report.criteria += [
        Criterion("hydro_l2_decreasing", "strictly_decreasing", "l2_error", acceptance="7",
                  description="smoothed empirical profile error decreases along N"),
        Criterion("hydro_l2_final", "below", "l2_error", acceptance="7", N=cfg.N[-1],
                  threshold=float(tol.get("l2_final", 0.05))),
    ]


# -- equilibrium fluctuations ---------------------------------------------------------


def _fluct_trial(ctx, trial):
    N = ctx["N"]
    env = ctx["env"]
    grid = env.grid
    rho, T = ctx["rho"], ctx["T"]
    s_init = derive_seed(ctx["seed"], N, trial, STREAM_INIT)
    s_dyn = derive_seed(ctx["seed"], N, trial, STREAM_DYN)
    eta0 = sample_equilibrium(ctx["tables"], rho, grid, s_init)
    traj = simulate(eta0, env, ctx["g"], T, s_dyn)
    out = {}
    for k, (G, Hf) in enumerate(ctx["pairs"], start=1):
        yg = evaluate_fields(eta0, grid, G, rho=rho)["fluctuation"]
        yh = evaluate_fields(eta0, grid, Hf, rho=rho)["fluctuation"]
        out[f"static_cov_{k}"] = yg * yh
    m = martingale_track(traj, ctx["G"], ctx["lam"], env, ctx["A"], ctx["g"], G_lambda=ctx["G_lambda"])
    M, Q = float(m.martingale[-1]), float(m.quadratic_variation[-1])
    out["M_T"] = M
    out["QV_T"] = Q
    out["M2_minus_QV"] = M * M - Q
    out["qv_rate"] = Q / T
    lag = field_sample(traj, ctx["G"], "fluctuation", [0.0, ctx["lag"]], rho=rho)
    out["lag_cov"] = float(lag.values[0] * lag.values[1])
    return s_dyn, out


def run_fluctuation(cfg: ExperimentConfig, workers: int, report: ExperimentReport) -> None:
    if cfg.rho is None:
        raise ConfigurationError("fluctuation experiments need a density rho")
    tables = build_fugacity_tables(cfg.g)
    rho = cfg.rho
    p = cfg.params
    pairs = [(_test_function(a, cfg.d), _test_function(b, cfg.d)) for a, b in p["static_pairs"]]
    G = _test_function(p["martingale_G"], cfg.d)
    lag = float(p.get("lag_time", cfg.T))
    if not 0 < lag <= cfg.T:
        raise ConfigurationError("lag_time must lie in (0, T]")
    chi, phi, phi_p = tables.chi(rho), tables.phi(rho), tables.phi_prime(rho)
    for N in cfg.N:
        grid, env = _environment(cfg, N)
        H = effective_matrix(env)
        Gl = corrected_test_function(G, cfg.lam, env, H)
        ctx = {"seed": cfg.seed, "N": N, "tables": tables, "env": env, "g": cfg.g, "T": cfg.T, "rho": rho,
               "pairs": pairs, "G": G, "G_lambda": Gl.u, "A": H, "lam": cfg.lam, "lag": lag}
        results = map_trials(_fluct_trial, ctx, range(cfg.trials), workers)
        for t, (seed, out) in enumerate(results):
            for name in sorted(out):
                report.rows.append(Row("fluctuation", N, t, seed, name, out[name]))
        pts = grid.coordinates()
        Nd = float(N) ** cfg.d
        energy = G.dirichlet_energy(H.A)
        aggregates = {f"static_cov_oracle_{k}": chi * float(np.dot(a(pts), b(pts))) / Nd
                      for k, (a, b) in enumerate(pairs, start=1)}
        aggregates["qv_limit"] = phi * energy
        aggregates["qv_limit_ordered_pairs"] = 2.0 * phi * energy
        aggregates["lag_cov_oracle"] = chi * semigroup_apply(G, lag, phi_p, H).inner(G)
        aggregates["A_11"] = float(H.A[0, 0])
        for name in sorted(aggregates):
            report.rows.append(Row("fluctuation", N, -1, env.seed, name, aggregates[name]))
    Nmax = cfg.N[-1]
    tol = cfg.tolerances
    k = float(tol.get("k_se", 3.0))
    crit = [Criterion(f"static_covariance_{i}", "mean_within_se", f"static_cov_{i}", acceptance="8a", N=Nmax,
                      target_statistic=f"static_cov_oracle_{i}", k_se=k) for i in range(1, len(pairs) + 1)]
    crit += [
        Criterion("martingale_mean_zero", "mean_within_se", "M_T", acceptance="8b", N=Nmax, target=0.0, k_se=k),
        Criterion("martingale_second_moment", "mean_within_se", "M2_minus_QV", acceptance="8b", N=Nmax,
                  target=0.0, k_se=k, description="E[M_T^2] - E[<M>_T] from paired differences"),
        Criterion("quadratic_variation_limit", "mean_within_se", "qv_rate", acceptance="8c", N=Nmax,
                  target_statistic="qv_limit", k_se=k, rel=float(tol.get("qv_rel", 0.10)),
                  description="<M>_T / T against phi(rho) int grad G . A grad G"),
        Criterion("quadratic_variation_limit_ordered_pairs", "mean_within_se", "qv_rate", acceptance="8c*",
                  asserted=False, N=Nmax, target_statistic="qv_limit_ordered_pairs", k_se=k,
                  rel=float(tol.get("qv_rel", 0.10)),
                  description="same statistic against 2 phi(rho) int grad G . A grad G"),
        Criterion("lag_covariance", "mean_within_se", "lag_cov", acceptance="8d", N=Nmax,
                  target_statistic="lag_cov_oracle", k_se=k),
    ]
    for N in cfg.N[:-1]:
        crit.append(Criterion(f"martingale_second_moment_N{N}", "mean_within_se", "M2_minus_QV", asserted=False,
                              N=N, target=0.0, k_se=k))
        crit.append(Criterion(f"quadratic_variation_ordered_pairs_N{N}", "mean_within_se", "qv_rate",
                              asserted=False, N=N, target_statistic="qv_limit_ordered_pairs", k_se=k,
                              rel=float(tol.get("qv_rel", 0.10))))
    report.criteria += crit


# -- Boltzmann-Gibbs ---------------------------------------------------------------------


def _observables(names, env, g, rho):
    grid = env.grid
    makers = {
        "density": lambda: density_observable(grid, rho),
        "rate": lambda: rate_observable(grid, g),
        "conductance_rate": lambda: conductance_rate_observable(env, g, 0),
    }
    unknown = [n for n in names if n not in makers]
    if unknown:
        raise ConfigurationError(f"unknown observables {unknown}; expected {sorted(makers)}")
    return [(n, makers[n]()) for n in names]


def _bg_trial(ctx, trial):
    N = ctx["N"]
    env = ctx["env"]
    s_init = derive_seed(ctx["seed"], N, trial, STREAM_INIT)
    s_dyn = derive_seed(ctx["seed"], N, trial, STREAM_DYN)
    eta0 = sample_equilibrium(ctx["tables"], ctx["rho"], env.grid, s_init)
    traj = simulate(eta0, env, ctx["g"], ctx["T"], s_dyn)
    out = {}
    for name, f in _observables(ctx["observables"], env, ctx["g"], ctx["rho"]):
        af = additive_functional(traj, ctx["G"], f, ctx["rho"], ctx["tables"])
        out[f"bg_{name}"] = af.difference
        out[f"additive_{name}"] = af.functional
    return s_dyn, out


def run_boltzmann_gibbs(cfg: ExperimentConfig, workers: int, report: ExperimentReport) -> None:
    if cfg.rho is None:
        raise ConfigurationError("Boltzmann-Gibbs experiments need a density rho")
    tables = build_fugacity_tables(cfg.g)
    names = list(cfg.params.get("observables", ["density", "rate", "conductance_rate"]))
    G = _test_function(cfg.params["G"], cfg.d)
    for N in cfg.N:
        grid, env = _environment(cfg, N)
        ctx = {"seed": cfg.seed, "N": N, "tables": tables, "env": env, "g": cfg.g, "T": cfg.T, "rho": cfg.rho,
               "G": G, "observables": names}
        results = map_trials(_bg_trial, ctx, range(cfg.trials), workers)
        for t, (seed, out) in enumerate(results):
            for name in sorted(out):
                report.rows.append(Row("boltzmann_gibbs", N, t, seed, name, out[name]))
    ratio = float(cfg.tolerances.get("second_moment_ratio", 0.5))
    for name in names:
        if name == "density":
            report.criteria.append(Criterion("bg_density_exact_zero", "all_equal", "bg_density", acceptance="9",
                                             value=0.0))
        else:
            report.criteria.append(Criterion(f"bg_{name}_decay", "second_moment_ratio_below", f"bg_{name}",
                                             acceptance="9", N_low=cfg.N[0], N_high=cfg.N[-1], threshold=ratio))


# -- homogenization -------------------------------------------------------------------------


def _homog_trial(ctx, trial):
    N, d = ctx["N"], ctx["d"]
    grid = TorusGrid(d, N)
    seed = derive_seed(ctx["seed"], N, trial, STREAM_ENV)
    env = sample_environment(ctx["model"], grid, seed)
    H = effective_matrix(env)
    out = {f"A_{i + 1}{j + 1}": float(H.A[i, j]) for i in range(d) for j in range(d)}
    out["ellipticity"] = 1.0 if H.ellipticity_holds() else 0.0
    if d == 1:
        hm = harmonic_mean_oracle_1d(env)
        out["harmonic_mean"] = hm
        out["A_minus_harmonic"] = float(H.A[0, 0]) - hm
    return seed, out


def run_homogenize(cfg: ExperimentConfig, workers: int, report: ExperimentReport) -> None:
    n_seeds = int(cfg.params.get("env_seeds", cfg.trials))
    for N in cfg.N:
        ctx = {"seed": cfg.seed, "N": N, "d": cfg.d, "model": cfg.environment}
        results = map_trials(_homog_trial, ctx, range(n_seeds), workers)
        for t, (seed, out) in enumerate(results):
            for name in sorted(out):
                report.rows.append(Row("homogenize", N, t, seed, name, out[name]))
    report.criteria.append(Criterion("ellipticity", "all_equal", "ellipticity", value=1.0))
    if len(cfg.N) > 1 and n_seeds > 1 and cfg.environment.kind in ("iid_uniform", "iid_two_point"):
        report.criteria.append(Criterion("seed_stability", "std_decreasing", "A_11",
                                         description="spread of A across seeds shrinks with N"))
    if cfg.d == 1:
        report.criteria.append(Criterion("harmonic_mean_agreement", "max_abs_below", "A_minus_harmonic",
                                         threshold=float(cfg.tolerances.get("harmonic", 1e-8))))


# -- entry point ---------------------------------------------------------------------------------


RUNNERS = {
    "hydro": run_hydro,
    "fluctuation": run_fluctuation,
    "boltzmann_gibbs": run_boltzmann_gibbs,
    "homogenize": run_homogenize,
}


def versions() -> dict:
    import numba
    import scipy

    return {"zrp": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run one experiment; module errors mark the report failed and keep partial rows."""
    report = ExperimentReport(cfg.kind, cfg.echo(), versions=versions())
    start = time.perf_counter()
    try:
        if cfg.kind == "property_suite":
            from .suite import run_property_suite

            run_property_suite(cfg, workers, report)
        else:
            RUNNERS[cfg.kind](cfg, workers, report)
    except ZRPError as exc:
        report.status = "failed"
        report.error = f"{type(exc).__name__}: {exc}"
    report.wall_time = time.perf_counter() - start
    report.evaluate()
    return report
