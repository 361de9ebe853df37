"""Property audits of the individual modules, run as one experiment.

Each audit appends rows and the criteria that judge them. Rows use the ``N``
column for the natural scale of the audit (grid scale, box size, or 1/dx)
and ``trial`` for the instance index.
"""
from __future__ import annotations

import json
import math

import numpy as np

from .dynamics import audit_order, coupled_simulate, reversibility_residual
from .environment import Constant, IidTwoPoint, IidUniform, PeriodicCheckerboard, sample_environment
from .errors import ConfigurationError
from .functions import cosine
from .harness import STREAM_DYN, STREAM_ENV, STREAM_INIT, ExperimentConfig, derive_seed, run_experiment
from .homogenization import effective_matrix, harmonic_mean_oracle_1d
from .lattice import GridFunction, TorusGrid, discrete_norms
from .measures import RateFunction, build_fugacity_tables, canonical_vs_grand, sample_equilibrium
from .pde import PhiInterpolant, cfl_limit, semigroup_apply, solve_hydrodynamic, weak_residual
from .report import Criterion, Row, rows_csv
from .resolvent import apply_LN, corrected_test_function, solve_resolvent

EXP = "property_suite"

DEFAULT_TABLES = ([0.0, 1.0, 1.5, 2.0], [0.0, 2.0, 3.0, 4.0])


def _rate_functions(cfg) -> list[RateFunction]:
    tables = cfg.params.get("nonlinear_g", [list(t) for t in DEFAULT_TABLES])
    return [RateFunction.linear()] + [RateFunction.table(v) for v in tables]


def audit_fugacity(cfg, report):
    k = 0
    for g in _rate_functions(cfg):
        tables = build_fugacity_tables(g)
        for rho in (0.2, 0.5, 1.0, 2.0):
            report.rows.append(Row(EXP, 0, k, 0, "phi_minus_alpha", tables.phi(rho) - tables.alpha(rho)))
            a = tables.alpha(rho)
            report.rows.append(Row(EXP, 0, k, 0, "inversion_error", tables.alpha(tables.density(a)) - a))
            k += 1
    report.criteria += [
        Criterion("fugacity_identity", "max_abs_below", "phi_minus_alpha", acceptance="1", threshold=1e-8),
        Criterion("fugacity_inversion", "max_abs_below", "inversion_error", asserted=False, threshold=1e-8),
    ]


def _env_models():
    return [Constant(1.0), IidUniform(0.5), IidTwoPoint(1.0, 2.0, 0.5), PeriodicCheckerboard(1.0, 2.0)]


def audit_detailed_balance(cfg, report):
    rng = np.random.default_rng(cfg.seed)
    n_inst = int(cfg.params.get("detailed_balance_instances", 1000))
    k = 0
    for g in _rate_functions(cfg):
        tables = build_fugacity_tables(g)
        for model in _env_models():
            grid = TorusGrid(1 + (k % 2), 4)
            env = sample_environment(model, grid, int(rng.integers(2**31)))
            etas = rng.integers(0, 5, (n_inst, grid.n_sites))
            xs = rng.integers(grid.n_sites, size=n_inst)
            js = rng.integers(grid.n_directions, size=n_inst)
            rhos = rng.choice([0.5, 1.0, 2.0], size=n_inst)
            for eta, x, j, rho in zip(etas, xs.tolist(), js.tolist(), rhos.tolist()):
                eta[x] = max(eta[x], 1)
                res = reversibility_residual(eta, x, j, tables, rho, env)
                scale = float(g(int(eta[x]))) * env.rate_table[x, j]
                report.rows.append(Row(EXP, grid.N, k, 0, "detailed_balance_relative", res / scale))
            k += 1
    report.criteria.append(Criterion("detailed_balance", "max_abs_below", "detailed_balance_relative",
                                     acceptance="2", threshold=1e-12))


def _dense_operator(env, lam):
    grid = env.grid
    n = grid.n_sites
    M = lam * np.eye(n)
    for x in range(n):
        for j in range(grid.n_directions):
            y = grid.neighbor_table[x, j]
            M[x, y] -= env.rate_table[x, j]
            M[x, x] += env.rate_table[x, j]
    return M


def audit_resolvent(cfg, report):
    rng = np.random.default_rng(cfg.seed + 1)
    n_inst = int(cfg.params.get("resolvent_instances", 100))
    for k in range(n_inst):
        d = 1 + k % 2
        N = int(rng.choice([2, 3, 4, 6])) if d == 2 else int(rng.choice([4, 8, 16]))
        grid = TorusGrid(d, N)
        eps = float(rng.uniform(0.2, 1.0))
        env = sample_environment(IidUniform(eps), grid, int(rng.integers(2**31)))
        lam = float(rng.choice([0.5, 1.0, 2.0]))
        rhs = GridFunction(grid, rng.standard_normal(grid.n_sites))
        sol = solve_resolvent(env, lam, rhs, tol=1e-13)
        cert = sol.certify(env)
        dense = np.linalg.solve(_dense_operator(env, lam), rhs.values)
        report.rows += [
            Row(EXP, N, k, 0, "l2_estimate", float(cert.l2_estimate)),
            Row(EXP, N, k, 0, "energy_estimate", float(cert.energy_estimate)),
            Row(EXP, N, k, 0, "sup_estimate", float(cert.sup_estimate)),
            Row(EXP, N, k, 0, "maximum_principle", float(cert.max_principle)),
            Row(EXP, N, k, 0, "dense_solve_difference", float(np.max(np.abs(sol.u.values - dense)))),
            Row(EXP, N, k, 0, "laplacian_sum", float(np.sum(apply_LN(env, rhs).values))),
        ]
    report.criteria += [Criterion(f"resolvent_{name}", "all_equal", name, acceptance="3", value=1.0)
                        for name in ("l2_estimate", "energy_estimate", "sup_estimate", "maximum_principle")]
    report.criteria += [
        Criterion("resolvent_dense_agreement", "max_abs_below", "dense_solve_difference", acceptance="3",
                  threshold=1e-10),
        Criterion("laplacian_conservation", "max_abs_below", "laplacian_sum", asserted=False, threshold=1e-9),
    ]


def audit_homogenization(cfg, report):
    N = int(cfg.params.get("homogenization_N", 2**12))
    grid = TorusGrid(1, N)
    env = sample_environment(IidTwoPoint(1.0, 2.0, 0.5), grid, cfg.seed)
    hm = harmonic_mean_oracle_1d(env)
    A = effective_matrix(env).A[0, 0]
    report.rows.append(Row(EXP, N, 0, env.seed, "two_point_relative_gap", abs(A - hm) / hm))
    env = sample_environment(PeriodicCheckerboard(1.0, 2.0), grid, cfg.seed)
    report.rows.append(Row(EXP, N, 0, env.seed, "checkerboard_gap", effective_matrix(env).A[0, 0] - 4.0 / 3.0))
    for d, Nc in ((1, 64), (2, 16)):
        env = sample_environment(Constant(1.7), TorusGrid(d, Nc), cfg.seed)
        gap = float(np.max(np.abs(effective_matrix(env).A - 1.7 * np.eye(d))))
        report.rows.append(Row(EXP, Nc, d, env.seed, "constant_gap", gap))
    report.criteria += [
        Criterion("homogenization_two_point", "max_abs_below", "two_point_relative_gap", acceptance="4",
                  threshold=0.01),
        Criterion("homogenization_checkerboard", "max_abs_below", "checkerboard_gap", acceptance="4",
                  threshold=1e-8),
        Criterion("homogenization_constant", "max_abs_below", "constant_gap", acceptance="4", threshold=1e-10),
    ]


def audit_corrected_convergence(cfg, report):
    G = cosine(1, 1, amplitude=0.5, constant=1.0)
    for N in (16, 32, 64, 128):
        grid = TorusGrid(1, N)
        Gv = GridFunction.from_callable(grid, G)
        for s in range(5):
            env = sample_environment(IidTwoPoint(1.0, 2.0, 0.5), grid, derive_seed(cfg.seed, N, s, STREAM_ENV))
            sol = corrected_test_function(G, 1.0, env, effective_matrix(env), tol=1e-10)
            report.rows.append(Row(EXP, N, s, env.seed, "corrected_gap", discrete_norms(sol.u - Gv)[0]))
    report.criteria.append(Criterion("corrected_function_convergence", "strictly_decreasing", "corrected_gap",
                                     acceptance="5"))


def audit_pde(cfg, report):
    a = 1.3
    phi = PhiInterpolant.linear()
    rho0 = cosine(1, 1, amplitude=0.5, constant=1.0)
    T = 0.1
    F = solve_hydrodynamic(rho0, [[a]], phi, T, 1.0 / 256)
    exact = semigroup_apply(rho0, T, 1.0, [[a]])(F.grid.coordinates())
    report.rows.append(Row(EXP, 256, 0, 0, "pde_sup_error", float(np.max(np.abs(F.final - exact)))))
    report.rows.append(Row(EXP, 256, 0, 0, "pde_mass_drift", F.mass_drift()))
    test = cosine(1, 1, amplitude=1.0, constant=1.0)
    for N in (32, 64, 128):
        Fw = solve_hydrodynamic(rho0, [[a]], phi, T, 1.0 / N, record_every=1)
        report.rows.append(Row(EXP, N, 0, 0, "weak_residual", weak_residual(Fw, test, rho0, phi, [[a]])))
        report.rows.append(Row(EXP, N, 0, 0, "pde_minimum_margin", float(Fw.values.min() - 0.5)))
    # semigroup against the scheme in the linear case
    G = cosine(1, 1, amplitude=0.5)
    t = 0.01
    dx = 1.0 / 512
    n = math.ceil(t / (0.9 * cfl_limit([[a]], phi, 0.5, 1.5, dx, 1)))
    Fs = solve_hydrodynamic(lambda u: 1.0 + G(u), [[a]], phi, t, dx, dt=t / n)
    S = semigroup_apply(G, t, 1.0, [[a]])
    report.rows.append(Row(EXP, 512, 0, 0, "semigroup_difference",
                           float(np.max(np.abs(Fs.final - 1.0 - S(Fs.grid.coordinates()))))))
    report.criteria += [
        Criterion("pde_exact_solution", "max_abs_below", "pde_sup_error", acceptance="6", threshold=1e-3),
        Criterion("pde_mass_conservation", "max_abs_below", "pde_mass_drift", acceptance="6", threshold=1e-10),
        Criterion("pde_weak_residual_refinement", "strictly_decreasing", "weak_residual", acceptance="6"),
        Criterion("pde_semigroup_consistency", "max_abs_below", "semigroup_difference", asserted=False,
                  threshold=1e-6),
    ]


def audit_coupling(cfg, report):
    g = RateFunction.table(list(cfg.params.get("coupling_g", DEFAULT_TABLES[0])))
    tables = build_fugacity_tables(g)
    N = int(cfg.params.get("coupling_N", 16))
    grid = TorusGrid(1, N)
    env = sample_environment(IidTwoPoint(1.0, 2.0, 0.5), grid, derive_seed(cfg.seed, N, 0, STREAM_ENV))
    Gv = 1.0 + 0.5 * np.sin(np.pi * grid.coordinates()[:, 0])
    for k in range(int(cfg.params.get("coupling_runs", 100))):
        s = derive_seed(cfg.seed, N, k, STREAM_INIT)
        lo = sample_equilibrium(tables, 0.5, grid, s)
        up = lo + sample_equilibrium(tables, 0.5, grid, s + 1)
        c = coupled_simulate(lo, up, env, g, 0.05, derive_seed(cfg.seed, N, k, STREAM_DYN))
        events, bad = audit_order(c)
        report.rows.append(Row(EXP, N, k, 0, "order_violations", float(bad + c.violations)))
        report.rows.append(Row(EXP, N, k, 0, "coupled_events", float(events)))
        report.rows.append(Row(EXP, N, k, 0, "monotone_gap",
                               float(np.dot(Gv, c.upper.final()) - np.dot(Gv, c.lower.final()))))
    report.criteria += [
        Criterion("coupling_order_preserved", "all_equal", "order_violations", acceptance="10", value=0.0),
        Criterion("coupling_monotone_expectation", "mean_at_least", "monotone_gap", acceptance="10",
                  target=0.0, k_se=3.0),
    ]


def audit_ensembles(cfg, report):
    g = RateFunction.table(list(cfg.params.get("ensemble_g", DEFAULT_TABLES[0])))
    tables = build_fugacity_tables(g)
    for rho in (1, 2):
        for K in range(2, 7):
            res = canonical_vs_grand(lambda e: float(g(e[0])), K, rho * K, tables)
            report.rows.append(Row(EXP, K, rho, 0, f"gap_times_K_rho{rho}", res.gap * K))
            exch = canonical_vs_grand(lambda e: float(e[0]), K, rho * K, tables)
            report.rows.append(Row(EXP, K, rho, 0, "exchangeability_error", exch.canonical - rho))
        report.criteria.append(Criterion(f"ensembles_rho{rho}", "bounded_by_first", f"gap_times_K_rho{rho}",
                                         acceptance="11", threshold=1.0,
                                         description="gap(K) * K shows no growth along K = 2..6"))
    report.criteria.append(Criterion("ensembles_exchangeability", "max_abs_below", "exchangeability_error",
                                     asserted=False, threshold=1e-12))


def audit_determinism(cfg, report):
    tiny = ExperimentConfig.from_dict({
        "experiment": "hydro", "d": 1, "N": [8, 16], "g": {"kind": "linear", "slope": 1.0},
        "environment": {"kind": "iid_two_point", "a_low": 1.0, "a_high": 2.0, "p": 0.5},
        "rho0": {"const": 1.0, "terms": [{"k": [1], "sin": 0.5}]}, "T": 0.01, "trials": 6, "seed": cfg.seed,
        "params": {"pde_dx": 1.0 / 64},
    })
    outs = []
    for workers in (1, 2, 1):
        rep = run_experiment(tiny, workers=workers)
        outs.append((rows_csv(rep.rows), json.dumps(rep.summary(), sort_keys=True)))
    same = all(o == outs[0] for o in outs)
    report.rows.append(Row(EXP, 16, 0, cfg.seed, "byte_identical", float(same)))
    report.criteria.append(Criterion("determinism", "all_equal", "byte_identical", acceptance="12", value=1.0))


AUDITS = {
    "fugacity": audit_fugacity,
    "detailed_balance": audit_detailed_balance,
    "resolvent": audit_resolvent,
    "homogenization": audit_homogenization,
    "corrected_convergence": audit_corrected_convergence,
    "pde": audit_pde,
    "coupling": audit_coupling,
    "ensembles": audit_ensembles,
    "determinism": audit_determinism,
}


def run_property_suite(cfg, workers, report):
    names = cfg.params.get("audits", list(AUDITS))
    unknown = [n for n in names if n not in AUDITS]
    if unknown:
        raise ConfigurationError(f"unknown audits {unknown}; expected some of {sorted(AUDITS)}")
    for name in names:
        AUDITS[name](cfg, report)
