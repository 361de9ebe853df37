import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zrp.dynamics import (Configuration, TrajectoryRecord, audit_order, coupled_simulate, generator_apply,
                          local_average, reversibility_residual, simulate)
from zrp.environment import Constant, IidTwoPoint, IidUniform, sample_environment
from zrp.errors import PreconditionError, UsageError
from zrp.lattice import TorusGrid
from zrp.measures import RateFunction, build_fugacity_tables, sample_equilibrium

from conftest import NONLINEAR

G_NL = RateFunction.table(NONLINEAR)


def test_generator_conserves_total(square_env, rng):
    eta = rng.integers(0, 4, square_env.grid.n_sites)
    assert generator_apply(lambda e: float(e.sum()), eta, square_env, G_NL) == pytest.approx(0.0, abs=1e-9)


def test_generator_on_site_occupation(ring_env, rng):
    eta = rng.integers(0, 4, ring_env.grid.n_sites)
    x0 = 5
    nbr, rates = ring_env.grid.neighbor_table, ring_env.rate_table
    inflow = sum(rates[nbr[x0, j], j ^ 1] * G_NL(eta[nbr[x0, j]]) for j in range(2))
    outflow = G_NL(eta[x0]) * rates[x0].sum()
    value = generator_apply(lambda e: float(e[x0]), eta, ring_env, G_NL)
    assert value == pytest.approx(inflow - outflow, rel=1e-12)


def test_generator_brute_force_square(rng):
    grid = TorusGrid(1, 2)
    env = sample_environment(IidUniform(0.5), grid, 4)
    eta = rng.integers(0, 3, grid.n_sites)
    F = lambda e: float(e[0]) ** 2
    total = 0.0
    for x in range(4):
        for y, sign in (((x + 1) % 4, 0), ((x - 1) % 4, 1)):
            if eta[x] == 0:
                continue
            moved = eta.copy()
            moved[x] -= 1
            moved[y] += 1
            total += env.rate_table[x, sign] * G_NL(eta[x]) * (F(moved) - F(eta))
    assert generator_apply(F, eta, env, G_NL) == pytest.approx(total, rel=1e-12)


def test_empty_start_has_no_events(ring_env):
    traj = simulate(np.zeros(ring_env.grid.n_sites, dtype=np.int64), ring_env, G_NL, 1.0, 1)
    assert traj.n_events == 0 and not traj.final().any()


def test_single_walker_event_count():
    c, N, T = 1.5, 8, 0.1
    grid = TorusGrid(1, N)
    env = sample_environment(Constant(c), grid, 0)
    eta = np.zeros(grid.n_sites, dtype=np.int64)
    eta[3] = 1
    counts = np.array([simulate(eta, env, RateFunction.linear(), T, s).n_events for s in range(400)])
    mean = 2 * c * N**2 * T
    assert abs(counts.mean() - mean) < 3 * math.sqrt(mean / counts.size)


def test_conservation_and_replay(square_env, nonlinear_tables, tmp_path):
    eta = sample_equilibrium(nonlinear_tables, 1.5, square_env.grid, 3)
    traj = simulate(eta, square_env, G_NL, 0.2, 8)
    assert traj.n_events > 0 and traj.is_consistent()
    assert traj.final().sum() == eta.sum()
    snaps = traj.snapshots([0.0, 0.1, 0.2])
    assert np.array_equal(snaps[0], eta) and np.array_equal(snaps[-1], traj.final())
    traj.write_csv(tmp_path / "t.csv")
    back = TrajectoryRecord.read_csv(tmp_path / "t.csv")
    assert np.array_equal(back.times, traj.times) and np.array_equal(back.final(), traj.final())


def test_simulation_is_seeded(ring_env, nonlinear_tables):
    eta = sample_equilibrium(nonlinear_tables, 1.0, ring_env.grid, 3)
    a = simulate(eta, ring_env, G_NL, 0.1, 42)
    b = simulate(eta, ring_env, G_NL, 0.1, 42)
    assert a.times.tobytes() == b.times.tobytes() and a.sources.tobytes() == b.sources.tobytes()


def test_horizon_must_be_positive(ring_env):
    with pytest.raises(UsageError):
        simulate(np.ones(ring_env.grid.n_sites, dtype=np.int64), ring_env, G_NL, 0.0, 1)


def test_poisson_ratio(linear_tables):
    grid = TorusGrid(1, 4)
    env = sample_environment(Constant(1.0), grid, 0)
    eta = np.zeros(grid.n_sites, dtype=np.int64)
    eta[0] = 2
    # nu(eta^{xy}) / nu(eta) = (2! 0!) / (1! 1!) = 2, g(2) = 2 and g(1) = 1
    res = reversibility_residual(eta, 0, 0, linear_tables, 1.0, env)
    assert res == pytest.approx(2 * 16 - 2 * 1 * 16, abs=1e-12)


def test_asymmetric_rates_break_detailed_balance(ring_env, nonlinear_tables):
    eta = np.ones(ring_env.grid.n_sites, dtype=np.int64)
    rates = np.array(ring_env.rate_table)
    rates[:, 0] *= 1.1
    assert abs(reversibility_residual(eta, 2, 0, nonlinear_tables, 1.0, ring_env, rates)) > 1e-3


def test_empty_source_rejected(ring_env, nonlinear_tables):
    with pytest.raises(PreconditionError):
        reversibility_residual(np.zeros(ring_env.grid.n_sites), 0, 0, nonlinear_tables, 1.0, ring_env)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), rho=st.sampled_from([0.5, 1.0, 2.0]), d=st.integers(1, 2))
def test_detailed_balance_property(seed, rho, d):
    rng = np.random.default_rng(seed)
    tables = build_fugacity_tables(G_NL)
    env = sample_environment(IidTwoPoint(1.0, 2.0, 0.5), TorusGrid(d, 3), seed)
    eta = rng.integers(1, 5, env.grid.n_sites)
    x, j = int(rng.integers(env.grid.n_sites)), int(rng.integers(env.grid.n_directions))
    res = reversibility_residual(eta, x, j, tables, rho, env)
    assert abs(res) <= 1e-12 * G_NL(eta[x]) * env.rate_table[x, j]


def test_coupling_diagonal(ring_env, nonlinear_tables):
    eta = sample_equilibrium(nonlinear_tables, 1.0, ring_env.grid, 2)
    c = coupled_simulate(eta, eta, ring_env, G_NL, 0.1, 5)
    assert np.array_equal(c.lower.times, c.upper.times)
    assert np.array_equal(c.lower.final(), c.upper.final())
    assert audit_order(c)[1] == 0


def test_coupling_from_empty(ring_env, nonlinear_tables):
    up = sample_equilibrium(nonlinear_tables, 2.0, ring_env.grid, 2)
    c = coupled_simulate(np.zeros_like(up), up, ring_env, G_NL, 0.1, 5)
    events, bad = audit_order(c)
    assert events == c.upper.n_events and bad == 0 and c.lower.n_events == 0


def test_coupling_moment_order(ring_env, nonlinear_tables):
    gaps = []
    for s in range(60):
        lo = sample_equilibrium(nonlinear_tables, 0.5, ring_env.grid, s)
        up = lo + sample_equilibrium(nonlinear_tables, 0.5, ring_env.grid, 1000 + s)
        c = coupled_simulate(lo, up, ring_env, G_NL, 0.05, s)
        assert audit_order(c)[1] == 0
        gaps.append(c.upper.final()[4] - c.lower.final()[4])
    gaps = np.array(gaps, dtype=float)
    assert gaps.min() >= 0


def test_coupling_preconditions(ring_env):
    n = ring_env.grid.n_sites
    with pytest.raises(PreconditionError):
        coupled_simulate(np.ones(n), np.zeros(n), ring_env, G_NL, 0.1, 1)
    bumpy = RateFunction.table([0.0, 2.0, 1.0, 2.0], non_decreasing=False)
    with pytest.raises(PreconditionError):
        coupled_simulate(np.zeros(n), np.ones(n), ring_env, bumpy, 0.1, 1)


def test_local_average():
    grid = TorusGrid(1, 4)
    eta = np.arange(8)
    assert local_average(eta, grid, 0, 1) == pytest.approx((7 + 0 + 1) / 3)
    assert local_average(eta, grid, 5, 0) == 5
    assert local_average(np.full(8, 3), grid, 2, 3) == 3
    with pytest.raises(UsageError):
        local_average(eta, grid, 0, 4)


def test_configuration_intensity(ring_env):
    eta = np.zeros(ring_env.grid.n_sites, dtype=np.int64)
    eta[0] = 3
    conf = Configuration(ring_env.grid, eta)
    assert conf.total == 3
    assert conf.intensity(ring_env, G_NL) == pytest.approx(2.0 * ring_env.site_rate_sum[0])
