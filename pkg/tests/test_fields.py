import math

import numpy as np
import pytest

from zrp.dynamics import simulate
from zrp.environment import IidTwoPoint, sample_environment
from zrp.errors import UsageError
from zrp.fields import (LocalObservable, additive_functional, bg_statistic, conductance_rate_observable,
                        density_observable, evaluate_fields, field_sample, martingale_track, rate_observable,
                        replacement_statistic, replacement_value)
from zrp.functions import cosine, sine
from zrp.homogenization import effective_matrix
from zrp.lattice import TorusGrid
from zrp.measures import RateFunction, sample_equilibrium
from zrp.resolvent import corrected_test_function

from conftest import NONLINEAR

G_NL = RateFunction.table(NONLINEAR)


def test_empty_configuration_fields():
    grid = TorusGrid(1, 8)
    G = cosine(1, 1, 1.0, 0.5)
    out = evaluate_fields(np.zeros(grid.n_sites), grid, G, rho=1.5)
    assert out["empirical"] == 0.0
    assert out["fluctuation"] == pytest.approx(-1.5 * G(grid.coordinates()).sum() / math.sqrt(8))


def test_unit_test_function(rng):
    grid = TorusGrid(2, 3)
    eta = rng.integers(0, 4, grid.n_sites)
    out = evaluate_fields(eta, grid, lambda u: np.ones(u.shape[0]), G_lambda=np.ones(grid.n_sites), rho=1.0)
    assert out["empirical"] == pytest.approx(eta.sum() / 9)
    assert out["fluctuation"] == pytest.approx((eta.sum() - 36) / 3)
    assert out["corrected_fluctuation"] == pytest.approx(out["fluctuation"])


def test_equilibrium_field_moments(linear_tables):
    grid = TorusGrid(1, 64)
    G = sine(1, 1)
    vals = np.array([evaluate_fields(sample_equilibrium(linear_tables, 1.0, grid, s), grid, G, rho=1.0)["fluctuation"]
                     for s in range(1000)])
    target = float(np.sum(G(grid.coordinates()) ** 2)) / grid.N
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean()) < 3 * se
    # variance of the sample variance for a normal-like field is about 2 sigma^4 / n
    assert abs(vals.var(ddof=1) - target) < 3 * target * math.sqrt(2.0 / vals.size)


def test_field_sample_replay(ring_env, nonlinear_tables):
    eta = sample_equilibrium(nonlinear_tables, 1.0, ring_env.grid, 4)
    traj = simulate(eta, ring_env, G_NL, 0.05, 4)
    times = [0.0, 0.02, 0.05]
    fs = field_sample(traj, sine(1, 1), "fluctuation", times, rho=1.0)
    snaps = traj.snapshots(times)
    direct = [evaluate_fields(s, ring_env.grid, sine(1, 1), rho=1.0)["fluctuation"] for s in snaps]
    assert np.allclose(fs.values, direct, atol=1e-12)
    with pytest.raises(UsageError):
        field_sample(traj, sine(1, 1), "fluctuation", times)
    with pytest.raises(UsageError):
        field_sample(traj, sine(1, 1), "curvature", times)


def test_empty_trajectory_martingale(ring_env):
    traj = simulate(np.zeros(ring_env.grid.n_sites, dtype=np.int64), ring_env, G_NL, 0.1, 1)
    tr = martingale_track(traj, sine(1, 1), 1.0, ring_env, effective_matrix(ring_env), G_NL, times=[0.05, 0.1])
    assert not tr.martingale.any() and not tr.quadratic_variation.any()


def test_martingale_against_direct_integration(ring_env, nonlinear_tables):
    eta = sample_equilibrium(nonlinear_tables, 1.0, ring_env.grid, 9)
    traj = simulate(eta, ring_env, G_NL, 0.02, 9)
    A = effective_matrix(ring_env)
    sol = corrected_test_function(sine(1, 1), 1.0, ring_env, A)
    tr = martingale_track(traj, sine(1, 1), 1.0, ring_env, A, G_NL, G_lambda=sol)
    u = sol.u.values
    nbr, rates = ring_env.grid.neighbor_table, ring_env.rate_table
    Lu = np.sum(rates * (u[nbr] - u[:, None]), axis=1)
    q = np.sum(rates * (u[nbr] - u[:, None]) ** 2, axis=1)
    # piecewise-constant integration by explicit replay
    cur = traj.initial.copy()
    t_prev, integ, qv = 0.0, 0.0, 0.0
    for t, x, y in zip(np.append(traj.times, traj.T), np.append(traj.sources, -1), np.append(traj.destinations, -1)):
        gx = G_NL(cur)
        integ += (t - t_prev) * float(gx @ Lu)
        qv += (t - t_prev) * float(gx @ q)
        t_prev = t
        if x >= 0:
            cur[x] -= 1
            cur[y] += 1
    s = 1 / math.sqrt(ring_env.grid.N)
    M = s * float(u @ (cur - traj.initial)) - s * integ
    assert tr.martingale[-1] == pytest.approx(M, rel=1e-9, abs=1e-12)
    assert tr.quadratic_variation[-1] == pytest.approx(s * s * qv, rel=1e-9)


def test_density_observable_is_exact_zero(ring_env, linear_tables):
    eta = sample_equilibrium(linear_tables, 1.0, ring_env.grid, 2)
    traj = simulate(eta, ring_env, RateFunction.linear(), 0.05, 2)
    f = density_observable(ring_env.grid, 1.0)
    assert bg_statistic(traj, sine(1, 1), f, 1.0, linear_tables) == 0.0
    # linear g is affine, so the rate observable cancels exactly too
    g_obs = rate_observable(ring_env.grid, RateFunction.linear())
    assert bg_statistic(traj, sine(1, 1), g_obs, 1.0, linear_tables) == 0.0


def test_bg_equals_additive_difference(ring_env, nonlinear_tables):
    eta = sample_equilibrium(nonlinear_tables, 1.0, ring_env.grid, 2)
    traj = simulate(eta, ring_env, G_NL, 0.05, 2)
    for f in (rate_observable(ring_env.grid, G_NL), conductance_rate_observable(ring_env, G_NL)):
        add = additive_functional(traj, sine(1, 1), f, 1.0, nonlinear_tables)
        assert bg_statistic(traj, sine(1, 1), f, 1.0, nonlinear_tables) == add.difference


def test_observable_centering_and_slope(ring_env, nonlinear_tables):
    f = conductance_rate_observable(ring_env, G_NL)
    assert f.centering(1.0, nonlinear_tables) == pytest.approx(nonlinear_tables.phi(1.0), rel=1e-12)
    wbar = ring_env.conductances[:, 0].mean()
    assert f.slope(1.0, nonlinear_tables) == pytest.approx(wbar * nonlinear_tables.phi_prime(1.0), rel=1e-6)
    with pytest.raises(UsageError):
        LocalObservable("wide", np.ones(4), G_NL, radius=1)


def test_replacement_linear_constant(linear_tables):
    grid = TorusGrid(1, 16)
    assert replacement_value(np.full(grid.n_sites, 3), grid, 2, linear_tables) == pytest.approx(0.0, abs=1e-14)


def test_replacement_spike(nonlinear_tables):
    grid = TorusGrid(1, 8)
    eta = np.zeros(grid.n_sites, dtype=np.int64)
    eta[5] = 3
    l = 1
    direct = 0.0
    for x in range(grid.n_sites):
        box = [(x + k) % grid.n_sites for k in range(-l, l + 1)]
        gm = np.mean(G_NL(eta[box]))
        direct += abs(gm - nonlinear_tables.phi(eta[box].mean()))
    assert replacement_value(eta, grid, l, nonlinear_tables) == pytest.approx(direct / grid.N, rel=1e-12)


def test_replacement_statistic_time_integral(nonlinear_tables):
    grid = TorusGrid(1, 8)
    env = sample_environment(IidTwoPoint(1.0, 2.0, 0.5), grid, 1)
    eta = sample_equilibrium(nonlinear_tables, 1.0, grid, 1)
    traj = simulate(eta, env, G_NL, 0.01, 1)
    l = 1
    cur, t_prev, total = traj.initial.copy(), 0.0, 0.0
    for t, x, y in zip(np.append(traj.times, traj.T), np.append(traj.sources, -1), np.append(traj.destinations, -1)):
        total += (t - t_prev) * replacement_value(cur, grid, l, nonlinear_tables)
        t_prev = t
        if x >= 0:
            cur[x] -= 1
            cur[y] += 1
    assert replacement_statistic(traj, 1 / 8, nonlinear_tables) == pytest.approx(total, rel=1e-9)
    with pytest.raises(UsageError):
        replacement_statistic(traj, 0.01, nonlinear_tables)
