import math

import numpy as np
import pytest

from zrp.errors import ConfigurationError, UsageError
from zrp.functions import cosine
from zrp.pde import DensityField, PhiInterpolant, semigroup_apply, solve_hydrodynamic, weak_residual

LIN = PhiInterpolant.linear()


def test_constant_is_stationary(nonlinear_tables):
    F = solve_hydrodynamic(lambda u: np.full(u.shape[0], 1.2), [[1.5]], nonlinear_tables, 0.05, 1 / 64)
    assert np.allclose(F.values, 1.2, atol=1e-12)


def test_exact_heat_solution():
    a, T = 0.9, 0.1
    rho0 = cosine(1, 1, amplitude=0.5, constant=1.0)
    F = solve_hydrodynamic(rho0, [[a]], LIN, T, 1 / 256)
    u = F.grid.coordinates()[:, 0]
    exact = 1 + 0.5 * math.exp(-a * math.pi**2 * T) * np.cos(np.pi * u)
    assert np.max(np.abs(F.final - exact)) < 1e-3
    assert F.mass_drift() < 1e-10
    assert F.times[-1] == pytest.approx(T, rel=1e-12)


def test_nonlinear_mass_and_positivity(nonlinear_tables):
    rho0 = cosine(2, [1, 1], amplitude=0.6, constant=1.0)
    F = solve_hydrodynamic(rho0, [[1.2, 0.3], [0.3, 0.8]], nonlinear_tables, 0.02, 1 / 32, d=2)
    assert F.mass_drift() < 1e-10
    assert F.values.min() > 0.3
    assert np.ptp(F.final) < np.ptp(F.values[0])


def test_cfl_violation():
    with pytest.raises(ConfigurationError):
        solve_hydrodynamic(cosine(1, 1, 0.5, 1.0), [[1.0]], LIN, 0.01, 1 / 64, dt=1e-3)


def test_bad_grid_spacing():
    with pytest.raises(ConfigurationError):
        solve_hydrodynamic(cosine(1, 1, 0.5, 1.0), [[1.0]], LIN, 0.01, 0.3)


def test_weak_residual_constant_field():
    F = solve_hydrodynamic(lambda u: np.full(u.shape[0], 0.7), [[1.0]], LIN, 0.05, 1 / 32, record_every=1)
    assert weak_residual(F, cosine(1, 1), lambda u: np.full(u.shape[0], 0.7), LIN, [[1.0]]) < 1e-12


def test_weak_residual_refinement_order():
    rho0 = cosine(1, 1, amplitude=0.5, constant=1.0)
    res = []
    for N in (32, 64, 128):
        F = solve_hydrodynamic(rho0, [[1.0]], LIN, 0.1, 1 / N, record_every=1)
        res.append(weak_residual(F, cosine(1, 1), rho0, LIN, [[1.0]]))
    assert res[0] > res[1] > res[2]
    assert math.log2(res[1] / res[2]) >= 1.0


def test_wrong_field_is_detected():
    rho0 = cosine(1, 1, amplitude=0.5, constant=1.0)
    G = cosine(1, 1, amplitude=1.0, constant=1.0)
    F = solve_hydrodynamic(rho0, [[1.0]], LIN, 0.1, 1 / 64, record_every=1)
    wrong = DensityField(F.grid, F.times, F.values + 0.1, F.dt, F.masses, F.bound)
    assert weak_residual(wrong, G, rho0, LIN, [[1.0]]) > 100 * weak_residual(F, G, rho0, LIN, [[1.0]])


def test_semigroup_identity_and_decay():
    G = cosine(1, 1)
    u = np.linspace(-1, 1, 11)
    assert np.allclose(semigroup_apply(G, 0.0, 2.0, [[1.0]])(u), G(u))
    assert np.allclose(semigroup_apply(G, 1.0, 1.0, [[1.0]])(u), math.exp(-math.pi**2) * np.cos(np.pi * u))
    with pytest.raises(UsageError):
        semigroup_apply(lambda x: x, 1.0, 1.0, [[1.0]])


def test_semigroup_matches_scheme():
    a, t = 1.1, 0.01
    G = cosine(1, 1, amplitude=0.5)
    F = solve_hydrodynamic(lambda u: 1.0 + G(u), [[a]], LIN, t, 1 / 512)
    S = semigroup_apply(G, t, 1.0, [[a]])
    assert np.max(np.abs(F.final - 1.0 - S(F.grid.coordinates()))) < 1e-5


def test_phi_interpolant(nonlinear_tables):
    phi = PhiInterpolant.from_tables(nonlinear_tables, 4.0)
    for rho in (0.3, 1.0, 2.5):
        assert float(phi(rho)) == pytest.approx(nonlinear_tables.phi(rho), rel=1e-6)
        assert float(phi.derivative(rho)) == pytest.approx(nonlinear_tables.phi_prime(rho), rel=1e-4)


def test_field_output(tmp_path):
    F = solve_hydrodynamic(cosine(1, 1, 0.5, 1.0), [[1.0]], LIN, 0.01, 1 / 8, n_records=3)
    F.write_csv(tmp_path / "f.csv")
    F.write_metadata(tmp_path / "f.json")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "t,coordinate_1,value"
    assert len(lines) == 1 + F.times.size * F.grid.n_sites
