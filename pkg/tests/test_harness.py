import json
import math

import numpy as np
import pytest

from zrp.errors import ConfigurationError
from zrp.harness import ExperimentConfig, derive_seed, load_config, map_trials, run_experiment
from zrp.report import rows_csv

BASE = {"d": 1, "g": {"kind": "linear", "slope": 1.0},
        "environment": {"kind": "iid_two_point", "a_low": 1.0, "a_high": 2.0, "p": 0.5}, "seed": 5}


def cfg(**kw):
    return ExperimentConfig.from_dict({**BASE, **kw})


def test_seed_derivation():
    seeds = {derive_seed(1, N, t, s) for N in (8, 16) for t in range(50) for s in (1, 2, 3)}
    assert len(seeds) == 300
    assert derive_seed(1, 8, 0, 1) == derive_seed(1, 8, 0, 1)
    assert all(0 <= s < 2**63 for s in seeds)


def _square(ctx, t):
    return ctx * t * t


def test_map_trials_order():
    assert map_trials(_square, 3, range(10), workers=2) == [3 * t * t for t in range(10)]


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        cfg(experiment="hydro", N=[64, 32], T=0.01, trials=2, rho0={"const": 1.0})
    with pytest.raises(ConfigurationError):
        cfg(experiment="teleport", N=[8])
    with pytest.raises(ConfigurationError):
        cfg(experiment="fluctuation", N=[8], T=0.01, trials=2)
    with pytest.raises(ConfigurationError):
        cfg(experiment="hydro", N=[8], T=-1.0, trials=2, rho0={"const": 1.0})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(bad)


def test_overrides_and_echo():
    c = cfg(experiment="homogenize", N=[8], output="somewhere")
    c2 = c.with_overrides(seed=9)
    assert c2.seed == 9 and c.seed == 5
    assert "output" not in c.echo()


def test_constant_profile_is_sampling_noise():
    trials = 40
    c = cfg(experiment="hydro", N=[32, 64], T=0.02, trials=trials, rho0={"const": 1.0},
            params={"smoothing_eps": 0.05, "pde_dx": 1 / 64})
    rep = run_experiment(c)
    assert rep.status == "complete"
    for N in (32, 64):
        box = 2 * math.floor(0.05 * N) + 1
        noise = math.sqrt(1.0 / (trials * box))
        err = [r.value for r in rep.rows if r.statistic == "l2_error" and r.N == N][0]
        assert 0.6 * noise < err < 1.4 * noise


def test_density_observable_zero_in_harness():
    c = cfg(experiment="boltzmann_gibbs", N=[8, 16], T=0.02, trials=5, rho=1.0,
            params={"G": {"terms": [{"k": [1], "sin": 1.0}]}, "observables": ["density"]})
    rep = run_experiment(c)
    vals = [r.value for r in rep.rows if r.statistic == "bg_density"]
    assert len(vals) == 10 and all(v == 0.0 for v in vals) and rep.passed


def test_static_covariance_linear_rate():
    c = cfg(experiment="fluctuation", N=[16], T=0.005, trials=300, rho=1.0,
            params={"static_pairs": [[{"terms": [{"k": [1], "sin": 1.0}]}, {"terms": [{"k": [1], "sin": 1.0}]}]],
                    "martingale_G": {"terms": [{"k": [1], "sin": 1.0}]}, "lag_time": 0.005})
    rep = run_experiment(c)
    res = {r.criterion.name: r for r in rep.results}
    assert res["static_covariance_1"].passed


@pytest.mark.parametrize("kind", ["fluctuation", "boltzmann_gibbs", "homogenize"])
def test_worker_count_does_not_change_bytes(kind):
    extra = {
        "fluctuation": dict(T=0.005, trials=6, rho=1.0,
                            params={"static_pairs": [[{"terms": [{"k": [1], "sin": 1.0}]},
                                                      {"terms": [{"k": [1], "cos": 1.0}]}]],
                                    "martingale_G": {"terms": [{"k": [1], "sin": 1.0}]}}),
        "boltzmann_gibbs": dict(T=0.005, trials=6, rho=1.0, g={"kind": "table", "values": [0.0, 1.0, 1.5, 2.0]},
                                params={"G": {"terms": [{"k": [1], "sin": 1.0}]}}),
        "homogenize": dict(trials=4),
    }[kind]
    c = cfg(experiment=kind, N=[8, 16], **extra)
    out = []
    for workers in (1, 3):
        rep = run_experiment(c, workers=workers)
        out.append((rows_csv(rep.rows), json.dumps(rep.summary(), sort_keys=True)))
    assert out[0] == out[1]


def test_module_errors_mark_failure():
    # a profile above the fugacity table range makes the sampler refuse
    c = cfg(experiment="hydro", N=[8], T=0.01, trials=2, rho0={"const": 1e9})
    rep = run_experiment(c)
    assert rep.status == "failed" and rep.error and not rep.passed
