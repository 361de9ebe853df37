import json

import numpy as np
import pytest

from zrp.errors import UsageError
from zrp.report import (Criterion, ExperimentReport, Row, emit_report, evaluate, load_report, read_rows,
                        recompute_matches)


def _rows(stat, values_by_N, experiment="x"):
    return [Row(experiment, N, t, 0, stat, v) for N, vals in values_by_N.items() for t, v in enumerate(vals)]


def test_empty_report(tmp_path):
    rep = ExperimentReport("hydro", {})
    rep.evaluate()
    emit_report(rep, tmp_path)
    assert (tmp_path / "rows.csv").read_text() == "experiment,N,trial,seed,statistic,value\n"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_rows"] == 0 and summary["passed"]


def test_emission_is_byte_stable(tmp_path):
    rows = _rows("s", {8: [0.1, 1 / 3, np.pi], 16: [1e-300, -2.5, float("inf")]})
    rep = ExperimentReport("x", {"a": 1}, rows, [Criterion("c", "strictly_decreasing", "s")])
    rep.evaluate()
    emit_report(rep, tmp_path / "a")
    emit_report(rep, tmp_path / "b")
    for name in ("rows.csv", "summary.json", "digest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_rows_round_trip_exactly(tmp_path):
    rng = np.random.default_rng(0)
    rows = _rows("s", {4: list(rng.standard_normal(20))})
    rep = ExperimentReport("x", {}, rows)
    rep.evaluate()
    emit_report(rep, tmp_path)
    assert read_rows(tmp_path / "rows.csv") == rows


def test_verdicts_recompute_and_tamper(tmp_path):
    rows = _rows("err", {8: [0.3, 0.31], 16: [0.2, 0.21], 32: [0.1, 0.12]})
    rep = ExperimentReport("x", {}, rows, [Criterion("dec", "strictly_decreasing", "err"),
                                            Criterion("small", "below", "err", N=32, threshold=0.05)])
    rep.evaluate()
    emit_report(rep, tmp_path)
    back, agree = recompute_matches(tmp_path)
    assert agree and [r.passed for r in back.results] == [True, False]
    text = (tmp_path / "rows.csv").read_text().replace("0.12\n", "0.9\n")
    (tmp_path / "rows.csv").write_text(text)
    assert not recompute_matches(tmp_path)[1]
    assert not load_report(tmp_path).results[0].passed


def test_rules():
    rows = _rows("m", {8: list(np.linspace(-1, 1, 41))}) + [Row("x", 8, -1, 0, "oracle", 0.0)]
    ok = evaluate(Criterion("m", "mean_within_se", "m", N=8, target_statistic="oracle"), rows)
    assert ok.passed and ok.observed["trials"] == 41
    far = evaluate(Criterion("m", "mean_within_se", "m", N=8, target=1.0), rows)
    assert not far.passed
    rel = evaluate(Criterion("m", "mean_within_se", "m", N=8, target=1.0, rel=1.0), rows)
    assert rel.passed
    assert evaluate(Criterion("m", "mean_at_least", "m", N=8, target=0.1), rows).passed
    sm = _rows("b", {32: [1.0, -1.0], 128: [0.5, -0.6]})
    assert evaluate(Criterion("r", "second_moment_ratio_below", "b", N_low=32, N_high=128, threshold=0.5), sm).passed
    assert evaluate(Criterion("z", "all_equal", "b", value=1.0), _rows("b", {4: [1.0, 1.0]})).passed
    bf = _rows("k", {2: [1.0], 3: [0.9], 4: [1.01]})
    assert not evaluate(Criterion("k", "bounded_by_first", "k", threshold=1.0), bf).passed
    sd = _rows("a", {8: [1.0, 2.0], 16: [1.0, 1.5]})
    assert evaluate(Criterion("a", "std_decreasing", "a"), sd).passed
    with pytest.raises(UsageError):
        evaluate(Criterion("q", "vibes", "a"), sd)


def test_missing_rows_fail():
    assert not evaluate(Criterion("m", "max_abs_below", "nothing", threshold=1.0), []).passed
    assert not evaluate(Criterion("m", "strictly_decreasing", "nothing"), []).passed


def test_diagnostics_do_not_gate():
    rows = _rows("s", {8: [1.0]})
    rep = ExperimentReport("x", {}, rows, [Criterion("d", "below", "s", threshold=0.0, asserted=False)])
    rep.evaluate()
    assert rep.passed and not rep.results[0].passed
    rep.status = "failed"
    assert not rep.passed


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report(ExperimentReport("x", {}), blocker / "sub")
