"""Experiment reports: rows, criteria evaluated from rows, and byte-stable output.

A report is a flat table of rows ``(experiment, N, trial, seed, statistic,
value)``; ``trial = -1`` marks a per-N aggregate. Every criterion is a rule
over these rows, so ``zrp report <dir>`` can recompute each verdict from
``rows.csv`` alone.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError

ROW_FIELDS = ("experiment", "N", "trial", "seed", "statistic", "value")


@dataclass(frozen=True)
class Row:
    experiment: str
    N: int
    trial: int
    seed: int
    statistic: str
    value: float

    def as_list(self) -> list:
        return [self.experiment, int(self.N), int(self.trial), int(self.seed), self.statistic, _fmt(self.value)]


def _fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


@dataclass(frozen=True)
class Criterion:
    """A named rule over rows; ``acceptance`` ties it to an acceptance item."""

    name: str
    rule: str
    statistic: str
    acceptance: str = ""
    asserted: bool = True
    N: int | None = None
    N_low: int | None = None
    N_high: int | None = None
    threshold: float | None = None
    target: float | None = None
    target_statistic: str | None = None
    k_se: float = 3.0
    rel: float = 0.0
    value: float | None = None
    description: str = ""

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "Criterion":
        return cls(**data)


@dataclass(frozen=True)
class CriterionResult:
    criterion: Criterion
    passed: bool
    observed: dict

    def to_dict(self) -> dict:
        return {"name": self.criterion.name, "acceptance": self.criterion.acceptance,
                "asserted": self.criterion.asserted, "passed": self.passed,
                "rule": self.criterion.rule, "observed": self.observed, "criterion": self.criterion.to_dict()}


def _values(rows, stat, N=None, aggregate=None) -> np.ndarray:
    out = [r.value for r in rows if r.statistic == stat and (N is None or r.N == N)
           and (aggregate is None or (r.trial < 0) == aggregate)]
    return np.array(out, dtype=float)


def _by_N(rows, stat, aggregate=None) -> tuple[list[int], list[np.ndarray]]:
    Ns = sorted({r.N for r in rows if r.statistic == stat})
    return Ns, [_values(rows, stat, N, aggregate) for N in Ns]


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("inf")
    return float(np.mean(v)), se


def _target(c: Criterion, rows) -> float:
    if c.target_statistic is not None:
        t = _values(rows, c.target_statistic, c.N)
        if t.size != 1:
            raise UsageError(f"criterion {c.name}: expected one {c.target_statistic} row, found {t.size}")
        return float(t[0])
    return float(c.target if c.target is not None else 0.0)


def _f(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def evaluate(c: Criterion, rows) -> CriterionResult:
    rule = c.rule
    if rule == "max_abs_below":
        v = _values(rows, c.statistic, c.N)
        obs = float(np.max(np.abs(v))) if v.size else float("nan")
        return CriterionResult(c, bool(v.size) and obs <= c.threshold, {"max_abs": _f(obs), "count": int(v.size)})
    if rule == "below":
        v = _values(rows, c.statistic, c.N)
        obs = float(np.mean(v)) if v.size else float("nan")
        return CriterionResult(c, bool(v.size) and obs < c.threshold, {"value": _f(obs)})
    if rule == "strictly_decreasing":
        Ns, vals = _by_N(rows, c.statistic)
        means = [float(np.mean(v)) for v in vals]
        ok = len(means) >= 2 and all(b < a for a, b in zip(means, means[1:]))
        return CriterionResult(c, ok, {"N": Ns, "values": [_f(m) for m in means]})
    if rule == "std_decreasing":
        Ns, vals = _by_N(rows, c.statistic)
        stds = [float(np.std(v, ddof=1)) if v.size > 1 else float("nan") for v in vals]
        ok = len(stds) >= 2 and all(b < a for a, b in zip(stds, stds[1:]))
        return CriterionResult(c, ok, {"N": Ns, "std": [_f(s) for s in stds]})
    if rule in ("mean_within_se", "mean_at_least"):
        v = _values(rows, c.statistic, c.N, aggregate=False)
        mean, se = _mean_se(v)
        target = _target(c, rows)
        if rule == "mean_within_se":
            band = c.k_se * se + c.rel * abs(target)
            ok = v.size > 1 and abs(mean - target) <= band
        else:
            band = c.k_se * se
            ok = v.size > 1 and mean + band >= target
        return CriterionResult(c, bool(ok), {"mean": _f(mean), "se": _f(se), "target": _f(target),
                                             "band": _f(band), "trials": int(v.size)})
    if rule == "second_moment_ratio_below":
        lo = _values(rows, c.statistic, c.N_low, aggregate=False)
        hi = _values(rows, c.statistic, c.N_high, aggregate=False)
        m_lo = float(np.mean(lo * lo)) if lo.size else float("nan")
        m_hi = float(np.mean(hi * hi)) if hi.size else float("nan")
        ratio = m_hi / m_lo if m_lo > 0 else float("nan")
        ok = bool(lo.size and hi.size) and m_lo > 0 and ratio < c.threshold
        return CriterionResult(c, bool(ok), {"second_moment_low": _f(m_lo), "second_moment_high": _f(m_hi),
                                             "ratio": _f(ratio)})
    if rule == "all_equal":
        v = _values(rows, c.statistic, c.N)
        ok = bool(v.size) and bool(np.all(v == c.value))
        return CriterionResult(c, ok, {"count": int(v.size), "mismatches": int(np.sum(v != c.value))})
    if rule == "bounded_by_first":
        Ns, vals = _by_N(rows, c.statistic)
        means = [float(np.mean(v)) for v in vals]
        ok = len(means) >= 2 and max(means[1:]) <= c.threshold * means[0]
        return CriterionResult(c, ok, {"N": Ns, "values": [_f(m) for m in means]})
    raise UsageError(f"unknown criterion rule {rule!r}")


# -- the report object and its files -----------------------------------------------


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    rows: list = field(default_factory=list)
    criteria: list = field(default_factory=list)
    results: list = field(default_factory=list)
    status: str = "complete"
    error: str | None = None
    versions: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def evaluate(self) -> None:
        self.results = [evaluate(c, self.rows) for c in self.criteria]

    @property
    def passed(self) -> bool:
        return self.status == "complete" and all(r.passed for r in self.results if r.criterion.asserted)

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "status": self.status,
            "error": self.error,
            "passed": self.passed,
            "n_rows": len(self.rows),
            "criteria": [r.to_dict() for r in self.results],
            "config": self.config,
            "versions": self.versions,
        }


def rows_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for r in rows:
        writer.writerow(r.as_list())
    return buf.getvalue()


def read_rows(path) -> list[Row]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        return [Row(r["experiment"], int(r["N"]), int(r["trial"]), int(r["seed"]), r["statistic"],
                    float(r["value"])) for r in reader]


def digest_text(report: ExperimentReport) -> str:
    lines = [f"experiment: {report.experiment}", f"status: {report.status}"]
    if report.error:
        lines.append(f"error: {report.error}")
    lines.append(f"rows: {len(report.rows)}")
    lines.append(f"wall time: {report.wall_time:.2f} s")
    for res in report.results:
        tag = "PASS" if res.passed else "FAIL"
        kind = "" if res.criterion.asserted else " (diagnostic)"
        acc = f"[{res.criterion.acceptance}] " if res.criterion.acceptance else ""
        lines.append(f"{tag} {acc}{res.criterion.name}{kind}: {json.dumps(res.observed, sort_keys=True)}")
    lines.append(f"overall: {'PASS' if report.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json", "txt")) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if "csv" in formats:
        p = out / "rows.csv"
        p.write_text(rows_csv(report.rows))
        written.append(p)
    if "json" in formats:
        p = out / "summary.json"
        p.write_text(json.dumps(report.summary(), sort_keys=True, indent=2, allow_nan=False) + "\n")
        written.append(p)
    if "txt" in formats:
        p = out / "digest.txt"
        p.write_text(digest_text(report))
        written.append(p)
    return written


def load_report(out_dir) -> ExperimentReport:
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text())
    rows = read_rows(out / "rows.csv")
    criteria = [Criterion.from_dict(c["criterion"]) for c in summary.get("criteria", [])]
    rep = ExperimentReport(summary["experiment"], summary.get("config", {}), rows, criteria,
                           status=summary.get("status", "complete"), error=summary.get("error"),
                           versions=summary.get("versions", {}))
    rep.evaluate()
    return rep


def recompute_matches(out_dir) -> tuple[ExperimentReport, bool]:
    """Re-evaluate every criterion from ``rows.csv``; report whether the stored verdicts agree."""
    summary = json.loads((Path(out_dir) / "summary.json").read_text())
    rep = load_report(out_dir)
    stored = [(c["name"], c["passed"]) for c in summary.get("criteria", [])]
    fresh = [(r.criterion.name, r.passed) for r in rep.results]
    return rep, stored == fresh
