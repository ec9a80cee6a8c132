"""Experiment reports: a schema-versioned, JSON-serializable record of one CLI run."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
CSV_HEADER = ("run", "system", "iteration", "primary_resid", "dual_resid")


class ReportIOError(OSError):
    pass


@dataclass
class SolveRecord:
    """One dual solve.  Curves hold relative residuals for iterations ``0..iterations``."""

    run: int
    system: str
    iterations: int
    reason: str
    basis_dim: int = 0
    basis_updated: bool = False
    primary_resid: list = field(default_factory=list)
    dual_resid: list = field(default_factory=list)


@dataclass
class ExperimentReport:
    kind: str
    meta: dict = field(default_factory=dict)
    solves: list = field(default_factory=list)
    # principal-angle cosines, one entry per table column
    angles: list = field(default_factory=list)
    # kind-specific summaries (IRKA steps, comparison totals, ...)
    results: dict = field(default_factory=dict)
    notices: list = field(default_factory=list)
    timing: dict | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.timing is None:
            del d["timing"]
        return _plain(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        d = dict(d)
        d["solves"] = [SolveRecord(**s) for s in d.get("solves", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True) + "\n"

    @property
    def total_iterations(self) -> int:
        return sum(s.iterations for s in self.solves)


def _plain(obj):
    """Convert numpy scalars/arrays and complex numbers to JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def export_report(report: ExperimentReport, path, fmt: str = "json") -> None:
    """Write ``report`` as JSON or as CSV convergence curves.

    The CSV has one row per iteration ``1..iterations`` of every solve.
    """
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(report.to_json(), encoding="utf-8")
        elif fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_HEADER)
                for s in report.solves:
                    for i in range(1, s.iterations + 1):
                        w.writerow((s.run, s.system, i, repr(float(s.primary_resid[i])),
                                    repr(float(s.dual_resid[i]))))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {path}: {exc}") from exc


def load_report(path) -> ExperimentReport:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ReportIOError(f"cannot read report {path}: {exc}") from exc
    return ExperimentReport.from_dict(json.loads(text))


def load_curves(path) -> list[dict]:
    """Rows of a CSV export as dicts with typed values."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{"run": int(r["run"]), "system": r["system"], "iteration": int(r["iteration"]),
             "primary_resid": float(r["primary_resid"]), "dual_resid": float(r["dual_resid"])}
            for r in rows]
