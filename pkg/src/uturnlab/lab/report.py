"""Experiment reports: config echo, tolerance checks, CSV tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..rng import SCHEME

__all__ = ["Table", "Check", "ExperimentReport", "jsonable"]

TIMING_KEYS = ("wall_clock_s",)


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


@dataclass
class Table:
    """Rectangular table with a fixed header; first column is always ``seed``."""

    columns: list[str]
    rows: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        if not self.columns or self.columns[0] != "seed":
            raise ValueError("tables must start with a seed column")

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} cells, table has {len(self.columns)} columns")
        self.rows.append(row)

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_cell(v) for v in row])


@dataclass
class Check:
    passed: bool
    value: float
    threshold: float
    comparison: str
    detail: str = ""

    def line(self, name: str) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {name}: {self.value:.6g} {self.comparison} {self.threshold:.6g} {self.detail}".rstrip()


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    seed: int
    summary: dict = field(default_factory=dict)
    checks: dict[str, Check] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    threads: int = 1
    headline: str = ""

    def check(self, name: str, value: float, threshold: float, comparison: str, detail: str = "") -> bool:
        """Record ``value <comparison> threshold`` for ``comparison`` in ``<=, <, >=, >``."""
        ops = {"<=": np.less_equal, "<": np.less, ">=": np.greater_equal, ">": np.greater}
        passed = bool(ops[comparison](value, threshold))
        self.checks[name] = Check(passed, float(value), float(threshold), comparison, detail)
        return passed

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def lines(self) -> list[str]:
        return [c.line(n) for n, c in self.checks.items()]

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "experiment": self.experiment,
            "config": self.config,
            "seed": self.seed,
            "rng_scheme": SCHEME,
            "passed": self.passed,
            "checks": {
                n: {"passed": c.passed, "value": c.value, "threshold": c.threshold,
                    "comparison": c.comparison, "detail": c.detail}
                for n, c in self.checks.items()
            },
            "summary": self.summary,
            "tables": sorted(self.tables),
        }
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
            out["threads"] = self.threads
        return jsonable(out)

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True, allow_nan=False)

    def write(self, outdir) -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(self.to_json() + "\n", encoding="utf-8")
        for name, table in self.tables.items():
            table.write_csv(outdir / f"{name}.csv")
        return outdir
