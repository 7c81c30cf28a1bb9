"""Verification reports: one record per check, stable JSON, merged CSV tables."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence

FIELDS = ("name", "paper_ref", "status", "measured_value", "tolerance", "order_estimate")
PASSING = ("passed", "expected-fail: passed")


class ReportSchemaError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class CheckResult:
    name: str
    paper_ref: str
    status: str
    measured_value: Optional[float]
    tolerance: Optional[float]
    order_estimate: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.status in PASSING


def decide(name, paper_ref, passed: bool, measured, tolerance, order=None,
           expect_fail: bool = False) -> CheckResult:
    """Build a result; negative controls pass when the underlying check fails."""
    if expect_fail:
        status = "expected-fail: passed" if not passed else "expected-fail: failed"
    else:
        status = "passed" if passed else "failed"
    return CheckResult(name, paper_ref, status, _num(measured), _num(tolerance), _num(order))


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def order_from_ratio(ratio: float) -> Optional[float]:
    if ratio is None or not (ratio > 0) or not math.isfinite(ratio):
        return None
    return math.log2(ratio)


def report_json(scenario: str, results: Sequence[CheckResult]) -> str:
    doc = {"scenario": scenario, "checks": [asdict(r) for r in results]}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def load_report(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportSchemaError(path, f"cannot read report ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("checks"), list):
        raise ReportSchemaError(path, "missing 'checks' list")
    for i, c in enumerate(doc["checks"]):
        if not isinstance(c, dict) or set(c) != set(FIELDS):
            raise ReportSchemaError(path, f"check {i} does not have fields {list(FIELDS)}")
    return doc


def merge_reports(paths: Iterable[str]) -> List[dict]:
    """Rows sorted by name; duplicate names get ``#2``, ``#3``... in sort order."""
    rows = []
    for path in paths:
        doc = load_report(path)
        for c in doc["checks"]:
            rows.append(dict(c))
    rows.sort(key=lambda r: (r["name"], json.dumps(r, sort_keys=True)))
    seen = {}
    for r in rows:
        k = seen.get(r["name"], 0) + 1
        seen[r["name"]] = k
        if k > 1:
            r["name"] = f"{r['name']}#{k}"
    return rows


SUMMARY_COLUMNS = ("name", "status", "measured_value", "tolerance", "order_estimate")


def summary_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow(["" if r[c] is None else (format(r[c], ".6g") if isinstance(r[c], float) else r[c])
                    for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def summary_text(rows: Sequence[dict]) -> str:
    def cell(v):
        if v is None:
            return "-"
        return format(v, ".3e") if isinstance(v, float) else str(v)

    table = [list(SUMMARY_COLUMNS)] + [[cell(r[c]) for c in SUMMARY_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(SUMMARY_COLUMNS))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table]
    return "\n".join(lines) + "\n"
