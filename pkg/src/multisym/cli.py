"""Command line entry point: ``multisym validate|run|report``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

from . import scenario
from .report import ReportSchemaError, merge_reports, report_json, summary_csv, summary_text


def cmd_validate(args) -> int:
    status = 0
    for path in args.files:
        try:
            doc, text = scenario.load(path)
            diags = scenario.validate(doc, text)
        except scenario.ScenarioError as exc:
            diags = exc.diagnostics
        if diags:
            status = 1
            for d in diags:
                print(f"{path}: {d}", file=sys.stderr)
        else:
            print(f"{path}: ok")
    return status


def cmd_run(args) -> int:
    try:
        doc, text = scenario.load(args.file)
    except scenario.ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"{args.file}: {d}", file=sys.stderr)
        return 2
    diags = scenario.validate(doc, text)
    if diags:
        for d in diags:
            print(f"{args.file}: {d}", file=sys.stderr)
        return 2
    out = args.out or os.path.join("runs", doc["name"])
    os.makedirs(out, exist_ok=True)
    started = time.time()
    results = scenario.run(doc, out)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report_json(doc["name"], results))
    meta = {
        "scenario": doc["name"],
        "source": os.path.abspath(args.file),
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "seconds": round(time.time() - started, 3),
    }
    with open(os.path.join(out, "run_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in results:
        val = "-" if r.measured_value is None else f"{r.measured_value:.3e}"
        print(f"[{r.status}] {r.name}: {val}")
    ok = all(r.ok for r in results)
    print(f"{doc['name']}: {'all checks passed' if ok else 'some checks failed'} -> {out}")
    return 0 if ok else 1


def cmd_report(args) -> int:
    try:
        rows = merge_reports(args.files)
    except ReportSchemaError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    csv_text = summary_csv(rows)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(csv_text)
    sys.stdout.write(summary_text(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multisym", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="statically check scenario files")
    v.add_argument("files", nargs="+")
    v.set_defaults(func=cmd_validate)
    r = sub.add_parser("run", help="run a scenario and write report.json")
    r.add_argument("file")
    r.add_argument("--out", help="output directory (default runs/<scenario name>)")
    r.set_defaults(func=cmd_run)
    m = sub.add_parser("report", help="merge reports into one summary table")
    m.add_argument("files", nargs="*")
    m.add_argument("--csv", help="also write the merged table as CSV")
    m.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
