import json
from importlib.resources import files

import pytest

from multisym.cli import main
from multisym.report import (
    FIELDS,
    CheckResult,
    ReportSchemaError,
    decide,
    merge_reports,
    order_from_ratio,
    report_json,
    summary_csv,
)

SCENARIOS = files("multisym") / "scenarios"


def scenario(name):
    return str(SCENARIOS / f"{name}.json")


def write_report(path, names):
    results = [CheckResult(n, "ref", "passed", 1.0, 2.0, None) for n in names]
    path.write_text(report_json("s", results))
    return str(path)


def test_decide_statuses():
    assert decide("a", "r", True, 1, 2).status == "passed"
    assert decide("a", "r", False, 1, 2).status == "failed"
    assert decide("a", "r", False, 1, 2, expect_fail=True).status == "expected-fail: passed"
    assert decide("a", "r", True, 1, 2, expect_fail=True).status == "expected-fail: failed"
    assert decide("a", "r", True, float("nan"), 2).measured_value is None
    assert order_from_ratio(4.0) == pytest.approx(2.0)
    assert order_from_ratio(0.0) is None


def test_report_json_is_sorted_and_complete():
    doc = json.loads(report_json("s", [decide("a", "r", True, 1, 2, 2.0)]))
    assert set(doc["checks"][0]) == set(FIELDS)


def test_merge_sorts_and_disambiguates(tmp_path):
    a = write_report(tmp_path / "a.json", ["zeta", "alpha"])
    b = write_report(tmp_path / "b.json", ["alpha", "mid"])
    names = [r["name"] for r in merge_reports([a, b])]
    assert names == ["alpha", "alpha#2", "mid", "zeta"]
    assert [r["name"] for r in merge_reports([b, a])] == names


def test_empty_merge_is_header_only():
    assert summary_csv(merge_reports([])) == "name,status,measured_value,tolerance,order_estimate\n"


def test_schema_mismatch_names_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"checks": [{"name": "x"}]}))
    with pytest.raises(ReportSchemaError) as err:
        merge_reports([str(bad)])
    assert "bad.json" in str(err.value)


def test_report_command(tmp_path, capsys):
    a = write_report(tmp_path / "a.json", ["b", "a"])
    out = tmp_path / "sum.csv"
    assert main(["report", a, "--csv", str(out)]) == 0
    assert out.read_text().splitlines()[1].startswith("a,passed")
    assert main(["report", str(tmp_path / "missing.json")]) == 2


def test_validate_bundled(capsys):
    assert main(["validate", scenario("oscillator")]) == 0
    assert "ok" in capsys.readouterr().out


def broken(tmp_path, **edits):
    doc = json.loads(open(scenario("oscillator")).read())
    doc["system"].update(edits.get("system", {}))
    if "check" in edits:
        doc["checks"][0].update(edits["check"])
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(doc, indent=1))
    return str(path)


def test_validate_misspelled_coordinate(tmp_path, capsys):
    path = broken(tmp_path, system={"hamiltonian": "(pp**2 + q**2)/2"})
    assert main(["validate", path]) == 1
    err = capsys.readouterr().err
    assert "'pp'" in err and "line" in err


def test_validate_negative_tolerance(tmp_path, capsys):
    path = broken(tmp_path, check={"tolerance": -1e-5})
    assert main(["validate", path]) == 1
    assert "tolerance" in capsys.readouterr().err


def test_run_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) != 0
    assert "nope.json" in capsys.readouterr().err


def test_run_conservation_scenario(tmp_path):
    assert main(["run", scenario("kg_conservation"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    orders = {c["name"]: c["order_estimate"] for c in doc["checks"]}
    assert abs(orders["pseudobracket_momentum_order"] - 2) < 0.2
    assert (tmp_path / "run_meta.json").exists()
    assert (tmp_path / "pseudobracket_momentum_order.series.csv").exists()


def test_run_corrupted_control(tmp_path):
    assert main(["run", scenario("kg_corrupted_control"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    status = {c["name"]: c["status"] for c in doc["checks"]}
    assert status["corrupted_pseudobracket_converges"] == "expected-fail: passed"


def test_runs_are_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        main(["run", scenario("oscillator"), "--out", str(d)])
        outs.append((d / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_failing_scenario_exit_code(tmp_path):
    assert main(["run", scenario("kg_momentum_homology"), "--out", str(tmp_path)]) == 1
