import csv
import json
import os

import pytest

from gridmargin.cli import main

SWEEP_SPEC = {
    "load_configs": [
        {"label": "constP", "zip": {"c_p": 1.0, "c_q": 1.0}},
        {"label": "constI", "zip": {"b_p": 1.0, "b_q": 1.0}},
    ],
    "contingencies": ["trip-circuit"],
    "schedule": {"fine_step_mw": 5, "coarse_step_mw": 25, "max_total_mw": 50,
                 "ramp_mw_per_s": 25},
    "criterion": {"v_final": 0.6, "v_early": 0.45},
    "dt": 0.005,
    "tol_mw": 5,
    "settle_s": 60,
}


def _write_spec(tmp_path, spec=SWEEP_SPEC):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return str(path)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def test_validate_builtin_ok(capsys):
    assert main(["validate", "builtin:two-area"]) == 0
    assert "OK" in capsys.readouterr().out


def test_validate_bad_case_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "buses": [
        {"id": 1, "area": "a"}]}))  # no slack bus
    assert main(["validate", str(bad)]) == 2
    assert "slack" in capsys.readouterr().err


def test_missing_case_exits_4(capsys):
    assert main(["pcll", "/no/such/file.json"]) == 4
    assert "not found" in capsys.readouterr().err


def test_unknown_contingency_exits_2_and_lists_labels(capsys):
    code = main(["sol", "builtin:two-area", "--contingency", "bogus"])
    assert code == 2
    err = capsys.readouterr().err
    assert "scenario-A" in err and "scenario-B" in err


# ---------------------------------------------------------------------------
# pv-curve
# ---------------------------------------------------------------------------

def test_pv_curve_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["pv-curve", "builtin:twobus", "--out", str(out),
                 "--step", "20"]) == 0
    rows = list(csv.reader(open(out / "pv_bus2.csv")))
    assert rows[0] == ["P_MW", "V_pu"]
    p_vals = [float(r[0]) for r in rows[1:]]
    assert max(p_vals) == pytest.approx(500.0, rel=0.01)
    assert (out / "pv_metadata.json").exists()
    assert (out / "pv_timestamp.txt").exists()


# ---------------------------------------------------------------------------
# pcll / sol drivers
# ---------------------------------------------------------------------------

def test_pcll_flag_passthrough_and_artifacts(tmp_path):
    out = tmp_path / "out"
    code = main(["pcll", "builtin:twobus", "--contingency", "none",
                 "--out", str(out), "--fine-step", "5", "--coarse-step", "25",
                 "--max-stress", "50", "--ramp-rate", "25",
                 "--v-final", "0.6", "--v-early", "0.45",
                 "--dt", "0.005", "--settle", "60"])
    assert code == 0
    rows = list(csv.reader(open(out / "pcll_none_margin.csv")))
    assert rows[0] == ["scenario", "load_config", "method", "margin_MW",
                       "limiting_reason"]
    assert rows[1][2] == "PCLL"
    assert float(rows[1][3]) == pytest.approx(50.0)  # saturated at the cap
    meta = json.loads((out / "pcll_none_metadata.json").read_text())
    assert meta["schedule"]["fine_step_mw"] == 5.0
    assert meta["criterion"]["v_final"] == 0.6
    probes = list(csv.reader(open(out / "pcll_none_probes.csv")))
    levels = [float(r[0]) for r in probes[1:]]
    assert all(lv % 5.0 == 0.0 for lv in levels)


def test_sol_binary_search(tmp_path):
    out = tmp_path / "out"
    code = main(["sol", "builtin:twobus-2ckt", "--contingency",
                 "trip-circuit", "--binary-search", "--tol", "5",
                 "--out", str(out), "--fine-step", "5", "--coarse-step", "25",
                 "--max-stress", "200", "--v-final", "0.6",
                 "--v-early", "0.45", "--dt", "0.005"])
    assert code == 0
    rows = list(csv.reader(open(out / "sol_trip-circuit_margin.csv")))
    # the post-trip nose adds 150 MW; the 5 MW grid lands just below it
    assert float(rows[1][3]) == pytest.approx(145.0, abs=5.0)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_sweep_artifacts_and_invariant(tmp_path):
    out = tmp_path / "out"
    spec = _write_spec(tmp_path)
    code = main(["sweep", "builtin:twobus-2ckt", spec, "--out", str(out),
                 "--workers", "1"])
    assert code == 0
    rows = list(csv.reader(open(out / "sweep_margins.csv")))
    assert rows[0] == ["scenario", "load_config", "method", "margin_MW",
                       "limiting_reason"]
    assert len(rows) == 1 + 4  # 2 configs x 1 contingency x 2 methods
    by = {(r[1], r[2]): float(r[3]) for r in rows[1:]}
    for config in ("constP", "constI"):
        assert by[(config, "SOL")] <= by[(config, "PCLL")] + 5.0
    table = list(csv.reader(open(out / "sweep_table.csv")))
    assert table[0] == ["load_config", "PCLL[trip-circuit]_MW",
                        "SOL[trip-circuit]_MW"]
    assert [r[0] for r in table[1:]] == ["constP", "constI"]


def test_sweep_divergent_cell_marked_and_exit_3(tmp_path, monkeypatch):
    from gridmargin import cli as cli_mod
    from gridmargin.errors import PowerFlowDivergedError

    def explode(*a, **kw):
        raise PowerFlowDivergedError("boom")
    monkeypatch.setattr(cli_mod, "compute_pcll", explode)
    out = tmp_path / "out"
    spec = _write_spec(tmp_path, {**SWEEP_SPEC,
                                  "load_configs": SWEEP_SPEC["load_configs"][:1]})
    code = main(["sweep", "builtin:twobus-2ckt", spec, "--out", str(out),
                 "--workers", "1"])
    assert code == 3
    rows = list(csv.reader(open(out / "sweep_margins.csv")))
    pcll_row = [r for r in rows[1:] if r[2] == "PCLL"][0]
    assert pcll_row[3] == "" and pcll_row[4] == "divergence"


def test_sweep_missing_spec_exits_4():
    assert main(["sweep", "builtin:twobus-2ckt", "/no/spec.json"]) == 4


def test_sweep_empty_spec_exits_2(tmp_path):
    spec = _write_spec(tmp_path, {"load_configs": []})
    assert main(["sweep", "builtin:twobus-2ckt", spec]) == 2
