import csv
import json

import numpy as np
import pytest

from drlpdid import estimate, event_study, ingest_csv, write_panel_csv
from drlpdid.cli import main
from drlpdid.errors import (DuplicateObservation, InvalidEntryDate, MissingColumn, MissingValue,
                            NonIntegerTime, TimeGap)
from drlpdid.panel import build_stack

from conftest import random_panel

TOY = """unit_id,time,outcome,first_treat,x
a,1,1.0,2,0.5
a,2,2.5,2,0.5
a,3,3.0,2,0.5
b,1,0.0,,1.5
b,2,0.5,,1.5
b,3,1.0,,1.5
c,1,2.0,3,-1.0
c,2,2.0,3,-1.0
c,3,4.0,3,-1.0
"""


def write(tmp_path, text, name="panel.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def replace_line(text, lineno, new):
    lines = text.splitlines()
    lines[lineno - 1] = new
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- ingestion


def test_toy_csv_with_blank_entry_date(tmp_path):
    p = ingest_csv(write(tmp_path, TOY))
    assert p.n_units == 3 and p.n_periods == 3
    assert p.never_treated.tolist() == [False, True, False]
    assert p.first_treat[[0, 2]].tolist() == [2, 3]
    assert p.covariate_names == ("x",)
    assert p.n_clusters == 3  # cluster defaults to the unit


def test_duplicate_row_is_reported_with_line(tmp_path):
    text = TOY + "b,2,9.0,,1.5\n"
    with pytest.raises(DuplicateObservation) as exc:
        ingest_csv(write(tmp_path, text))
    assert exc.value.row == 11 and "row 11" in str(exc.value)


def test_entry_date_before_sample(tmp_path):
    text = TOY.replace("a,1,1.0,2,", "a,1,1.0,0,").replace("a,2,2.5,2,", "a,2,2.5,0,") \
              .replace("a,3,3.0,2,", "a,3,3.0,0,")
    with pytest.raises(InvalidEntryDate) as exc:
        ingest_csv(write(tmp_path, text))
    assert exc.value.row == 2


def test_entry_date_after_sample(tmp_path):
    text = TOY.replace(",3,-1.0", ",7,-1.0")
    with pytest.raises(InvalidEntryDate):
        ingest_csv(write(tmp_path, text))


def test_conflicting_entry_dates(tmp_path):
    with pytest.raises(InvalidEntryDate) as exc:
        ingest_csv(write(tmp_path, replace_line(TOY, 3, "a,2,2.5,3,0.5")))
    assert exc.value.row == 3


def test_non_integer_time(tmp_path):
    with pytest.raises(NonIntegerTime) as exc:
        ingest_csv(write(tmp_path, replace_line(TOY, 6, "b,2.5,0.5,,1.5")))
    assert exc.value.row == 6


def test_gap_in_time_series(tmp_path):
    text = "\n".join(l for l in TOY.splitlines() if not l.startswith("c,2,")) + "\n"
    with pytest.raises(TimeGap, match="'c'"):
        ingest_csv(write(tmp_path, text))


def test_missing_column(tmp_path):
    text = TOY.replace("first_treat", "entry")
    with pytest.raises(MissingColumn, match="first_treat"):
        ingest_csv(write(tmp_path, text))


def test_missing_outcome(tmp_path):
    with pytest.raises(MissingValue) as exc:
        ingest_csv(write(tmp_path, replace_line(TOY, 4, "a,3,,2,0.5")))
    assert exc.value.row == 4


def test_configurable_column_names(tmp_path):
    text = TOY.replace("unit_id,time,outcome,first_treat", "id,year,y,g")
    p = ingest_csv(write(tmp_path, text), {"unit": "id", "time": "year", "outcome": "y",
                                           "first_treat": "g"})
    assert p.n_units == 3


def test_calendar_times_are_mapped_to_periods(tmp_path):
    text = TOY.replace(",1,", ",2001,").replace(",2,", ",2002,").replace(",3,", ",2003,")
    p = ingest_csv(write(tmp_path, text))
    assert p.times.tolist() == [2001, 2002, 2003]
    assert p.first_treat[[0, 2]].tolist() == [2, 3]


def test_time_varying_covariates_are_kept(tmp_path):
    text = replace_line(TOY, 3, "a,2,2.5,2,0.7")
    p = ingest_csv(write(tmp_path, text))
    assert p.covariates_by_period is not None
    assert p.covariates_by_period[0, 1, 0] == 0.7


def test_round_trip_gives_identical_estimates(tmp_path):
    p = random_panel(21, N=80, T=8, n_clusters=25)
    path = tmp_path / "rt.csv"
    write_panel_csv(p, path)
    q = ingest_csv(path)
    np.testing.assert_array_equal(p.outcome, q.outcome)
    np.testing.assert_array_equal(p.first_treat, q.first_treat)
    np.testing.assert_array_equal(p.covariates, q.covariates)
    assert q.n_clusters == p.n_clusters
    for tag in ("rw", "rwx", "ra", "ipt", "dr"):
        a, b = estimate(build_stack(p, 1), tag), estimate(build_stack(q, 1), tag)
        assert a.theta == b.theta
        # cluster labels come back as strings, so cluster sums may add in another order
        assert b.se == pytest.approx(a.se, rel=1e-12)


# ---------------------------------------------------------------- command line


@pytest.fixture
def toy_run(tmp_path):
    p = random_panel(5, N=120, T=9, k=2, n_clusters=40)
    write_panel_csv(p, tmp_path / "panel.csv")
    cfg = {"input": "panel.csv", "estimators": ["DRLPDID", "LPDID-RW"],
           "horizons": {"from": -2, "to": 3}, "covariates": ["x1", "x2"],
           "bootstrap": {"B": 199, "seed": 7}, "output_dir": "out"}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return tmp_path, path, cfg


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_estimate_writes_every_artifact(toy_run, capsys):
    d, cfg_path, _ = toy_run
    assert main(["estimate", "--config", str(cfg_path)]) == 0
    out = d / "out"
    rows = read_csv(out / "event_study_dr.csv")
    assert [int(r["h"]) for r in rows] == [-2, -1, 0, 1, 2, 3]
    plot = read_csv(out / "plot_dr.csv")
    assert list(plot[0])[:6] == ["h", "estimate", "ci_lo", "ci_hi", "band_lo", "band_hi"]
    band = json.loads((out / "band_dr.json").read_text())
    es = json.loads((out / "event_study_dr.json").read_text())
    diag = json.loads((out / "diagnostics.json").read_text())
    hashes = {r["config_hash"] for r in rows + plot} | {band["config_hash"], es["config_hash"],
                                                         diag["config_hash"]}
    assert len(hashes) == 1
    assert {band["seed"], es["seed"], diag["seed"]} == {7}
    assert all(r["seed"] == "7" for r in read_csv(out / "weights.csv"))
    assert set(es["horizons"][0]) >= {"h", "estimator", "theta", "mu1", "mu0", "n1", "n0"}
    assert "DRLPDID" in diag["estimators"] and "LPDID-RW" in diag["estimators"]
    summary = json.loads(capsys.readouterr().out)
    assert summary["DRLPDID"]["horizons"] == [-2, -1, 0, 1, 2, 3]


def test_estimate_outputs_match_library(toy_run):
    d, cfg_path, _ = toy_run
    main(["estimate", "--config", str(cfg_path)])
    p = ingest_csv(d / "panel.csv")
    es = event_study(p, range(-2, 4), estimator="dr", covariates=["x1", "x2"])
    rows = read_csv(d / "out" / "event_study_dr.csv")
    np.testing.assert_array_equal([float(r["theta"]) for r in rows], es.theta())


def test_estimate_is_reproducible_and_seed_override(toy_run, tmp_path):
    d, cfg_path, _ = toy_run
    main(["estimate", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
    main(["estimate", "--config", str(cfg_path), "--out", str(tmp_path / "b")])
    main(["estimate", "--config", str(cfg_path), "--out", str(tmp_path / "c"), "--seed", "8"])
    for name in ("band_dr.json", "plot_dr.csv", "event_study_dr.csv", "diagnostics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    a = json.loads((tmp_path / "a" / "band_dr.json").read_text())
    c = json.loads((tmp_path / "c" / "band_dr.json").read_text())
    assert c["seed"] == 8 and a["c_star"] != c["c_star"]
    assert [h["theta"] for h in a["horizons"]] == [h["theta"] for h in c["horizons"]]


def test_missing_covariate_column_fails_with_name(toy_run, capsys):
    d, cfg_path, cfg = toy_run
    cfg_path.write_text(json.dumps(dict(cfg, covariates=["x1", "income"])))
    status = main(["estimate", "--config", str(cfg_path)])
    assert status != 0
    assert "income" in capsys.readouterr().err


@pytest.mark.parametrize("patch", [{"horizons": []}, {"estimators": ["CS"]},
                                   {"bootstrap": {"scheme": "normal"}}, {"colour": 1},
                                   {"base_rule": "first_pre"}])
def test_config_errors_exit_2(toy_run, patch, capsys):
    d, cfg_path, cfg = toy_run
    cfg_path.write_text(json.dumps(dict(cfg, **patch)))
    assert main(["estimate", "--config", str(cfg_path)]) == 2
    assert "error [cli." in capsys.readouterr().err


def test_missing_config_and_input_exit_2(toy_run, tmp_path):
    d, cfg_path, cfg = toy_run
    assert main(["estimate", "--config", str(tmp_path / "nope.json")]) == 2
    cfg_path.write_text(json.dumps(dict(cfg, input="nope.csv")))
    assert main(["estimate", "--config", str(cfg_path)]) == 2


def test_data_error_exit_3(tmp_path, capsys):
    write(tmp_path, TOY + "b,2,9.0,,1.5\n")
    (tmp_path / "run.json").write_text(json.dumps({"input": "panel.csv"}))
    assert main(["estimate", "--config", str(tmp_path / "run.json")]) == 3
    assert "io.DuplicateObservation" in capsys.readouterr().err


def test_numerical_failure_exit_4(tmp_path, capsys):
    # the covariate separates entrants from controls at every horizon
    rng = np.random.default_rng(0)
    N, T = 40, 5
    ft = np.where(np.arange(N) < 20, 3, 0)
    lines = ["unit_id,time,outcome,first_treat,x"]
    for i in range(N):
        for t in range(1, T + 1):
            g = "" if ft[i] == 0 else "3"
            lines.append(f"{i},{t},{rng.normal()},{g},{float(ft[i] > 0) + i * 1e-3}")
    write(tmp_path, "\n".join(lines) + "\n")
    (tmp_path / "run.json").write_text(json.dumps({"input": "panel.csv", "horizons": [0, 1]}))
    assert main(["estimate", "--config", str(tmp_path / "run.json")]) == 4
    err = capsys.readouterr().err
    assert "SeparationDetected" in err or "IptDiverged" in err


def test_validate_command(tmp_path, capsys):
    assert main(["validate", "--input", str(write(tmp_path, TOY))]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n_never_treated"] == 1 and info["cohorts"] == {"2": 1, "3": 1}
    assert main(["validate", "--input", str(write(tmp_path, TOY + "b,2,9.0,,1.5\n"))]) == 3


def test_simulate_command_is_deterministic(tmp_path):
    cfg = {"scenario": "A", "N": 200, "R": 5, "seed": 123, "estimators": ["DRLPDID", "LPDID-RA"],
           "horizons": [0, 1, 2, 3], "output_dir": "mc"}
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(path)]) == 0
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "mc2"),
                 "--jobs", "2"]) == 0
    for name in ("mc_report.csv", "mc_report.json"):
        assert (tmp_path / "mc" / name).read_bytes() == (tmp_path / "mc2" / name).read_bytes()
    rows = read_csv(tmp_path / "mc" / "mc_report.csv")
    assert [r["estimator"] for r in rows] == ["DRLPDID", "LPDID-RA"]
    assert all(r["n_reps"] == "5" and r["seed"] == "123" for r in rows)


def test_simulate_rejects_mode_mismatch(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps({"mode": "estimate", "R": 2}))
    assert main(["simulate", "--config", str(path)]) == 2
