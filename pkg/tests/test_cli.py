import json
import subprocess
import sys

import numpy as np
import pytest

from wsls_commons.cli import build_parser, main, shipped_scenarios
from wsls_commons.metrics import SeriesBundle
from wsls_commons.model import dump_scenario, table1_scenario


def _json(path):
    with open(path) as fh:
        return json.load(fh)


def test_shipped_scenarios_present():
    names = set(shipped_scenarios())
    for n in ("table1", "fig3_rho0.5", "fig3_rho1", "fig3_rho1.25", "fig4_adaptive",
              "fig5_multi", "fig6_schedule"):
        assert n in names


def test_equilibrium_table1(tmp_path):
    assert main(["equilibrium", "--scenario", "table1", "--out", str(tmp_path)]) == 0
    data = _json(tmp_path / "table1_0_equilibrium.json")
    (pt,) = data["points"]
    assert pt["rho"] == 1.0
    assert sum(pt["totals"]) == pytest.approx(1000.0, abs=1e-9)
    assert pt["residual"] < 1e-8
    assert len(data["config_digest"]) == 16


def test_hybrid_below_critical_exits_3(tmp_path, capsys):
    code = main(["hybrid", "--scenario", "table1", "--gamma", "0.5", "--out", str(tmp_path)])
    assert code == 3
    report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["kind"] == "infeasible"
    assert report["gamma_c"] == pytest.approx(0.66036, abs=1e-4)
    assert "critical" in report["message"]


def test_hybrid_and_ifd_outputs(tmp_path):
    assert main(["hybrid", "--scenario", "table1", "--rho", "0.75", "--out", str(tmp_path)]) == 0
    h = _json(tmp_path / "table1_0_hybrid.json")["points"][0]
    assert h["gamma"] == h["gamma_c"] and h["shares"][0] == 0.0
    assert main(["ifd", "--scenario", "table1", "--rho", "0.75", "--out", str(tmp_path)]) == 0
    f = _json(tmp_path / "table1_0_ifd.json")["points"][0]
    assert f["theorem_residual"] < 1e-12
    assert np.ptp(f["n_star"]) > 0 and f["used"] == [0, 1, 2]
    assert f["gamma_c"] == pytest.approx(h["gamma_c"])


def test_invalid_scenario_exits_2(tmp_path, capsys):
    cfg = table1_scenario().with_overrides(horizon=-5.0)
    path = tmp_path / "bad.json"
    dump_scenario(cfg, path)
    assert main(["simulate", "--scenario", str(path), "--out", str(tmp_path)]) == 2
    report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["violations"][0]["field"] == "horizon"
    assert main(["simulate", "--scenario", "no_such_thing"]) == 2
    path.write_text("{not json")
    assert main(["ode", "--scenario", str(path)]) == 2


def test_unknown_flags_rejected():
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--scenario", "table1", "--bogus", "1"])
    assert err.value.code == 2
    with pytest.raises(SystemExit):
        main(["simulate", "--scenario", "table1", "--polic", "uniform"])
    with pytest.raises(SystemExit):
        main(["simulate", "--scenario", "table1", "--alpha", "2"])


def test_help_lists_every_flag():
    sub = build_parser()._subparsers._group_actions[0].choices["simulate"]
    text = sub.format_help()
    for flag in ("--scenario", "--out", "--seed", "--rho", "--horizon", "--policy", "--adaptive", "--alpha"):
        assert flag in text


def test_overrides_leave_file_untouched(tmp_path):
    path = tmp_path / "s.json"
    dump_scenario(table1_scenario(horizon=50.0, name="s"), path)
    before = path.read_bytes()
    code = main(["simulate", "--scenario", str(path), "--out", str(tmp_path), "--seed", "9",
                 "--rho", "1.25", "--horizon", "20", "--policy", "proportional", "--adaptive", "on"])
    assert code == 0
    assert path.read_bytes() == before
    b = SeriesBundle.read_csv(tmp_path / "s_9_sim.csv")
    assert len(b) == 20 and "mean_tol_1" in b.columns


def test_simulate_idempotent(tmp_path):
    args = ["simulate", "--scenario", "table1", "--horizon", "60"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("table1_0_sim.csv", "table1_0_sim.json", "table1_0_sim_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ode_and_compare(tmp_path):
    assert main(["ode", "--scenario", "table1", "--horizon", "50", "--out", str(tmp_path)]) == 0
    b = SeriesBundle.read_csv(tmp_path / "table1_0_ode.csv")
    assert b.columns["time"][0] == 0.0 and b.columns["time"][-1] == 50.0
    assert np.allclose(b.columns["n_1"] + b.columns["n_2"] + b.columns["n_3"], 1000)
    assert main(["compare", "--scenario", "table1", "--horizon", "100", "--out", str(tmp_path)]) == 0
    s = _json(tmp_path / "table1_0_compare_summary.json")
    for key in ("occupancy_gap", "pfail_gap", "equalization_spread"):
        assert key in s


def test_compare_fig3(tmp_path):
    assert main(["compare", "--scenario", "fig3_rho1", "--horizon", "1500", "--out", str(tmp_path)]) == 0
    s = _json(tmp_path / "fig3_rho1_0_compare_summary.json")
    assert max(s["occupancy_gap"]) < 0.05 * 1000


def test_sweep_grid(tmp_path):
    code = main(["sweep", "--scenario", "fig5_multi", "--rhos", "0.5,1.25", "--seeds", "0-1",
                 "--horizon", "100", "--out", str(tmp_path)])
    assert code == 0
    data = _json(tmp_path / "fig5_multi_0_sweep.json")
    assert [(p["rho"], p["seed"]) for p in data["points"]] == [(0.5, 0), (0.5, 1), (1.25, 0), (1.25, 1)]
    for p in data["points"]:
        assert (tmp_path / p["file"]).exists()


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "wsls_commons", "ifd", "--scenario", "table1", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip().endswith("table1_0_ifd.json")
