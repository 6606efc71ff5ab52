import csv
import json

import numpy as np
import pytest

from rydcycles.cli import EXIT_IO, EXIT_MISMATCH, EXIT_OK, EXIT_QUALITY, main, parse_range, read_table
from rydcycles.config import ConfigError, RunConfig, parse_text, resolve
from rydcycles.model import AllToAll, VdW, calibrate_c6


def test_parse_text_with_comments():
    raw = parse_text("omega = 2.5  # drive\n\n# comment\ndelta_r=2.1\n")
    assert raw == {"omega": "2.5", "delta_r": "2.1"}


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_text("omgea = 2")
    with pytest.raises(ConfigError):
        parse_text("just text")


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("omega = 1.0\ndelta_r = 2.1\nn_traj = 5\n")
    cfg = resolve(path, ["delta_r=3.0"])
    assert cfg.params.omega_s == cfg.params.omega_r == 1.0
    assert cfg.params.delta_r == 3.0
    assert cfg.n_traj == 5


def test_component_keys_win_over_shorthand():
    cfg = RunConfig.from_mapping({"omega": "2", "omega_r": "3", "chi": "10", "chi_sr": "4"})
    assert (cfg.params.omega_s, cfg.params.omega_r) == (2.0, 3.0)
    assert cfg.interaction == AllToAll(10.0, 10.0, 4.0)


def test_vdw_calibration_and_errors():
    cfg = RunConfig.from_mapping({"interaction": "vdw"})
    assert isinstance(cfg.interaction, VdW)
    assert cfg.interaction.c6_ss == pytest.approx(calibrate_c6(12.0))
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"c6": "1.0"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"backend": "gpu"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"gamma": "-1"})


def test_resolved_config_round_trips(tmp_path):
    cfg = RunConfig.from_mapping({"interaction": "vdw", "L": "6", "snapshot_times": "1,2.5",
                                  "subsystem_window": "4", "sizes": "4,6", "master_seed": "7"})
    path = tmp_path / "config.resolved"
    path.write_text(cfg.to_text())
    assert resolve(path) == cfg


def test_parse_range():
    assert np.allclose(parse_range("0:1:0.25"), [0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(parse_range("2,3"), [2, 3])


def _rows(path):
    with open(path, newline="") as fh:
        return {(float(r["omega"]), float(r["delta_r"])): r for r in csv.DictReader(fh)}


def test_mf_scan_labels_and_resumes(tmp_path):
    out = tmp_path / "scan"
    args = ["mf-scan", "--out", str(out), "--omega", "0.1,2", "--delta-r", "0,3"]
    assert main(args) == EXIT_OK
    table = out / "phase_diagram.csv"
    rows = _rows(table)
    assert len(rows) == 4
    assert rows[(2.0, 3.0)]["phase_label"] == "PureLC"
    assert float(rows[(2.0, 3.0)]["T"]) == pytest.approx(2.0, rel=0.1)
    assert rows[(0.1, 0.0)]["phase_label"] == "MonostableSTA"
    assert (out / "config.resolved").exists() and (out / "metadata.json").exists()
    before = table.read_bytes()
    stamp = table.stat().st_mtime_ns
    assert main(args) == EXIT_OK
    assert table.read_bytes() == before and table.stat().st_mtime_ns == stamp


def test_mf_scan_finishes_partial_table(tmp_path):
    out = tmp_path / "scan"
    args = ["mf-scan", "--out", str(out), "--omega", "0.1,2", "--delta-r", "0,3", "--t-total", "50"]
    assert main(args) == EXIT_OK
    full = (out / "phase_diagram.csv").read_bytes()
    lines = full.decode().splitlines(keepends=True)
    (out / "phase_diagram.csv").write_text("".join(lines[:3]))
    assert main(args) == EXIT_OK
    assert (out / "phase_diagram.csv").read_bytes() == full


def test_mf_scan_rejects_tiny_grid(tmp_path):
    assert main(["mf-scan", "--out", str(tmp_path), "--omega", "2", "--delta-r", "0,3"]) == EXIT_IO


def test_unwritable_output_and_bad_config(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["mf-evolve", "--out", str(blocker / "sub")]) == EXIT_IO
    assert main(["mf-evolve", "--out", str(tmp_path / "o"), "--set", "colour=red"]) == EXIT_IO
    assert main(["mf-evolve", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "none.cfg")]) == EXIT_IO


def test_mf_evolve_and_cycle_metrics(tmp_path):
    assert main(["mf-evolve", "--out", str(tmp_path / "mf"), "--t-end", "200"]) == EXIT_OK
    meta = json.loads((tmp_path / "mf" / "metadata.json").read_text())
    assert meta["config"]["delta_r"] == 3.0
    assert main(["analyze", "cycle-metrics", str(tmp_path / "mf" / "mf_trajectory.csv"),
                 "--out", str(tmp_path / "cm"), "--t-transient", "100"]) == EXIT_OK
    res = json.loads((tmp_path / "cm" / "analysis.json").read_text())
    assert res["cycle_metrics"]["T"] == pytest.approx(2.0, rel=0.1)
    assert 0.2 < res["cycle_metrics"]["t_rs"] < 0.5
    assert len(res["inputs"]) == 1


def test_exact_run(tmp_path):
    assert main(["exact-run", "--out", str(tmp_path), "--n-atoms", "2", "--t-end", "1",
                 "--set", "record_dt=0.1", "--set", "dt=0.01"]) == EXIT_OK
    cols = read_table(tmp_path / "exact.csv")
    assert len(cols["time"]) == 2 * 11
    assert np.allclose(cols["n_s"][::2], cols["n_s"][1::2])


TWA_SET = ["--set", "L=3", "--set", "t_end=30", "--set", "dt=0.01", "--set", "record_dt=0.05",
           "--set", "n_traj=2", "--set", "master_seed=3", "--set", "snapshot_times=10",
           "--set", "subsystem_window=2"]


def test_twa_run_is_byte_reproducible(tmp_path):
    assert main(["twa-run", "--out", str(tmp_path / "a")] + TWA_SET) == EXIT_OK
    assert main(["twa-run", "--out", str(tmp_path / "b")] + TWA_SET) == EXIT_OK
    for name in ("ensemble.csv", "trajectories.csv", "snapshots.csv", "window.csv", "config.resolved"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    snap = read_table(tmp_path / "a" / "snapshots.csv")
    assert len(snap["site_i"]) == 9 and np.all(snap["time"] == 10.0)
    meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
    assert meta["ensemble"]["n_aborted"] == 0
    assert meta["ensemble"]["seeds"][1] == {"master_seed": 3, "trajectory": 1}


def test_twa_quality_flag(tmp_path):
    args = ["twa-run", "--out", str(tmp_path), "--set", "L=1", "--set", "t_end=2",
            "--set", "dt=0.01", "--set", "n_traj=40", "--set", "guard=1.6"]
    assert main(args) == EXIT_QUALITY
    assert json.loads((tmp_path / "metadata.json").read_text())["ensemble"]["unreliable"]


def test_analyze_pipeline(tmp_path):
    longer = TWA_SET + ["--set", "t_end=150"]
    assert main(["twa-run", "--out", str(tmp_path / "runs"), "--sizes", "2,3,4"] + longer) == EXIT_OK
    run = str(tmp_path / "runs" / "L4")
    assert main(["analyze", "correlate", run, "--out", str(tmp_path / "c"), "--t-max-lag", "3"]) == EXIT_OK
    res = json.loads((tmp_path / "c" / "analysis.json").read_text())
    assert any(k.endswith("trajectories.csv") for k in res["inputs"])
    assert res["correlate"]["n_traj"] == 2
    corr = read_table(tmp_path / "c" / "correlation.csv")
    assert corr["G_rr"][0] >= 0
    assert main(["analyze", "spectrum", run, "--out", str(tmp_path / "s"), "--t-max-lag", "3",
                 "--taper", "cosine"]) == EXIT_OK
    assert "omega" in read_table(tmp_path / "s" / "spectrum.csv")
    assert main(["analyze", "spectrum", run, "--window", "--out", str(tmp_path / "w"),
                 "--t-max-lag", "3"]) == EXIT_OK
    runs = [str(tmp_path / "runs" / f"L{L}") for L in (2, 3, 4)]
    assert main(["analyze", "collapse", *runs, "--out", str(tmp_path / "k"), "--t-max-lag", "12",
                 "--omega-min", "1.5"]) == EXIT_OK
    report = json.loads((tmp_path / "k" / "analysis.json").read_text())["collapse_report"]
    assert report["sizes"] == [4, 9, 16]
    assert report["verdict"] in ("collapse", "no collapse")


def test_analyze_input_mismatch(tmp_path):
    a = ["--set", "L=2", "--set", "t_end=20", "--set", "dt=0.01", "--set", "n_traj=1"]
    assert main(["twa-run", "--out", str(tmp_path / "a")] + a + ["--set", "record_dt=0.05"]) == EXIT_OK
    assert main(["twa-run", "--out", str(tmp_path / "b")] + a + ["--set", "record_dt=0.1"]) == EXIT_OK
    assert main(["twa-run", "--out", str(tmp_path / "c")] + a + ["--set", "record_dt=0.1"]) == EXIT_OK
    runs = [str(tmp_path / x) for x in "abc"]
    assert main(["analyze", "collapse", *runs, "--out", str(tmp_path / "k"),
                 "--t-max-lag", "1"]) == EXIT_MISMATCH
    # a lag window longer than a tenth of the run is refused
    assert main(["analyze", "correlate", runs[0], "--out", str(tmp_path / "k"),
                 "--t-max-lag", "5"]) == EXIT_MISMATCH
