import csv
import json

import numpy as np
import pytest
import yaml

from conftest import transition_schedule
from ivskit import __version__, cli, report
from ivskit.imgcore import GrayImage, save_gray
from ivskit.synth import RegimeLevel, RegimeSchedule, generate_run


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    manifest = generate_run(transition_schedule(3), 3, root)
    return manifest


@pytest.fixture(scope="module")
def ivs_report(synth_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("report")
    code = cli.main(["ivs", "--manifest", str(synth_run), "--out", str(out), "--jobs", "1",
                     "--trials", "3"])
    return code, out


def test_ivs_end_to_end(ivs_report):
    code, out = ivs_report
    assert code == 0
    rows = read_csv(out / "ivs.csv")
    assert len(rows) == 5
    assert [float(r["q_mid"]) for r in rows] == [15.0, 25.0, 35.0, 45.0, 55.0]
    for name in ("ivs_vs_q.svg", "similarity_vs_q.svg", "phi_vs_q.svg", "comparison.svg",
                 "thermal.csv", "comparison.csv", "ivs.log"):
        assert (out / name).exists(), name


def test_flagged_records_are_logged(ivs_report):
    _, out = ivs_report
    log = (out / "ivs.log").read_text()
    for row in read_csv(out / "ivs.csv"):
        if row["flags"]:
            assert f"q_mid={float(row['q_mid'])!r}" in log


def test_visual_and_thermal_transitions_coincide(ivs_report):
    _, out = ivs_report
    rows = read_csv(out / "comparison.csv")
    ivs = [float(r["ivs"]) for r in rows]
    phi = [float(r["phi"]) for r in rows]
    assert int(np.argmin(ivs)) == int(np.argmin(phi)) == 2


def test_svg_is_self_contained(ivs_report):
    _, out = ivs_report
    text = (out / "comparison.svg").read_text()
    assert text.lstrip().startswith("<?xml")
    assert "xlink:href=\"http" not in text and "<image" not in text


def test_same_seed_same_bytes_across_jobs(synth_run, tmp_path):
    args = ["ivs", "--manifest", str(synth_run), "--trials", "2", "--seed", "9"]
    assert cli.main(args + ["--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for name in ("ivs.csv", "ivs_vs_q.svg", "similarity_vs_q.svg", "comparison.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_json_format(synth_run, tmp_path):
    assert cli.main(["ivs", "--manifest", str(synth_run), "--trials", "1", "--jobs", "1",
                     "--out", str(tmp_path), "--format", "json"]) == 0
    data = json.loads((tmp_path / "ivs.json").read_text())
    assert data["meta"]["n_trials"] == 1
    assert len(data["records"]) == 5


def test_inputs_untouched(synth_run, tmp_path):
    before = {p: p.read_bytes() for p in synth_run.parent.rglob("*") if p.is_file()
              and "report" not in p.parts}
    cli.main(["ivs", "--manifest", str(synth_run), "--trials", "1", "--jobs", "1",
              "--out", str(tmp_path)])
    assert all(p.read_bytes() == b for p, b in before.items())


def test_single_set_is_an_error(synth_run, tmp_path):
    m = yaml.safe_load(synth_run.read_text())
    m["frame_sets"] = m["frame_sets"][:1]
    path = synth_run.parent / "one.yaml"
    path.write_text(yaml.safe_dump(m))
    assert cli.main(["ivs", "--manifest", str(path), "--out", str(tmp_path)]) == 1


def test_missing_frame_is_an_error(synth_run, tmp_path):
    m = yaml.safe_load(synth_run.read_text())
    m["frame_sets"][0]["frames"].append("frames/nope.pgm")
    path = synth_run.parent / "missing.yaml"
    path.write_text(yaml.safe_dump(m))
    assert cli.main(["ivs", "--manifest", str(path), "--out", str(tmp_path)]) == 1


def test_unknown_config_key_is_an_error(synth_run, tmp_path):
    m = yaml.safe_load(synth_run.read_text())
    m["sift"] = {"octaves": 3}
    path = synth_run.parent / "badkey.yaml"
    path.write_text(yaml.safe_dump(m))
    assert cli.main(["ivs", "--manifest", str(path), "--out", str(tmp_path)]) == 1


def test_degenerate_frames_exit_2(tmp_path):
    blank = GrayImage(np.full((64, 64), 0.5))
    for name in ("a0", "a1", "b0", "b1"):
        save_gray(blank, tmp_path / f"{name}.pgm")
    manifest = {
        "run_id": "blank",
        "frame_sets": [{"id": "A", "q": 1.0, "frames": "a*.pgm"},
                       {"id": "B", "q": 2.0, "frames": ["b0.pgm", "b1.pgm"]}],
        "trials": {"n_trials": 1},
    }
    (tmp_path / "m.yaml").write_text(yaml.safe_dump(manifest))
    assert cli.main(["ivs", "--manifest", str(tmp_path / "m.yaml"), "--jobs", "1",
                     "--out", str(tmp_path / "out")]) == 2
    assert "zero_keypoints" in (tmp_path / "out" / "ivs.log").read_text()


def _thermal_input(path):
    path.write_text("q_nominal,t1,t2,t3,t_sat\n10,114,112,110,100\n20,124,118,112,100\n"
                    "30,130,122,114,100\n")


def test_thermal_command(tmp_path):
    _thermal_input(tmp_path / "t.csv")
    code = cli.main(["thermal", "--input", str(tmp_path / "t.csv"), "--dx", "0.005", "--l",
                     "0.002", "--out", str(tmp_path / "th.csv")])
    assert code == 0
    rows = read_csv(tmp_path / "th.csv")
    assert float(rows[0]["q"]) == pytest.approx(15.6, rel=1e-12)
    assert float(rows[0]["t_w"]) == pytest.approx(109.2, rel=1e-12)
    assert float(rows[0]["h"]) == pytest.approx(15.6 / 9.2, rel=1e-12)
    assert float(rows[0]["u_q"]) == pytest.approx(9.97, abs=0.01)
    assert rows[0]["phi"] == "" and rows[1]["phi"] != ""


def test_thermal_geometry_from_config(tmp_path):
    _thermal_input(tmp_path / "t.csv")
    (tmp_path / "geo.yaml").write_text("thermal:\n  dx: 0.005\n  l: 0.002\n")
    assert cli.main(["thermal", "--input", str(tmp_path / "t.csv"), "--config",
                     str(tmp_path / "geo.yaml"), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "thermal.csv").exists()


def test_thermal_missing_geometry_names_keys(tmp_path, caplog):
    _thermal_input(tmp_path / "t.csv")
    code = cli.main(["thermal", "--input", str(tmp_path / "t.csv"), "--dx", "0.005",
                     "--out", str(tmp_path / "th.csv")])
    assert code == 1
    assert "missing thermal geometry: l" in caplog.text


def test_thermal_from_manifest(synth_run, tmp_path):
    assert cli.main(["thermal", "--manifest", str(synth_run), "--out", str(tmp_path / "t.csv")]) == 0
    assert len(read_csv(tmp_path / "t.csv")) == 6


def test_compare_without_thermal(ivs_report, tmp_path):
    _, out = ivs_report
    assert cli.main(["compare", "--ivs", str(out / "ivs.csv"), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "comparison.csv")
    assert len(rows) == 5 and all(r["phi"] == "" and r["u_phi"] == "" for r in rows)
    assert (tmp_path / "comparison.svg").exists()


def test_compare_disjoint_grid(ivs_report, tmp_path):
    _, out = ivs_report
    (tmp_path / "t.csv").write_text("q_nominal,t1,t2,t3,t_sat\n500,114,112,110,100\n"
                                    "600,124,118,112,100\n")
    assert cli.main(["thermal", "--input", str(tmp_path / "t.csv"), "--dx", "0.005", "--l",
                     "0.002", "--out", str(tmp_path / "th.csv")]) == 0
    assert cli.main(["compare", "--ivs", str(out / "ivs.csv"), "--thermal",
                     str(tmp_path / "th.csv"), "--out", str(tmp_path)]) == 1


def test_align_flat_series():
    ivs_rows = [{"q_mid": 15.0, "ivs": 100.0}, {"q_mid": 25.0, "ivs": 100.0}]
    thermal = [{"q_nominal": q, "phi": None if q == 10 else 0.0, "u_phi": 0.1}
               for q in (10.0, 20.0, 30.0)]
    rows = report.align(ivs_rows, thermal)
    assert [r.phi for r in rows] == [0.0, 0.0]
    assert [r.ivs for r in rows] == [100.0, 100.0]


def test_align_nearest_interval_tie_goes_lower():
    thermal = [{"q_nominal": q, "phi": p, "u_phi": 0.0}
               for q, p in ((10.0, None), (20.0, 1.0), (30.0, 2.0))]
    rows = report.align([{"q_mid": 20.0, "ivs": 50.0}], thermal)
    assert rows[0].phi == 1.0


def test_synth_command(tmp_path):
    cfg = RegimeSchedule(levels=(RegimeLevel(1.0, 3, n_small=3), RegimeLevel(2.0, 5, n_small=3)),
                         frames_per_level=2, width=64, height=64).to_dict()
    (tmp_path / "s.yaml").write_text(yaml.safe_dump(cfg))
    assert cli.main(["synth", "--config", str(tmp_path / "s.yaml"), "--seed", "4",
                     "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "manifest.yaml").exists()
    assert len(list((tmp_path / "run" / "frames").glob("*.pgm"))) == 4


def test_segment_command(tmp_path, capsys):
    img = np.full((40, 40), 0.9)
    img[10:20, 10:20] = 0.1
    img[25:28, 25:28] = 0.1
    save_gray(GrayImage(img), tmp_path / "f.pgm")
    assert cli.main(["segment", "--image", str(tmp_path / "f.pgm"),
                     "--out", str(tmp_path / "f.mask.pgm")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["frame_id,n_instances,mean_area,vapor_area", "f,2,54.500000,100"]
    assert (tmp_path / "f.mask.pgm").exists()


def test_segment_constant_frame_exit_2(tmp_path):
    save_gray(GrayImage(np.full((20, 20), 0.3)), tmp_path / "c.pgm")
    assert cli.main(["segment", "--image", str(tmp_path / "c.pgm")]) == 2


def test_version(capsys):
    assert cli.main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_log_level_from_env(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("IVSKIT_LOG", "ERROR")
    save_gray(GrayImage(np.full((20, 20), 0.3)), tmp_path / "c.pgm")
    cli.main(["segment", "--image", str(tmp_path / "c.pgm")])
    assert "WARNING" not in capsys.readouterr().err


def test_synth_bad_config(tmp_path):
    (tmp_path / "s.yaml").write_text("width: 64\n")
    assert cli.main(["synth", "--config", str(tmp_path / "s.yaml"), "--out", str(tmp_path / "r")]) == 1
