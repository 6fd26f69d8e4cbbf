import json

from concavelift.cli import main


def test_construct_euclidean(tmp_path):
    assert main(["construct", "--space", "euclidean:2", "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["concavity"]["certified"] and rep["sandwich"]["holds"]
    prof = (tmp_path / "a" / "profile.csv").read_text().splitlines()
    assert prof[0].startswith("#") and prof[1] == "t,f,minus_t_squared"
    radii = [float(l.split(",")[0]) for l in prof[2:]]
    assert all(b > a for a, b in zip(radii, radii[1:]))
    assert set(json.loads((tmp_path / "a" / "manifest.json").read_text())["files"]) >= {"report.json"}


def test_bad_space_exit_2(tmp_path, capsys):
    assert main(["construct", "--space", "cone:-1", "--out", str(tmp_path)]) == 2
    assert "cone angle" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["verify", "--config", str(cfg)]) == 2


def test_verify_scaled_distance_refused(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"field": {"kind": "scaledDistSq", "scale": 1.01, "radius": 0.5}, "lam": -2.0,
                               "samples": 2000}))
    out = tmp_path / "v"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 1
    rep = json.loads((out / "report.json").read_text())
    assert rep["concavity"]["certified"] and not rep["sandwich"]["holds"]
    assert rep["sandwich"]["lowerWitness"]


def test_report_on_empty_bundle(tmp_path):
    src = tmp_path / "empty"
    src.mkdir()
    (src / "report.json").write_text("{}")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"input": str(src), "out": str(tmp_path / "o")}))
    assert main(["report", "--config", str(cfg)]) == 0
    lines = (tmp_path / "o" / "region.csv").read_text().splitlines()
    assert lines == [lines[0], "angle,radius"]


def test_pipeline_region_closed(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "finalStep", "samples": 2000, "rays": 1024}))
    out = tmp_path / "p"
    assert main(["pipeline", "--config", str(cfg), "--space", "cone:4.71238898038469", "--out", str(out)]) == 0
    rows = (out / "region.csv").read_text().splitlines()[2:]
    first, last = rows[0].split(","), rows[-1].split(",")
    assert abs(float(first[1]) - float(last[1])) <= 1e-9


def test_worker_count_determinism(tmp_path):
    outs = []
    for w in (1, 3):
        out = tmp_path / f"w{w}"
        assert main(["construct", "--space", "cone:4.71238898038469", "--out", str(out), "--workers", str(w)]) == 0
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1]
