import json

import numpy as np
import pytest

from mgt.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def manifests(tmp_path, capsys):
    paths = {}
    for name, extra in (("projection", ["--grid", "65"]), ("fold", ["--N", "2", "--grid", "129"])):
        p = tmp_path / f"{name}.json"
        assert run(capsys, "gallery", "--emit", name, "--out", str(p), *extra)[0] == 0
        paths[name] = p
    return paths


def test_gallery_list(capsys):
    code, out, _ = run(capsys, "gallery", "--list")
    assert code == 0 and "fold" in out and "kuratowski" in out


def test_content_points(tmp_path, capsys):
    p = tmp_path / "pts.csv"
    p.write_text("x\n0.0\n0.1\n")
    code, out, _ = run(capsys, "content", "--points", str(p), "--n", "1", "--method", "oracle", "--rho", "0.5")
    assert code == 0 and json.loads(out)["upper"] == pytest.approx(1.1)


def test_content_metric(tmp_path, capsys):
    m = tmp_path / "m.csv"
    m.write_text("a,b,c\n0,1,4\n1,0,4\n4,4,0\n")
    code, out, _ = run(capsys, "content", "--metric", str(m), "--n", "1", "--rho", "0.5")
    assert code == 0 and json.loads(out)["upper"] == pytest.approx(3.0)


def test_jacobian_and_alias(manifests, capsys):
    for flag in ("--point", "--at"):
        code, out, _ = run(capsys, "jacobian", "--map", str(manifests["projection"]), flag, "0.5,0.5")
        assert code == 0 and json.loads(out)["jacobian"] == pytest.approx(1.0)


def test_density_point_and_csv(manifests, tmp_path, capsys):
    code, out, _ = run(capsys, "density", "--map", str(manifests["projection"]), "--point", "0.5,0.5",
                       "--radii", "3,0.5")
    assert code == 0 and len(json.loads(out)["ladder"]) == 3
    dest = tmp_path / "field.csv"
    code, _, _ = run(capsys, "density", "--map", str(manifests["projection"]), "--stride", "16",
                     "--out", str(dest))
    assert code == 0 and dest.read_text().startswith("x,y,r,ratio")


def test_nm_content_and_prop51(manifests, tmp_path, capsys):
    code, out, _ = run(capsys, "nm-content", "--map", str(manifests["projection"]), "--depth", "3",
                       "--csv", str(tmp_path / "p.csv"))
    assert code == 0 and json.loads(out)["value"] == pytest.approx(1.0, abs=0.05)
    assert (tmp_path / "p.csv").exists()
    code, out, _ = run(capsys, "verify-prop51", "--map", str(manifests["projection"]), "--depth", "3")
    assert code == 0 and json.loads(out)["holds"]


def test_verify_prop52(manifests, capsys):
    code, out, _ = run(capsys, "verify-prop52", "--map", str(manifests["projection"]), "--stride", "16")
    assert code == 0 and json.loads(out)["fraction_within_tol"] >= 0.95


def test_chart_then_verify(manifests, tmp_path, capsys):
    chart = tmp_path / "chart.json"
    code, _, _ = run(capsys, "chart", "--map", str(manifests["fold"]), "--center", "0.375,0.375",
                     "--out", str(chart))
    assert code == 0
    saved = json.loads(chart.read_text())
    assert saved["residual_summary"]["max_residual_on_K"] <= 1e-10
    code, out, _ = run(capsys, "chart-verify", "--chart", str(chart), "--map", str(manifests["fold"]))
    res = json.loads(out)
    assert code == 0
    assert res["slice_inequality"]["violations"] == 0 and res["verticality"]["violations"] == 0
    assert res["image_content"] >= 0.2 * 0.25


def test_emit_requires_out(manifests, capsys):
    with pytest.raises(SystemExit):
        main(["emit", "partition", "--map", str(manifests["projection"])])


def test_emit_ladder(manifests, tmp_path, capsys):
    dest = tmp_path / "ladder.csv"
    code, _, _ = run(capsys, "emit", "ladder", "--map", str(manifests["projection"]), "--point", "0.5,0.5",
                     "--out", str(dest))
    assert code == 0 and dest.read_text().splitlines()[0] == "r,ratio"


def test_missing_file_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "jacobian", "--map", str(tmp_path / "none.json"), "--point", "0.5,0.5")
    assert code == 2 and "error" in err


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("[density]\nnope = 1\n")
    code, _, err = run(capsys, "verify", "--config", str(p), "--out", str(tmp_path / "o"))
    assert code == 2 and "density.nope" in err and "line 2" in err


def test_verify_subset_and_env_threads(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MGT_THREADS", "2")
    code, out, _ = run(capsys, "verify", "--only", "AC08", "AC09", "--out", str(tmp_path / "o"))
    assert code == 0
    assert out.splitlines()[0].startswith("AC08 PASS")
    assert (tmp_path / "o" / "verify_report.csv").exists()


def test_verify_fail_exit_code(tmp_path, capsys):
    # with 257 nodes the creases sit on grid nodes and the greedy slice keeps one node too many
    p = tmp_path / "c.toml"
    p.write_text("[capacity]\ngrid = 257\n")
    code, out, _ = run(capsys, "verify", "--config", str(p), "--only", "AC08", "--out", str(tmp_path / "o"))
    assert code == 1 and out.startswith("AC08 FAIL")
