import json

import numpy as np
import pytest

from mgt.density import density_field, density_profile
from mgt.errors import ConfigError
from mgt.gallery import gallery_spec, make_map
from mgt.harness import (CHECKS, ExperimentConfig, Part, VerifyReport, emit_plot_data, load_config, run_check,
                         run_suite, SuiteContext)
from mgt.io import load_manifest, save_manifest
from mgt.partition import nm_content_dyadic

TOML = """seed = 7
threads = 2
out = "elsewhere"

[density]
grid = 65
tol = 0.04

[chart]
tau_k = 0.5
"""


def test_toml_and_json_configs_agree(tmp_path):
    t = tmp_path / "c.toml"
    t.write_text(TOML)
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"seed": 7, "threads": 2, "out": "elsewhere", "density": {"grid": 65, "tol": 0.04},
                             "chart": {"tau_k": 0.5}}))
    a, b = load_config(t), load_config(j)
    assert a == b
    assert a.seed == 7 and a.density.grid == 65 and a.density.tol == 0.04 and a.chart.tau_k == 0.5
    assert a.partition.depth == ExperimentConfig().partition.depth


def test_unknown_field_reports_line(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = 1\n\n[density]\ngrid = 65\nbogus = 3\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.field == "density.bogus"
    assert exc.value.line == 5


def test_negative_tolerance_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[density]\ntol = -0.1\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.field == "density.tol" and exc.value.line == 2
    p.write_text("[chart]\ntau_k = -1.0\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_zero_tau_is_allowed(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[chart]\ntau_k = 0.0\n")
    assert load_config(p).chart.tau_k == 0.0


def test_missing_manifest_and_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[maps]\nextra = ["nope.json"]\n')
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.field == "maps.extra"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_bad_types_and_syntax(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[partition]\ndepth = \"deep\"\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("seed = = 3\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.line == 1


def test_extra_manifest_is_resolved_relative_to_config(tmp_path):
    save_manifest(gallery_spec("diagonal", 17), tmp_path / "diag.json")
    p = tmp_path / "c.toml"
    p.write_text('[maps]\nextra = ["diag.json"]\n')
    cfg = load_config(p)
    assert load_manifest(cfg.extra_maps[0]).grid == (17, 17)
    assert cfg.fingerprint()["extra_maps"] == ["diag.json"]


def test_fingerprint_ignores_out_and_threads():
    a, b = ExperimentConfig(), ExperimentConfig(out="x", threads=4)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != ExperimentConfig(seed=1).fingerprint()


def test_zero_tau_skips_chart_checks():
    cfg = ExperimentConfig()
    cfg.chart.tau_k = 0.0
    report = run_suite(cfg, only=["AC05", "AC06", "AC07"])
    assert [c.status for c in report.checks] == ["skip"] * 3
    assert "tau_K = 0.0" in report.checks[0].reason
    assert not report.failed


def test_exceptions_become_failures():
    def boom(ctx):
        raise RuntimeError("broken module")

    res = run_check("AC99", "broken", boom, SuiteContext(ExperimentConfig(), 1))
    assert res.status == "fail" and "broken module" in res.reason


def test_worst_part_is_reported():
    parts = [Part("a", 0.5, 1.0), Part("b", 0.95, 1.0), Part("c", 3.0, 2.0, ">=")]
    res = run_check("AC98", "t", lambda ctx: parts, SuiteContext(ExperimentConfig(), 1))
    assert res.status == "pass" and res.measured == 0.95 and res.slack == pytest.approx(0.05)
    res = run_check("AC98", "t", lambda ctx: parts + [Part("d", 1.0, 2.0, ">=")], SuiteContext(ExperimentConfig(), 1))
    assert res.status == "fail" and res.reason == "d"


def test_check_ids_are_ordered():
    assert [c[0] for c in CHECKS] == [f"AC{i:02d}" for i in range(1, 12)]


def test_report_files_use_lf(tmp_path):
    report = run_suite(ExperimentConfig(), only=["AC08", "AC09"])
    js, cs = report.save(tmp_path)
    for path in (js, cs):
        data = path.read_bytes()
        assert b"\r" not in data and data.endswith(b"\n")
    assert cs.read_text().splitlines()[0] == "id,status,measured,bound,slack,title,reason"
    loaded = json.loads(js.read_text())
    assert [c["id"] for c in loaded["checks"]] == ["AC08", "AC09"]
    assert "threads" not in loaded["fingerprint"] and "out" not in loaded["fingerprint"]


def test_emit_plot_data_columns(tmp_path):
    f = make_map(gallery_spec("projection", 33))
    field_csv = emit_plot_data(density_field(f, 8), tmp_path / "field.csv")
    assert field_csv.read_text().splitlines()[0] == "x,y,r,ratio,theta_upper,theta_lower"
    ladder_csv = emit_plot_data(density_profile(f, (0.5, 0.5)), tmp_path / "ladder.csv")
    assert ladder_csv.read_text().splitlines()[0] == "r,ratio"
    part_csv = emit_plot_data(nm_content_dyadic(f, 1, 1, 2), tmp_path / "part.csv")
    lines = part_csv.read_text().splitlines()
    assert lines[0] == "address,side,content,term"
    assert len(lines) >= 2
    for p in (field_csv, ladder_csv, part_csv):
        assert b"\r" not in p.read_bytes()
