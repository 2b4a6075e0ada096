import hashlib
import json
import shutil
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from ratiodecomp.cli import main
from ratiodecomp.simulator import write_config

SVG = "{http://www.w3.org/2000/svg}"


def run_config(tmp_path, small_config, **extra):
    write_config(small_config, tmp_path / "sim.json")
    cfg = {"simulation": "sim.json", "path": "both", "report": "svg", **extra}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory, small_config):
    base = tmp_path_factory.mktemp("cli")
    cfg = run_config(base, small_config)
    out = base / "out"
    assert main(["--out-dir", str(out), "--config", str(cfg), "decompose"]) == 0
    return base, cfg, out


def sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


def artifacts(out):
    return sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())


def test_manifest_lists_every_file(small_run):
    _, _, out = small_run
    manifest = json.loads((out / "manifest.json").read_text())
    files = [f for f in artifacts(out) if f != "manifest.json"]
    assert sorted(manifest["files"]) == files
    for name, digest in manifest["files"].items():
        assert sha(out / name) == digest
    for key in ("version", "seed", "config_hash", "stage_seconds", "numpy", "python"):
        assert key in manifest


def test_expected_artifacts(small_run):
    _, _, out = small_run
    names = set(artifacts(out))
    for f in ("panel.csv", "metric.csv", "ghat.csv", "model.json", "residuals.csv", "effects.csv",
              "contributions.csv", "spc.csv", "lin_constants.json", "lform.csv", "reconstruction.csv",
              "path_comparison.csv", "screening.csv", "joint_model.json"):
        assert f in names
    model = json.loads((out / "model.json").read_text())
    for s in model["survivors"]:
        assert f"transform_{s}.json" in names


def test_rerun_is_byte_identical(small_run, tmp_path):
    _, cfg, out = small_run
    again = tmp_path / "again"
    assert main(["--out-dir", str(again), "--config", str(cfg), "decompose"]) == 0
    a = [f for f in artifacts(out) if f != "manifest.json"]
    assert a == [f for f in artifacts(again) if f != "manifest.json"]
    for f in a:
        assert (out / f).read_bytes() == (again / f).read_bytes(), f
    ma = json.loads((out / "manifest.json").read_text())
    mb = json.loads((again / "manifest.json").read_text())
    assert ma["files"] == mb["files"] and ma["config_hash"] == mb["config_hash"]


def test_path_comparison_table(small_run):
    _, _, out = small_run
    df = pd.read_csv(out / "path_comparison.csv")
    assert {"five_step_survivor", "linearization_survivor", "ghat_correlation"} <= set(df.columns)


def test_svg_report(small_run):
    _, _, out = small_run
    model = json.loads((out / "model.json").read_text())
    report = out / "report"
    for s in model["survivors"]:
        assert (report / f"ghat_{s}.svg").exists() and (report / f"ghat_{s}.csv").exists()
    counts = {}
    for svg in report.glob("*.svg"):
        root = ET.parse(svg).getroot()
        counts[svg.stem] = len(root.findall(f".//{SVG}polyline"))
    assert counts["fit"] == 2
    assert counts["spc_residuals"] == 1
    assert all(counts[f"ghat_{s}"] == 1 for s in model["survivors"])


def test_csv_only_report(small_run, tmp_path):
    _, _, out = small_run
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    shutil.rmtree(copy / "report")
    assert main(["--out-dir", str(copy), "report", "--format", "csv"]) == 0
    assert list((copy / "report").glob("*.svg")) == []
    assert (copy / "report" / "fit.csv").exists()


def test_report_needs_artifacts(tmp_path, capsys):
    assert main(["--out-dir", str(tmp_path), "report"]) == 3
    assert "residuals.csv" in capsys.readouterr().err


def test_effects_subcommand(small_run, capsys):
    _, _, out = small_run
    assert main(["--out-dir", str(out), "effects", "--t-ref", "3", "--t", "20"]) == 0
    printed = json.loads(capsys.readouterr().out)
    df = pd.read_csv(out / "effects_3_20.csv")
    per = df[df.feature != "total"]["effect"].sum()
    assert per == pytest.approx(printed["total"], abs=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert "effects_3_20.csv" in manifest["files"]
    assert main(["--out-dir", str(out), "effects", "--t-ref", "5", "--t", "5"]) == 2


def test_scenario_subcommand(small_run, capsys):
    _, _, out = small_run
    model = json.loads((out / "model.json").read_text())
    ghat = pd.read_csv(out / "ghat.csv")
    s0 = model["survivors"][0]
    last = {s: float(ghat[s].iloc[-1]) for s in model["survivors"]}
    overrides = json.dumps({s0: [last[s0], last[s0] + 0.001]})
    assert main(["--out-dir", str(out), "scenario", "--overrides", overrides]) == 0
    z = json.loads(capsys.readouterr().out)["z"]
    fitted_last = pd.read_csv(out / "residuals.csv")["fitted"].iloc[-1]
    assert z[0] == pytest.approx(fitted_last, abs=1e-12)
    assert z[1] - z[0] == pytest.approx(model["betas"][s0] * 0.001, abs=1e-12)
    assert main(["--out-dir", str(out), "scenario", "--overrides", '{"nope": 1}']) == 2


def test_spc_subcommand(small_run, tmp_path, capsys):
    _, _, out = small_run
    dest = tmp_path / "z_spc.csv"
    code = main(["--out-dir", str(out), "spc", "--input", str(out / "metric.csv"), "--column", "z",
                 "--output", str(dest)])
    assert code == 0
    df = pd.read_csv(dest)
    z = pd.read_csv(out / "metric.csv")["z"].to_numpy()
    np.testing.assert_allclose(df["value"], z)
    assert main(["--out-dir", str(out), "spc", "--input", str(out / "metric.csv")]) == 2


def test_simulate_subcommand(tmp_path, small_config, capsys):
    cfg = write_config(small_config, tmp_path / "c.json")
    dest = tmp_path / "p.csv"
    assert main(["simulate", "--config", str(cfg), "--seed", "11", "--out", str(dest)]) == 0
    echo = json.loads((tmp_path / "p_config.json").read_text())
    assert echo["seed"] == 11
    assert dest.exists()


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["--out-dir", str(tmp_path), "--config", str(tmp_path / "none.json"), "decompose"]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"bogus": 1}))
    assert main(["--out-dir", str(tmp_path / "o"), "--config", str(p), "decompose"]) == 2


def test_unparsable_panel_exit_3(tmp_path):
    p = tmp_path / "panel.csv"
    p.write_text("element_id,t,x_a,y_loss,y_balance\na,0,1,0,1\na,1,oops,0,1\n")
    assert main(["--out-dir", str(tmp_path / "o"), "decompose", "--panel", str(p)]) == 3


def test_failure_keeps_partial_outputs(tmp_path, small_config, capsys):
    # no feature can clear a screening threshold of 0.999 on the noisy small panel
    pipe = tmp_path / "pipe.json"
    pipe.write_text(json.dumps({"screen_threshold": 0.999}))
    cfg = run_config(tmp_path, replace(small_config, T=24, t1=8, t2=16), pipeline="pipe.json")
    out = tmp_path / "o"
    assert main(["--out-dir", str(out), "--config", str(cfg), "decompose"]) == 4
    err = capsys.readouterr().err
    assert "[stage screen]" in err
    assert (out / "metric.csv.partial").exists()
    assert not (out / "metric.csv").exists()
    assert not (out / "manifest.json").exists()
