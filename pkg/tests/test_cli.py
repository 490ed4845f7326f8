import json
import os

import numpy as np
import pytest

from dissipator.cli import main
from dissipator.config import load_config, parse_config
from dissipator.errors import ConfigError
from dissipator.fields import Grid4, random_band_limited
from dissipator.snapshots import read_snapshot, write_snapshot


def small_config(outdir, n_steps=1, lambda0=1, **extra):
    doc = {
        "grid": {"n_space": 12, "n_time": 4},
        "energy": {"kind": "constant", "value": 40.0},
        "scheme": {"eps": 0.125, "a": 4.0, "n_steps": n_steps,
                   "lambda0": lambda0},
        "output": {"dir": str(outdir)},
    }
    for path, value in extra.items():
        block, key = path.split(".")
        doc[block][key] = value
    return doc


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def one_step_run(tmp_path_factory):
    """A completed 1-stage run with snapshots and figures enabled."""
    root = tmp_path_factory.mktemp("one_step")
    outdir = root / "out"
    doc = small_config(outdir, **{"output.snapshots": True,
                                  "output.figures": True})
    cfg_path = write_config(root, doc)
    code = main(["run", "--config", cfg_path])
    assert code == 0
    return outdir, cfg_path


# ------------------------------------------------------------ config layer

def test_parse_config_defaults():
    cfg = parse_config(small_config("/tmp/x"))
    assert cfg.grid == Grid4(12, 4)
    assert cfg.report_name == "report.json"
    assert cfg.spectrum_csv_name == "spectrum.csv"
    assert cfg.override_mode == "warn"
    assert cfg.lambda0 == 1
    assert cfg.tolerance_scale == 1.0
    assert not cfg.write_snapshots and not cfg.render_figures


def test_parse_config_rejects_unknown_keys():
    doc = small_config("/tmp/x")
    doc["scheme"]["mystery"] = 1
    with pytest.raises(ConfigError, match="scheme.*mystery"):
        parse_config(doc)
    doc = small_config("/tmp/x")
    doc["extra_block"] = {}
    with pytest.raises(ConfigError, match="extra_block"):
        parse_config(doc)


def test_parse_config_missing_required():
    doc = small_config("/tmp/x")
    del doc["scheme"]["eps"]
    with pytest.raises(ConfigError, match="eps"):
        parse_config(doc)


def test_parse_config_energy_kinds():
    doc = small_config("/tmp/x")
    doc["energy"] = {"kind": "samples", "values": [40.0, 41.0, 42.0, 41.0]}
    cfg = parse_config(doc)
    lo, hi = cfg.energy.bounds()
    assert lo == pytest.approx(40.0) and hi == pytest.approx(42.0)
    doc["energy"] = {"kind": "ramp", "value": 1.0}
    with pytest.raises(ConfigError, match="kind"):
        parse_config(doc)
    doc["energy"] = {"kind": "constant", "value": -1.0}
    with pytest.raises(ConfigError, match="value"):
        parse_config(doc)


def test_parse_config_override_entries():
    doc = small_config("/tmp/x")
    doc["scheme"]["overrides"] = [
        {"stage": 0, "lam": 2, "mu": 1, "ell": 0.0}]
    cfg = parse_config(doc)
    assert cfg.overrides[0]["lam"] == 2
    doc["scheme"]["overrides"].append({"stage": 0, "lam": 4, "mu": 2})
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(doc)
    doc["scheme"]["overrides"] = [{"stage": 0, "lam": 2}]
    with pytest.raises(ConfigError, match="missing"):
        parse_config(doc)


def test_load_config_reports_json_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "grid": {"n_space": 12,\n}\n')
    with pytest.raises(ConfigError, match=r"line 3 column 1"):
        load_config(str(path))
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "absent.json"))


# -------------------------------------------------------------- snapshots

def test_snapshot_round_trip(tmp_path):
    g = Grid4(12, 4)
    for kind in ("scalar", "vector3", "sym_tensor3"):
        values = random_band_limited(g, kind, 2, seed=7).values
        path = str(tmp_path / f"{kind}.dfld")
        write_snapshot(path, values, g, kind)
        back, g2, kind2 = read_snapshot(path)
        assert g2 == g and kind2 == kind
        assert np.array_equal(back, values)


def test_snapshot_rejects_corruption(tmp_path):
    g = Grid4(12, 4)
    values = random_band_limited(g, "scalar", 2, seed=7).values
    path = str(tmp_path / "field.dfld")
    write_snapshot(path, values, g, "scalar")
    raw = bytearray(open(path, "rb").read())
    raw[:4] = b"XXXX"
    open(path, "wb").write(bytes(raw))
    with pytest.raises(ConfigError, match="magic"):
        read_snapshot(path)
    write_snapshot(path, values, g, "scalar")
    open(path, "ab").write(b"\x00" * 8)
    with pytest.raises(ConfigError, match="payload"):
        read_snapshot(path)


# ---------------------------------------------------------------- cmd_run

def test_run_zero_steps_writes_valid_report(tmp_path, capsys):
    doc = small_config(tmp_path / "out", n_steps=0)
    code = main(["run", "--config", write_config(tmp_path, doc)])
    assert code == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["version"] == 1
    assert report["run"]["steps"] == []
    assert report["run"]["stop_reason"] == "completed"
    assert report["spectrum"]["rows"] == []
    csv = (tmp_path / "out" / "spectrum.csv").read_text().splitlines()
    assert csv == ["n,lambda,E,increment"]


def test_run_single_step_report_sections(one_step_run):
    outdir, _ = one_step_run
    report = json.loads((outdir / "report.json").read_text())
    assert len(report["run"]["steps"]) == 1
    step_doc = report["run"]["steps"][0]
    for key in ("div_rel", "trace_sup", "rows", "hypothesis_rows",
                "energy_ratio_min", "empirical_a"):
        assert key in step_doc
    names = [r["name"] for r in step_doc["rows"]]
    assert "stress_decay" in names and "velocity_increment" in names
    assert "runtime_s" not in step_doc
    assert report["run"]["calibration"]["eta"] > 0.0
    # all three per-stage snapshot kinds for both states, plus figures
    for i in (0, 1):
        for stem in ("v", "p", "stress"):
            assert (outdir / f"{stem}_{i}.dfld").exists()
    for name in ("spectrum.png", "stress_decay.png", "energy_margins.png"):
        assert (outdir / name).exists()


def test_run_deterministic_bytes(tmp_path):
    doc = small_config(tmp_path / "out")
    cfg = write_config(tmp_path, doc)
    assert main(["run", "--config", cfg]) == 0
    first = (tmp_path / "out" / "report.json").read_bytes()
    assert main(["run", "--config", cfg]) == 0
    assert (tmp_path / "out" / "report.json").read_bytes() == first


def test_run_resolution_exhaustion_partial_report(tmp_path):
    # stage 0 fits (band 4 <= 5) but stage 1 doubles past the grid
    doc = small_config(tmp_path / "out", n_steps=2, lambda0=1)
    code = main(["run", "--config", write_config(tmp_path, doc)])
    assert code == 3
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert len(report["run"]["steps"]) == 1
    assert report["run"]["stop_reason"].startswith("resolution exhausted")


def test_run_override_mode_fail_exits_config(tmp_path):
    # from rest the mu floor is violated, so fail mode refuses to run
    doc = small_config(tmp_path / "out")
    code = main(["run", "--config", write_config(tmp_path, doc),
                 "--override-mode", "fail"])
    assert code == 2


def test_run_malformed_json_exit(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"grid": }')
    assert main(["run", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 1" in err and "column" in err


# ------------------------------------------------------------- cmd_verify

def test_verify_accepts_run_output(one_step_run, capsys):
    outdir, _ = one_step_run
    code = main(["verify",
                 "--velocity", str(outdir / "v_1.dfld"),
                 "--pressure", str(outdir / "p_1.dfld"),
                 "--stress", str(outdir / "stress_1.dfld")])
    out = capsys.readouterr().out
    assert code == 0
    assert "verdict: pass" in out
    assert "residual sup" in out and "trace sup" in out


def test_verify_detects_injected_trace(one_step_run, tmp_path, capsys):
    outdir, _ = one_step_run
    r6, g, kind = read_snapshot(str(outdir / "stress_1.dfld"))
    r6[0] += 0.05  # pure-trace corruption
    bad = str(tmp_path / "stress_bad.dfld")
    write_snapshot(bad, r6, g, kind)
    code = main(["verify",
                 "--velocity", str(outdir / "v_1.dfld"),
                 "--pressure", str(outdir / "p_1.dfld"),
                 "--stress", bad])
    out = capsys.readouterr().out
    assert code == 1
    assert "verdict: FAIL" in out
    trace_line = [l for l in out.splitlines() if l.startswith("trace sup")][0]
    assert float(trace_line.split(":")[1]) == pytest.approx(0.05)


def test_verify_zero_triple(tmp_path, capsys):
    g = Grid4(12, 4)
    paths = {}
    for name, kind, shape in (("v", "vector3", (3,) + g.shape),
                              ("p", "scalar", g.shape),
                              ("r", "sym_tensor3", (6,) + g.shape)):
        paths[name] = str(tmp_path / f"{name}.dfld")
        write_snapshot(paths[name], np.zeros(shape), g, kind)
    code = main(["verify", "--velocity", paths["v"],
                 "--pressure", paths["p"], "--stress", paths["r"]])
    assert code == 0
    assert "verdict: pass" in capsys.readouterr().out


def test_verify_grid_mismatch(one_step_run, tmp_path, capsys):
    outdir, _ = one_step_run
    g = Grid4(16, 4)
    other = str(tmp_path / "p16.dfld")
    write_snapshot(other, np.zeros(g.shape), g, "scalar")
    code = main(["verify",
                 "--velocity", str(outdir / "v_1.dfld"),
                 "--pressure", other,
                 "--stress", str(outdir / "stress_1.dfld")])
    assert code == 2
    assert "do not match" in capsys.readouterr().err


# ----------------------------------------------------------- cmd_schedule

def test_schedule_table_and_bound(capsys):
    assert main(["schedule", "--eps", "0.01", "--a", "4", "--n", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    data = [l for l in out if l[0].isdigit()]
    assert len(data) == 1  # single row for n=0
    bound = [l for l in out if l.startswith("theta bound")][0]
    assert float(bound.split(":")[1]) == pytest.approx(0.0962, abs=2e-4)
    slope = [l for l in out if l.startswith("spectrum slope")][0]
    assert float(slope.split(":")[1]) == pytest.approx(-1.1924, abs=2e-4)


def test_schedule_range_error(capsys):
    assert main(["schedule", "--eps", "0.3", "--a", "4", "--n", "1"]) == 2


# ----------------------------------------------------------- cmd_spectrum

def test_spectrum_from_snapshots(tmp_path, capsys):
    g = Grid4(12, 4)
    rng = np.random.default_rng(5)
    paths = []
    field = np.zeros((3,) + g.shape)
    for i in range(4):
        field = field + rng.normal(scale=2.0 ** (-i), size=field.shape)
        path = str(tmp_path / f"v_{i}.dfld")
        write_snapshot(path, field, g, "vector3")
        paths.append(path)
    out_csv = str(tmp_path / "spec.csv")
    code = main(["spectrum", "--velocity", *paths,
                 "--lams", "1", "2", "4", "--out", out_csv])
    assert code == 0
    assert "slope" in capsys.readouterr().out
    lines = open(out_csv).read().splitlines()
    assert lines[0] == "n,lambda,E,increment"
    assert len(lines) == 4


def test_spectrum_count_mismatch(tmp_path, capsys):
    g = Grid4(12, 4)
    path = str(tmp_path / "v.dfld")
    write_snapshot(path, np.zeros((3,) + g.shape), g, "vector3")
    code = main(["spectrum", "--velocity", path, "--lams", "1", "2"])
    assert code == 2


# -------------------------------------------------------------- cmd_audit

def test_audit_reproduces_recorded_stage(one_step_run, capsys):
    outdir, _ = one_step_run
    code = main(["audit", "--report", str(outdir / "report.json"),
                 "--snapshots", str(outdir), "--stage", "0"])
    out = capsys.readouterr().out
    assert code == 0
    for name in ("wave_sup", "corrector_sup", "total_increment_sup",
                 "coefficient_sup", "energy_error", "stress_sup",
                 "stress_c1"):
        assert name in out
    # the re-derived stress sup equals the recorded stress_decay row
    report = json.loads((outdir / "report.json").read_text())
    recorded = [r for r in report["run"]["steps"][0]["rows"]
                if r["name"] == "stress_decay"][0]["measured"]
    line = [l for l in out.splitlines() if l.startswith("stress_sup")][0]
    measured = float(line.split("measured=")[1].split()[0])
    # printed with six significant digits
    assert measured == pytest.approx(recorded, rel=1e-6)


def test_audit_stage_out_of_range(one_step_run, capsys):
    outdir, _ = one_step_run
    code = main(["audit", "--report", str(outdir / "report.json"),
                 "--snapshots", str(outdir), "--stage", "3"])
    assert code == 2
    assert "stage 3" in capsys.readouterr().err
