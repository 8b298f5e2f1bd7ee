import csv
import json

import numpy as np
import pytest

from arrayrecoil.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from arrayrecoil.config import RunConfig, config_hash
from arrayrecoil.observables import total_scattering
from arrayrecoil.geometry import build_planar_array

SMALL = {"geometry": {"nx": 3, "ny": 3, "spacing": 0.68}, "initial": {"kind": "eigenstate"}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_validate_ok_and_schema(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, SMALL)]) == EXIT_OK
    rec = json.loads(capsys.readouterr().out)
    assert rec == {"status": "ok", "config_hash": config_hash(SMALL)}
    assert main(["validate", "--print-schema"]) == EXIT_OK
    assert "geometry" in json.loads(capsys.readouterr().out)["properties"]


@pytest.mark.parametrize("bad", [
    {"geometry": {}},
    {"geometry": {"nx": 0, "ny": 3, "spacing": 0.5}},
    {"geometry": {"nx": 3, "ny": 3, "spacing": 0.5}, "numerics": {"dr": 0.1}},
    {"geometry": {"nx": 3, "ny": 3, "spacing": 0.5}, "drive": {"profile": "square"}},
])
def test_schema_errors_exit_2(tmp_path, capsys, bad):
    assert main(["validate", "--config", _write(tmp_path, bad)]) == EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["status"] == "error"


def test_missing_and_malformed_config(tmp_path):
    assert main(["eigenmodes", "--config", str(tmp_path / "nope.json")]) == EXIT_IO
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["eigenmodes", "--config", str(p)]) == EXIT_CONFIG
    assert main(["eigenmodes"]) == EXIT_CONFIG


def test_config_error_with_output_dir_still_writes_a_manifest(tmp_path):
    out = tmp_path / "o"
    cfg = {"geometry": {"nx": 1, "ny": 1, "spacing": 0.5, "defects": [[0, 0]]}}
    assert main(["eigenmodes", "--config", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_CONFIG
    m = _manifest(out)
    assert m["status"] == "error" and m["error"]["exit_code"] == EXIT_CONFIG
    bad = dict(SMALL, experiment="decay")
    assert main(["eigenmodes", "--config", _write(tmp_path, bad), "--out", str(out)]) == EXIT_CONFIG


def test_numerical_failure_exit_3(tmp_path):
    out = tmp_path / "o"
    cfg = {"geometry": {"nx": 3, "ny": 3, "spacing": 0.1}, "initial": {"kind": "atom", "atom": 4},
           "numerics": {"evaluator": "propagation", "dt": 5.0, "t_max": 5000.0}}
    assert main(["decay", "--config", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_NUMERICAL
    m = _manifest(out)
    assert m["status"] == "error" and m["error"]["type"] == "InstabilityError"


def test_eigenmodes_run_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert main(["eigenmodes", "--config", _write(tmp_path, SMALL), "--out", str(out)]) == EXIT_OK
    m = _manifest(out)
    for key in ("experiment", "version", "config_hash", "config_path", "seed", "threads", "started",
                "status", "files", "summary", "wall_time"):
        assert key in m
    assert m["status"] == "ok" and m["config_hash"] == config_hash(SMALL)
    assert m["summary"]["n_modes"] == 9
    assert m["summary"]["slope_dKz_vs_inverse_gamma"] == pytest.approx(0.4, rel=1e-3)
    for f in m["files"]:
        assert (out / f).exists()


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, {"geometry": {"nx": 3, "ny": 3, "spacing": 0.8},
                            "drive": {"rabi": 0.01, "detuning": "peak", "profile": "cw"}})
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["steady", "--config", cfg, "--out", str(o)]) == EXIT_OK
    files = _manifest(outs[0])["files"]
    assert files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    s0, s1 = _manifest(outs[0])["summary"], _manifest(outs[1])["summary"]
    assert s0 == s1


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_sweep_resumes_from_the_manifest(tmp_path):
    cfg = _write(tmp_path, {"geometry": {"nx": 2, "ny": 2, "spacing": 0.5},
                            "sweep": {"quantity": "scattering",
                                      "axes": [{"name": "detuning", "values": [-0.2, 0.0, 0.3, 0.6]}]}})
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["sweep", "--config", cfg, "--out", str(full)]) == EXIT_OK
    assert _manifest(full)["completed"] == [0, 1, 2, 3]
    assert main(["sweep", "--config", cfg, "--out", str(part)]) == EXIT_OK
    # simulate an interruption after the first two points
    rows = _rows(part / "sweep.csv")
    with open(part / "sweep.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows[:3])
    m = _manifest(part)
    m["completed"] = [0, 1]
    (part / "manifest.json").write_text(json.dumps(m))
    assert main(["sweep", "--config", cfg, "--out", str(part)]) == EXIT_OK
    assert (part / "sweep.csv").read_bytes() == (full / "sweep.csv").read_bytes()


def test_single_point_sweep_equals_a_direct_evaluation(tmp_path):
    out = tmp_path / "o"
    cfg = _write(tmp_path, {"geometry": {"nx": 3, "ny": 2, "spacing": 0.6}, "drive": {"rabi": 0.02},
                            "sweep": {"quantity": "scattering", "axes": [{"name": "detuning", "values": [0.15]}]}})
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
    value = float(_rows(out / "sweep.csv")[1][-1])
    # csv rows carry 13 significant digits
    assert value == pytest.approx(total_scattering(build_planar_array(3, 2, 0.6), 0.02, 0.15), rel=1e-12)


def test_mode_contribution_sweep_finds_the_shifts(tmp_path):
    out = tmp_path / "o"
    cfg = _write(tmp_path, {"geometry": {"nx": 3, "ny": 3, "spacing": 0.4},
                            "sweep": {"quantity": "mode_contribution", "modes": 2,
                                      "axes": [{"name": "detuning", "start": -1.5, "stop": 1.5, "num": 301}]}})
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
    peaks = _manifest(out)["summary"]["mode_peaks"]
    assert len(peaks) == 2
    for p in peaks.values():
        assert p["peak_detuning"] == pytest.approx(p["shift"], abs=0.01)


def test_config_round_trip():
    cfg = RunConfig.from_dict(SMALL)
    assert cfg.hash() == config_hash(SMALL)
    d = cfg.to_dict()
    assert d["geometry"]["nx"] == 3 and d["initial"]["kind"] == "eigenstate"
    assert np.isclose(d["numerics"]["dr"], cfg.numerics.dr)
