import subprocess
import sys

import pytest

from bcml import cli, io

ONE_D = """[run]
pipeline = scalar
[manifold]
kind = interval
n = 24
[forward]
T_factor = 1.2
cfl_safety = 1.0
snap = T
[checks]
s_values = 0.3, 0.5
"""

SOLENOIDAL = """[run]
pipeline = solenoidal
[solenoidal]
sizes = 4, 5, 6
calkin_k = 3
"""


@pytest.fixture(scope="module")
def one_d_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("one_d")
    (d / "c.ini").write_text(ONE_D)
    codes = [cli.main(["forward", "--config", str(d / "c.ini"), "--out", str(d / "out"), "--verify"]),
             cli.main(["reconstruct", "--config", str(d / "c.ini"), "--out", str(d / "out"), "--verify"])]
    return d, codes


def test_forward_then_reconstruct_passes(one_d_run, capsys):
    d, codes = one_d_run
    assert codes == [0, 0]
    out = d / "out"
    for name in ("response.blob", "response.json", "connecting.blob", "eikonal_left.blob", "cloud.csv",
                 "copy.csv", "eikonals.csv", "distance_errors.csv", "report.json", "acceptance.csv",
                 "eikonals.png", "cloud.png", "distance_errors.png"):
        assert (out / name).exists(), name
    rows = io.read_json(out / "report.json")["acceptance"]
    assert rows[0]["criterion"] == 1 and rows[0]["passed"]
    assert {r["criterion"] for r in rows} == {1, 2, 3}
    assert all(r["passed"] for r in rows)


def test_rerun_is_byte_identical(one_d_run, tmp_path):
    d, _ = one_d_run
    assert cli.main(["forward", "--config", str(d / "c.ini"), "--out", str(tmp_path)]) == 0
    assert cli.main(["reconstruct", "--config", str(d / "c.ini"), "--out", str(tmp_path)]) == 0
    for name in ("response.blob", "connecting.blob", "eikonal_right.blob", "cloud.csv", "copy.csv"):
        assert (tmp_path / name).read_bytes() == (d / "out" / name).read_bytes(), name
    a = io.read_json(tmp_path / "report.json")["manifest"]["content_hash"]
    assert a == io.read_json(d / "out" / "report.json")["manifest"]["content_hash"]


def test_reconstruct_from_separate_data_dir(one_d_run, tmp_path):
    d, _ = one_d_run
    code = cli.main(["reconstruct", "--config", str(d / "c.ini"), "--out", str(tmp_path),
                     "--data", str(d / "out")])
    assert code == 0
    assert (tmp_path / "copy.csv").read_bytes() == (d / "out" / "copy.csv").read_bytes()


def test_report_regenerates(one_d_run, capsys):
    d, _ = one_d_run
    (d / "out" / "cloud.png").unlink()
    assert cli.main(["report", "--out", str(d / "out")]) == 0
    assert (d / "out" / "cloud.png").exists()
    assert "[PASS] 1." in capsys.readouterr().out


def test_solenoidal_small(tmp_path, capsys):
    (tmp_path / "s.ini").write_text(SOLENOIDAL)
    code = cli.main(["solenoidal", "--config", str(tmp_path / "s.ini"), "--out", str(tmp_path / "o")])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") + out.count("[FAIL]") == 5
    header, rows = io.read_csv(tmp_path / "o" / "singular_values.csv")
    assert len(header) == 1 + 3 * 3
    assert len(list((tmp_path / "o").glob("decay_*.png"))) == 9
    assert (tmp_path / "o" / "series.csv").exists()


def test_solenoidal_verify_fails_on_flat_eff_series(tmp_path):
    # the f - Y[f] tail ratio is zero at every size, so strict decrease fails
    (tmp_path / "s.ini").write_text(SOLENOIDAL)
    assert cli.main(["solenoidal", "--config", str(tmp_path / "s.ini"), "--out", str(tmp_path), "--verify"]) == 1


def test_verify_single_stage(capsys):
    assert cli.main(["verify", "--stage", "1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("[PASS] 1.")


@pytest.mark.parametrize("argv", [
    ["verify", "--stage", "9"],
    ["verify", "--stage", "one"],
    ["frobnicate"],
    ["forward"],
    ["forward", "--config", "/nonexistent.ini", "--out", "x"],
    ["report", "--out", "/nonexistent_dir_for_bcml"],
])
def test_usage_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 2


def test_short_horizon_config_exit_2(tmp_path):
    (tmp_path / "c.ini").write_text(ONE_D.replace("T_factor = 1.2", "T_factor = 0.8"))
    assert cli.main(["forward", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "response.blob").exists()


def test_wrong_pipeline_and_missing_data(tmp_path):
    (tmp_path / "s.ini").write_text(SOLENOIDAL)
    (tmp_path / "c.ini").write_text(ONE_D)
    assert cli.main(["forward", "--config", str(tmp_path / "s.ini"), "--out", str(tmp_path)]) == 2
    assert cli.main(["reconstruct", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "e")]) == 2


@pytest.mark.parametrize("value", ["0", "many"])
def test_bad_thread_cap(value, tmp_path, monkeypatch):
    monkeypatch.setenv("BCML_THREADS", value)
    (tmp_path / "c.ini").write_text(ONE_D)
    assert cli.main(["forward", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 2


def test_corrupt_blob_is_acceptance_failure(one_d_run, tmp_path):
    d, _ = one_d_run
    buf = bytearray((d / "out" / "response.blob").read_bytes())
    buf[20] ^= 0xFF
    (tmp_path / "response.blob").write_bytes(bytes(buf))
    (tmp_path / "response.json").write_bytes((d / "out" / "response.json").read_bytes())
    assert cli.main(["reconstruct", "--config", str(d / "c.ini"), "--out", str(tmp_path)]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "bcml.cli", "verify", "--stage", "x"], capture_output=True, text=True)
    assert r.returncode == 2 and "--stage" in r.stderr
