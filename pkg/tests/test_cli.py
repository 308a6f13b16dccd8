import json

import pytest

from beliefmap.cli import EXIT_CONFIG, EXIT_IO, EXIT_PARSE, main


@pytest.fixture(scope="module")
def frames_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "frames"
    assert main(["simgen", "--scenario", "Static", "--seed", "2", "--frames", "60", "--out", str(d)]) == 0
    return d


def test_simgen_and_run(frames_dir, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--frames", str(frames_dir), "--out", str(out), "--single-thread"]) == 0
    assert "status=ok" in capsys.readouterr().out
    log = (out / "run.log").read_text()
    assert "event=config config_hash=" in log and "event=config_value" in log
    assert (out / "map.txt").exists() and (out / "events.log").exists()


def test_run_twice_is_byte_identical(frames_dir, tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--frames", str(frames_dir), "--out", str(tmp_path / name), "--single-thread"]) == 0
    for f in ("map.txt", "events.log", "summary.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_ate_eval(frames_dir, capsys):
    gt = str(frames_dir / "groundtruth.txt")
    assert main(["ate-eval", "--est", gt, "--gt", gt, "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["rmse"] == 0.0 and rep["matched_pairs"] == 60
    assert main(["ate-eval", "--est", gt, "--gt", gt]) == 0
    assert "absolute_translational_error.rmse" in capsys.readouterr().out


def _single_error_line(capsys, kind):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error={kind}")
    return err[0]


def test_config_error_exit_code(frames_dir, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("assoc:\n  iou_threshold: 2\n")
    assert main(["run", "--config", str(cfg), "--frames", str(frames_dir), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "key=assoc.iou_threshold" in _single_error_line(capsys, "config")


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "t.txt"
    bad.write_text("0 0 0 0 0 0 0 1\nnot a pose\n")
    assert main(["ate-eval", "--est", str(bad), "--gt", str(bad)]) == EXIT_PARSE
    assert "line=2" in _single_error_line(capsys, "parse")


def test_io_error_exit_code(tmp_path, capsys):
    assert main(["run", "--frames", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_IO
    _single_error_line(capsys, "io")


def test_other_library_errors_exit_one(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    a.write_text("0 0 0 0 0 0 0 1\n")
    b.write_text("100 0 0 0 0 0 0 1\n")
    assert main(["ate-eval", "--est", str(a), "--gt", str(b)]) == 1
    _single_error_line(capsys, "NoMatches")
