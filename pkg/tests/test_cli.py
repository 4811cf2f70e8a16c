"""Command line behavior: happy path, exit codes, file artifacts."""

import json

import numpy as np
import pytest

from spatialgnn.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_full_pipeline_through_files(tmp_path, capsys):
    data = tmp_path / "data"
    run_dir = tmp_path / "run"

    code, out, _ = run(capsys, "synth-data", "--out", str(data),
                       "--samples", "60", "--image-size", "48", "--seed", "3")
    assert code == 0
    assert "wrote 60 samples" in out
    assert (data / "manifest.json").exists()

    code, out, _ = run(capsys, "train", "--data", str(data), "--out", str(run_dir),
                       "--node-size", "16", "--quiet",
                       "--set", "model.encoder.channels=[4]",
                       "--set", "model.encoder.dropout_rate=0.0",
                       "--set", "model.gnn.layers=1",
                       "--set", "model.gnn.dropout_rate=0.0",
                       "--set", "train.epochs=2",
                       "--set", "train.batch_size=16",
                       "--set", "train.lr=0.003")
    assert code == 0
    assert "trained 2 epochs" in out
    assert (run_dir / "best.ckpt").exists()

    code, out, _ = run(capsys, "eval", "--data", str(data),
                       "--ckpt", str(run_dir / "best.ckpt"),
                       "--split", "test", "--node-size", "16",
                       "--out", str(tmp_path / "ev"))
    assert code == 0
    assert "accuracy=" in out
    assert (tmp_path / "ev" / "confusion.tsv").exists()
    assert (tmp_path / "ev" / "iou_table.png").exists()

    code, out, _ = run(capsys, "report", "--run", str(run_dir),
                       "--data", str(data), "--split", "test",
                       "--node-size", "16")
    assert code == 0
    report = run_dir / "report"
    for name in ("curves.png", "confusion.tsv", "confusion.png",
                 "iou_table.tsv", "iou_table.png"):
        assert (report / name).exists(), name
    # delimited tables carry four-decimal cells
    first_row = (report / "iou_table.tsv").read_text().splitlines()[1]
    rank, method, value = first_row.split("\t")
    assert (rank, method) == ("1", "yolo")
    assert len(value.split(".")[1]) == 4


def test_gradcheck_command_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--only", "segment")
    assert code == 0
    assert "gradcheck PASS" in out


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # missing required --data/--out
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc2:
        main(["no-such-command"])
    assert exc2.value.code == 1


def test_data_errors_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", str(tmp_path / "missing"),
                       "--out", str(tmp_path / "out"))
    assert code == 2
    assert "error:" in err

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!" * 4)
    code, _, err = run(capsys, "eval", "--data", str(tmp_path), "--ckpt", str(bad))
    assert code == 2


def test_config_file_plus_set_overrides(tmp_path, capsys):
    data = tmp_path / "data"
    run(capsys, "synth-data", "--out", str(data), "--samples", "30",
        "--image-size", "48", "--seed", "1")
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "# tiny run\n"
        "model.encoder.channels = [4]\n"
        "model.gnn.layers = 1\n"
        "train.epochs = 1\n"
        "train.batch_size = 8\n"
    )
    out_dir = tmp_path / "run"
    code, out, _ = run(capsys, "train", "--data", str(data), "--out", str(out_dir),
                       "--node-size", "16", "--quiet", "--config", str(cfg),
                       "--set", "train.epochs=2")
    assert code == 0
    assert "trained 2 epochs" in out  # --set wins over the file
    meta = json.loads((out_dir / "run_meta.json").read_text())
    assert meta["model_config"]["encoder"]["channels"] == [4]


def test_unknown_config_key_exits_2(tmp_path, capsys):
    data = tmp_path / "data"
    run(capsys, "synth-data", "--out", str(data), "--samples", "12",
        "--image-size", "48", "--seed", "1")
    code, _, err = run(capsys, "train", "--data", str(data),
                       "--out", str(tmp_path / "run"),
                       "--set", "model.no_such_knob=1")
    assert code == 2
    assert "no_such_knob" in err


def test_numeric_failure_exits_3(capsys):
    # an unattainable tolerance turns a healthy gradient check into a
    # numeric failure, which must map to exit code 3
    code, out, err = run(capsys, "gradcheck", "--only", "linear",
                         "--tolerance", "1e-20")
    assert code == 3
    assert "gradcheck FAIL" in out
    assert "error:" in err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
