import json

import numpy as np
import pytest

from unportrait.cli import main
from unportrait.fileio import read_flow, read_manifest, read_png


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_all_commands_succeed(cli_runs):
    _, status, _, _ = cli_runs
    assert status == {k: 0 for k in status}


def test_synth_counts(cli_runs):
    root = cli_runs[0]
    header, rows = read_manifest(root / "data" / "manifest.txt")
    assert len(rows) + len(header["rejected"]) == 2 * 4 * 6
    assert len({r["id"] for r in rows}) == len(rows)


def test_reruns_byte_identical(cli_runs):
    a, _, b, _ = cli_runs
    ta, tb = _tree(a), _tree(b)
    assert ta.keys() == tb.keys()
    different = [k for k in ta if ta[k] != tb[k]]
    assert different == []
    kinds = {k.rsplit(".", 1)[-1] for k in ta}
    assert {"txt", "updm", "flw", "json", "png"} <= kinds


def test_train_outputs(cli_runs):
    models = cli_runs[0] / "models"
    assert {"models.json", "classifier.updm", "flownet.updm", "completion.updm", "train_report.json"} <= {
        p.name for p in models.iterdir()}
    assert len(list((models / "epochs").iterdir())) == 3
    report = json.loads((models / "train_report.json").read_text())
    assert report["samples"] > 0 and len(report["flownet_epoch_loss"]) == 1


def test_undistort_outputs(cli_runs):
    out = cli_runs[0] / "undistort"
    report = json.loads((out / "report.json").read_text())
    assert 17.4 <= report["est_distance_cm"] <= 160.0
    assert 0 <= report["label"] <= 7
    final = read_png(out / "final.png")
    assert final.shape == (64, 64)
    assert read_flow(out / "flow.flw").shape == (64, 64)


def test_oracle_undistort_uses_given_flow(cli_runs):
    root = cli_runs[0]
    _, rows = read_manifest(root / "data" / "manifest.txt")
    given = read_flow(root / "data" / rows[0]["flow"])
    used = read_flow(root / "oracle" / "flow.flw")
    np.testing.assert_array_equal(given.flow, used.flow)
    report = json.loads((root / "oracle" / "report.json").read_text())
    assert report["oracle_flow"] and report["est_distance_cm"] == rows[0]["distance_cm"]


def test_eval_report(cli_runs):
    report = json.loads((cli_runs[0] / "eval.json").read_text())
    stats = report["distance_stats"]
    assert stats["mean_relative_error"] == pytest.approx(0.1, abs=1e-4)
    assert report["unpredicted"] == 0


def test_estimate_geometric(cli_runs):
    report = json.loads((cli_runs[0] / "estimate.json").read_text())
    assert report["geometric"]["distance_cm"] == pytest.approx(40.0, rel=0.01)
    assert "classifier" in report


def test_calibrate_report(cli_runs):
    report = json.loads((cli_runs[0] / "calibrate.json").read_text())
    np.testing.assert_allclose(report["color"]["matrix"],
                               [[0.9, 0.05, 0.0], [0.1, 1.1, 0.0], [0.0, -0.05, 0.95]], atol=1e-6)
    assert report["similarity"]["scale"] == pytest.approx(1.5, abs=1e-6)
    assert report["similarity"]["theta_deg"] == pytest.approx(90.0, abs=1e-6)


def test_preprocess_outputs(cli_runs):
    out = cli_runs[0] / "pre"
    tf = json.loads((out / "transform.json").read_text())
    assert tf["size"] == 64 and tf["scale"] > 0
    assert read_png(out / "preprocessed.png").shape == (64, 64)


def test_unknown_flag_exits_1(capsys):
    assert main(["synth", "--bogus", "--out", "x"]) == 1
    assert "usage" in capsys.readouterr().err.lower()
    assert main([]) == 1


def test_validation_error_exits_1(tmp_path):
    assert main(["calibrate"]) == 1
    assert main(["eval", "--manifest", str(tmp_path / "missing.txt"), "--pred", str(tmp_path / "p.txt")]) == 1


def test_runtime_failure_exits_2(cli_runs, tmp_path):
    from unportrait.fileio import write_mask, write_png
    from unportrait.imaging import ImageBuffer

    write_png(tmp_path / "in.png", ImageBuffer.from_rgb(np.zeros((64, 64, 3))))
    write_mask(tmp_path / "mask.png", np.zeros((64, 64), bool))
    args = ["undistort", "--input", str(tmp_path / "in.png"), "--mask", str(tmp_path / "mask.png"),
            "--models", str(cli_runs[0] / "models"), "--distance", "40", "--out", str(tmp_path / "o")]
    assert main(args) == 2
