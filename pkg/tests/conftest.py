import os

import pytest

# one thread keeps floating-point reduction order, and so checkpoints, stable
os.environ.setdefault("UNPORTRAIT_THREADS", "1")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """2 subjects x 2 views x 3 distances at 32 px, rendered once per session."""
    from unportrait.dataset import DatasetSpec, generate_dataset, load_dataset

    out = tmp_path_factory.mktemp("tiny")
    spec = DatasetSpec(subjects=2, views=2, distances=3, size=32, supersample=2, seed=7,
                       pose_range_deg=(10.0, 10.0, 10.0))
    header, rows = generate_dataset(spec, out)
    return out, header, rows, load_dataset(out / "manifest.txt")


def _write_cli_inputs(root):
    """Deterministic input files for a CLI run."""
    import numpy as np

    from unportrait.camera import CameraConfig
    from unportrait.fileio import write_png
    from unportrait.mesh import parametric_head
    from unportrait.render import render_pair

    pair = render_pair(parametric_head(), 40.0, (0.0, 0.0, 0.0), CameraConfig(128.4, (64, 64)))
    write_png(root / "portrait.png", pair.near.color)
    lines = [f"{k} {v[0]:.6f} {v[1]:.6f}" for k, v in sorted(pair.near.landmarks_px.items())]
    (root / "landmarks.txt").write_text("\n".join(lines) + "\n")
    rng = np.random.default_rng(0)
    src = rng.random((24, 3))
    dst = src @ np.array([[0.9, 0.05, 0.0], [0.1, 1.1, 0.0], [0.0, -0.05, 0.95]]).T
    (root / "colors.txt").write_text("".join(" ".join(f"{x:.9f}" for x in r) + "\n" for r in np.hstack([src, dst])))
    p = rng.random((6, 2)) * 100
    q = 1.5 * p @ np.array([[0.0, -1.0], [1.0, 0.0]]).T + [3.0, -2.0]
    (root / "points.txt").write_text("".join(" ".join(f"{x:.9f}" for x in r) + "\n" for r in np.hstack([p, q])))


def run_cli_suite(root):
    """Every subcommand once, seeded; returns {name: exit status}."""
    from unportrait.cli import main
    from unportrait.fileio import read_manifest

    root.mkdir(parents=True, exist_ok=True)
    _write_cli_inputs(root)
    r = str(root)
    status = {"synth": main(["synth", "--subjects", "2", "--views", "4", "--distances", "6", "--supersample", "2",
                             "--seed", "3", "--out", f"{r}/data"])}
    _, rows = read_manifest(root / "data" / "manifest.txt")
    (root / "preds.txt").write_text("".join(f"{row['id']} {row['distance_cm'] * 1.1:.4f}\n" for row in rows))
    first = rows[0]
    status["train"] = main(["train", "--manifest", f"{r}/data/manifest.txt", "--epochs", "1", "--epoch-checkpoints",
                            "--seed", "3", "--out", f"{r}/models"])
    status["estimate"] = main(["estimate", "--input", f"{r}/portrait.png", "--models", f"{r}/models",
                               "--landmarks", f"{r}/landmarks.txt", "--out", f"{r}/estimate.json"])
    status["undistort"] = main(["undistort", "--input", f"{r}/portrait.png", "--models", f"{r}/models",
                                "--seed", "3", "--out", f"{r}/undistort"])
    status["undistort_oracle"] = main(["undistort", "--input", f"{r}/data/{first['near']}", "--models",
                                       f"{r}/models", "--oracle-flow", f"{r}/data/{first['flow']}",
                                       "--distance", str(first["distance_cm"]), "--out", f"{r}/oracle"])
    status["eval"] = main(["eval", "--manifest", f"{r}/data/manifest.txt", "--pred", f"{r}/preds.txt",
                           "--out", f"{r}/eval.json"])
    status["calibrate"] = main(["calibrate", "--color", f"{r}/colors.txt", "--points", f"{r}/points.txt",
                                "--out", f"{r}/calibrate.json"])
    status["preprocess"] = main(["preprocess", "--input", f"{r}/portrait.png", "--landmarks", f"{r}/landmarks.txt",
                                 "--size", "64", "--out", f"{r}/pre"])
    return status


@pytest.fixture(scope="session")
def cli_runs(tmp_path_factory):
    """The CLI suite run twice from scratch with the same seeds."""
    base = tmp_path_factory.mktemp("cli")
    return base / "a", run_cli_suite(base / "a"), base / "b", run_cli_suite(base / "b")
