"""Command-line pipeline: the five subcommands chained on a small dataset."""

import json

import numpy as np
import pytest

from lftcam.cli import main
from lftcam.features import read_features_csv, write_features_csv
from lftcam.manifest import DatasetManifest, read_manifest, write_manifest

SMALL_SCENE = {
    "camera": {
        "F_mm": 50.0,
        "dc_mm": 58.0,
        "dm_mm": 57.0,
        "pixel_um": 10.0,
        "sensor_h": 400,
        "sensor_w": 400,
        "n_h": 20,
        "n_w": 20,
    },
    "board": {"rows": 4, "cols": 3, "square_mm": 4.5},
    "sim": {
        "n_views": 5,
        "seed": 31,
        "base_z_mm": 277.3,
        "rot_range_deg": 10.0,
        "trans_range_mm": 3.0,
        "sweep": {"min": 265.0, "max": 285.0, "step": 10.0},
    },
}

TINY_SCENE = {
    "camera": SMALL_SCENE["camera"],
    "board": SMALL_SCENE["board"],
    "sim": {
        "n_views": 1,
        "seed": 31,
        "base_z_mm": 277.3,
        "rot_range_deg": 5.0,
        "trans_range_mm": 1.0,
        "sweep": {"min": 277.3, "max": 277.3, "step": 1.0},
    },
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full simulate -> detect -> calibrate -> evaluate -> bench run."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "scene.json"
    cfg.write_text(json.dumps(SMALL_SCENE))
    data = root / "data"
    steps = [
        ["simulate", "--config", str(cfg), "--out", str(data)],
        ["detect", "--manifest", str(data / "manifest.json"), "--out", str(data)],
        [
            "calibrate",
            "--manifest", str(data / "manifest.json"),
            "--features", str(data / "features.csv"),
            "--out", str(data),
        ],
        [
            "evaluate",
            "--manifest", str(data / "manifest.json"),
            "--features", str(data / "features.csv"),
            "--report", str(data / "report.json"),
            "--out", str(data),
        ],
        ["bench", "--config", str(cfg), "--frames", "2", "--out", str(data)],
    ]
    for argv in steps:
        assert main(argv) == 0, argv[0]
    return cfg, data


def test_simulate_writes_manifest_and_images(pipeline):
    _, data = pipeline
    manifest = read_manifest(data / "manifest.json")
    assert [v.view_id for v in manifest.calibration_views()] == [
        f"cal_{k:03d}" for k in range(5)
    ]
    assert [v.view_id for v in manifest.evaluation_views()] == [
        f"eval_{k:03d}" for k in range(3)
    ]
    assert manifest.sweep_step_mm == 10.0
    assert manifest.noise_sensor == 0.0
    for v in manifest.views:
        assert (data / v.image).exists()


def test_detect_writes_features_for_every_view(pipeline):
    _, data = pipeline
    by_view = read_features_csv(data / "features.csv")
    assert len(by_view) == 8
    assert all(len(feats) >= 4 * 12 for feats in by_view.values())


def test_calibrate_writes_plausible_report(pipeline):
    _, data = pipeline
    report = json.loads((data / "report.json").read_text())
    # Five narrow-baseline views of a small board: plumbing-level accuracy.
    assert abs(report["F_mm"] - 50.0) / 50.0 < 0.12
    assert report["dc_mm"] > report["dm_mm"] > 0
    assert report["rmse_lightfield_px"] < 0.5
    assert len(report["per_view"]) == 5


def test_evaluate_writes_sweep_outputs(pipeline):
    _, data = pipeline
    ev = json.loads((data / "evaluation.json").read_text())
    assert [pv["view_id"] for pv in ev["per_view"]] == ["eval_000", "eval_001", "eval_002"]
    assert ev["r_squared_alpha"] > 0.95
    assert ev["epsilon_z"]["mean"] < 0.15
    assert len(ev["epsilon_z"]["series"]) == 2
    assert set(ev["equivalence"]) == {"F", "D", "d", "K1", "K2", "u0", "v0"}
    scatter = (data / "alpha_scatter.csv").read_text().splitlines()
    assert scatter[0] == "view_id,corner_idx,z_prime_mm,alpha_hat,alpha_pred,depth_alpha_mm"
    assert len(scatter) == 1 + 3 * 12
    eps = (data / "epsilon_z.csv").read_text().splitlines()
    assert eps[0] == "from_view,to_view,delta_hat_mm,delta_mm,epsilon_z"
    assert len(eps) == 3


def test_bench_times_renders(pipeline):
    _, data = pipeline
    doc = json.loads((data / "bench.json").read_text())
    assert (doc["sensor_h"], doc["sensor_w"]) == (400, 400)
    assert doc["frames"] == 2 and doc["threads"] == 1
    assert doc["mean_s"] > 0 and doc["throughput_fps"] > 0
    rows = (data / "bench.csv").read_text().splitlines()
    assert rows[0] == "frame,render_s" and len(rows) == 3


def test_simulate_is_reproducible(pipeline, tmp_path):
    cfg, data = pipeline
    again = tmp_path / "again"
    assert main(["simulate", "--config", str(cfg), "--out", str(again)]) == 0
    assert (again / "cal_000.pgm").read_bytes() == (data / "cal_000.pgm").read_bytes()
    assert (again / "eval_002.pgm").read_bytes() == (data / "eval_002.pgm").read_bytes()


def test_sensor_noise_flag_perturbs_images_and_is_recorded(pipeline, tmp_path):
    cfg_small, data = pipeline
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY_SCENE))
    clean = tmp_path / "clean"
    noisy = tmp_path / "noisy"
    assert main(["simulate", "--config", str(cfg), "--out", str(clean)]) == 0
    assert main(
        ["simulate", "--config", str(cfg), "--out", str(noisy), "--noise-sensor", "0.1"]
    ) == 0
    assert read_manifest(noisy / "manifest.json").noise_sensor == 0.1
    assert (clean / "cal_000.pgm").read_bytes() != (noisy / "cal_000.pgm").read_bytes()


def test_observation_noise_flag_jitters_features(pipeline, tmp_path):
    _, data = pipeline
    out = tmp_path / "jittered"
    assert main(
        [
            "detect",
            "--manifest", str(data / "manifest.json"),
            "--out", str(out),
            "--noise-obs", "0.5",
            "--seed", "3",
        ]
    ) == 0
    clean = read_features_csv(data / "features.csv")
    noisy = read_features_csv(out / "features.csv")
    assert sorted(noisy) == sorted(clean)
    dev = [
        np.linalg.norm(a.position_px - b.position_px)
        for vid in clean
        for a, b in zip(clean[vid], noisy[vid])
    ]
    assert max(dev) > 0.2  # jitter applied
    assert np.mean(dev) < 3.0  # ... at roughly the requested scale


# ---------------------------------------------------------------------------
# failure modes
# ---------------------------------------------------------------------------


def test_missing_config_exits_2(tmp_path):
    rc = main(["simulate", "--config", str(tmp_path / "no.json"), "--out", str(tmp_path)])
    assert rc == 2


def test_corrupt_manifest_exits_2(tmp_path):
    bad = tmp_path / "manifest.json"
    bad.write_text("{broken")
    assert main(["detect", "--manifest", str(bad), "--out", str(tmp_path)]) == 2


def test_manifest_with_missing_image_exits_2(pipeline, tmp_path):
    _, data = pipeline
    manifest = read_manifest(data / "manifest.json")
    moved = tmp_path / "manifest.json"
    write_manifest(moved, manifest)  # images are not copied along
    assert main(["detect", "--manifest", str(moved), "--out", str(tmp_path)]) == 2


def test_calibrate_with_too_few_views_exits_3(pipeline, tmp_path):
    _, data = pipeline
    by_view = read_features_csv(data / "features.csv")
    subset = tmp_path / "features.csv"
    write_features_csv(
        subset,
        [
            (vid, f)
            for vid in ("cal_000", "cal_001")
            for f in by_view[vid]
        ],
    )
    rc = main(
        [
            "calibrate",
            "--manifest", str(data / "manifest.json"),
            "--features", str(subset),
            "--out", str(tmp_path),
        ]
    )
    assert rc == 3


def test_evaluate_with_single_sweep_frame_exits_3(pipeline, tmp_path):
    _, data = pipeline
    manifest = read_manifest(data / "manifest.json")
    pruned = DatasetManifest(
        manifest.board,
        manifest.camera_nominal,
        tuple(manifest.calibration_views() + manifest.evaluation_views()[:1]),
        manifest.sweep_step_mm,
        manifest.noise_sensor,
    )
    path = tmp_path / "manifest.json"
    write_manifest(path, pruned)
    rc = main(
        [
            "evaluate",
            "--manifest", str(path),
            "--features", str(data / "features.csv"),
            "--report", str(data / "report.json"),
            "--out", str(tmp_path),
        ]
    )
    assert rc == 3


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
