"""Command-line pipeline: simulate, detect, calibrate, evaluate, bench.

Every subcommand writes its outputs into the directory given by --out
(created if missing) under fixed file names, so stages chain without
guessing paths:

  simulate   manifest.json + <view_id>.pgm images
  detect     features.csv
  calibrate  report.json
  evaluate   evaluation.json, alpha_scatter.csv, epsilon_z.csv
  bench      bench.json, bench.csv

Exit codes: 0 on success, 2 for unusable input (missing/corrupt files, bad
configuration), 3 when a processing stage fails on valid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .calibrate import (
    CalibrationDataset,
    calibrate_full,
    estimate_alpha_virtual,
    estimate_pose_planar,
    write_report,
)
from .errors import CorruptFile, LftError, UnsupportedFormat
from .features import (
    build_correspondences,
    detect_features,
    group_features_by_cluster,
    read_features_csv,
    write_features_csv,
)
from .geometry import (
    CameraModel,
    Distortion,
    MainLensIntrinsics,
    alpha_of_depth,
    depth_of_alpha,
    main_lens_pixel,
    micro_lens_center,
)
from .image import read_image, write_image
from .manifest import (
    DatasetManifest,
    ManifestView,
    camera_from_config,
    camera_to_config,
    load_scene,
    read_manifest,
    write_manifest,
)
from .metrics import epsilon_z, equivalence_params, r_squared, reprojection_rmse
from .noise import add_observation_noise, add_sensor_noise
from .rng import substream
from .simulate import Target, generate_random_poses, generate_translation_sweep, render_raw

_SENSOR_NOISE_TAG = 100_000
_OBS_NOISE_TAG = 50_000


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args) -> int:
    scene = load_scene(args.config)
    out_dir = _out_dir(args)
    sim = scene.sim
    seed = sim.seed if args.seed is None else args.seed

    poses = generate_random_poses(
        sim.n_views, seed, sim.base_z_mm, sim.rot_range_deg, sim.trans_range_mm
    )
    sweep = generate_translation_sweep(
        sim.sweep_min_mm, sim.sweep_max_mm, sim.sweep_step_mm
    )
    views = []
    n_cal = len(poses)
    for k, (role, pose) in enumerate(
        [("calibration", p) for p in poses] + [("evaluation", p) for p in sweep]
    ):
        name = f"cal_{k:03d}" if k < n_cal else f"eval_{k - n_cal:03d}"
        img = render_raw(scene.camera, Target(scene.board, pose), threads=args.threads)
        if args.noise_sensor > 0:
            img = add_sensor_noise(img, args.noise_sensor, substream(seed, _SENSOR_NOISE_TAG + k))
        fname = f"{name}.pgm"
        write_image(out_dir / fname, img)
        views.append(ManifestView(name, role, fname, pose))
    manifest = DatasetManifest(
        scene.board,
        camera_to_config(scene.camera),
        tuple(views),
        sweep_step_mm=sim.sweep_step_mm,
        noise_sensor=args.noise_sensor,
    )
    write_manifest(out_dir / "manifest.json", manifest)
    print(f"wrote {len(views)} views to {out_dir}")
    return 0


def _cmd_detect(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    cam = camera_from_config(manifest.camera_nominal)
    out_dir = _out_dir(args)
    rows = []
    for k, view in enumerate(manifest.views):
        img = read_image(manifest_path.parent / view.image)
        feats = detect_features(img, cam.mla)
        if args.noise_obs > 0:
            feats = add_observation_noise(
                feats, args.noise_obs, substream(args.seed, _OBS_NOISE_TAG + k)
            )
        rows.extend((view.view_id, f) for f in feats)
        print(f"{view.view_id}: {len(feats)} features")
    write_features_csv(out_dir / "features.csv", rows)
    print(f"wrote {len(rows)} features to {out_dir / 'features.csv'}")
    return 0


def _cmd_calibrate(args) -> int:
    manifest = read_manifest(Path(args.manifest))
    cam = camera_from_config(manifest.camera_nominal)
    by_view = read_features_csv(args.features)
    cal_ids = {v.view_id for v in manifest.calibration_views()}
    views = {vid: feats for vid, feats in by_view.items() if vid in cal_ids}
    dataset = CalibrationDataset(
        views=views,
        board=manifest.board,
        mla=cam.mla,
        f_nominal_mm=cam.lens.f_mm,
        sx=cam.lens.sx,
        sy=cam.lens.sy,
    )
    solution = calibrate_full(dataset)
    out_dir = _out_dir(args)
    write_report(out_dir / "report.json", solution)
    d = solution.diagnostics
    print(
        f"F={solution.cam.lens.f_mm:.4f} mm  dc={solution.cam.mla.dc:.4f} mm  "
        f"dm={solution.cam.mla.dm:.4f} mm  "
        f"rmse={d.get('rmse_lightfield_px', float('nan')):.4f} px"
    )
    print(f"wrote report to {out_dir / 'report.json'}")
    return 0


def _camera_from_report(report: dict, nominal: dict) -> CameraModel:
    """Calibrated camera: report intrinsics on the nominal sensor layout."""
    base = camera_from_config(nominal)
    lens = MainLensIntrinsics(
        report["F_mm"], report["u0_px"], report["v0_px"], base.lens.sx, base.lens.sy
    )
    dist = Distortion(report["k1"], report["k2"], report["t1"], report["t2"])
    mla = replace(base.mla, dc=report["dc_mm"], dm=report["dm_mm"])
    return CameraModel(lens, dist, mla)


def _cmd_evaluate(args) -> int:
    manifest = read_manifest(Path(args.manifest))
    report = json.loads(Path(args.report).read_text())
    cam = _camera_from_report(report, manifest.camera_nominal)
    by_view = read_features_csv(args.features)
    eval_views = manifest.evaluation_views()
    if len(eval_views) < 2:
        raise LftError("need at least two evaluation views for a sweep")

    per_view = []
    scatter = []
    main_res, lf_res = [], []
    a_obs_all, a_pred_all, depth_err = [], [], []
    for view in eval_views:
        feats = by_view.get(view.view_id, [])
        corrs = build_correspondences(
            group_features_by_cluster(feats), manifest.board, cam
        )
        ests = [estimate_alpha_virtual(c.features, cam.mla) for c in corrs]
        qs = np.array([e.virtual_px for e in ests])
        pts = np.array([c.board_point_mm for c in corrs])
        pose = estimate_pose_planar(qs, pts, cam.lens, cam.dist)
        p_cam = pose.apply(pts)
        z_prime = cam.lens.f_mm * p_cam[:, 2] / (p_cam[:, 2] - cam.lens.f_mm)
        a_pred = alpha_of_depth(z_prime, cam.mla)
        q_model = main_lens_pixel(p_cam, cam.lens, cam.dist)
        main_res.extend(q_model - qs)
        for corr, est, zp, ap, qm in zip(corrs, ests, z_prime, a_pred, q_model):
            d_alpha = depth_of_alpha(est.alpha, cam.mla)
            scatter.append(
                (view.view_id, corr.corner_idx, zp, est.alpha, ap, d_alpha)
            )
            a_obs_all.append(est.alpha)
            a_pred_all.append(ap)
            depth_err.append(d_alpha - zp)
            a = ap
            for f in corr.features:
                c = micro_lens_center(f.lens_idx[0], f.lens_idx[1], cam.mla)
                lf_res.append((1.0 - a) * qm + a * c - f.position_px)
        per_view.append(
            {"view_id": view.view_id, "t_z_mm": float(pose.t[2]), "n_corners": len(corrs)}
        )

    true_step = manifest.sweep_step_mm
    if not true_step:
        raise LftError("manifest carries no sweep step")
    tz = np.array([pv["t_z_mm"] for pv in per_view])
    eps_series = [
        {
            "from_view": per_view[k]["view_id"],
            "to_view": per_view[k + 1]["view_id"],
            "delta_hat_mm": float(tz[k + 1] - tz[k]),
            "delta_mm": float(true_step),
            "epsilon_z": epsilon_z(float(tz[k + 1] - tz[k]), float(true_step)),
        }
        for k in range(len(tz) - 1)
    ]
    eps_vals = np.array([row["epsilon_z"] for row in eps_series])
    depth_err = np.array(depth_err)

    doc = {
        "per_view": per_view,
        "epsilon_z": {
            "series": [row["epsilon_z"] for row in eps_series],
            "mean": float(eps_vals.mean()),
            "std": float(eps_vals.std()),
        },
        "rmse": {
            "mainlens_px": reprojection_rmse(np.asarray(main_res)),
            "lightfield_px": reprojection_rmse(np.asarray(lf_res)),
        },
        "r_squared_alpha": r_squared(a_obs_all, a_pred_all),
        "depth_mm": {
            "mean_abs": float(np.abs(depth_err).mean()),
            "std": float(depth_err.std()),
            "mean_signed": float(depth_err.mean()),
        },
        "equivalence": equivalence_params(cam),
    }
    out_dir = _out_dir(args)
    (out_dir / "evaluation.json").write_text(json.dumps(doc, indent=2))
    with (out_dir / "alpha_scatter.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view_id", "corner_idx", "z_prime_mm", "alpha_hat", "alpha_pred", "depth_alpha_mm"])
        for row in scatter:
            w.writerow([row[0], row[1]] + [f"{x:.9f}" for x in row[2:]])
    with (out_dir / "epsilon_z.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_view", "to_view", "delta_hat_mm", "delta_mm", "epsilon_z"])
        for row in eps_series:
            w.writerow(
                [row["from_view"], row["to_view"], f"{row['delta_hat_mm']:.6f}",
                 f"{row['delta_mm']:.6f}", f"{row['epsilon_z']:.9f}"]
            )
    print(
        f"eps_z mean {eps_vals.mean():.5f} std {eps_vals.std():.5f}  "
        f"R2 {doc['r_squared_alpha']:.6f}  depth |err| {doc['depth_mm']['mean_abs']:.5f} mm"
    )
    print(f"wrote evaluation to {out_dir}")
    return 0


def _cmd_bench(args) -> int:
    scene = load_scene(args.config)
    seed = scene.sim.seed if args.seed is None else args.seed
    poses = generate_random_poses(
        args.frames, seed, scene.sim.base_z_mm,
        scene.sim.rot_range_deg, scene.sim.trans_range_mm,
    )
    times = []
    img = None
    for pose in poses:
        target = Target(scene.board, pose)
        t0 = time.perf_counter()
        img = render_raw(scene.camera, target, threads=args.threads)
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    doc = {
        "sensor_h": img.height,
        "sensor_w": img.width,
        "threads": args.threads,
        "frames": len(times),
        "mean_s": float(times.mean()),
        "std_s": float(times.std()),
        "throughput_fps": float(len(times) / times.sum()),
    }
    out_dir = _out_dir(args)
    (out_dir / "bench.json").write_text(json.dumps(doc, indent=2))
    with (out_dir / "bench.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "render_s"])
        for k, t in enumerate(times):
            w.writerow([k, f"{t:.6f}"])
    print(
        f"rendered {len(times)} x {img.height}x{img.width} "
        f"mean {times.mean():.3f} s (std {times.std():.3f}) with {args.threads} thread(s)"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lftcam", description="plenoptic camera simulation and calibration"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a checkerboard dataset")
    p_sim.add_argument("--config", required=True, help="scene config JSON")
    p_sim.add_argument("--out", required=True, help="output dataset directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override the scene seed")
    p_sim.add_argument("--threads", type=int, default=1)
    p_sim.add_argument("--noise-sensor", type=float, default=0.0, metavar="SIGMA")
    p_sim.set_defaults(func=_cmd_simulate)

    p_det = sub.add_parser("detect", help="detect corner features in a dataset")
    p_det.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p_det.add_argument("--out", required=True, help="output directory (features.csv)")
    p_det.add_argument("--seed", type=int, default=0)
    p_det.add_argument("--noise-obs", type=float, default=0.0, metavar="SIGMA_PX")
    p_det.set_defaults(func=_cmd_detect)

    p_cal = sub.add_parser("calibrate", help="calibrate from detected features")
    p_cal.add_argument("--manifest", required=True)
    p_cal.add_argument("--features", required=True, help="feature CSV from detect")
    p_cal.add_argument("--out", required=True, help="output directory (report.json)")
    p_cal.set_defaults(func=_cmd_calibrate)

    p_eval = sub.add_parser("evaluate", help="depth-sweep evaluation")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--features", required=True)
    p_eval.add_argument("--report", required=True, help="calibration report JSON")
    p_eval.add_argument(
        "--out", required=True,
        help="output directory (evaluation.json, alpha_scatter.csv, epsilon_z.csv)",
    )
    p_eval.set_defaults(func=_cmd_evaluate)

    p_bench = sub.add_parser("bench", help="time raw-image rendering")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--threads", type=int, default=1)
    p_bench.add_argument("--frames", type=int, default=3, help="number of images to render")
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--out", required=True, help="output directory (bench.json, bench.csv)")
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, CorruptFile, UnsupportedFormat) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
