"""Calibration stages: alpha fits, planar poses, plane distances, full runs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lftcam.board import BoardSpec
from lftcam.calibrate import (
    CalibrationDataset,
    CalibrationSolution,
    calibrate_full,
    calibrate_main_lens,
    dlt_homography,
    estimate_alpha_virtual,
    estimate_dc_dm,
    estimate_pose_planar,
    fit_alpha_virtual,
    init_main_lens,
    read_report,
    refine_joint,
    solution_to_report,
    write_report,
)
from lftcam.errors import (
    AlphaNearOne,
    DegenerateConfiguration,
    DegenerateGeometry,
    InsufficientData,
    RankDeficient,
    SingularSystem,
    TooFewFeatures,
    TooFewObservations,
    TooFewViews,
)
from lftcam.features import CipFeature, build_correspondences, group_features_by_cluster
from lftcam.geometry import (
    CameraModel,
    Distortion,
    MainLensIntrinsics,
    MlaGeometry,
    Pose,
    main_lens_pixel,
)
from lftcam.lm import LmOptions
from lftcam.simulate import generate_random_poses

from synthdata import analytic_view

DESK_LENS = MainLensIntrinsics(50.0, 800.0, 600.0, 0.01, 0.01)
DESK_MLA = MlaGeometry(58.0, 57.0, 80, 60, 1600, 1200)
DESK_CAMERA = CameraModel(DESK_LENS, Distortion(), DESK_MLA)
DESK_BOARD = BoardSpec(9, 6, 5.5)

# 2x2 lens grid with centres at exactly {0, 100}^2.
TINY_MLA = MlaGeometry(58.0, 57.0, 2, 2, 200, 200, lx0=50.0, ly0=50.0)


def blend_features(alpha, virtual, mla=TINY_MLA):
    """Features placed exactly on u = alpha*c + (1 - alpha)*q."""
    from lftcam.geometry import micro_lens_center

    q = np.asarray(virtual, dtype=float)
    out = []
    for i in range(mla.n_h):
        for j in range(mla.n_w):
            c = micro_lens_center(i, j, mla)
            out.append(CipFeature(alpha * c + (1.0 - alpha) * q, (i, j), 4))
    return out


def analytic_dataset(poses, nominal_mla=None):
    views = {f"v{k:02d}": analytic_view(DESK_CAMERA, p, DESK_BOARD) for k, p in enumerate(poses)}
    nominal = nominal_mla or MlaGeometry(58.5, 56.5, 80, 60, 1600, 1200)
    return CalibrationDataset(views, DESK_BOARD, nominal, 50.0, 0.01, 0.01)


# ---------------------------------------------------------------------------
# per-corner alpha / virtual-point fit
# ---------------------------------------------------------------------------


def test_alpha_fit_recovers_exact_blend():
    est = fit_alpha_virtual(blend_features(0.4, (1000.0, 800.0)), TINY_MLA)
    assert est.alpha_x == pytest.approx(0.4, abs=1e-9)
    assert est.alpha_y == pytest.approx(0.4, abs=1e-9)
    assert est.alpha == pytest.approx(0.4, abs=1e-9)
    np.testing.assert_allclose(est.virtual_px, [1000.0, 800.0], atol=1e-6)
    assert est.residual_rms == pytest.approx(0.0, abs=1e-9)


@given(
    alpha=st.floats(min_value=-1.0, max_value=0.9),
    qu=st.floats(min_value=-500.0, max_value=1500.0),
    qv=st.floats(min_value=-500.0, max_value=1500.0),
)
@settings(max_examples=50)
def test_alpha_fit_is_exact_for_any_blend(alpha, qu, qv):
    est = fit_alpha_virtual(blend_features(alpha, (qu, qv)), TINY_MLA)
    assert est.alpha_x == pytest.approx(alpha, abs=1e-7)
    np.testing.assert_allclose(est.virtual_px, [qu, qv], atol=1e-5)


def test_alpha_fit_needs_spread_lens_centres():
    mla = MlaGeometry(58.0, 57.0, 1, 4, 100, 400)
    feats = [CipFeature((50.0, 100.0 * j + 30.0), (0, j), 4) for j in range(4)]
    with pytest.raises(RankDeficient):
        fit_alpha_virtual(feats, mla)


def test_alpha_fit_rejects_alpha_at_unity():
    # Observations exactly at the lens centres fit alpha = 1: the virtual
    # point is then unrecoverable.
    from lftcam.geometry import micro_lens_center

    feats = [
        CipFeature(micro_lens_center(i, j, TINY_MLA), (i, j), 4)
        for i in range(2)
        for j in range(2)
    ]
    with pytest.raises(AlphaNearOne):
        fit_alpha_virtual(feats, TINY_MLA)


def test_alpha_estimator_requires_four_features():
    feats = blend_features(0.5, (300.0, 300.0))[:3]
    with pytest.raises(TooFewFeatures):
        estimate_alpha_virtual(feats, TINY_MLA)


# ---------------------------------------------------------------------------
# homography
# ---------------------------------------------------------------------------


def test_homography_recovers_known_map():
    h_true = np.array([[1.2, 0.1, 5.0], [-0.05, 0.9, -3.0], [1e-4, -2e-4, 1.0]])
    src = np.array([[x, y] for x in range(-2, 3) for y in range(-2, 3)], dtype=float) * 10
    ones = np.hstack([src, np.ones((len(src), 1))])
    proj = ones @ h_true.T
    dst = proj[:, :2] / proj[:, 2:]
    h = dlt_homography(src, dst)
    np.testing.assert_allclose(h / h[2, 2], h_true, atol=1e-9)


def test_homography_rejects_too_few_points():
    pts = np.zeros((3, 2))
    with pytest.raises(DegenerateConfiguration):
        dlt_homography(pts, pts)


# ---------------------------------------------------------------------------
# planar pose
# ---------------------------------------------------------------------------


def test_pose_recovery_is_exact_for_frontal_view():
    pts = DESK_BOARD.corner_points()
    pose = Pose.identity((0.0, 0.0, 450.0))
    q = main_lens_pixel(pose.apply(pts), DESK_LENS, Distortion())
    est = estimate_pose_planar(q, pts, DESK_LENS)
    np.testing.assert_allclose(est.r, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(est.t, pose.t, atol=1e-6)


def test_pose_recovery_is_exact_for_general_view():
    pts = DESK_BOARD.corner_points()
    pose = Pose.from_rotvec((0.1, -0.05, 0.2), (3.0, -4.0, 430.0))
    q = main_lens_pixel(pose.apply(pts), DESK_LENS, Distortion())
    for refine in (False, True):
        est = estimate_pose_planar(q, pts, DESK_LENS, refine=refine)
        np.testing.assert_allclose(est.r, pose.r, atol=1e-9)
        np.testing.assert_allclose(est.t, pose.t, atol=1e-6)


def test_pose_recovery_handles_distortion():
    pts = DESK_BOARD.corner_points()
    pose = Pose.from_rotvec((0.1, -0.05, 0.2), (3.0, -4.0, 430.0))
    dist = Distortion(0.05, -0.02, 0.004, -0.003)
    q = main_lens_pixel(pose.apply(pts), DESK_LENS, dist)
    est = estimate_pose_planar(q, pts, DESK_LENS, dist)
    np.testing.assert_allclose(est.r, pose.r, atol=1e-9)
    np.testing.assert_allclose(est.t, pose.t, atol=1e-6)


def test_pose_recovery_rejects_too_few_corners():
    pts = DESK_BOARD.corner_points()[:3]
    with pytest.raises(DegenerateConfiguration):
        estimate_pose_planar(np.zeros((3, 2)), pts, DESK_LENS)


def test_pose_recovery_rejects_collinear_boards():
    pts = np.array([[k, 0.0, 0.0] for k in range(6)])
    q = np.tile([800.0, 600.0], (6, 1)) + np.arange(6)[:, None]
    with pytest.raises(DegenerateConfiguration):
        estimate_pose_planar(q, pts, DESK_LENS)


# ---------------------------------------------------------------------------
# nominal intrinsics and the MLA distance fit
# ---------------------------------------------------------------------------


def test_nominal_intrinsics_centre_the_principal_point():
    mla = MlaGeometry(58.0, 57.0, 325, 235, 6500, 4700)
    lens = init_main_lens(50.0, mla, 0.0036, 0.0036)
    assert lens.f_mm == 50.0
    assert (lens.u0, lens.v0) == (3250.0, 2350.0)
    assert (lens.sx, lens.sy) == (0.0036, 0.0036)


def test_plane_distances_recovered_exactly():
    z_prime = np.linspace(58.5, 61.0, 6)
    alphas = (z_prime - 58.0) / (z_prime - 57.0)
    dc, dm = estimate_dc_dm(alphas, z_prime)
    assert dc == pytest.approx(58.0, abs=1e-9)
    assert dm == pytest.approx(57.0, abs=1e-9)


def test_plane_distances_from_minimal_pair():
    z_prime = np.array([59.0, 60.0])
    alphas = (z_prime - 58.0) / (z_prime - 57.0)
    dc, dm = estimate_dc_dm(alphas, z_prime)
    assert (dc, dm) == (pytest.approx(58.0, abs=1e-9), pytest.approx(57.0, abs=1e-9))


def test_plane_distances_reject_identical_alphas():
    with pytest.raises(SingularSystem):
        estimate_dc_dm([0.5, 0.5, 0.5], [59.0, 59.0, 59.0])


def test_plane_distances_reject_inverted_geometry():
    # Data generated with the plane order swapped fits dc < dm.
    z_prime = np.array([59.5, 60.0, 61.0])
    alphas = (z_prime - 57.0) / (z_prime - 58.0)
    with pytest.raises(DegenerateGeometry):
        estimate_dc_dm(alphas, z_prime)


def test_plane_distances_need_two_observations():
    with pytest.raises(TooFewObservations):
        estimate_dc_dm([0.5], [59.0])
    with pytest.raises(TooFewObservations):
        estimate_dc_dm([0.5, 0.6], [59.0])


# ---------------------------------------------------------------------------
# joint refinement
# ---------------------------------------------------------------------------


def exact_view_corrs(poses):
    out = {}
    for vid, p in poses.items():
        feats = analytic_view(DESK_CAMERA, p, DESK_BOARD)
        out[vid] = build_correspondences(
            group_features_by_cluster(feats), DESK_BOARD, DESK_CAMERA
        )
    return out


def test_joint_refinement_passes_exact_solution_through():
    poses = {f"v{k}": p for k, p in enumerate(generate_random_poses(3, 7, 270.0))}
    corrs = exact_view_corrs(poses)
    initial = CalibrationSolution(DESK_CAMERA, poses, {}, {})
    out = refine_joint(initial, corrs, LmOptions(max_iters=0))
    assert out.cam.lens.f_mm == 50.0
    assert (out.cam.mla.dc, out.cam.mla.dm) == (58.0, 57.0)
    assert out.diagnostics["rmse_lightfield_px"] < 1e-10
    assert out.diagnostics["r_squared_alpha_fit"] == pytest.approx(1.0, abs=1e-12)
    assert out.diagnostics["joint_lm"]["iterations"] == 0


def test_joint_refinement_requires_three_views():
    poses = {f"v{k}": p for k, p in enumerate(generate_random_poses(2, 7, 270.0))}
    corrs = exact_view_corrs(poses)
    initial = CalibrationSolution(DESK_CAMERA, poses, {}, {})
    with pytest.raises(TooFewViews):
        refine_joint(initial, corrs, LmOptions(max_iters=0))


def test_main_lens_stage_requires_three_views():
    with pytest.raises(TooFewViews):
        calibrate_main_lens([], 50.0, DESK_MLA, 0.01, 0.01)


# ---------------------------------------------------------------------------
# full pipeline on exact features
# ---------------------------------------------------------------------------


def test_full_calibration_is_exact_on_noise_free_features():
    sol = calibrate_full(analytic_dataset(generate_random_poses(4, 99, 270.0)))
    cam = sol.cam
    assert cam.lens.f_mm == pytest.approx(50.0, abs=1e-6)
    assert cam.mla.dc == pytest.approx(58.0, abs=1e-6)
    assert cam.mla.dm == pytest.approx(57.0, abs=1e-6)
    assert cam.lens.u0 == pytest.approx(800.0, abs=1e-4)
    assert cam.lens.v0 == pytest.approx(600.0, abs=1e-4)
    assert abs(cam.dist.k1) < 1e-8 and abs(cam.dist.k2) < 1e-8
    assert sol.diagnostics["rmse_lightfield_px"] < 1e-9
    assert sol.diagnostics["r_squared_alpha_fit"] > 0.9999
    assert sorted(sol.poses) == ["v00", "v01", "v02", "v03"]


def test_full_calibration_recovers_every_pose():
    poses = generate_random_poses(4, 99, 270.0)
    sol = calibrate_full(analytic_dataset(poses))
    for k, p in enumerate(poses):
        got = sol.poses[f"v{k:02d}"]
        np.testing.assert_allclose(got.r, p.r, atol=1e-9)
        np.testing.assert_allclose(got.t, p.t, atol=1e-6)


def test_full_calibration_skips_broken_views_and_reports_them():
    poses = generate_random_poses(3, 7, 270.0)
    ds = analytic_dataset(poses)
    views = dict(ds.views)
    views["broken"] = views["v00"][:10]  # too few features to form 54 clusters
    ds = CalibrationDataset(views, ds.board, ds.mla, ds.f_nominal_mm, ds.sx, ds.sy)
    sol = calibrate_full(ds)
    assert sorted(sol.poses) == ["v00", "v01", "v02"]
    assert "broken" in sol.diagnostics["skipped"]
    assert sol.cam.lens.f_mm == pytest.approx(50.0, abs=1e-6)


def test_full_calibration_needs_three_usable_views():
    ds = analytic_dataset(generate_random_poses(2, 7, 270.0))
    with pytest.raises(InsufficientData):
        calibrate_full(ds)


# ---------------------------------------------------------------------------
# report round trip
# ---------------------------------------------------------------------------


def test_report_serialization_round_trip(tmp_path):
    sol = calibrate_full(analytic_dataset(generate_random_poses(3, 11, 270.0)))
    report = solution_to_report(sol)
    path = tmp_path / "report.json"
    write_report(path, sol)
    assert read_report(path) == report
    for key in (
        "F_mm",
        "dc_mm",
        "dm_mm",
        "u0_px",
        "v0_px",
        "k1",
        "k2",
        "t1",
        "t2",
        "per_view",
        "rmse_mainlens_px",
        "rmse_lightfield_px",
        "r_squared_alpha_fit",
    ):
        assert key in report
    assert [v["view_id"] for v in report["per_view"]] == ["v00", "v01", "v02"]
    assert all(len(v["R"]) == 9 and len(v["t_mm"]) == 3 for v in report["per_view"])
