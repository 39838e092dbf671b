"""Decoupled calibration of the main lens and the micro-lens array.

Stage 1 recovers, for every corner cluster, the blend factor ``alpha`` and
the virtual pixel point ``q`` by linear least squares on the per-micro-lens
observations ``u = alpha*c + (1-alpha)*q``.  Stage 2 calibrates the main
lens on the virtual pixel points: those form an exact pinhole image whose
centre of projection is the front focal point, so homography initialization
plus bundle adjustment applies unchanged (poses are shifted back to the lens
frame by adding F along Z).  Stage 3 fits the two MLA plane distances from
(alpha, virtual depth) pairs, and stage 4 refines everything jointly against
the raw micro-image observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .board import BoardSpec
from .errors import (
    AlphaNearOne,
    BehindCamera,
    DegenerateConfiguration,
    DegenerateGeometry,
    InsufficientData,
    RankDeficient,
    SingularSystem,
    TooFewFeatures,
    TooFewObservations,
    TooFewViews,
)
from .features import (
    CipFeature,
    Correspondence,
    DetectorParams,
    build_correspondences,
    group_features_by_cluster,
)
from .geometry import (
    CameraModel,
    Distortion,
    EPS_DEPTH,
    MainLensIntrinsics,
    MlaGeometry,
    Pose,
    distort,
    main_lens_pixel,
    matrix_to_rotvec,
    micro_lens_center,
    rotvec_to_matrix,
    undistort,
)
from .lm import LmOptions, LmResult, levenberg_marquardt, numerical_jacobian
from .metrics import r_squared, reprojection_rmse


# ---------------------------------------------------------------------------
# per-corner alpha / virtual point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaEstimate:
    """Per-corner LS fit: axis-wise alphas, virtual pixel point, residual RMS."""

    alpha_x: float
    alpha_y: float
    virtual_px: np.ndarray
    residual_rms: float

    def __post_init__(self):
        object.__setattr__(
            self, "virtual_px", np.asarray(self.virtual_px, dtype=float).reshape(2)
        )

    @property
    def alpha(self) -> float:
        """Fused per-corner alpha (mean of the axis estimates)."""
        return 0.5 * (self.alpha_x + self.alpha_y)


def fit_alpha_virtual(
    features, mla: MlaGeometry, min_features: int = 4
) -> AlphaEstimate:
    """LS fit of ``u = alpha*c + (1-alpha)*q`` over one corner's features."""
    feats = list(features)
    if len(feats) < min_features:
        raise TooFewFeatures(f"{len(feats)} features, need >= {min_features}")
    obs = np.array([f.position_px for f in feats])
    centers = np.array([micro_lens_center(f.lens_idx[0], f.lens_idx[1], mla) for f in feats])

    alphas, intercepts, residuals = [], [], []
    for axis in range(2):
        c = centers[:, axis]
        if c.max() - c.min() < 1e-9:
            raise RankDeficient(f"lens centres identical along axis {axis}")
        design = np.stack([c, np.ones_like(c)], axis=1)
        theta, *_ = np.linalg.lstsq(design, obs[:, axis], rcond=None)
        alphas.append(float(theta[0]))
        intercepts.append(float(theta[1]))
        residuals.append(design @ theta - obs[:, axis])
    for a in alphas:
        if abs(1.0 - a) < 1e-9:
            raise AlphaNearOne("fitted alpha too close to 1")
    virtual = np.array([intercepts[0] / (1.0 - alphas[0]), intercepts[1] / (1.0 - alphas[1])])
    rms = float(np.sqrt(np.mean(np.concatenate(residuals) ** 2)))
    return AlphaEstimate(alphas[0], alphas[1], virtual, rms)


def estimate_alpha_virtual(features, mla: MlaGeometry) -> AlphaEstimate:
    """Public estimator: requires the full 4-feature minimum."""
    return fit_alpha_virtual(features, mla, min_features=4)


# ---------------------------------------------------------------------------
# homography and planar pose
# ---------------------------------------------------------------------------


def _hartley_normalize(pts: np.ndarray):
    mean = pts.mean(axis=0)
    scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - mean, axis=1)), 1e-12)
    t = np.array(
        [[scale, 0, -scale * mean[0]], [0, scale, -scale * mean[1]], [0, 0, 1.0]]
    )
    return (pts - mean) * scale, t


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Homography H with dst ~ H @ src (2-D inhomogeneous points, N >= 4)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape[0] < 4:
        raise DegenerateConfiguration("homography needs >= 4 points")
    sn, ts = _hartley_normalize(src)
    dn, td = _hartley_normalize(dst)
    rows = []
    for (x, y), (u, v) in zip(sn, dn):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    a = np.asarray(rows)
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-12:
        raise DegenerateConfiguration("points nearly collinear")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(td) @ h @ ts


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def estimate_pose_planar(
    virtual_px: np.ndarray,
    board_pts: np.ndarray,
    lens: MainLensIntrinsics,
    dist: Distortion = Distortion(),
    refine: bool = True,
) -> Pose:
    """Board pose from its virtual pixel points.

    The virtual image is a pinhole camera centred at the front focal point
    with focal scale F/s, so the homography decomposes in the focal frame
    and the recovered translation gains +F along Z back in the lens frame.
    Distortion is removed approximately before the DLT (exact when zero);
    the optional LM polish uses the exact forward model.
    """
    q = np.asarray(virtual_px, dtype=float)
    pts = np.asarray(board_pts, dtype=float)
    if q.shape[0] < 4:
        raise DegenerateConfiguration("need >= 4 corners")
    plane = pts[:, :2] - pts[:, :2].mean(axis=0)
    if np.linalg.svd(plane, compute_uv=False)[1] < 1e-9:
        raise DegenerateConfiguration("board points collinear")

    norm = (q - np.array([lens.u0, lens.v0])) * np.array(
        [lens.sx / lens.f_mm, lens.sy / lens.f_mm]
    )
    norm_u = undistort(norm, dist) if not dist.is_zero else norm
    h = dlt_homography(pts[:, :2], norm_u)
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    r1, r2, t_fp = lam * h1, lam * h2, lam * h3
    if t_fp[2] < 0:
        r1, r2, t_fp = -r1, -r2, -t_fp
    if t_fp[2] <= EPS_DEPTH:
        raise BehindCamera("board on or behind the focal plane")
    r = _nearest_rotation(np.stack([r1, r2, np.cross(r1, r2)], axis=1))
    t = t_fp + np.array([0.0, 0.0, lens.f_mm])

    if not refine:
        return Pose(r, t)

    def residual(x):
        pose = Pose.from_rotvec(x[:3], x[3:])
        p_cam = pose.apply(pts)
        if np.any(p_cam[:, 2] - lens.f_mm < EPS_DEPTH):
            return np.full(q.size, np.inf)
        return (main_lens_pixel(p_cam, lens, dist) - q).ravel()

    x0 = np.concatenate([matrix_to_rotvec(r), t])
    res = levenberg_marquardt(residual, x0, LmOptions(max_iters=50))
    pose = Pose.from_rotvec(res.x[:3], res.x[3:])
    if pose.t[2] <= 0:
        raise BehindCamera("refined pose behind the camera")
    return pose


# ---------------------------------------------------------------------------
# main-lens calibration
# ---------------------------------------------------------------------------


def init_main_lens(
    f_nominal_mm: float, mla: MlaGeometry, sx: float, sy: float
) -> MainLensIntrinsics:
    """Nominal intrinsics: data-sheet focal length, principal point at centre."""
    return MainLensIntrinsics(f_nominal_mm, mla.s_h / 2.0, mla.s_w / 2.0, sx, sy)


@dataclass
class ViewObservations:
    """Everything calibration needs from one view."""

    view_id: str
    board_pts: np.ndarray          # (n_corners, 3) used corners only
    corner_idx: np.ndarray         # (n_corners,) board corner ids (row-major)
    virtual_px: np.ndarray         # (n_corners, 2) fitted virtual pixel points
    alphas: list                   # AlphaEstimate per corner
    feat_corner: np.ndarray        # (n_feats,) index into board_pts
    feat_obs: np.ndarray           # (n_feats, 2) raw CIP observations
    feat_center: np.ndarray        # (n_feats, 2) micro-lens centres


def _shared_to_model(shared: np.ndarray, template: CameraModel, with_mla: bool) -> CameraModel:
    lens = replace(
        template.lens, f_mm=shared[0], u0=shared[1], v0=shared[2]
    )
    dist = Distortion(shared[3], shared[4], shared[5], shared[6])
    mla = template.mla
    if with_mla:
        mla = replace(mla, dc=shared[7], dm=shared[8])
    return CameraModel(lens, dist, mla)


class _BundleProblem:
    """Joint residuals over views; pose columns differenced per view block."""

    N_SHARED_LENS = 7  # f, u0, v0, k1, k2, t1, t2

    def __init__(self, views, template: CameraModel, with_mla: bool):
        self.views = views
        self.template = template
        self.with_mla = with_mla
        self.n_shared = self.N_SHARED_LENS + (2 if with_mla else 0)
        sizes = [self._view_size(v) for v in views]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])

    def _view_size(self, view: ViewObservations) -> int:
        if self.with_mla:
            return 2 * view.feat_obs.shape[0]
        return 2 * view.virtual_px.shape[0]

    def pack(self, cam: CameraModel, poses) -> np.ndarray:
        shared = [
            cam.lens.f_mm, cam.lens.u0, cam.lens.v0,
            cam.dist.k1, cam.dist.k2, cam.dist.t1, cam.dist.t2,
        ]
        if self.with_mla:
            shared += [cam.mla.dc, cam.mla.dm]
        blocks = [shared]
        for view in self.views:
            pose = poses[view.view_id]
            blocks.append(np.concatenate([matrix_to_rotvec(pose.r), pose.t]))
        return np.concatenate([np.asarray(b, dtype=float) for b in blocks])

    def unpack(self, x: np.ndarray):
        cam = _shared_to_model(x[: self.n_shared], self.template, self.with_mla)
        poses = {}
        for k, view in enumerate(self.views):
            base = self.n_shared + 6 * k
            poses[view.view_id] = Pose.from_rotvec(x[base : base + 3], x[base + 3 : base + 6])
        return cam, poses

    def view_residual(self, x: np.ndarray, k: int) -> np.ndarray:
        view = self.views[k]
        cam = _shared_to_model(x[: self.n_shared], self.template, self.with_mla)
        base = self.n_shared + 6 * k
        rvec, t = x[base : base + 3], x[base + 3 : base + 6]
        p_cam = np.asarray(view.board_pts) @ rotvec_to_matrix(rvec).T + t
        z = p_cam[:, 2]
        if np.any(z - cam.lens.f_mm < EPS_DEPTH):
            return np.full(self._view_size(view), np.inf)
        z_prime = cam.lens.f_mm * z / (z - cam.lens.f_mm)
        nd = distort(p_cam[:, :2] / z[:, None], cam.dist)
        q = np.stack(
            [
                nd[:, 0] * z_prime / cam.lens.sx + cam.lens.u0,
                nd[:, 1] * z_prime / cam.lens.sy + cam.lens.v0,
            ],
            axis=-1,
        )
        if not self.with_mla:
            return (q - view.virtual_px).ravel()
        if np.any(np.abs(z_prime - cam.mla.dm) < EPS_DEPTH):
            return np.full(self._view_size(view), np.inf)
        alpha = (z_prime - cam.mla.dc) / (z_prime - cam.mla.dm)
        a = alpha[view.feat_corner]
        pred = (1.0 - a)[:, None] * q[view.feat_corner] + a[:, None] * view.feat_center
        return (pred - view.feat_obs).ravel()

    def residual(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([self.view_residual(x, k) for k in range(len(self.views))])

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        n_res = self.offsets[-1]
        jac = np.zeros((n_res, x.size))
        for i in range(self.n_shared):
            h = max(1e-6, 1e-6 * abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            jac[:, i] = (self.residual(xp) - self.residual(xm)) / (2 * h)
        for k in range(len(self.views)):
            rows = slice(self.offsets[k], self.offsets[k + 1])
            for off in range(6):
                i = self.n_shared + 6 * k + off
                h = max(1e-6, 1e-6 * abs(x[i]))
                xp, xm = x.copy(), x.copy()
                xp[i] += h
                xm[i] -= h
                jac[rows, i] = (
                    self.view_residual(xp, k) - self.view_residual(xm, k)
                ) / (2 * h)
        return jac


def calibrate_main_lens(
    views,
    f_nominal_mm: float,
    mla: MlaGeometry,
    sx: float,
    sy: float,
    options: LmOptions = LmOptions(),
):
    """Pinhole-style calibration on the virtual pixel points of >= 3 views.

    Returns (intrinsics, distortion, poses, info).  Intrinsics start from the
    nominal focal length and the sensor centre; poses from the planar
    homography; then a joint LM over {f, u0, v0, k1, k2, t1, t2, poses}.
    """
    views = list(views)
    if len(views) < 3:
        raise TooFewViews(f"{len(views)} views, need >= 3")
    lens0 = init_main_lens(f_nominal_mm, mla, sx, sy)
    poses0 = {
        v.view_id: estimate_pose_planar(v.virtual_px, v.board_pts, lens0)
        for v in views
    }
    template = CameraModel(lens0, Distortion(), mla)
    problem = _BundleProblem(views, template, with_mla=False)
    x0 = problem.pack(template, poses0)
    result = levenberg_marquardt(
        problem.residual, x0, options, jacobian=problem.jacobian
    )
    cam, poses = problem.unpack(result.x)
    info = {
        "iterations": result.iterations,
        "converged": result.converged,
        "rmse_px": float(np.sqrt(result.cost / max(problem.offsets[-1] // 2, 1) / 2.0))
        if np.isfinite(result.cost)
        else float("inf"),
    }
    return cam.lens, cam.dist, poses, info


# ---------------------------------------------------------------------------
# MLA plane distances
# ---------------------------------------------------------------------------


def estimate_dc_dm(alphas, z_primes):
    """LS fit of (dc, dm) from per-corner (alpha, virtual depth) pairs.

    Each observation contributes the linear row -dc + alpha*dm = Z'(alpha-1).
    """
    alphas = np.asarray(alphas, dtype=float).ravel()
    z_primes = np.asarray(z_primes, dtype=float).ravel()
    if alphas.size != z_primes.size:
        raise TooFewObservations("alpha/depth length mismatch")
    if alphas.size < 2:
        raise TooFewObservations(f"{alphas.size} observations, need >= 2")
    if alphas.max() - alphas.min() < 1e-12:
        raise SingularSystem("all alphas identical")
    design = np.stack([-np.ones_like(alphas), alphas], axis=1)
    rhs = z_primes * (alphas - 1.0)
    theta, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    dc, dm = float(theta[0]), float(theta[1])
    if not dc > dm > 0:
        raise DegenerateGeometry(f"fitted dc={dc:.4f}, dm={dm:.4f} violate dc > dm > 0")
    return dc, dm


# ---------------------------------------------------------------------------
# joint refinement and the full pipeline
# ---------------------------------------------------------------------------


@dataclass
class CalibrationSolution:
    cam: CameraModel
    poses: dict
    alpha_estimates: dict  # (view_id, corner_idx) -> AlphaEstimate
    diagnostics: dict = field(default_factory=dict)


def _views_from_correspondences(view_corrs, mla: MlaGeometry):
    """Build ViewObservations (with alpha fits) from per-view correspondences."""
    views = []
    alpha_map = {}
    skipped = {}
    for view_id, corrs in view_corrs.items():
        board_pts, corner_idx, virtual, alphas = [], [], [], []
        feat_corner, feat_obs, feat_center = [], [], []
        for corr in corrs:
            try:
                est = estimate_alpha_virtual(corr.features, mla)
            except (TooFewFeatures, RankDeficient, AlphaNearOne) as exc:
                skipped.setdefault(view_id, []).append((corr.corner_idx, repr(exc)))
                continue
            local = len(board_pts)
            board_pts.append(corr.board_point_mm)
            corner_idx.append(corr.corner_idx)
            virtual.append(est.virtual_px)
            alphas.append(est)
            alpha_map[(view_id, corr.corner_idx)] = est
            for f in corr.features:
                feat_corner.append(local)
                feat_obs.append(f.position_px)
                feat_center.append(micro_lens_center(f.lens_idx[0], f.lens_idx[1], mla))
        if len(board_pts) < 4:
            skipped[view_id] = skipped.get(view_id, []) + [("view", "fewer than 4 usable corners")]
            for ci in corner_idx:
                alpha_map.pop((view_id, ci), None)
            continue
        views.append(
            ViewObservations(
                view_id,
                np.asarray(board_pts),
                np.asarray(corner_idx, dtype=int),
                np.asarray(virtual),
                alphas,
                np.asarray(feat_corner, dtype=int),
                np.asarray(feat_obs),
                np.asarray(feat_center),
            )
        )
    return views, alpha_map, skipped


def _solution_diagnostics(cam: CameraModel, poses, views) -> dict:
    """Reprojection errors and the alpha-vs-depth fit quality."""
    main_res, lf_res, a_obs, a_pred = [], [], [], []
    for view in views:
        pose = poses[view.view_id]
        p_cam = pose.apply(view.board_pts)
        z = p_cam[:, 2]
        z_prime = cam.lens.f_mm * z / (z - cam.lens.f_mm)
        q = main_lens_pixel(p_cam, cam.lens, cam.dist)
        main_res.extend(q - view.virtual_px)
        alpha = (z_prime - cam.mla.dc) / (z_prime - cam.mla.dm)
        a = alpha[view.feat_corner]
        pred = (1.0 - a)[:, None] * q[view.feat_corner] + a[:, None] * view.feat_center
        lf_res.extend(pred - view.feat_obs)
        a_pred.extend(alpha)
        a_obs.extend(est.alpha for est in view.alphas)
    out = {
        "rmse_mainlens_px": reprojection_rmse(np.asarray(main_res)),
        "rmse_lightfield_px": reprojection_rmse(np.asarray(lf_res)),
    }
    try:
        out["r_squared_alpha_fit"] = r_squared(np.asarray(a_obs), np.asarray(a_pred))
    except Exception:
        out["r_squared_alpha_fit"] = float("nan")
    return out


def refine_joint(
    initial: CalibrationSolution,
    view_corrs: dict,
    options: LmOptions = LmOptions(),
) -> CalibrationSolution:
    """Joint LM over lens intrinsics, distortion, dc/dm and all poses.

    MLA grid layout stays fixed.  Returns the best iterate (convergence is
    reported in the diagnostics, never silently discarded).
    """
    views, alpha_map, skipped = _views_from_correspondences(view_corrs, initial.cam.mla)
    views = [v for v in views if v.view_id in initial.poses]
    if len(views) < 3:
        raise TooFewViews("fewer than 3 views with poses")
    problem = _BundleProblem(views, initial.cam, with_mla=True)
    x0 = problem.pack(initial.cam, initial.poses)
    result = levenberg_marquardt(problem.residual, x0, options, jacobian=problem.jacobian)
    cam, poses = problem.unpack(result.x)
    if not cam.mla.dc > cam.mla.dm > 0:
        raise DegenerateGeometry("refined dc/dm violate dc > dm > 0")
    diag = dict(initial.diagnostics)
    diag.update(_solution_diagnostics(cam, poses, views))
    diag["joint_lm"] = {"iterations": result.iterations, "converged": result.converged}
    if skipped:
        diag.setdefault("skipped", {}).update(skipped)
    return CalibrationSolution(cam, poses, alpha_map, diag)


@dataclass(frozen=True)
class CalibrationDataset:
    """Detected features plus the nominal camera description."""

    views: dict                 # view_id -> list[CipFeature]
    board: BoardSpec
    mla: MlaGeometry            # nominal: dc/dm initial guesses, grid trusted
    f_nominal_mm: float
    sx: float
    sy: float


def calibrate_full(
    dataset: CalibrationDataset,
    detector: DetectorParams = DetectorParams(),
    options: LmOptions = LmOptions(),
) -> CalibrationSolution:
    """Run the whole pipeline on detected features.

    Views that fail clustering/correspondence or keep fewer than 4 usable
    corners are skipped and reported in the diagnostics; at least 3 views
    must survive.
    """
    nominal_lens = init_main_lens(dataset.f_nominal_mm, dataset.mla, dataset.sx, dataset.sy)
    nominal_cam = CameraModel(nominal_lens, Distortion(), dataset.mla)
    view_corrs = {}
    skipped = {}
    for view_id, feats in sorted(dataset.views.items()):
        clusters = group_features_by_cluster(
            feats, eps=detector.dbscan_eps, min_pts=detector.dbscan_min_pts
        )
        try:
            view_corrs[view_id] = build_correspondences(clusters, dataset.board, nominal_cam)
        except Exception as exc:  # CountMismatch / AmbiguousOrdering
            skipped[view_id] = [("view", repr(exc))]
    views, alpha_map, more_skipped = _views_from_correspondences(view_corrs, dataset.mla)
    skipped.update(more_skipped)
    if len(views) < 3:
        raise InsufficientData(f"only {len(views)} usable views after rejection")

    lens, dist, poses, main_info = calibrate_main_lens(
        views, dataset.f_nominal_mm, dataset.mla, dataset.sx, dataset.sy, options
    )

    alphas, z_primes = [], []
    for view in views:
        p_cam = poses[view.view_id].apply(view.board_pts)
        z_prime = lens.f_mm * p_cam[:, 2] / (p_cam[:, 2] - lens.f_mm)
        for est, zp in zip(view.alphas, z_prime):
            alphas.extend([est.alpha_x, est.alpha_y])
            z_primes.extend([zp, zp])
    dc, dm = estimate_dc_dm(alphas, z_primes)

    mla = replace(dataset.mla, dc=dc, dm=dm)
    cam = CameraModel(lens, dist, mla)
    initial = CalibrationSolution(
        cam,
        poses,
        alpha_map,
        {"mainlens_lm": main_info, "skipped": skipped} if skipped else {"mainlens_lm": main_info},
    )
    corrs_used = {v.view_id: view_corrs[v.view_id] for v in views}
    return refine_joint(initial, corrs_used, options)


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def solution_to_report(solution: CalibrationSolution) -> dict:
    cam = solution.cam
    diag = solution.diagnostics
    return {
        "F_mm": cam.lens.f_mm,
        "dc_mm": cam.mla.dc,
        "dm_mm": cam.mla.dm,
        "u0_px": cam.lens.u0,
        "v0_px": cam.lens.v0,
        "k1": cam.dist.k1,
        "k2": cam.dist.k2,
        "t1": cam.dist.t1,
        "t2": cam.dist.t2,
        "per_view": [
            {
                "view_id": view_id,
                "R": [float(x) for x in pose.r.ravel()],
                "t_mm": [float(x) for x in pose.t],
            }
            for view_id, pose in sorted(solution.poses.items())
        ],
        "rmse_mainlens_px": diag.get("rmse_mainlens_px", float("nan")),
        "rmse_lightfield_px": diag.get("rmse_lightfield_px", float("nan")),
        "r_squared_alpha_fit": diag.get("r_squared_alpha_fit", float("nan")),
    }


def write_report(path, solution: CalibrationSolution) -> None:
    Path(path).write_text(json.dumps(solution_to_report(solution), indent=2))


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())
