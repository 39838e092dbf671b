"""Plenoptic camera toolkit: simulation, feature detection, calibration.

The camera model splits a plenoptic camera into a thin main lens and a
micro-lens array; a raw pixel observation is the affine blend
``u = alpha * c + (1 - alpha) * q`` of the micro-lens centre ``c`` and the
virtual pixel point ``q``, with ``alpha`` a fractional function of virtual
depth.  That structure keeps main-lens calibration and micro-lens-array
calibration decoupled and linear at every stage.
"""

from .board import BoardSpec, make_checkerboard_texture
from .calibrate import (
    AlphaEstimate,
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
from .errors import LftError
from .features import (
    CipFeature,
    Correspondence,
    DetectorParams,
    build_correspondences,
    cluster_lenses,
    detect_features,
    extract_micro_images,
    group_features_by_cluster,
    read_features_csv,
    write_features_csv,
)
from .geometry import (
    CameraModel,
    Distortion,
    MainLensIntrinsics,
    MlaGeometry,
    Pose,
    alpha_of_depth,
    coupled_mla_coefficients,
    depth_of_alpha,
    distort,
    h_alpha_matrix,
    main_lens_pixel,
    main_lens_project,
    micro_lens_center,
    nearest_lens_index,
    project_point,
    undistort,
)
from .image import RawImage, read_image, write_image
from .lm import LmOptions, LmResult, levenberg_marquardt
from .lsd import Segment, SegmentParams, detect_segments
from .manifest import DatasetManifest, ManifestView, SceneConfig, load_scene, read_manifest, write_manifest
from .metrics import epsilon_z, equivalence_params, r_squared, reprojection_rmse
from .noise import add_observation_noise, add_sensor_noise
from .simulate import (
    SimParams,
    Target,
    generate_random_poses,
    generate_translation_sweep,
    render_raw,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaEstimate",
    "BoardSpec",
    "CalibrationDataset",
    "CalibrationSolution",
    "CameraModel",
    "CipFeature",
    "Correspondence",
    "DatasetManifest",
    "DetectorParams",
    "Distortion",
    "LftError",
    "LmOptions",
    "LmResult",
    "MainLensIntrinsics",
    "ManifestView",
    "MlaGeometry",
    "Pose",
    "RawImage",
    "SceneConfig",
    "Segment",
    "SegmentParams",
    "SimParams",
    "Target",
    "add_observation_noise",
    "add_sensor_noise",
    "alpha_of_depth",
    "build_correspondences",
    "calibrate_full",
    "calibrate_main_lens",
    "cluster_lenses",
    "coupled_mla_coefficients",
    "depth_of_alpha",
    "detect_features",
    "detect_segments",
    "distort",
    "dlt_homography",
    "epsilon_z",
    "equivalence_params",
    "estimate_alpha_virtual",
    "estimate_dc_dm",
    "estimate_pose_planar",
    "extract_micro_images",
    "fit_alpha_virtual",
    "generate_random_poses",
    "generate_translation_sweep",
    "group_features_by_cluster",
    "h_alpha_matrix",
    "init_main_lens",
    "levenberg_marquardt",
    "load_scene",
    "main_lens_pixel",
    "main_lens_project",
    "make_checkerboard_texture",
    "micro_lens_center",
    "nearest_lens_index",
    "project_point",
    "r_squared",
    "read_features_csv",
    "read_image",
    "read_manifest",
    "read_report",
    "refine_joint",
    "render_raw",
    "reprojection_rmse",
    "solution_to_report",
    "undistort",
    "write_features_csv",
    "write_image",
    "write_manifest",
    "write_report",
]
