"""Scene configuration and dataset manifest (de)serialization.

A *scene config* describes the camera, board and randomization used to
synthesize a dataset.  A *dataset manifest* lists the rendered views, their
roles, image files and ground-truth poses, so downstream stages never have
to guess at provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .board import BoardSpec
from .errors import CorruptFile
from .geometry import (
    CameraModel,
    Distortion,
    MainLensIntrinsics,
    MlaGeometry,
    Pose,
)
from .simulate import SimParams


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise CorruptFile(f"missing key '{key}' in {where}")
    return d[key]


# ---------------------------------------------------------------------------
# camera / board blocks
# ---------------------------------------------------------------------------


def camera_to_config(cam: CameraModel) -> dict:
    return {
        "F_mm": cam.lens.f_mm,
        "dc_mm": cam.mla.dc,
        "dm_mm": cam.mla.dm,
        "pixel_um": cam.lens.sx * 1000.0,
        "sensor_h": cam.mla.s_h,
        "sensor_w": cam.mla.s_w,
        "n_h": cam.mla.n_h,
        "n_w": cam.mla.n_w,
        "theta_deg": float(np.rad2deg(cam.mla.theta)),
        "offset_x_px": cam.mla.lx0,
        "offset_y_px": cam.mla.ly0,
        "dist": {
            "k1": cam.dist.k1,
            "k2": cam.dist.k2,
            "t1": cam.dist.t1,
            "t2": cam.dist.t2,
        },
    }


def camera_from_config(d: dict) -> CameraModel:
    """Nominal camera from a config block; principal point at sensor centre."""
    pixel_mm = _require(d, "pixel_um", "camera") / 1000.0
    s_h = _require(d, "sensor_h", "camera")
    s_w = _require(d, "sensor_w", "camera")
    lens = MainLensIntrinsics(
        _require(d, "F_mm", "camera"), s_h / 2.0, s_w / 2.0, pixel_mm, pixel_mm
    )
    dd = d.get("dist", {})
    dist = Distortion(
        dd.get("k1", 0.0), dd.get("k2", 0.0), dd.get("t1", 0.0), dd.get("t2", 0.0)
    )
    mla = MlaGeometry(
        dc=_require(d, "dc_mm", "camera"),
        dm=_require(d, "dm_mm", "camera"),
        n_h=_require(d, "n_h", "camera"),
        n_w=_require(d, "n_w", "camera"),
        s_h=s_h,
        s_w=s_w,
        lx0=d.get("offset_x_px", 0.0),
        ly0=d.get("offset_y_px", 0.0),
        theta=float(np.deg2rad(d.get("theta_deg", 0.0))),
    )
    return CameraModel(lens, dist, mla)


def board_to_config(board: BoardSpec) -> dict:
    return {"rows": board.rows, "cols": board.cols, "square_mm": board.square_mm}


def board_from_config(d: dict) -> BoardSpec:
    return BoardSpec(
        _require(d, "rows", "board"),
        _require(d, "cols", "board"),
        _require(d, "square_mm", "board"),
    )


def sim_from_config(d: dict) -> SimParams:
    sweep = d.get("sweep", {})
    return SimParams(
        n_views=d.get("n_views", 12),
        seed=d.get("seed", 2024),
        base_z_mm=d.get("base_z_mm", 270.0),
        rot_range_deg=d.get("rot_range_deg", 15.0),
        trans_range_mm=d.get("trans_range_mm", 5.0),
        sweep_min_mm=sweep.get("min", 234.0),
        sweep_max_mm=sweep.get("max", 294.0),
        sweep_step_mm=sweep.get("step", 6.0),
    )


@dataclass(frozen=True)
class SceneConfig:
    camera: CameraModel
    board: BoardSpec
    sim: SimParams


def load_scene(path) -> SceneConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"invalid JSON in {path}: {exc}") from exc
    return SceneConfig(
        camera_from_config(_require(raw, "camera", str(path))),
        board_from_config(_require(raw, "board", str(path))),
        sim_from_config(raw.get("sim", {})),
    )


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestView:
    view_id: str
    role: str  # "calibration" or "evaluation"
    image: str  # path relative to the manifest
    pose: Pose  # ground truth


@dataclass(frozen=True)
class DatasetManifest:
    board: BoardSpec
    camera_nominal: dict
    views: tuple = field(default_factory=tuple)
    sweep_step_mm: float | None = None
    noise_sensor: float = 0.0

    def calibration_views(self):
        return [v for v in self.views if v.role == "calibration"]

    def evaluation_views(self):
        return [v for v in self.views if v.role == "evaluation"]


def write_manifest(path, manifest: DatasetManifest) -> None:
    doc = {
        "board": board_to_config(manifest.board),
        "camera_nominal": manifest.camera_nominal,
        "views": [
            {
                "view_id": v.view_id,
                "role": v.role,
                "image": v.image,
                "ground_truth": {
                    "R": [float(x) for x in v.pose.r.ravel()],
                    "t_mm": [float(x) for x in v.pose.t],
                },
            }
            for v in manifest.views
        ],
        "sweep_step_mm": manifest.sweep_step_mm,
        "noise_sensor": manifest.noise_sensor,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_manifest(path) -> DatasetManifest:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"invalid JSON in {path}: {exc}") from exc
    views = []
    for v in _require(raw, "views", "manifest"):
        gt = _require(v, "ground_truth", "manifest view")
        pose = Pose(
            np.asarray(gt["R"], dtype=float).reshape(3, 3),
            np.asarray(gt["t_mm"], dtype=float),
        )
        views.append(
            ManifestView(
                _require(v, "view_id", "manifest view"),
                _require(v, "role", "manifest view"),
                _require(v, "image", "manifest view"),
                pose,
            )
        )
    return DatasetManifest(
        board_from_config(_require(raw, "board", "manifest")),
        _require(raw, "camera_nominal", "manifest"),
        tuple(views),
        raw.get("sweep_step_mm"),
        raw.get("noise_sensor", 0.0),
    )
