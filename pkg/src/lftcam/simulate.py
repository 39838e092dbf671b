"""Raw light-field image synthesis by reverse ray tracing.

Every sensor pixel belongs to exactly one micro-lens (square partition of
the sensor).  The chief ray through the pixel and its micro-lens centre is
carried to object space through the main lens: a thin lens maps an
image-side point P' to the object-side point F/(Z'-F) * P' (the mapping is
an involution, so the same formula serves both directions).  The object ray
is intersected with the posed target plane and the texture is sampled
bilinearly.  With distortion the object-side ray is straight in *distorted*
coordinates, so the board intersection is found by a short secant iteration
over depth, undistorting per iterate.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .board import BoardSpec, make_checkerboard_texture
from .errors import EmptyFieldOfView, TargetBehindFocalPlane
from .geometry import (
    CameraModel,
    EPS_DEPTH,
    Pose,
    euler_zyx_matrix,
    micro_lens_center_grid,
    nearest_lens_index,
    undistort,
)
from .image import RawImage
from .rng import uniforms

_ROW_CHUNK = 128


@dataclass(frozen=True)
class Target:
    """A textured plane: the board pattern posed in the camera frame.

    By default the checkerboard is low-pass filtered with ``edge_sigma_px``
    (in texture pixels, i.e. ``square_mm / square_px`` of physical width per
    pixel).  A printed target imaged through real optics never has an ideal
    step edge, and a band-limited edge also keeps the point-sampled render
    free of phase-dependent aliasing; pass 0 for the ideal binary pattern.
    """

    board: BoardSpec
    pose: Pose
    texture: np.ndarray | None = None
    square_px: int = 64
    edge_sigma_px: float = 1.0

    def __post_init__(self):
        tex = self.texture
        if tex is None:
            tex = make_checkerboard_texture(
                self.board.rows, self.board.cols, self.square_px
            ).astype(float)
            if self.edge_sigma_px > 0:
                tex = gaussian_filter(tex, self.edge_sigma_px, mode="nearest")
        tex = np.asarray(tex)
        if tex.ndim != 2:
            raise ValueError("texture must be a 2-D gray image")
        object.__setattr__(self, "texture", tex)


def _sample_texture(target: Target, local_xy: np.ndarray, background: float):
    """Bilinear texture sample at board-frame mm coordinates.

    Returns (values, inside_mask); points off the board get the background.
    """
    ex, ey = target.board.extent_mm
    tex = target.texture.astype(float)
    th, tw = tex.shape
    x, y = local_xy[..., 0], local_xy[..., 1]
    inside = (np.abs(x) <= ex / 2) & (np.abs(y) <= ey / 2)
    fi = np.clip((x + ex / 2) * th / ex - 0.5, 0.0, th - 1.0)
    fj = np.clip((y + ey / 2) * tw / ey - 0.5, 0.0, tw - 1.0)
    i0 = np.floor(fi).astype(int)
    j0 = np.floor(fj).astype(int)
    i1 = np.minimum(i0 + 1, th - 1)
    j1 = np.minimum(j0 + 1, tw - 1)
    wi = fi - i0
    wj = fj - j0
    val = (
        tex[i0, j0] * (1 - wi) * (1 - wj)
        + tex[i1, j0] * wi * (1 - wj)
        + tex[i0, j1] * (1 - wi) * wj
        + tex[i1, j1] * wi * wj
    )
    return np.where(inside, val, background), inside


def _render_rows(cam: CameraModel, target: Target, rows: slice, background: float):
    """Render a horizontal band of the sensor; returns (values, hit_mask)."""
    lens, dist, mla = cam.lens, cam.dist, cam.mla
    f = lens.f_mm
    u = np.arange(rows.start, rows.stop, dtype=float)
    v = np.arange(mla.s_w, dtype=float)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    px = np.stack([uu, vv], axis=-1)

    idx = nearest_lens_index(px, mla)
    in_grid = (
        (idx[..., 0] >= 0)
        & (idx[..., 0] < mla.n_h)
        & (idx[..., 1] >= 0)
        & (idx[..., 1] < mla.n_w)
    )
    centers_grid = micro_lens_center_grid(mla)
    ci = np.clip(idx[..., 0], 0, mla.n_h - 1)
    cj = np.clip(idx[..., 1], 0, mla.n_w - 1)
    centers = centers_grid[ci, cj]

    scale = np.array([lens.sx, lens.sy])
    origin = np.array([lens.u0, lens.v0])
    # image-side chief ray endpoints, then through the lens to object space
    q_m = (px - origin) * scale
    m = (centers - origin) * scale
    a = np.empty(px.shape[:2] + (3,))
    a[..., :2] = q_m * (f / (mla.dc - f))
    a[..., 2] = f * mla.dc / (mla.dc - f)
    b = np.empty_like(a)
    b[..., :2] = m * (f / (mla.dm - f))
    b[..., 2] = f * mla.dm / (mla.dm - f)
    d = b - a

    r = target.pose.r
    t = target.pose.t
    normal = r[:, 2]
    denom = d @ normal
    ok = in_grid & (np.abs(denom) > 1e-12)
    safe = np.where(ok, denom, 1.0)
    tau = ((t - a) @ normal) / safe
    p_cam = a + tau[..., None] * d
    ok &= p_cam[..., 2] > f + EPS_DEPTH

    if not dist.is_zero:
        p_cam, ok = _solve_distorted(a, d, cam, target, p_cam, ok)

    local = (p_cam - t) @ r  # R^T (p - t)
    values, inside = _sample_texture(target, local[..., :2], background)
    hit = ok & inside
    out = np.where(ok, values, background)
    return out, hit


def _solve_distorted(a, d, cam: CameraModel, target: Target, p_init, ok):
    """Secant solve over depth: ray is straight in distorted coordinates.

    A point at depth z on the object ray has distorted transverse position
    xy(z); its true position is undistort(xy/z) * z.  The residual is the
    signed distance of the true point from the board plane; the undistorted
    intersection seeds the iteration.
    """
    r = target.pose.r
    t = target.pose.t
    normal = r[:, 2]
    f = cam.lens.f_mm

    dz = d[..., 2]
    alive = ok & (np.abs(dz) > 1e-12)
    safe_dz = np.where(np.abs(dz) > 1e-12, dz, 1.0)

    def true_point(z):
        tau = (z - a[..., 2]) / safe_dz
        pt = a + tau[..., None] * d
        zz = np.where(np.abs(z) > EPS_DEPTH, z, 1.0)
        n_d = pt[..., :2] / zz[..., None]
        n_d = np.where(alive[..., None], n_d, 0.0)
        n_u = undistort(n_d, cam.dist)
        out = np.empty_like(pt)
        out[..., :2] = n_u * z[..., None]
        out[..., 2] = z
        return out

    def residual(z):
        return (true_point(z) - t) @ normal

    z0 = p_init[..., 2]
    z1 = z0 * (1.0 + 1e-4)
    f0 = residual(z0)
    f1 = residual(z1)
    for _ in range(30):
        df = f1 - f0
        step_ok = np.abs(df) > 1e-15
        z2 = np.where(step_ok, z1 - f1 * (z1 - z0) / np.where(step_ok, df, 1.0), z1)
        z0, f0 = z1, f1
        z1 = z2
        f1 = residual(z1)
        if not alive.any() or np.all(np.abs(f1[alive]) < 1e-10):
            break
    alive = alive & (np.abs(f1) < 1e-6) & (z1 > f + EPS_DEPTH)
    return true_point(z1), alive


def render_raw(
    cam: CameraModel,
    target: Target,
    threads: int = 1,
    background: float = 255.0,
) -> RawImage:
    """Render the raw sensor image of a posed target.

    Deterministic for a given scene regardless of the thread count: threads
    only split the sensor into disjoint row bands.  The default background
    matches the white board margin, so the only intensity structure in the
    image is the checker pattern itself.
    """
    ex, ey = target.board.extent_mm
    corners = np.array(
        [[sx * ex / 2, sy * ey / 2, 0.0] for sx in (-1, 1) for sy in (-1, 1)]
    )
    depths = target.pose.apply(corners)[:, 2]
    if np.any(depths <= cam.lens.f_mm + EPS_DEPTH):
        raise TargetBehindFocalPlane(
            f"target corner depth {depths.min():.3f} mm <= focal length"
        )

    mla = cam.mla
    out = np.empty((mla.s_h, mla.s_w), dtype=np.uint8)
    any_hit = np.zeros(1, dtype=bool)
    chunks = [
        slice(r0, min(r0 + _ROW_CHUNK, mla.s_h)) for r0 in range(0, mla.s_h, _ROW_CHUNK)
    ]

    def work(rows: slice):
        vals, hit = _render_rows(cam, target, rows, background)
        out[rows] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
        if hit.any():
            any_hit[0] = True

    if threads <= 1:
        for rows in chunks:
            work(rows)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, chunks))
    if not any_hit[0]:
        raise EmptyFieldOfView("target not visible from any sensor pixel")
    return RawImage(out)


# ---------------------------------------------------------------------------
# pose generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimParams:
    """Scene randomization: view count, pose ranges, depth sweep."""

    n_views: int = 12
    seed: int = 2024
    base_z_mm: float = 270.0
    rot_range_deg: float = 15.0
    trans_range_mm: float = 5.0
    sweep_min_mm: float = 234.0
    sweep_max_mm: float = 294.0
    sweep_step_mm: float = 6.0


def generate_random_poses(
    n: int,
    seed: int,
    base_z_mm: float,
    rot_range_deg: float = 15.0,
    trans_range_mm: float = 5.0,
) -> list:
    """n reproducible poses: three Euler angles and a translation about the
    base depth, all uniform in symmetric ranges, six draws per pose."""
    poses = []
    for k in range(n):
        u = uniforms(seed, 6, start=6 * k)
        ang = np.deg2rad((2.0 * u[:3] - 1.0) * rot_range_deg)
        off = (2.0 * u[3:] - 1.0) * trans_range_mm
        rot = euler_zyx_matrix(ang[0], ang[1], ang[2])
        t = np.array([off[0], off[1], base_z_mm + off[2]])
        poses.append(Pose(rot, t))
    return poses


def generate_translation_sweep(min_z_mm: float, max_z_mm: float, step_mm: float) -> list:
    """Frontal poses translated along the optical axis, inclusive of min."""
    if step_mm <= 0:
        raise ValueError("step must be positive")
    n = int(np.floor((max_z_mm - min_z_mm) / step_mm + 1e-9)) + 1
    return [
        Pose(np.eye(3), np.array([0.0, 0.0, min_z_mm + k * step_mm]))
        for k in range(max(n, 0))
    ]
