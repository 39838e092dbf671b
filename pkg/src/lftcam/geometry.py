"""Geometric core of the decoupled light-field camera model.

The camera is a thin main lens at the origin of the camera frame, a grid of
micro-lens pinholes on a plane at distance ``dm`` behind it, and the sensor
at distance ``dc`` (millimetres, ``dc > dm > 0``).  A scene point ``P`` at
depth ``Z_c`` is imaged by the main lens to a *virtual point*

    P' = F / (Z_c - F) * P

and each micro-lens then re-images the virtual point onto the sensor.  For a
micro-lens whose centre sits at pixel ``c`` the raw pixel is the affine blend

    u = alpha * c + (1 - alpha) * q,        alpha = (Z'_c - dc) / (Z'_c - dm)

where ``q`` is the *virtual pixel point*: the virtual point read off in pixel
units, ``q = (X'_c / sx + u0, Y'_c / sy + v0)``.  The principal point is
attributed entirely to the main lens; micro-lens centres are absolute pixel
coordinates, so the blend is consistent at both extremes (``alpha=0`` gives
``q``, ``alpha=1`` gives ``c``).  ``alpha`` is a Moebius (linear fractional)
function of virtual depth, and inverting it recovers depth from parallax.

Lens distortion acts on the normalized plane: for a virtual point, the
normalized coordinates ``(X'_c/Z'_c, Y'_c/Z'_c)`` are warped by the radial +
tangential model and re-embedded at the same depth.

Conventions: pixel coordinates ``(u, v)`` index the first and second axes of
the sensor raster; distances are millimetres; angles are radians internally
(degrees only at the CLI boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlphaAtUnity,
    DegenerateGeometry,
    FocalPlaneDegenerate,
    IndexOutOfRange,
    MlaPlaneDegenerate,
    NoConvergence,
)

#: Guard width for depth denominators (mm).
EPS_DEPTH = 1e-9


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MainLensIntrinsics:
    """Thin main lens: focal length (mm), principal point and pixel pitch.

    ``sx``/``sy`` are millimetres per pixel, so the focal length in pixel
    units is ``f_mm / sx``.
    """

    f_mm: float
    u0: float
    v0: float
    sx: float
    sy: float

    def __post_init__(self):
        if not (self.f_mm > 0 and self.sx > 0 and self.sy > 0):
            raise DegenerateGeometry("need f_mm > 0 and positive pixel pitch")

    @property
    def k_matrix(self) -> np.ndarray:
        """3x3 pinhole matrix of the virtual-image camera (pixel units)."""
        return np.array(
            [
                [self.f_mm / self.sx, 0.0, self.u0],
                [0.0, self.f_mm / self.sy, self.v0],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class Distortion:
    """Brown-Conrady coefficients on the normalized plane."""

    k1: float = 0.0
    k2: float = 0.0
    t1: float = 0.0
    t2: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.k1, self.k2, self.t1, self.t2])):
            raise DegenerateGeometry("distortion coefficients must be finite")

    @property
    def is_zero(self) -> bool:
        return self.k1 == self.k2 == self.t1 == self.t2 == 0.0


@dataclass(frozen=True)
class MlaGeometry:
    """Micro-lens array: plane distances, grid counts and layout.

    ``s_h`` x ``s_w`` is the sensor size in pixels (first and second raster
    axes), tiled by ``n_h`` x ``n_w`` micro-lenses of pitch ``l_h = s_h/n_h``
    and ``l_w = s_w/n_w``.  ``lx0``/``ly0`` shift the grid, ``theta`` rotates
    it about the raster origin (radians).
    """

    dc: float
    dm: float
    n_h: int
    n_w: int
    s_h: float
    s_w: float
    lx0: float = 0.0
    ly0: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (self.dc > self.dm > 0):
            raise DegenerateGeometry("need dc > dm > 0")
        if self.n_h < 1 or self.n_w < 1 or self.s_h <= 0 or self.s_w <= 0:
            raise DegenerateGeometry("grid counts and sensor size must be positive")

    @property
    def l_h(self) -> float:
        return self.s_h / self.n_h

    @property
    def l_w(self) -> float:
        return self.s_w / self.n_w


@dataclass(frozen=True)
class CameraModel:
    lens: MainLensIntrinsics
    dist: Distortion
    mla: MlaGeometry


def _check_rotation(r: np.ndarray) -> None:
    if r.shape != (3, 3):
        raise DegenerateGeometry("rotation must be 3x3")
    if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
        raise DegenerateGeometry("rotation is not orthonormal with det +1")


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping board-frame points into the camera frame."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        _check_rotation(r)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(np.eye(3), np.asarray(t, dtype=float))

    @classmethod
    def from_rotvec(cls, rvec, t) -> "Pose":
        return cls(rotvec_to_matrix(np.asarray(rvec, dtype=float)), t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) board points into the camera frame."""
        return np.asarray(points, dtype=float) @ self.r.T + self.t


@dataclass(frozen=True)
class HAlpha:
    """Per-(depth, lens) projective blend: pixel = H_alpha @ virtual pixel point."""

    alpha: float
    lens_center_px: tuple = field(default=(0.0, 0.0))


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------


def rotvec_to_matrix(rvec: np.ndarray) -> np.ndarray:
    """Rodrigues rotation vector (radians) to matrix."""
    rvec = np.asarray(rvec, dtype=float).reshape(3)
    angle = np.linalg.norm(rvec)
    if angle < 1e-12:
        k = np.array(
            [[0, -rvec[2], rvec[1]], [rvec[2], 0, -rvec[0]], [-rvec[1], rvec[0], 0]]
        )
        return np.eye(3) + k  # first order; exact enough below 1e-12
    axis = rvec / angle
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def matrix_to_rotvec(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotvec_to_matrix` (principal branch)."""
    r = np.asarray(r, dtype=float)
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-12:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # Near 180 deg the antisymmetric part vanishes; use the symmetric part.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        # Fix signs from the largest off-diagonal entries.
        i = int(np.argmax(axis))
        if axis[i] > 0:
            for j in range(3):
                if j != i:
                    axis[j] = m[i, j] / axis[i]
        axis = axis / np.linalg.norm(axis)
        return axis * angle
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return v / (2.0 * np.sin(angle)) * angle


def euler_zyx_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """R = Rz(rz) @ Ry(ry) @ Rx(rx), angles in radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rx_m = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry_m = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz_m = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz_m @ ry_m @ rx_m


# ---------------------------------------------------------------------------
# thin lens and alpha
# ---------------------------------------------------------------------------


def main_lens_project(p: np.ndarray, f_mm: float, eps: float = EPS_DEPTH) -> np.ndarray:
    """Virtual point of camera-frame point(s) ``p``: ``F/(Z_c - F) * p``.

    Accepts (..., 3); raises FocalPlaneDegenerate when any depth is within
    ``eps`` of the focal plane.
    """
    p = np.asarray(p, dtype=float)
    denom = p[..., 2] - f_mm
    if np.any(np.abs(denom) < eps):
        raise FocalPlaneDegenerate(f"|Z_c - F| < {eps}")
    return p * (f_mm / denom)[..., None]


def alpha_of_depth(zc_prime, mla: MlaGeometry, eps: float = EPS_DEPTH):
    """alpha = (Z'_c - dc) / (Z'_c - dm)."""
    zc_prime = np.asarray(zc_prime, dtype=float)
    denom = zc_prime - mla.dm
    if np.any(np.abs(denom) < eps):
        raise MlaPlaneDegenerate(f"|Z'_c - dm| < {eps}")
    out = (zc_prime - mla.dc) / denom
    return out if out.ndim else float(out)


def depth_of_alpha(alpha, mla: MlaGeometry, eps: float = EPS_DEPTH):
    """Invert alpha back to virtual depth: Z'_c = (dc - alpha*dm) / (1 - alpha)."""
    alpha = np.asarray(alpha, dtype=float)
    denom = 1.0 - alpha
    if np.any(np.abs(denom) < eps):
        raise AlphaAtUnity(f"|1 - alpha| < {eps}")
    out = (mla.dc - alpha * mla.dm) / denom
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# micro-lens grid
# ---------------------------------------------------------------------------


def _grid_rotation(mla: MlaGeometry) -> np.ndarray:
    c, s = np.cos(mla.theta), np.sin(mla.theta)
    return np.array([[c, -s], [s, c]])


def micro_lens_center(i: int, j: int, mla: MlaGeometry) -> np.ndarray:
    """Pixel centre of micro-lens (i, j); i runs along the first raster axis."""
    if not (0 <= i < mla.n_h and 0 <= j < mla.n_w):
        raise IndexOutOfRange(f"lens index ({i}, {j}) outside {mla.n_h}x{mla.n_w}")
    base = np.array(
        [
            i * mla.l_h - mla.lx0 + mla.l_h / 2.0,
            j * mla.l_w - mla.ly0 + mla.l_w / 2.0,
        ]
    )
    return _grid_rotation(mla) @ base


def micro_lens_center_grid(mla: MlaGeometry) -> np.ndarray:
    """All centres, shape (n_h, n_w, 2)."""
    ii, jj = np.meshgrid(np.arange(mla.n_h), np.arange(mla.n_w), indexing="ij")
    base = np.stack(
        [
            ii * mla.l_h - mla.lx0 + mla.l_h / 2.0,
            jj * mla.l_w - mla.ly0 + mla.l_w / 2.0,
        ],
        axis=-1,
    )
    return base @ _grid_rotation(mla).T


def nearest_lens_index(points: np.ndarray, mla: MlaGeometry) -> np.ndarray:
    """Grid index of the nearest micro-lens centre for (..., 2) pixel points.

    Rotation is an isometry, so the nearest centre is found in the unrotated
    frame, where lens (i, j) owns the half-open square
    [i*l_h - lx0, (i+1)*l_h - lx0) x [j*l_w - ly0, (j+1)*l_w - ly0); boundary
    points deterministically go to the upper cell.  Indices are not clipped:
    callers reject values outside [0, n_h) x [0, n_w).
    """
    p = np.asarray(points, dtype=float) @ _grid_rotation(mla)  # R(-theta) @ p
    i = np.floor((p[..., 0] + mla.lx0) / mla.l_h).astype(int)
    j = np.floor((p[..., 1] + mla.ly0) / mla.l_w).astype(int)
    return np.stack([i, j], axis=-1)


# ---------------------------------------------------------------------------
# distortion
# ---------------------------------------------------------------------------


def distort(p: np.ndarray, dist: Distortion) -> np.ndarray:
    """Apply radial + tangential distortion to normalized point(s) (..., 2)."""
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + dist.k1 * r2 + dist.k2 * r2 * r2
    xd = x * radial + dist.t1 * (r2 + 2 * x * x) + 2 * dist.t2 * x * y
    yd = y * radial + dist.t2 * (r2 + 2 * y * y) + 2 * dist.t1 * x * y
    return np.stack([xd, yd], axis=-1)


def _distort_jacobian(p: np.ndarray, dist: Distortion) -> np.ndarray:
    """(..., 2, 2) Jacobian of :func:`distort` at normalized point(s) p."""
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + dist.k1 * r2 + dist.k2 * r2 * r2
    dr = dist.k1 + 2.0 * dist.k2 * r2  # d(radial)/d(r2)
    jac = np.empty(p.shape[:-1] + (2, 2))
    jac[..., 0, 0] = radial + 2.0 * x * x * dr + 6.0 * dist.t1 * x + 2.0 * dist.t2 * y
    jac[..., 0, 1] = 2.0 * x * y * dr + 2.0 * dist.t1 * y + 2.0 * dist.t2 * x
    jac[..., 1, 0] = 2.0 * x * y * dr + 2.0 * dist.t2 * x + 2.0 * dist.t1 * y
    jac[..., 1, 1] = radial + 2.0 * y * y * dr + 6.0 * dist.t2 * y + 2.0 * dist.t1 * x
    return jac


def _newton_undistort(
    seed: np.ndarray,
    target: np.ndarray,
    dist: Distortion,
    max_iters: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Damped Newton solve of ``distort(x) = target`` from ``seed``.

    Entries are updated independently (converged ones freeze), so the result
    for a point never depends on what else shares its batch.  Returns the
    best iterate and its residual magnitude per point.
    """
    x = seed.copy()
    res = distort(x, dist) - target
    err = np.abs(res).max(axis=-1)
    for _ in range(max_iters):
        active = err >= tol
        if not active.any():
            break
        jac = _distort_jacobian(x, dist)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        safe = np.where(np.abs(det) > 1e-14, det, 1.0)
        step = np.empty_like(x)
        step[..., 0] = (jac[..., 1, 1] * res[..., 0] - jac[..., 0, 1] * res[..., 1]) / safe
        step[..., 1] = (jac[..., 0, 0] * res[..., 1] - jac[..., 1, 0] * res[..., 0]) / safe
        # At a singular Jacobian fall back to the residual direction.
        step = np.where((np.abs(det) > 1e-14)[..., None], step, res)
        scale = np.where(active, 1.0, 0.0)
        for _ in range(20):
            x_new = x - scale[..., None] * step
            res_new = distort(x_new, dist) - target
            err_new = np.abs(res_new).max(axis=-1)
            improved = (err_new < err) | ~active
            if improved.all():
                break
            scale = np.where(improved, scale, scale * 0.5)
        keep = ((err_new < err) & active)[..., None]
        x = np.where(keep, x_new, x)
        res = np.where(keep, res_new, res)
        err = np.where(keep[..., 0], err_new, err)
    return x, err


def undistort(
    p: np.ndarray,
    dist: Distortion,
    max_iters: int = 50,
    tol: float = 1e-10,
) -> np.ndarray:
    """Invert :func:`distort`, solving ``distort(x) = p`` per point.

    A damped Newton iteration (exact 2x2 Jacobian, residual-halving line
    search) runs from the seed ``x = p``.  Points the first pass cannot solve
    -- the inner branch of a strongly folded model may not reach them -- are
    retried from a deterministic ladder of seeds: the real roots of the
    purely radial profile along the point's direction, then scaled copies of
    the point, then a fixed ring.  The returned points always satisfy
    ``distort(undistort(p)) = p`` to ``tol``; NoConvergence is raised when no
    seed finds a solution.
    """
    p = np.asarray(p, dtype=float)
    if dist.is_zero:
        return p.copy()

    x, err = _newton_undistort(p.copy(), p, dist, max_iters, tol)
    if np.max(err) < tol:
        return x

    flat_x = x.reshape(-1, 2)
    flat_p = p.reshape(-1, 2)
    flat_err = np.atleast_1d(err).ravel()
    for idx in np.flatnonzero(flat_err >= tol):
        target = flat_p[idx]
        for seed in _rescue_seeds(target, dist):
            cand, cerr = _newton_undistort(seed, target, dist, max(max_iters, 120), tol)
            if cerr < flat_err[idx]:
                flat_x[idx] = cand
                flat_err[idx] = cerr
            if cerr < tol:
                break
    if np.max(flat_err) >= tol:
        raise NoConvergence(f"undistortion did not reach {tol} in {max_iters} iterations")
    return flat_x.reshape(p.shape)


_RESCUE_GRID = np.stack(
    [g.ravel() for g in np.meshgrid(np.linspace(-4.0, 4.0, 321), np.linspace(-4.0, 4.0, 321))],
    axis=-1,
)


def _rescue_seeds(target: np.ndarray, dist: Distortion):
    """Deterministic seed ladder for points the plain Newton pass misses."""
    norm = float(np.hypot(target[0], target[1]))
    if norm > 0.0:
        direction = target / norm
        # Real roots of r (1 + k1 r^2 + k2 r^4) = |p| seed both branches of a
        # radially dominated fold, including sign-flipped ones.
        coeffs = np.array([dist.k2, 0.0, dist.k1, 0.0, 1.0, -norm])
        roots = np.roots(np.trim_zeros(coeffs, "f"))
        for root in roots:
            if abs(root.imag) < 1e-9:
                yield direction * float(root.real)
    # Last resort: scan a coarse grid for the most promising basins.
    grid_err = np.abs(distort(_RESCUE_GRID, dist) - target).max(axis=-1)
    for idx in np.argsort(grid_err, kind="stable")[:20]:
        yield _RESCUE_GRID[idx].copy()


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def h_alpha_matrix(h: HAlpha) -> np.ndarray:
    """Homogeneous 3x3 applying ``u = (1-alpha) q + alpha c`` to (q, 1)."""
    a = h.alpha
    cu, cv = h.lens_center_px
    return np.array(
        [
            [1.0 - a, 0.0, a * cu],
            [0.0, 1.0 - a, a * cv],
            [0.0, 0.0, 1.0],
        ]
    )


def main_lens_pixel(
    p_cam: np.ndarray, lens: MainLensIntrinsics, dist: Distortion
) -> np.ndarray:
    """Virtual pixel point(s) ``q`` of camera-frame point(s) (..., 3).

    Chain: thin-lens virtual point, distortion on the normalized plane
    (X'/Z' = X/Z), re-embedding at the virtual depth, pixel conversion.
    """
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[..., 2]
    denom = z - lens.f_mm
    if np.any(np.abs(denom) < EPS_DEPTH):
        raise FocalPlaneDegenerate("point on the focal plane")
    z_prime = lens.f_mm * z / denom
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = p_cam[..., :2] / z[..., None]
    nd = distort(norm, dist)
    return np.stack(
        [
            nd[..., 0] * z_prime / lens.sx + lens.u0,
            nd[..., 1] * z_prime / lens.sy + lens.v0,
        ],
        axis=-1,
    )


def project_point(
    p_board: np.ndarray, pose: Pose, cam: CameraModel, lens_idx: tuple
) -> np.ndarray:
    """Full chain: board point -> raw pixel through micro-lens ``lens_idx``.

    Requires the transformed point in front of the focal plane (Z_c > F).
    """
    p_cam = pose.apply(np.asarray(p_board, dtype=float).reshape(3))
    if p_cam[2] - cam.lens.f_mm < EPS_DEPTH:
        raise FocalPlaneDegenerate("board point not in front of the focal plane")
    z_prime = cam.lens.f_mm * p_cam[2] / (p_cam[2] - cam.lens.f_mm)
    q = main_lens_pixel(p_cam, cam.lens, cam.dist)
    a = alpha_of_depth(z_prime, cam.mla)
    c = micro_lens_center(lens_idx[0], lens_idx[1], cam.mla)
    return (1.0 - a) * q + a * c


def project_batch(
    points_cam: np.ndarray, cam: CameraModel, lens_centers_px: np.ndarray
) -> np.ndarray:
    """Vectorized projection of camera-frame points through given lens centres.

    ``points_cam``: (N, 3); ``lens_centers_px``: (N, 2).  Returns (N, 2) raw
    pixels, NaN rows where the depth is degenerate (callers treat those as
    unusable rather than raising, so optimizer line searches stay total).
    """
    points_cam = np.asarray(points_cam, dtype=float)
    z = points_cam[:, 2]
    bad = np.abs(z - cam.lens.f_mm) < EPS_DEPTH
    denom = np.where(bad, np.nan, z - cam.lens.f_mm)
    z_prime = cam.lens.f_mm * z / denom
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = points_cam[:, :2] / z[:, None]
        nd = distort(norm, cam.dist)
        q = np.stack(
            [
                nd[:, 0] * z_prime / cam.lens.sx + cam.lens.u0,
                nd[:, 1] * z_prime / cam.lens.sy + cam.lens.v0,
            ],
            axis=-1,
        )
        a = (z_prime - cam.mla.dc) / (z_prime - cam.mla.dm)
    return (1.0 - a)[:, None] * q + a[:, None] * np.asarray(lens_centers_px, dtype=float)


def coupled_mla_coefficients(f_mm: float, mla: MlaGeometry) -> tuple:
    """Coefficients (K1, K2) of the equivalent single-transform MLA model.

    The decoupled parameters (F, dc, dm) map onto the coupled formulation via
    K1 = -(dm + F) dc / ((dm - dc) F) and K2 = dm dc / (dm - dc).
    """
    if abs(mla.dm - mla.dc) < EPS_DEPTH:
        raise DegenerateGeometry("dc == dm")
    k1 = -(mla.dm + f_mm) * mla.dc / ((mla.dm - mla.dc) * f_mm)
    k2 = mla.dm * mla.dc / (mla.dm - mla.dc)
    return float(k1), float(k2)
