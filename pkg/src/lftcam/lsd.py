"""Gradient-based line segment detection on micro-image patches.

Level-line angles (gradient direction rotated 90 deg, polarity kept) are
computed on the 2x2 cross-difference grid, then pixels are grouped into
regions by angular coherence: two 8-neighbours join when their level-line
angles differ by less than the tolerance.  Each region is fitted with a
magnitude-weighted rectangle whose principal axis gives the segment.  Every
gradient pixel belongs to at most one region by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateGeometry


@dataclass(frozen=True)
class Segment:
    """Line segment in patch pixel coordinates."""

    a: np.ndarray
    b: np.ndarray
    direction: np.ndarray  # unit vector from a toward b

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(2))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(2))
        d = np.asarray(self.direction, dtype=float).reshape(2)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise DegenerateGeometry("zero-length segment direction")
        object.__setattr__(self, "direction", d / n)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))


@dataclass(frozen=True)
class SegmentParams:
    grad_threshold: float = 5.22      # magnitude below this is not an edge pixel
    angle_tol_rad: float = np.deg2rad(22.5)
    min_region_px: int = 4
    min_length_px: float = 2.0
    min_density: float = 0.5          # region pixels per unit rectangle area


def _gradients(patch: np.ndarray):
    """2x2 cross differences; sample (i, j) lives at patch coords (i+.5, j+.5)."""
    im = patch.astype(float)
    gu = (im[1:, :-1] + im[1:, 1:] - im[:-1, :-1] - im[:-1, 1:]) / 2.0
    gv = (im[:-1, 1:] + im[1:, 1:] - im[:-1, :-1] - im[1:, :-1]) / 2.0
    return gu, gv


def _angle_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(a - b)
    return np.minimum(d, 2 * np.pi - d)


def detect_segments(patch: np.ndarray, params: SegmentParams = SegmentParams()):
    """Detect line segments in a grayscale patch (>= 4 px on a side).

    Returns a list of :class:`Segment` ordered by descending supporting-region
    size (ties broken by position), deterministic for identical input.
    """
    patch = np.asarray(patch)
    if patch.ndim != 2 or min(patch.shape) < 4:
        raise DegenerateGeometry("patch must be 2-D with side >= 4")
    gu, gv = _gradients(patch)
    mag = np.hypot(gu, gv)
    angle = np.mod(np.arctan2(gv, gu) + np.pi / 2.0, 2 * np.pi)  # level-line
    mask = mag > params.grad_threshold
    n_rows, n_cols = mag.shape
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []

    # Sparse graph over edge pixels: connect 8-neighbours with coherent angles.
    flat_angle = angle.ravel()
    src_u, src_v = np.divmod(idx, n_cols)
    rows_i, rows_j = [], []
    for du, dv in ((0, 1), (1, 0), (1, 1), (1, -1)):
        dst_u, dst_v = src_u + du, src_v + dv
        ok = (dst_u >= 0) & (dst_u < n_rows) & (dst_v >= 0) & (dst_v < n_cols)
        src = idx[ok]
        dst = dst_u[ok] * n_cols + dst_v[ok]
        ok2 = mask.ravel()[dst]
        src, dst = src[ok2], dst[ok2]
        coherent = _angle_diff(flat_angle[src], flat_angle[dst]) <= params.angle_tol_rad
        rows_i.append(src[coherent])
        rows_j.append(dst[coherent])
    src = np.concatenate(rows_i)
    dst = np.concatenate(rows_j)

    # Compress to the mask subset for a small component problem.
    order = np.full(n_rows * n_cols, -1, dtype=int)
    order[idx] = np.arange(idx.size)
    graph = coo_matrix(
        (np.ones(src.size, dtype=np.int8), (order[src], order[dst])),
        shape=(idx.size, idx.size),
    )
    n_comp, labels = connected_components(graph, directed=False)

    segments = []
    u_all, v_all = src_u, src_v
    w_all = mag.ravel()[idx]
    cu_all = np.cos(flat_angle[idx])
    su_all = np.sin(flat_angle[idx])
    for comp in range(n_comp):
        sel = labels == comp
        if np.count_nonzero(sel) < params.min_region_px:
            continue
        # +0.5: gradient samples sit on the dual grid.
        pu = u_all[sel] + 0.5
        pv = v_all[sel] + 0.5
        w = w_all[sel]
        wsum = w.sum()
        cu = float((w * pu).sum() / wsum)
        cv = float((w * pv).sum() / wsum)
        duu = ((pu - cu) ** 2 * w).sum() / wsum
        dvv = ((pv - cv) ** 2 * w).sum() / wsum
        duv = ((pu - cu) * (pv - cv) * w).sum() / wsum
        # Principal axis of the weighted scatter.
        theta = 0.5 * np.arctan2(2 * duv, duu - dvv)
        d = np.array([np.cos(theta), np.sin(theta)])
        ev_along = duu * d[0] ** 2 + 2 * duv * d[0] * d[1] + dvv * d[1] ** 2
        ev_cross = duu + dvv - ev_along
        if ev_cross > ev_along:  # arctan2 branch picked the minor axis
            d = np.array([-d[1], d[0]])
        # Orient along the region's mean level-line direction.
        mean_dir = np.array([(w * cu_all[sel]).sum(), (w * su_all[sel]).sum()])
        if float(d @ mean_dir) < 0:
            d = -d
        t = (pu - cu) * d[0] + (pv - cv) * d[1]
        s = -(pu - cu) * d[1] + (pv - cv) * d[0]
        length = float(t.max() - t.min())
        width = float(s.max() - s.min())
        if length < params.min_length_px:
            continue
        if sel.sum() / (length * max(width, 1.0)) < params.min_density:
            continue
        a = np.array([cu, cv]) + t.min() * d
        b = np.array([cu, cv]) + t.max() * d
        segments.append((int(np.count_nonzero(sel)), float(cu), float(cv), Segment(a, b, d)))

    segments.sort(key=lambda rec: (-rec[0], rec[1], rec[2]))
    return [rec[3] for rec in segments]
