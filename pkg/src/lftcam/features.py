"""Checkerboard-corner detection in raw plenoptic images.

Each micro-image is cropped, screened by a brightness measure, searched for
line segments, and every well-conditioned segment pair is intersected.  An
intersection becomes a corner observation only if the four quadrants spanned
by the two segment directions show the dark/bright pattern of a checkerboard
corner; the micro-image's CIP (centroid of intersection points) is the mean
of the validated intersections.  Micro-lenses observing the same corner are
then grouped by density clustering on their integer grid indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .board import BoardSpec
from .errors import (
    AmbiguousOrdering,
    CorruptFile,
    CountMismatch,
    EmptyList,
    EmptyPatch,
    GridMismatch,
    OutOfPatch,
    ParallelSegments,
)
from .geometry import CameraModel, MlaGeometry, micro_lens_center, micro_lens_center_grid
from .image import RawImage
from .lsd import Segment, SegmentParams, detect_segments


@dataclass(frozen=True)
class MicroImage:
    """Crop of one micro-lens: patch pixels plus placement metadata."""

    lens_idx: tuple
    origin_px: tuple  # integer (u, v) of patch pixel (0, 0) in the raw image
    patch: np.ndarray


@dataclass(frozen=True)
class CipFeature:
    """One corner observation: CIP position in raw-image pixels."""

    position_px: np.ndarray
    lens_idx: tuple
    n_intersections: int

    def __post_init__(self):
        object.__setattr__(
            self, "position_px", np.asarray(self.position_px, dtype=float).reshape(2)
        )


@dataclass(frozen=True)
class Correspondence:
    """A board corner and every micro-image observation of it in one view."""

    board_point_mm: np.ndarray
    corner_idx: int
    features: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "board_point_mm", np.asarray(self.board_point_mm, dtype=float).reshape(3)
        )
        lenses = [f.lens_idx for f in self.features]
        if len(set(lenses)) != len(lenses):
            raise CountMismatch("duplicate micro-lens in correspondence")


@dataclass(frozen=True)
class DetectorParams:
    m_low: float = 0.1
    m_high: float = 0.9
    tau1: float = 100.0
    tau2: float = 125.0
    r: float = 5.0
    n_samples: int = 5
    dbscan_eps: float = float(np.sqrt(2.0))
    dbscan_min_pts: int = 2
    endpoint_radius_factor: float = 1.5
    segment: SegmentParams = field(default_factory=SegmentParams)


# ---------------------------------------------------------------------------
# micro-image extraction and screening
# ---------------------------------------------------------------------------


def _extract_patches(pixels: np.ndarray, mla: MlaGeometry):
    h, w = pixels.shape
    if abs(mla.s_h - h) > 1.0 or abs(mla.s_w - w) > 1.0:
        raise GridMismatch(f"grid {mla.s_h}x{mla.s_w} vs raw {h}x{w}")
    side = int(min(mla.l_h, mla.l_w))
    if side < 1:
        raise GridMismatch("micro-lens pitch below one pixel")
    centers = micro_lens_center_grid(mla)
    out = []
    half = side // 2
    for i in range(mla.n_h):
        for j in range(mla.n_w):
            u0 = int(round(centers[i, j, 0])) - half
            v0 = int(round(centers[i, j, 1])) - half
            if u0 < 0 or v0 < 0 or u0 + side > h or v0 + side > w:
                continue
            out.append(
                MicroImage((i, j), (u0, v0), pixels[u0 : u0 + side, v0 : v0 + side])
            )
    return out


def extract_micro_images(raw: RawImage, mla: MlaGeometry):
    """Square crops centred on each micro-lens, lens-index order.

    Patch side is floor(min(l_h, l_w)); lenses whose crop would cross the
    image border are omitted.
    """
    return _extract_patches(raw.pixels, mla)


def estimate_noise_std(pixels: np.ndarray) -> float:
    """Robust per-pixel noise std (gray levels) from the 2x2 cross difference.

    The cross difference I[i+1,j+1] - I[i+1,j] - I[i,j+1] + I[i,j] annihilates
    locally planar intensity, so away from edges it is pure noise with std
    2*sigma, and the median absolute value is insensitive to the edge
    minority.
    """
    im = np.asarray(pixels, dtype=float)
    d = im[1:, 1:] - im[1:, :-1] - im[:-1, 1:] + im[:-1, :-1]
    return float(np.median(np.abs(d)) / (2.0 * 0.6744897501960817))


def brightness_measure(patch: np.ndarray) -> float:
    """Fraction of pixels brighter than mid-gray (127)."""
    patch = np.asarray(patch)
    if patch.size == 0:
        raise EmptyPatch("empty micro-image")
    return float(np.count_nonzero(patch > 127) / patch.size)


# ---------------------------------------------------------------------------
# intersection validation
# ---------------------------------------------------------------------------


def bilinear_sample(patch: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at (..., 2) float pixel coords (no clamping)."""
    points = np.asarray(points, dtype=float)
    u, v = points[..., 0], points[..., 1]
    im = np.asarray(patch, dtype=float)
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    fu, fv = u - u0, v - v0
    u0c = np.clip(u0, 0, im.shape[0] - 2)
    v0c = np.clip(v0, 0, im.shape[1] - 2)
    fu = fu + (u0 - u0c)
    fv = fv + (v0 - v0c)
    p00 = im[u0c, v0c]
    p01 = im[u0c, v0c + 1]
    p10 = im[u0c + 1, v0c]
    p11 = im[u0c + 1, v0c + 1]
    return (
        p00 * (1 - fu) * (1 - fv)
        + p01 * (1 - fu) * fv
        + p10 * fu * (1 - fv)
        + p11 * fu * fv
    )


def quadrant_constraints(i1: float, i2: float, i3: float, i4: float,
                         tau1: float = 100.0, tau2: float = 125.0):
    """The four corner constraints on quadrant means.

    s1/s2 bound the difference of opposite quadrants, s3/s4 require contrast
    between adjacent ones.  Returns (valid, [s1, s2, s3, s4]).
    """
    s = [i1 - i3 < tau1, i2 - i4 < tau1, i1 - i2 > tau2, i3 - i4 > tau2]
    return all(s), s

# Quadrant enumeration order (k1, k2) for I_1..I_4.
_QUADRANTS = ((1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0))
# Flipping the sign of v1 and/or v2 only permutes the measured quadrant means.
_SIGN_PERMUTATIONS = (
    (0, 1, 2, 3),  # (+v1, +v2)
    (3, 2, 1, 0),  # (-v1, +v2)
    (1, 0, 3, 2),  # (+v1, -v2)
    (2, 3, 0, 1),  # (-v1, -v2)
)


def intersect_segments(s1: Segment, s2: Segment, min_sin: float = 1e-3) -> np.ndarray:
    """Intersection of the two supporting lines; ParallelSegments if ill-conditioned."""
    d1, d2 = s1.direction, s2.direction
    cross = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(cross) < min_sin:
        raise ParallelSegments(f"|sin| = {abs(cross):.2e}")
    dp = s2.a - s1.a
    t = (dp[0] * d2[1] - dp[1] * d2[0]) / cross
    return s1.a + t * d1


def _point_segment_distance(c: np.ndarray, seg: Segment) -> float:
    ab = seg.b - seg.a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((c - seg.a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(c - (seg.a + t * ab)))


def validate_intersection(
    patch: np.ndarray, s1: Segment, s2: Segment, params: DetectorParams = DetectorParams()
) -> np.ndarray:
    """Return the validated corner candidate of two segments, or raise.

    The candidate must lie inside the patch and within 1.5*r of both
    segments (a checkerboard corner is an interior crossing, so distance to
    the segment as a set — not to its endpoints — tolerates segments that
    noise has fragmented, while intersections of near-collinear fragments
    still land far from both pieces and are rejected).  N points per
    quadrant are sampled along rays mixing the two segment directions;
    quadrant means must satisfy the corner constraints under one of the four
    direction-sign assignments.  Samples outside the patch are skipped; an
    empty quadrant invalidates.
    """
    patch = np.asarray(patch)
    c0 = intersect_segments(s1, s2)
    side_u, side_v = patch.shape
    if not (0 <= c0[0] <= side_u - 1 and 0 <= c0[1] <= side_v - 1):
        raise OutOfPatch(f"intersection at {c0}")
    max_d = params.endpoint_radius_factor * params.r
    for seg in (s1, s2):
        if _point_segment_distance(c0, seg) > max_d:
            raise OutOfPatch("intersection far from both segments")

    steps = np.arange(1, params.n_samples + 1) / params.n_samples  # (N,)
    means = []
    for k1, k2 in _QUADRANTS:
        ray = k1 * s1.direction + k2 * s2.direction
        pts = c0 + params.r * steps[:, None] * ray
        inside = (
            (pts[:, 0] >= 0)
            & (pts[:, 0] <= side_u - 1)
            & (pts[:, 1] >= 0)
            & (pts[:, 1] <= side_v - 1)
        )
        if not inside.any():
            raise OutOfPatch("quadrant entirely outside the patch")
        means.append(float(bilinear_sample(patch, pts[inside]).mean()))

    for perm in _SIGN_PERMUTATIONS:
        ordered = [means[p] for p in perm]
        valid, _ = quadrant_constraints(*ordered, tau1=params.tau1, tau2=params.tau2)
        if valid:
            return c0
    raise OutOfPatch("quadrant constraints not satisfied")


def compute_cip(points) -> np.ndarray:
    """Centroid of intersection points."""
    pts = np.asarray(list(points), dtype=float)
    if pts.size == 0:
        raise EmptyList("no intersection points")
    return pts.reshape(-1, 2).mean(axis=0)


# ---------------------------------------------------------------------------
# per-image detection
# ---------------------------------------------------------------------------


# Images whose estimated sensor noise exceeds the floor (gray levels) are
# Gaussian pre-smoothed, the segment gradient threshold is raised to sit
# above the residual noise, and patches are contrast-stretched before the
# quadrant test; clean images skip all three, so their detections are
# unchanged.
_NOISE_FLOOR = 1.0
# Smoothing must stay narrow enough that the checkerboard contrast at the
# quadrant sampling radius still clears tau2.
_NOISE_BLUR_SIGMA = 1.0
_NOISE_GATE = 2.5


def _stretch_contrast(patch: np.ndarray) -> np.ndarray:
    """Affine remap of the robust patch range onto [0, 255].

    Clipping noisy pixels to [0, 255] drags dark regions up and bright
    regions down, compressing the quadrant contrast that the corner
    constraints compare against fixed thresholds sized for a full-swing
    checkerboard; the stretch restores that swing.
    """
    lo, hi = np.percentile(patch, (5.0, 95.0))
    if hi - lo <= 1.0:
        return patch
    return np.clip((patch - lo) * (255.0 / (hi - lo)), 0.0, 255.0)


def detect_features(
    raw: RawImage, mla: MlaGeometry, params: DetectorParams = DetectorParams()
):
    """All CIP features of a raw image, at most one per micro-lens.

    Deterministic: micro-images are processed in lens-index order and every
    stage is order-free.
    """
    pixels = np.asarray(raw.pixels, dtype=float)
    seg_params = params.segment
    sigma_hat = estimate_noise_std(pixels)
    noisy = sigma_hat > _NOISE_FLOOR
    if noisy:
        pixels = gaussian_filter(pixels, _NOISE_BLUR_SIGMA, mode="nearest")
        # Variance shrink of white noise under a Gaussian kernel: 1/(4*pi*s^2).
        residual = sigma_hat / (2.0 * np.sqrt(np.pi) * _NOISE_BLUR_SIGMA)
        seg_params = replace(
            seg_params,
            grad_threshold=max(seg_params.grad_threshold, _NOISE_GATE * residual),
        )
    out = []
    for mi in _extract_patches(pixels, mla):
        m = brightness_measure(mi.patch)
        if m < params.m_low or m > params.m_high:
            continue
        segments = detect_segments(mi.patch, seg_params)
        if len(segments) < 2:
            continue
        vpatch = _stretch_contrast(mi.patch) if noisy else mi.patch
        points = []
        for sa, sb in combinations(segments, 2):
            try:
                points.append(validate_intersection(vpatch, sa, sb, params))
            except (ParallelSegments, OutOfPatch):
                continue
        if not points:
            continue
        cip = compute_cip(points) + np.asarray(mi.origin_px, dtype=float)
        out.append(CipFeature(cip, mi.lens_idx, len(points)))
    return out


# ---------------------------------------------------------------------------
# clustering and correspondences
# ---------------------------------------------------------------------------


def cluster_lenses(lens_indices, eps: float = float(np.sqrt(2.0)), min_pts: int = 2):
    """Density clustering of integer lens indices; noise points are dropped.

    Classic density-based clustering with Euclidean eps-neighbourhoods (the
    point itself counts toward ``min_pts``).  eps = sqrt(2) links exactly the
    8-neighbourhood for integer grids.  Returns clusters as lists of (i, j),
    each sorted, ordered by their smallest member — independent of input
    order.
    """
    pts = sorted(set(tuple(map(int, p)) for p in lens_indices))
    if not pts:
        return []
    arr = np.asarray(pts, dtype=float)
    eps_sq = eps * eps + 1e-9
    d2 = ((arr[:, None, :] - arr[None, :, :]) ** 2).sum(axis=2)
    neighbors = [np.flatnonzero(d2[i] <= eps_sq) for i in range(len(pts))]

    labels = np.full(len(pts), -1, dtype=int)
    cluster_id = 0
    for i in range(len(pts)):
        if labels[i] != -1 or len(neighbors[i]) < min_pts:
            continue
        labels[i] = cluster_id
        frontier = list(neighbors[i])
        while frontier:
            k = frontier.pop()
            if labels[k] == -1:
                labels[k] = cluster_id
                if len(neighbors[k]) >= min_pts:
                    frontier.extend(neighbors[k])
        cluster_id += 1
    clusters = [
        sorted(pts[k] for k in np.flatnonzero(labels == cid)) for cid in range(cluster_id)
    ]
    clusters.sort(key=lambda c: c[0])
    return clusters


def group_features_by_cluster(features, eps=float(np.sqrt(2.0)), min_pts: int = 2):
    """Cluster features by lens index; returns lists of CipFeatures."""
    by_lens = {f.lens_idx: f for f in features}
    clusters = cluster_lenses(by_lens.keys(), eps=eps, min_pts=min_pts)
    return [[by_lens[idx] for idx in cluster] for cluster in clusters]


def _cluster_anchor(cluster, mla: MlaGeometry) -> np.ndarray:
    """2-D sort key for a cluster: fitted virtual pixel point when possible.

    Falls back to the mean CIP when the tiny LS fit is degenerate; ordering
    only needs grid topology, not metric accuracy.
    """
    from .calibrate import fit_alpha_virtual  # local import to avoid a cycle

    try:
        est = fit_alpha_virtual(cluster, mla, min_features=2)
        return est.virtual_px
    except Exception:  # degenerate tiny cluster: fall back to raw centroid
        return np.mean([f.position_px for f in cluster], axis=0)


def build_correspondences(
    clusters, board: BoardSpec, coarse_cam: CameraModel
):
    """Assign feature clusters to board corners (row-major order).

    Clusters with fewer than 4 features are unusable downstream and are
    dropped first; the survivors must then match the corner count exactly.
    Ordering: project cluster anchors onto their principal axes, split into
    rows along the dominant axis, sort each row along the other.
    """
    usable = [c for c in clusters if len(c) >= 4]
    expected = board.rows * board.cols
    if len(usable) != expected:
        raise CountMismatch(f"{len(usable)} usable clusters for {expected} corners")

    anchors = np.array([_cluster_anchor(c, coarse_cam.mla) for c in usable])
    centered = anchors - anchors.mean(axis=0)
    cov = centered.T @ centered / len(usable)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    e1 = evecs[:, 1]  # dominant spread = board rows axis (longer corner count)
    e2 = evecs[:, 0]
    if evals[0] <= 0 or evals[1] / evals[0] < 1.05:
        raise AmbiguousOrdering("cluster spread nearly isotropic")
    # Deterministic sign convention.
    if e1[0] < 0 or (e1[0] == 0 and e1[1] < 0):
        e1 = -e1
    e2 = np.array([-e1[1], e1[0]])

    a = centered @ e1
    b = centered @ e2
    if board.rows < board.cols:
        a, b = b, a  # dominant axis carries the larger corner count
    order = np.argsort(a, kind="stable")
    rows = [order[k * board.cols : (k + 1) * board.cols] for k in range(board.rows)]
    # Row bands must be separated along `a`.
    for prev, cur in zip(rows[:-1], rows[1:]):
        gap = a[cur].min() - a[prev].max()
        band = max(a[prev].max() - a[prev].min(), a[cur].max() - a[cur].min())
        if gap <= 0 or (band > 0 and gap < 0.2 * band):
            raise AmbiguousOrdering("row bands overlap along the principal axis")
    board_pts = board.corner_points()
    out = []
    for r, row in enumerate(rows):
        for c, k in enumerate(sorted(row, key=lambda k: b[k])):
            corner = r * board.cols + c
            out.append(
                Correspondence(board_pts[corner], corner, tuple(usable[int(k)]))
            )
    return out


# ---------------------------------------------------------------------------
# feature CSV
# ---------------------------------------------------------------------------

FEATURE_CSV_HEADER = ["view_id", "lens_i", "lens_j", "u_px", "v_px", "n_intersections"]


def write_features_csv(path, rows) -> None:
    """rows: iterable of (view_id, CipFeature)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_CSV_HEADER)
        for view_id, feat in rows:
            writer.writerow(
                [
                    view_id,
                    feat.lens_idx[0],
                    feat.lens_idx[1],
                    f"{feat.position_px[0]:.6f}",
                    f"{feat.position_px[1]:.6f}",
                    feat.n_intersections,
                ]
            )


def read_features_csv(path):
    """Inverse of :func:`write_features_csv`: {view_id: [CipFeature, ...]}."""
    out: dict = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FEATURE_CSV_HEADER:
            raise CorruptFile(f"unexpected feature CSV header: {header}")
        for row in reader:
            view_id, i, j, u, v, n = row
            out.setdefault(view_id, []).append(
                CipFeature(np.array([float(u), float(v)]), (int(i), int(j)), int(n))
            )
    return out
