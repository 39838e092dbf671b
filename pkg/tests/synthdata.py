"""Exact synthetic corner observations straight from the projection model.

Rendering plus detection measures the whole pipeline; these helpers instead
evaluate the forward model itself, giving noise-free features with known
ground truth for estimator-exactness tests and cheap large trial batches.
"""

from __future__ import annotations

import numpy as np

from lftcam.board import BoardSpec
from lftcam.features import CipFeature
from lftcam.geometry import (
    CameraModel,
    Pose,
    alpha_of_depth,
    main_lens_pixel,
    micro_lens_center_grid,
)


def analytic_features(
    cam: CameraModel, pose: Pose, board: BoardSpec, margin: float = 0.4
) -> dict:
    """{corner_idx: [CipFeature, ...]} as the exact model projects them.

    A corner is credited to micro-lens (i, j) when its raw-pixel projection
    through that lens lands within ``margin`` of the lens pitch around the
    lens centre (Chebyshev) and inside the sensor — the same interior region
    the detector can actually use.  Corners observed by fewer than 4 lenses
    are dropped.
    """
    centers = micro_lens_center_grid(cam.mla)
    p_cam = pose.apply(board.corner_points())
    z_prime = cam.lens.f_mm * p_cam[:, 2] / (p_cam[:, 2] - cam.lens.f_mm)
    alpha = np.atleast_1d(alpha_of_depth(z_prime, cam.mla))
    q = main_lens_pixel(p_cam, cam.lens, cam.dist)
    lim = margin * min(cam.mla.l_h, cam.mla.l_w)
    out = {}
    for k in range(alpha.size):
        p = (1.0 - alpha[k]) * q[k] + alpha[k] * centers
        cheb = np.abs(p - centers).max(axis=-1)
        ii, jj = np.nonzero(cheb <= lim)
        feats = []
        for i, j in zip(ii, jj):
            pos = p[i, j]
            if 0.0 <= pos[0] < cam.mla.s_h and 0.0 <= pos[1] < cam.mla.s_w:
                feats.append(CipFeature(pos, (int(i), int(j)), 4))
        if len(feats) >= 4:
            out[k] = feats
    return out


def analytic_view(
    cam: CameraModel, pose: Pose, board: BoardSpec, margin: float = 0.4
) -> list:
    """Flat detector-shaped feature list of :func:`analytic_features`."""
    by_corner = analytic_features(cam, pose, board, margin)
    return [f for k in sorted(by_corner) for f in by_corner[k]]
