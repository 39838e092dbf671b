"""Reproducible noise injection for robustness studies.

Both noise kinds draw from the counter-based generator in :mod:`.rng`, so a
given (seed, data) pair yields the same perturbation on every platform and
thread count.
"""

from __future__ import annotations

import numpy as np

from .features import CipFeature
from .image import RawImage
from .rng import normals


def add_sensor_noise(image: RawImage, sigma: float, seed: int) -> RawImage:
    """Gaussian noise on normalized intensities, clipped and requantized.

    sigma is expressed on the [0, 1] intensity scale.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return RawImage(image.pixels.copy())
    vals = image.pixels.astype(float) / 255.0
    noise = normals(seed, vals.size).reshape(vals.shape)
    noisy = np.clip(vals + sigma * noise, 0.0, 1.0)
    return RawImage(np.rint(noisy * 255.0).astype(np.uint8))


def add_observation_noise(features, sigma_px: float, seed: int) -> list:
    """Gaussian pixel jitter on feature positions, two draws per feature."""
    if sigma_px < 0:
        raise ValueError("sigma must be non-negative")
    feats = list(features)
    if sigma_px == 0 or not feats:
        return feats
    jitter = normals(seed, 2 * len(feats)).reshape(-1, 2)
    return [
        CipFeature(f.position_px + sigma_px * jitter[k], f.lens_idx, f.n_intersections)
        for k, f in enumerate(feats)
    ]
