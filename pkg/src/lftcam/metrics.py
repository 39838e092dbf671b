"""Quality metrics: depth sweep error, goodness of fit, reprojection RMSE,
and the parameter translations used to compare against other camera models."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVariance, EmptyInput, ZeroDisplacement
from .geometry import CameraModel, coupled_mla_coefficients


def epsilon_z(measured_step_mm: float, true_step_mm: float) -> float:
    """Relative error of a recovered axial displacement."""
    if true_step_mm == 0:
        raise ZeroDisplacement("true displacement is zero")
    return abs(measured_step_mm - true_step_mm) / abs(true_step_mm)


def r_squared(observed, predicted) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    observed = np.asarray(observed, dtype=float).ravel()
    predicted = np.asarray(predicted, dtype=float).ravel()
    if observed.size == 0:
        raise EmptyInput("no observations")
    if observed.size != predicted.size:
        raise EmptyInput("observed/predicted length mismatch")
    ss_tot = float(np.sum((observed - observed.mean()) ** 2))
    if ss_tot < 1e-300:
        raise DegenerateVariance("observed values have no variance")
    ss_res = float(np.sum((observed - predicted) ** 2))
    return 1.0 - ss_res / ss_tot


def reprojection_rmse(residuals) -> float:
    """RMS of 2-D residual norms: sqrt(mean over points of ||r||^2)."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size == 0:
        raise EmptyInput("no residuals")
    residuals = residuals.reshape(1, -1) if residuals.ndim == 1 else residuals.reshape(-1, residuals.shape[-1])
    return float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))


def equivalence_params(cam: CameraModel) -> dict:
    """Translate a calibrated model into the parameter sets of related models.

    One convention describes the optics by the mean focal length
    F = (k11*sx + k22*sy)/2, the sensor distance D = dc, and the MLA gap
    d = dc - dm; the other collapses the MLA into the two coupled
    coefficients (K1, K2).  Both are derived, not re-estimated.
    """
    k = cam.lens.k_matrix
    f_mean = (k[0, 0] * cam.lens.sx + k[1, 1] * cam.lens.sy) / 2.0
    k1, k2 = coupled_mla_coefficients(cam.lens.f_mm, cam.mla)
    return {
        "F": float(f_mean),
        "D": float(cam.mla.dc),
        "d": float(cam.mla.dc - cam.mla.dm),
        "K1": float(k1),
        "K2": float(k2),
        "u0": float(cam.lens.u0),
        "v0": float(cam.lens.v0),
    }
