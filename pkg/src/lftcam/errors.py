"""Exception taxonomy for the toolkit.

Every guarded precondition maps to one of these, so callers can tell a bad
input (raise) from a degraded-but-usable result (flag on the result object).
"""


class LftError(Exception):
    """Base class for all toolkit errors."""


class FocalPlaneDegenerate(LftError):
    """Point depth coincides with the focal plane (Z_c == F)."""


class MlaPlaneDegenerate(LftError):
    """Virtual depth coincides with the micro-lens plane (Z'_c == d_m)."""


class AlphaAtUnity(LftError):
    """alpha == 1: depth recovery / virtual point recovery is singular."""


class AlphaNearOne(LftError):
    """Fitted alpha too close to 1 to recover the virtual point."""


class IndexOutOfRange(LftError, IndexError):
    """Micro-lens index outside the grid."""


class NoConvergence(LftError):
    """Iterative procedure failed to converge."""


class NonFiniteResidual(LftError):
    """Residual function returned NaN/Inf at the starting point."""


class DegenerateGeometry(LftError):
    """Camera geometry violates d_c > d_m > 0 or similar."""


class GridMismatch(LftError):
    """Micro-lens grid does not tile the raw image."""


class EmptyPatch(LftError):
    """Micro-image patch has zero pixels."""


class EmptyInput(LftError):
    """An operation that needs at least one element got none."""


class EmptyList(EmptyInput):
    """Centroid of an empty point list."""


class ParallelSegments(LftError):
    """Two segments are (numerically) parallel; no intersection."""


class OutOfPatch(LftError):
    """Intersection point falls outside the micro-image."""


class TooFewFeatures(LftError):
    """Fewer micro-image features than the estimator needs."""


class RankDeficient(LftError):
    """Least-squares design matrix is rank deficient."""


class CountMismatch(LftError):
    """Cluster count does not match the board corner count."""


class AmbiguousOrdering(LftError):
    """Cluster grid ordering could not be recovered unambiguously."""


class DegenerateConfiguration(LftError):
    """Planar pose estimation input is degenerate (too few / collinear)."""


class BehindCamera(LftError):
    """Recovered pose places the board behind the camera."""


class TooFewViews(LftError):
    """Calibration needs at least three usable views."""


class TooFewObservations(LftError):
    """Not enough (alpha, depth) observations for the MLA distance fit."""


class SingularSystem(LftError):
    """Normal equations are singular (e.g. all alphas identical)."""


class InsufficientData(LftError):
    """Dataset left with too little usable data after rejection."""


class TargetBehindFocalPlane(LftError):
    """A target corner sits at or behind the main-lens focal plane."""


class EmptyFieldOfView(LftError):
    """No simulated ray hit the target."""


class ZeroDisplacement(LftError):
    """Ground-truth displacement is zero; relative error undefined."""


class DegenerateVariance(LftError):
    """Total variance is zero; R^2 undefined."""


class UnsupportedFormat(LftError):
    """Image file format not supported (e.g. 16-bit PNG)."""


class CorruptFile(LftError):
    """File does not parse as the declared format."""
