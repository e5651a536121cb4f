"""Image algebra, metrics, box projection and the Shepp-Logan phantom.

Images are 2-D ``float64`` arrays indexed ``[row, col]`` with row 0 at the
top. Vectorization is row-major (C order), matching ``ndarray.ravel()``.
"""
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when two operands do not share the dimensions an operation needs."""


@dataclass(frozen=True)
class BoxConstraint:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"invalid box [{self.lo}, {self.hi}]: need finite lo < hi")


def as_image(x, name="image"):
    """Return ``x`` as a finite 2-D float64 array, validating on the way."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_same(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")


def dot(x, y):
    """Euclidean inner product of two same-shape images."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(x, y)
    return float(np.dot(x.ravel(), y.ravel()))


def rmsd(x, ref):
    """Root mean square distance ``||x - ref||_2 / sqrt(d)``."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_same(x, ref)
    return float(np.linalg.norm((x - ref).ravel()) / np.sqrt(x.size))


def project_box(x, box=BoxConstraint()):
    """Clamp every pixel into ``[box.lo, box.hi]``."""
    return np.clip(np.asarray(x, dtype=np.float64), box.lo, box.hi)


# Modified Shepp-Logan (Toft), the default of MATLAB's phantom():
# (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees)
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.8, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.1, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.1, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def pixel_centers(n):
    """Normalized ``(X, Y)`` coordinates of pixel centers on ``[-1, 1]^2``, y up."""
    t = (2.0 * np.arange(n) + 1.0) / n - 1.0
    return np.meshgrid(t, -t)


def shepp_logan(n):
    """Rasterize the 10-ellipse Shepp-Logan phantom at ``n x n``.

    Each pixel is point-sampled at its center. The additive ellipse
    intensities are then mapped onto ``[0, 1]``, so the outer ring is 1 and
    the background is exactly 0.
    """
    if int(n) != n or n < 8:
        raise ValueError(f"phantom size must be an integer >= 8, got {n}")
    n = int(n)
    X, Y = pixel_centers(n)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        c, s = np.cos(np.radians(phi)), np.sin(np.radians(phi))
        u = (X - x0) * c + (Y - y0) * s
        v = -(X - x0) * s + (Y - y0) * c
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += value
    # 1 - 0.8 - 0.2 leaves -5e-17 residue inside the dark ellipses
    img = np.clip(img, 0.0, None)
    return img / img.max()
