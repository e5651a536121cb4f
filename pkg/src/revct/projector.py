"""Fan-beam forward projector (Joseph's method) and its matched adjoint.

Coordinates: the image is centered on the rotation axis, pixel ``(r, c)``
sits at ``x = (c - h) * pixel_size``, ``y = (h - r) * pixel_size`` with
``h = (N - 1) / 2``. For view angle ``beta`` the source is at
``source_to_center * (cos beta, sin beta)`` and the flat detector is centered
at ``-center_to_detector * (cos beta, sin beta)``, its cells running along
``(-sin beta, cos beta)``.

Each ray is sampled once per image column (or row, whichever axis the ray is
most aligned with) and linearly interpolated across the other axis. The
back-projector replays the exact same weights, so ``back_project`` is the
transpose of ``forward_project`` up to rounding.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from . import _parallel  # noqa: F401  threading layer must be set before first launch
from .image import ShapeError

DENSE_ENTRY_LIMIT = 2 ** 24


@dataclass(frozen=True)
class FanBeamGeometry:
    image_size: int
    num_views: int
    num_detectors: int
    pixel_size: float = 1.0
    source_to_center: float = 600.0
    center_to_detector: float = 600.0
    detector_spacing: float | None = None
    view_angles: tuple = field(default=None)

    def __post_init__(self):
        for name in ("image_size", "num_views", "num_detectors"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.pixel_size <= 0 or self.center_to_detector < 0:
            raise ValueError("pixel_size must be positive and center_to_detector nonnegative")
        if self.source_to_center <= self.image_size * self.pixel_size / math.sqrt(2):
            raise ValueError("source_to_center must place the source outside the image disk")
        if self.detector_spacing is None:
            object.__setattr__(self, "detector_spacing", self.covering_spacing())
        if self.detector_spacing <= 0:
            raise ValueError("detector_spacing must be positive")
        if self.view_angles is None:
            angles = 2.0 * np.pi * np.arange(self.num_views) / self.num_views
            object.__setattr__(self, "view_angles", tuple(float(a) for a in angles))
        else:
            object.__setattr__(self, "view_angles", tuple(float(a) for a in self.view_angles))
        if len(self.view_angles) != self.num_views:
            raise ValueError(f"{len(self.view_angles)} view angles given for {self.num_views} views")

    def covering_spacing(self):
        """Detector pitch at which the fan exactly covers the image diagonal."""
        radius = self.image_size * self.pixel_size / math.sqrt(2)
        gamma = math.asin(radius / self.source_to_center)
        half_width = (self.source_to_center + self.center_to_detector) * math.tan(gamma)
        return 2.0 * half_width / self.num_detectors

    @property
    def num_rays(self):
        return self.num_views * self.num_detectors

    @property
    def num_pixels(self):
        return self.image_size ** 2

    @property
    def sinogram_shape(self):
        return (self.num_views, self.num_detectors)

    @property
    def image_shape(self):
        return (self.image_size, self.image_size)

    def _kernel_args(self):
        return (
            np.asarray(self.view_angles, dtype=np.float64),
            self.num_detectors,
            float(self.pixel_size),
            float(self.source_to_center),
            float(self.center_to_detector),
            float(self.detector_spacing),
        )


@njit(cache=True, inline="always")
def _ray(angle, t, n, num_det, ps, dsrc, ddet, spacing):
    cb, sb = math.cos(angle), math.sin(angle)
    u = (t - 0.5 * (num_det - 1)) * spacing
    sx, sy = dsrc * cb, dsrc * sb
    px, py = -ddet * cb - u * sb, -ddet * sb + u * cb
    return sx, sy, px - sx, py - sy


@njit(cache=True, parallel=True)
def _forward_kernel(img, angles, num_det, ps, dsrc, ddet, spacing, out):
    n = img.shape[0]
    h = 0.5 * (n - 1)
    nv = angles.shape[0]
    for ray in prange(nv * num_det):
        v = ray // num_det
        t = ray - v * num_det
        sx, sy, dx, dy = _ray(angles[v], t, n, num_det, ps, dsrc, ddet, spacing)
        acc = 0.0
        if abs(dx) >= abs(dy):
            slope = dy / dx
            w = ps * math.sqrt(1.0 + slope * slope)
            for c in range(n):
                y = sy + ((c - h) * ps - sx) * slope
                rf = h - y / ps
                r0 = math.floor(rf)
                f = rf - r0
                r0 = int(r0)
                if 0 <= r0 < n:
                    acc += w * (1.0 - f) * img[r0, c]
                if 0 <= r0 + 1 < n:
                    acc += w * f * img[r0 + 1, c]
        else:
            slope = dx / dy
            w = ps * math.sqrt(1.0 + slope * slope)
            for r in range(n):
                x = sx + ((h - r) * ps - sy) * slope
                cf = h + x / ps
                c0 = math.floor(cf)
                f = cf - c0
                c0 = int(c0)
                if 0 <= c0 < n:
                    acc += w * (1.0 - f) * img[r, c0]
                if 0 <= c0 + 1 < n:
                    acc += w * f * img[r, c0 + 1]
        out[v, t] = acc


@njit(cache=True, parallel=True)
def _back_kernel(sino, n, angles, num_det, ps, dsrc, ddet, spacing, per_view):
    h = 0.5 * (n - 1)
    nv = angles.shape[0]
    # one private buffer per view keeps the result independent of thread count
    for v in prange(nv):
        buf = per_view[v]
        for t in range(num_det):
            val = sino[v, t]
            if val == 0.0:
                continue
            sx, sy, dx, dy = _ray(angles[v], t, n, num_det, ps, dsrc, ddet, spacing)
            if abs(dx) >= abs(dy):
                slope = dy / dx
                w = ps * math.sqrt(1.0 + slope * slope)
                for c in range(n):
                    y = sy + ((c - h) * ps - sx) * slope
                    rf = h - y / ps
                    r0 = math.floor(rf)
                    f = rf - r0
                    r0 = int(r0)
                    if 0 <= r0 < n:
                        buf[r0, c] += w * (1.0 - f) * val
                    if 0 <= r0 + 1 < n:
                        buf[r0 + 1, c] += w * f * val
            else:
                slope = dx / dy
                w = ps * math.sqrt(1.0 + slope * slope)
                for r in range(n):
                    x = sx + ((h - r) * ps - sy) * slope
                    cf = h + x / ps
                    c0 = math.floor(cf)
                    f = cf - c0
                    c0 = int(c0)
                    if 0 <= c0 < n:
                        buf[r, c0] += w * (1.0 - f) * val
                    if 0 <= c0 + 1 < n:
                        buf[r, c0 + 1] += w * f * val


@njit(cache=True, parallel=True)
def _sum_views(per_view, out):
    nv, n, _ = per_view.shape
    for r in prange(n):
        for c in range(n):
            acc = 0.0
            for v in range(nv):
                acc += per_view[v, r, c]
            out[r, c] = acc


def forward_project(geom, x):
    """Sinogram ``A x`` of shape ``(num_views, num_detectors)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != geom.image_shape:
        raise ShapeError(f"image shape {x.shape} does not match geometry {geom.image_shape}")
    out = np.empty(geom.sinogram_shape)
    _forward_kernel(x, *geom._kernel_args(), out)
    return out


def back_project(geom, s):
    """Unfiltered back-projection ``A^T s``; the exact transpose of :func:`forward_project`."""
    s = np.ascontiguousarray(s, dtype=np.float64)
    if s.shape != geom.sinogram_shape:
        raise ShapeError(f"sinogram shape {s.shape} does not match geometry {geom.sinogram_shape}")
    n = geom.image_size
    per_view = np.zeros((geom.num_views, n, n))
    _back_kernel(s, n, *geom._kernel_args(), per_view)
    out = np.empty((n, n))
    _sum_views(per_view, out)
    return out


def dense_matrix(geom):
    """Explicit ``(n, d)`` system matrix, column ``j`` = projection of basis image ``e_j``.

    Test oracle only; refuses anything above 2**24 entries.
    """
    n_rows, d = geom.num_rays, geom.num_pixels
    if n_rows * d > DENSE_ENTRY_LIMIT:
        raise ValueError(f"dense matrix would have {n_rows * d} entries (limit {DENSE_ENTRY_LIMIT})")
    mat = np.empty((n_rows, d))
    basis = np.zeros(d)
    for j in range(d):
        basis[j] = 1.0
        mat[:, j] = forward_project(geom, basis.reshape(geom.image_shape)).ravel()
        basis[j] = 0.0
    return mat


def operator_norm_sq(geom, iters=100, seed=0, start=None):
    """Power-method estimate of ``lambda_max(A^T A)``.

    The returned value is the Rayleigh quotient ``||A v||^2`` of the last
    normalized iterate, which never decreases as ``iters`` grows. ``start``
    overrides the seeded random initial image; its scale is irrelevant.
    """
    if iters < 10:
        raise ValueError("power method needs at least 10 iterations")
    if start is None:
        v = np.random.default_rng(seed).random(geom.image_shape)
    else:
        v = np.array(start, dtype=np.float64)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        av = forward_project(geom, v)
        est = float(np.vdot(av, av))
        w = back_project(geom, av)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    return est
