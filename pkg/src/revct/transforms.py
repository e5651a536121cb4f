"""Rotations of square images by interpolation, and the random angle sampler.

A rotation by ``angle_deg`` turns the picture counterclockwise as displayed
(row 0 at the top) about the grid center ``((n-1)/2, (n-1)/2)``. Output keeps
the input size; samples falling outside the input read as zero. Multiples of
90 degrees are exact pixel permutations for every kernel.
"""
import math
from dataclasses import dataclass

import numpy as np

MODES = ("nearest", "bilinear", "bicubic")
# Keys cubic convolution parameter
KEYS_A = -0.5

_TAPS = {"nearest": 1, "bilinear": 2, "bicubic": 4}


@dataclass(frozen=True)
class GroupSample:
    angle_deg: float
    mode: str = "bicubic"

    def __post_init__(self):
        if not math.isfinite(self.angle_deg):
            raise ValueError("angle must be finite")
        check_mode(self.mode)


def check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown interpolation mode {mode!r}; expected one of {MODES}")
    return mode


def _keys(t):
    t = np.abs(t)
    a = KEYS_A
    near = ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    far = ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _taps(coord, mode):
    """Integer tap positions and weights along one axis, shape ``(taps, ...)``."""
    if mode == "nearest":
        return np.floor(coord + 0.5)[None].astype(np.intp), np.ones((1,) + coord.shape)
    base = np.floor(coord)
    frac = coord - base
    if mode == "bilinear":
        offsets = np.arange(0, 2)
        weights = np.stack([1.0 - frac, frac])
    else:
        offsets = np.arange(-1, 3)
        weights = np.stack([_keys(frac - o) for o in offsets])
    idx = base.astype(np.intp)[None] + offsets.reshape((-1,) + (1,) * coord.ndim)
    return idx, weights


def _exact_trig(angle_deg):
    q, rem = divmod(angle_deg, 90.0)
    if rem == 0.0:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[int(q) % 4]
    rad = math.radians(angle_deg)
    return math.cos(rad), math.sin(rad)


def rotate(x, angle_deg, mode="bicubic"):
    """Rotate a square image counterclockwise by ``angle_deg`` with the given kernel."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"rotation needs a square image, got shape {x.shape}")
    check_mode(mode)
    q, rem = divmod(float(angle_deg), 90.0)
    if rem == 0.0:
        return np.rot90(x, int(q) % 4).copy()

    n = x.shape[0]
    h = 0.5 * (n - 1)
    cos_t, sin_t = _exact_trig(float(angle_deg))
    # inverse map: output pixel -> source location in the input grid
    u = np.arange(n) - h
    v = h - np.arange(n)
    U, V = np.meshgrid(u, v)
    src_col = h + cos_t * U + sin_t * V
    src_row = h - (-sin_t * U + cos_t * V)

    pad = _TAPS[mode]
    padded = np.pad(x, pad)
    limit = n + 2 * pad - 1
    rows, wr = _taps(src_row, mode)
    cols, wc = _taps(src_col, mode)
    # indices beyond the pad land on zero pad cells after clipping
    rows = np.clip(rows + pad, 0, limit)
    cols = np.clip(cols + pad, 0, limit)
    out = np.zeros_like(x)
    for i in range(rows.shape[0]):
        for j in range(cols.shape[0]):
            out += wr[i] * wc[j] * padded[rows[i], cols[j]]
    return out


def adjoint_rotate(x, angle_deg, mode="bicubic"):
    """Approximate adjoint of :func:`rotate`: rotation by ``-angle_deg`` with the same kernel."""
    return rotate(x, -float(angle_deg), mode)


class AngleSampler:
    """Seeded source of group samples, angles uniform on the open interval (0, 360).

    A sampler is owned by exactly one consumer; two samplers built from the
    same seed yield identical sequences.
    """

    def __init__(self, seed, mode="bicubic"):
        self.seed = int(seed)
        self.mode = check_mode(mode)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    def sample_angle(self):
        while True:
            angle = 360.0 * self._rng.random()
            if 0.0 < angle < 360.0:
                self.draws += 1
                return angle

    def sample(self):
        return GroupSample(self.sample_angle(), self.mode)


class FixedSampler(AngleSampler):
    """Replays a fixed cycle of angles; useful for grid-aligned or replayed runs."""

    def __init__(self, angles, mode="bicubic"):
        self.seed = None
        self.mode = check_mode(mode)
        self.angles = [float(a) for a in angles]
        if not self.angles:
            raise ValueError("FixedSampler needs at least one angle")
        self.draws = 0

    def sample_angle(self):
        angle = self.angles[self.draws % len(self.angles)]
        self.draws += 1
        return angle


def sample_angle(sampler):
    """Draw the next angle from ``sampler``, advancing it by one step."""
    return sampler.sample_angle()
