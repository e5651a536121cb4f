"""Binary frame formats and visual export.

All raw frames share one layout: a 4-byte magic, two little-endian ``u32``
dimensions, then the payload as little-endian ``f64`` in row-major order.

======  ==========================  ======================
magic   dimensions                  used for
======  ==========================  ======================
REVI    width, height               images on disk
REVS    num_views, num_detectors    sinograms and counts
REVD    width, height               denoiser plugin frames
======  ==========================  ======================
"""
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

IMAGE_MAGIC = b"REVI"
SINOGRAM_MAGIC = b"REVS"
PLUGIN_MAGIC = b"REVD"

HEADER = struct.Struct("<4sII")


class FrameError(ValueError):
    """A byte buffer that does not hold a well-formed frame."""


def encode(arr, magic):
    """Serialize a 2-D array as a frame.

    Image-like magics store ``(width, height)``, i.e. ``(cols, rows)``;
    sinograms store ``(num_views, num_detectors)``, i.e. ``(rows, cols)``.
    """
    arr = np.ascontiguousarray(arr, dtype="<f8")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    rows, cols = arr.shape
    dims = (rows, cols) if magic == SINOGRAM_MAGIC else (cols, rows)
    return HEADER.pack(magic, *dims) + arr.tobytes()


def decode_header(header, magic):
    """Return ``(rows, cols)`` from a frame header, checking the magic."""
    if len(header) != HEADER.size:
        raise FrameError(f"truncated header: {len(header)} of {HEADER.size} bytes")
    got, d0, d1 = HEADER.unpack(header)
    if got != magic:
        raise FrameError(f"bad magic {got!r}, expected {magic!r}")
    if d0 == 0 or d1 == 0:
        raise FrameError(f"zero dimension in header ({d0}, {d1})")
    return (d0, d1) if magic == SINOGRAM_MAGIC else (d1, d0)


def decode(buf, magic):
    rows, cols = decode_header(buf[: HEADER.size], magic)
    payload = buf[HEADER.size:]
    if len(payload) != 8 * rows * cols:
        raise FrameError(f"payload of {len(payload)} bytes does not match {rows}x{cols} f64 pixels")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_image(path, img):
    Path(path).write_bytes(encode(img, IMAGE_MAGIC))


def read_image(path):
    return decode(Path(path).read_bytes(), IMAGE_MAGIC)


def write_sinogram(path, sino):
    Path(path).write_bytes(encode(sino, SINOGRAM_MAGIC))


def read_sinogram(path):
    return decode(Path(path).read_bytes(), SINOGRAM_MAGIC)


def to_uint16(img, lo=0.0, hi=1.0):
    """Linear map of ``[lo, hi]`` onto the full 16-bit range, clipping outside."""
    scaled = (np.asarray(img, dtype=np.float64) - lo) / (hi - lo)
    return np.round(np.clip(scaled, 0.0, 1.0) * 65535.0).astype(np.uint16)


def write_png(path, img, lo=0.0, hi=1.0):
    """16-bit grayscale PNG of ``img`` mapped linearly from ``[lo, hi]``."""
    PILImage.fromarray(to_uint16(img, lo, hi)).save(path, format="PNG")


def write_pgm(path, img, lo=0.0, hi=1.0):
    """Binary 16-bit PGM (P5, big-endian samples)."""
    data = to_uint16(img, lo, hi)
    rows, cols = data.shape
    header = f"P5\n{cols} {rows}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + data.astype(">u2").tobytes())
