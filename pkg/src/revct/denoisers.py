"""Denoisers consumed by the RED/REV regularizers.

A :class:`Denoiser` wraps any ``image -> image`` callable. By default its
input is clamped to ``[0, 1]`` before the call, since iterates can leave the
box between projections and denoisers expect valid intensities.
"""
import os
import selectors
import subprocess
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import rawio


class DenoiserContractError(ValueError):
    """The wrapped callable changed the shape or produced non-finite pixels."""


class PluginError(RuntimeError):
    """Base class for external-denoiser failures."""


class PluginProcessError(PluginError):
    """The plugin process could not start, exited, or closed its streams."""


class PluginFrameError(PluginError):
    """The plugin answered with bytes that are not a valid REVD frame."""


class PluginShapeError(PluginError):
    """The plugin returned a frame whose dimensions differ from the request."""


class PluginTimeoutError(PluginError):
    """The plugin did not answer within its time budget."""


@dataclass
class Denoiser:
    name: str
    fn: object
    params: dict = field(default_factory=dict)
    input_range: tuple | None = (0.0, 1.0)
    calls: int = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.input_range is not None:
            x = np.clip(x, *self.input_range)
        out = np.asarray(self.fn(x), dtype=np.float64)
        self.calls += 1
        if out.shape != x.shape:
            raise DenoiserContractError(f"{self.name} changed shape {x.shape} -> {out.shape}")
        if not np.all(np.isfinite(out)):
            raise DenoiserContractError(f"{self.name} produced non-finite pixels")
        return out

    def close(self):
        closer = getattr(self.fn, "close", None)
        if closer is not None:
            closer()


def gaussian_denoise(x, sigma):
    """Convolve with a normalized Gaussian truncated at 4 sigma, zero-padded borders."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return ndimage.gaussian_filter(np.asarray(x, dtype=np.float64), sigma,
                                   mode="constant", cval=0.0, truncate=4.0)


def _box_sum(a, size):
    """Sum over every ``size x size`` window of ``a`` (valid positions only)."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    return c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]


def nlm_denoise(x, patch=5, window=11, h=0.1):
    """Non-local means with square patches and a square search window.

    Every pixel becomes the weighted mean of the pixels in its search window,
    weighted by ``exp(-d / h**2)`` where ``d`` is the mean squared difference
    between the two surrounding patches. Borders are handled by reflecting
    the image (edge pixel not repeated).
    """
    if patch % 2 == 0 or window % 2 == 0:
        raise ValueError("patch and window sizes must be odd")
    if patch >= window:
        raise ValueError("patch must be smaller than the search window")
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    rows, cols = x.shape
    hp, hw = patch // 2, window // 2
    pad = hp + hw
    padded = np.pad(x, pad, mode="reflect")
    # centers of every patch we need, i.e. the image grown by the patch radius
    core = padded[hw:hw + rows + 2 * hp, hw:hw + cols + 2 * hp]
    inv_h2 = 1.0 / (h * h)
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    for dy in range(-hw, hw + 1):
        for dx in range(-hw, hw + 1):
            shifted = padded[hw + dy:hw + dy + rows + 2 * hp, hw + dx:hw + dx + cols + 2 * hp]
            dist = _box_sum((core - shifted) ** 2, patch) / (patch * patch)
            w = np.exp(-dist * inv_h2)
            num += w * shifted[hp:hp + rows, hp:hp + cols]
            den += w
    return num / den


def _read_exact(proc, size, deadline):
    fd = proc.stdout.fileno()
    chunks, got = [], 0
    with selectors.DefaultSelector() as sel:
        sel.register(fd, selectors.EVENT_READ)
        while got < size:
            remaining = deadline - time.monotonic()
            if remaining <= 0 or not sel.select(remaining):
                raise PluginTimeoutError(f"no complete reply after {size - got} missing bytes")
            chunk = os.read(fd, size - got)
            if not chunk:
                return b"".join(chunks)
            chunks.append(chunk)
            got += len(chunk)
    return b"".join(chunks)


class ExternalDenoiser:
    """A long-lived subprocess speaking the REVD frame protocol on stdin/stdout.

    One request frame is written per call and exactly one response frame is
    read back. Calls are serialized; the process is started lazily and reused.
    """

    def __init__(self, command, timeout=60.0):
        if isinstance(command, str):
            command = [command]
        self.command = list(command)
        self.timeout = float(timeout)
        self._proc = None
        self._lock = threading.Lock()

    def _start(self):
        try:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        except OSError as exc:
            raise PluginProcessError(f"cannot start plugin {self.command}: {exc}") from exc

    def _fail(self, exc_type, message):
        stderr = b""
        if self._proc is not None:
            try:
                self._proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                pass
        if self._proc is not None and self._proc.poll() is not None:
            stderr = self._proc.stderr.read() or b""
        self.close()
        detail = stderr.decode(errors="replace").strip()
        raise exc_type(message + (f" (stderr: {detail})" if detail else ""))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                self._start()
            deadline = time.monotonic() + self.timeout
            try:
                self._proc.stdin.write(rawio.encode(x, rawio.PLUGIN_MAGIC))
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._fail(PluginProcessError, f"plugin closed its input: {exc}")
            try:
                header = _read_exact(self._proc, rawio.HEADER.size, deadline)
                if len(header) < rawio.HEADER.size:
                    self._fail(PluginProcessError, "plugin exited before replying")
                try:
                    shape = rawio.decode_header(header, rawio.PLUGIN_MAGIC)
                except rawio.FrameError as exc:
                    self._fail(PluginFrameError, str(exc))
                if shape != x.shape:
                    self._fail(PluginShapeError, f"plugin returned {shape}, expected {x.shape}")
                payload = _read_exact(self._proc, 8 * x.size, deadline)
            except PluginTimeoutError as exc:
                self._fail(PluginTimeoutError, f"plugin timed out after {self.timeout:g} s: {exc}")
            if len(payload) != 8 * x.size:
                self._fail(PluginFrameError, "plugin reply truncated")
        return np.frombuffer(payload, dtype="<f8").reshape(x.shape).astype(np.float64)

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        for stream in (proc.stdin, proc.stdout, proc.stderr):
            try:
                stream.close()
            except OSError:
                pass
        if proc.poll() is None:
            proc.kill()
        proc.wait()


def external_denoise(x, command, timeout=60.0):
    """One-shot call of an external plugin; solvers should keep an :class:`ExternalDenoiser`."""
    plugin = ExternalDenoiser(command, timeout)
    try:
        return plugin(x)
    finally:
        plugin.close()


def identity():
    return Denoiser("identity", lambda x: x.copy(), input_range=None)


def gaussian(sigma):
    return Denoiser("gaussian", lambda x: gaussian_denoise(x, sigma), {"sigma": sigma})


def nlm(patch=5, window=11, h=0.1):
    nlm_denoise(np.zeros((window, window)), patch, window, h)  # validate eagerly
    return Denoiser("nlm", lambda x: nlm_denoise(x, patch, window, h),
                    {"patch": patch, "window": window, "h": h})


def external(command, timeout=60.0):
    return Denoiser("external", ExternalDenoiser(command, timeout),
                    {"command": list(command) if not isinstance(command, str) else [command],
                     "timeout_s": timeout})


def serve(fn, stdin=None, stdout=None):
    """Run ``fn`` as a REVD plugin: answer frames on stdin until EOF.

    Import this from a small script to expose any Python denoiser to the CLI.
    """
    import sys

    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while True:
        header = stdin.read(rawio.HEADER.size)
        if not header:
            return
        rows, cols = rawio.decode_header(header, rawio.PLUGIN_MAGIC)
        payload = stdin.read(8 * rows * cols)
        img = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
        stdout.write(rawio.encode(fn(img), rawio.PLUGIN_MAGIC))
        stdout.flush()
