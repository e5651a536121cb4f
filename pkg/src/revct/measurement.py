"""Beer-Lambert transmission measurements with Poisson photon noise.

Counts are drawn per detector bin from a counter-based stream keyed on
``(seed, bin index, draw index)``, so the result for a bin never depends on
how bins are split across threads.
"""
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import _parallel  # noqa: F401  threading layer must be set before first launch
from .projector import forward_project

# counts below this are floored before taking the log
COUNT_FLOOR = 1.0
# below this mean the sampler inverts the CDF, above it uses PTRS rejection
INVERSION_CUTOFF = 30.0

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DoseModel:
    i0: float
    seed: int = 0
    noiseless: bool = False

    def __post_init__(self):
        if not (self.i0 > 0 and math.isfinite(self.i0)):
            raise ValueError("i0 must be a positive finite photon count")

    @classmethod
    def from_mantissa_exponent(cls, mantissa, exponent, **kw):
        """``i0 = mantissa * 10**exponent``, e.g. ``(2, 3.5)`` for about 6325 photons."""
        return cls(float(mantissa) * 10.0 ** float(exponent), **kw)


@njit(cache=True, inline="always")
def _mix(z):
    # splitmix64 finalizer; uint64 arithmetic wraps
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _uniform(key, counter):
    z = _mix(key + np.uint64(counter) * np.uint64(0x9E3779B97F4A7C15))
    # open interval (0, 1)
    return (np.float64(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _poisson_one(mu, key):
    if mu <= 0.0:
        return 0.0
    counter = 0
    if mu < INVERSION_CUTOFF:
        u = _uniform(key, counter)
        k = 0
        p = math.exp(-mu)
        cdf = p
        while u > cdf and k < 1000:
            k += 1
            p *= mu / k
            cdf += p
        return float(k)
    # transformed rejection with squeeze (Hormann 1993)
    smu = math.sqrt(mu)
    b = 0.931 + 2.53 * smu
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    log_mu = math.log(mu)
    while True:
        u = _uniform(key, counter) - 0.5
        v = _uniform(key, counter + 1)
        counter += 2
        us = 0.5 - abs(u)
        k = float(math.floor((2.0 * a / us + b) * u + mu + 0.43))
        if us >= 0.07 and v <= vr:
            return k
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        lhs = math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b)
        if lhs <= -mu + k * log_mu - math.lgamma(k + 1.0):
            return k


@njit(cache=True, parallel=True)
def _poisson_kernel(mu, base_key, out):
    for i in prange(mu.size):
        key = _mix(base_key ^ _mix(np.uint64(i) + np.uint64(0x632BE59BD9B4E019)))
        out[i] = _poisson_one(mu[i], key)


def poisson(mu, seed):
    """Independent Poisson draws with means ``mu``, deterministic in ``seed``."""
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise ValueError("Poisson means must be finite and nonnegative")
    base_key = np.uint64(int(seed) & _MASK64)
    out = np.empty(mu.size)
    _poisson_kernel(mu.ravel(), base_key, out)
    return out.reshape(mu.shape)


def expected_counts(geom, x_true, dose):
    return dose.i0 * np.exp(-forward_project(geom, x_true))


def simulate_counts(geom, x_true, dose):
    """Photon counts ``Poisson(I0 exp(-A x_true))``; the mean itself when noiseless."""
    x_true = np.asarray(x_true, dtype=np.float64)
    if np.any(x_true < 0):
        raise ValueError("attenuation image must be nonnegative")
    mean = expected_counts(geom, x_true, dose)
    if dose.noiseless:
        return mean
    return poisson(mean, dose.seed)


def measure(geom, x_true, dose):
    """Counts and linearized data ``b`` for one scan.

    In noiseless mode ``b`` is the forward projection itself rather than a
    round trip through ``exp`` and ``log``, so it matches ``A x_true`` bit for bit.
    """
    counts = simulate_counts(geom, x_true, dose)
    if dose.noiseless:
        return counts, forward_project(geom, np.asarray(x_true, dtype=np.float64))
    return counts, log_linearize(counts, dose)


def log_linearize(counts, dose):
    """Line integrals ``-log(max(counts, 1) / I0)``."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    return -np.log(np.maximum(counts, COUNT_FLOOR) / dose.i0)
