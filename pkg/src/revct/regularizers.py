"""Gradient surrogates for RED, REV and Simplified REV.

* RED:            ``x - D(x)``
* REV:            ``x - T*(D(T x))`` for one sampled rotation ``T``
* Simplified REV: ``x - T*(T x)``, nonzero only through interpolation loss

Rotations always go through :mod:`revct.transforms`; nothing here resamples
images on its own.
"""
from dataclasses import dataclass

import numpy as np

from . import transforms
from .image import dot


@dataclass(frozen=True)
class RevConfig:
    lam: float = 0.0
    num_samples: int = 1
    mode: str = "bicubic"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if int(self.num_samples) < 1:
            raise ValueError("num_samples must be at least 1")
        transforms.check_mode(self.mode)


def red_gradient(x, denoiser):
    return np.asarray(x, dtype=np.float64) - denoiser(x)


def rev_gradient(x, denoiser, g):
    x = np.asarray(x, dtype=np.float64)
    rotated = transforms.rotate(x, g.angle_deg, g.mode)
    return x - transforms.adjoint_rotate(denoiser(rotated), g.angle_deg, g.mode)


def simplified_rev_gradient(x, g):
    x = np.asarray(x, dtype=np.float64)
    rotated = transforms.rotate(x, g.angle_deg, g.mode)
    return x - transforms.adjoint_rotate(rotated, g.angle_deg, g.mode)


def _averaged(x, sampler, num_samples, mode, single):
    total = np.zeros_like(np.asarray(x, dtype=np.float64))
    angles = []
    for _ in range(num_samples):
        g = transforms.GroupSample(transforms.sample_angle(sampler), mode)
        angles.append(g.angle_deg)
        total += single(g)
    return total / num_samples, angles


def rev_gradient_averaged(x, denoiser, cfg, sampler, return_angles=False):
    """Mean of ``cfg.num_samples`` REV gradients over fresh sampler draws."""
    grad, angles = _averaged(x, sampler, cfg.num_samples, cfg.mode,
                             lambda g: rev_gradient(x, denoiser, g))
    return (grad, angles) if return_angles else grad


def simplified_rev_gradient_averaged(x, cfg, sampler, return_angles=False):
    grad, angles = _averaged(x, sampler, cfg.num_samples, cfg.mode,
                             lambda g: simplified_rev_gradient(x, g))
    return (grad, angles) if return_angles else grad


def regularizer_value(x, grad):
    """Monte-Carlo value ``x^T grad`` of the regularizer whose surrogate gradient is ``grad``.

    Since ``grad`` is already averaged over the iteration's samples, this is
    the mean of the per-sample values.
    """
    return dot(x, grad)
