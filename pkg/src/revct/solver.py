"""One FISTA loop serving plain FISTA, FISTA-RED, FISTA-REV and Simplified FISTA-REV.

Per iteration, with ``reg`` the selected surrogate gradient::

    x_{k+1} = P[y_k - step * (grad f(y_k) + lam * reg(y_k))]
    a_{k+1} = (1 + sqrt(1 + 4 a_k^2)) / 2
    y_{k+1} = x_{k+1} + (a_k - 1) / a_{k+1} * (x_{k+1} - x_k)

where ``f(x) = ||A x - b||^2 / (2 n)`` and ``P`` is the box projection.
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import regularizers
from .image import BoxConstraint, project_box, rmsd, ShapeError
from .projector import back_project, forward_project, operator_norm_sq
from .regularizers import RevConfig
from .transforms import AngleSampler

REG_KINDS = ("none", "red", "rev", "simplified_rev")
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    def __init__(self, iteration, reason):
        super().__init__(f"iterate diverged at iteration {iteration}: {reason}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int
    reg_kind: str = "none"
    lam: float = 0.0
    step_size: float | None = None  # None: 1 / (L + lam) from the power method
    box: BoxConstraint = BoxConstraint(0.0, 1.0)
    rev: RevConfig = field(default_factory=RevConfig)
    seed: int = 0
    power_iters: int = 100

    def __post_init__(self):
        if self.reg_kind not in REG_KINDS:
            raise ValueError(f"reg_kind must be one of {REG_KINDS}, got {self.reg_kind!r}")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")


@dataclass
class IterationRecord:
    iteration: int
    rmsd: float | None
    data_fit: float
    rev_value: float
    time_ms: float


@dataclass
class SolverTrace:
    records: list
    final_image: np.ndarray
    step_size: float
    angles: list

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def data_fit(geom, x, b):
    r = forward_project(geom, x) - b
    return float(np.vdot(r, r)) / (2.0 * r.size)


def data_fit_gradient(geom, x, b):
    """Gradient ``A^T (A x - b) / n`` of the least-squares data fit."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != geom.sinogram_shape:
        raise ShapeError(f"data shape {b.shape} does not match geometry {geom.sinogram_shape}")
    return back_project(geom, forward_project(geom, x) - b) / b.size


def momentum_next(a):
    if a < 1:
        raise ValueError("momentum parameter must be >= 1")
    return (1.0 + math.sqrt(1.0 + 4.0 * a * a)) / 2.0


def default_step_size(geom, lam, power_iters=100, seed=0):
    lipschitz = operator_norm_sq(geom, power_iters, seed) / geom.num_rays
    return 1.0 / (lipschitz + lam)


def backprojection_init(geom, b, box=BoxConstraint(0.0, 1.0)):
    """Box-clamped ``s A^T b`` with ``s`` minimizing ``||s A A^T b - b||``."""
    bp = back_project(geom, b)
    abp = forward_project(geom, bp)
    denom = float(np.vdot(abp, abp))
    scale = float(np.vdot(abp, b)) / denom if denom > 0 else 0.0
    return project_box(scale * bp, box)


def run(geom, b, cfg, denoiser=None, ground_truth=None, x0=None, sampler=None,
        callback=None):
    """Run ``cfg.max_iters`` FISTA iterations and return the full trace.

    Record ``k`` describes ``x_k``, the iterate entering iteration ``k``:
    its RMSD to ``ground_truth`` (None without one), its data fit, and the
    weighted regularizer value ``lam * y_k^T reg(y_k)`` used in that step.
    The angle sampler is built from ``cfg.seed`` unless one is passed in.
    """
    kind = cfg.reg_kind
    if kind in ("red", "rev") and denoiser is None:
        raise ValueError(f"reg_kind={kind!r} needs a denoiser")
    if kind == "simplified_rev" and denoiser is not None:
        raise ValueError("simplified_rev does not use a denoiser")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != geom.sinogram_shape:
        raise ShapeError(f"data shape {b.shape} does not match geometry {geom.sinogram_shape}")

    step = cfg.step_size
    if step is None:
        step = default_step_size(geom, cfg.lam, cfg.power_iters, cfg.seed)
    if sampler is None and kind in ("rev", "simplified_rev"):
        sampler = AngleSampler(cfg.seed, cfg.rev.mode)
    rev_cfg = cfg.rev

    x = np.zeros(geom.image_shape) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != geom.image_shape:
        raise ShapeError(f"initial image {x.shape} does not match geometry {geom.image_shape}")
    y = x.copy()
    a = 1.0
    records, angles = [], []
    start = time.perf_counter()

    for k in range(cfg.max_iters):
        residual = forward_project(geom, y) - b
        grad = back_project(geom, residual) / b.size
        if k == 0:
            fit_x = float(np.vdot(residual, residual)) / (2.0 * b.size)
        else:
            fit_x = data_fit(geom, x, b)

        reg_value = 0.0
        if kind != "none" and cfg.lam > 0:
            if kind == "red":
                reg = regularizers.red_gradient(y, denoiser)
            elif kind == "rev":
                reg, drawn = regularizers.rev_gradient_averaged(
                    y, denoiser, rev_cfg, sampler, return_angles=True)
                angles.append(drawn)
            else:
                reg, drawn = regularizers.simplified_rev_gradient_averaged(
                    y, rev_cfg, sampler, return_angles=True)
                angles.append(drawn)
            grad = grad + cfg.lam * reg
            reg_value = cfg.lam * regularizers.regularizer_value(y, reg)

        records.append(IterationRecord(
            iteration=k,
            rmsd=None if ground_truth is None else rmsd(x, ground_truth),
            data_fit=fit_x,
            rev_value=reg_value,
            time_ms=1000.0 * (time.perf_counter() - start),
        ))

        z = y - step * grad
        if not np.all(np.isfinite(z)):
            raise DivergenceError(k, "non-finite pixel before projection")
        if np.max(np.abs(z)) > DIVERGENCE_LIMIT:
            raise DivergenceError(k, f"pixel magnitude above {DIVERGENCE_LIMIT:g} before projection")
        x_next = project_box(z, cfg.box)
        a_next = momentum_next(a)
        y = x_next + ((a - 1.0) / a_next) * (x_next - x)
        x, a = x_next, a_next
        if callback is not None:
            callback(k, x)

    return SolverTrace(records=records, final_image=x, step_size=step, angles=angles)
