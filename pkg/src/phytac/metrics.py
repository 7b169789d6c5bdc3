"""Image-quality metrics and grasp-state classification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"image grids differ: {x.shape} vs {y.shape}")
    return x, y


def mae(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean(np.abs(x - y)))


def rmse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def psnr(x, y, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(x, y, window: int = SSIM_WINDOW, stride: int = SSIM_STRIDE, data_range: float = 1.0) -> float:
    """Mean SSIM over ``window``-square patches taken every ``stride`` pixels.

    Local statistics use the unbiased (n - 1) covariance.
    """
    x, y = _pair(x, y)
    if x.ndim != 2 or min(x.shape) < window:
        raise ShapeError(f"image {x.shape} smaller than the {window}x{window} SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return float(kernels.ssim_mean(np.ascontiguousarray(x), np.ascontiguousarray(y),
                                   window, stride, c1, c2))


@dataclass
class ImageMetrics:
    mae: float
    rmse: float
    psnr_db: float
    ssim: float

    def csv_row(self):
        p = min(self.psnr_db, PSNR_CAP_DB)
        return [f"{self.mae:.6f}", f"{self.rmse:.6f}", f"{p:.3f}", f"{self.ssim:.6f}", "n/a"]


def image_metrics(x, y) -> ImageMetrics:
    return ImageMetrics(mae(x, y), rmse(x, y), psnr(x, y), ssim(x, y))


@dataclass
class GraspOutcome:
    sug: bool  # object caught: force > 0 and not slipping at the end
    stg: bool  # sug, a hold was declared, and no slip after it
    fosg: bool  # stg and final force within tol_f of F*


def classify_outcome(final_force: float, slipping_at_end: bool, held: bool, slipped_after_hold: bool,
                     optimal_force: float, tol_f: float = 0.15) -> GraspOutcome:
    sug = final_force > 0.0 and not slipping_at_end
    stg = sug and held and not slipped_after_hold
    fosg = stg and abs(final_force - optimal_force) <= tol_f * optimal_force
    return GraspOutcome(sug, stg, fosg)


def classify_trace(trace, optimal_force: float, tol_f: float = 0.15) -> GraspOutcome:
    """Classify a completed :class:`~phytac.control.ServoTrace`."""
    if not trace.forces:
        return GraspOutcome(False, False, False)
    return classify_outcome(trace.forces[-1], trace.slipping[-1], trace.hold_frame is not None,
                            trace.slipped_after_hold, optimal_force, tol_f)
