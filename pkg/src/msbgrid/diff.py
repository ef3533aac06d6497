"""Analytic pipeline gradients and the finite-difference verification oracle."""

from __future__ import annotations

import numpy as np

from . import _engine
from ._engine import Context, pack as pack_params, param_count, unpack as unpack_params
from .grid import MultiScaleGrid
from .image import Image
from .loss import LossBreakdown, LossConfig

__all__ = [
    "pack_params",
    "unpack_params",
    "param_count",
    "loss_and_grad",
    "loss_breakdown_and_grad",
    "finite_diff_grad",
    "central_difference",
    "relative_error",
    "componentwise_relative_error",
]


def loss_and_grad(
    msg: MultiScaleGrid,
    img_r: Image,
    img_gt: Image,
    cfg: LossConfig,
) -> tuple[float, np.ndarray]:
    """Total loss and its exact gradient with respect to every grid coefficient."""
    breakdown, grad = loss_breakdown_and_grad(msg, img_r, img_gt, cfg)
    return breakdown.total, grad


def loss_breakdown_and_grad(
    msg: MultiScaleGrid,
    img_r: Image,
    img_gt: Image,
    cfg: LossConfig,
) -> tuple[LossBreakdown, np.ndarray]:
    ctx = Context(msg, img_r, img_gt, ssim_window=cfg.ssim_window)
    params = cfg.engine_params()
    terms, grad = _engine.evaluate(ctx, pack_params(msg), params, need_grad=True)
    return LossBreakdown.from_terms(terms, params), grad


def central_difference(fn, theta: np.ndarray, h: float) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    if h <= 0.0:
        raise ValueError("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        orig = probe[i]
        probe[i] = orig + h
        fp = fn(probe)
        probe[i] = orig - h
        fm = fn(probe)
        probe[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_grad(
    msg: MultiScaleGrid,
    img_r: Image,
    img_gt: Image,
    cfg: LossConfig,
    h: float = 1e-3,
) -> np.ndarray:
    """Finite-difference gradient of the same total loss loss_and_grad evaluates."""
    ctx = Context(msg, img_r, img_gt, ssim_window=cfg.ssim_window)
    params = cfg.engine_params()

    def fn(theta: np.ndarray) -> float:
        terms, _ = _engine.evaluate(ctx, theta, params, need_grad=False)
        return terms.weighted_total(params)

    return central_difference(fn, pack_params(msg), h)


def relative_error(analytic: np.ndarray, fd: np.ndarray, floor: float = 1e-6) -> float:
    """|a - f| / max(floor, |a| + |f|) over gradient vectors (Euclidean norms).

    The floor keeps exactly-zero gradients (disabled loss terms) well-defined.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    num = float(np.linalg.norm(analytic - fd))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(fd))
    return num / max(floor, den)


def componentwise_relative_error(analytic: np.ndarray, fd: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-coefficient |a - f| / max(floor, |a| + |f|); diagnostic companion."""
    return np.abs(analytic - fd) / np.maximum(floor, np.abs(analytic) + np.abs(fd))
