"""Loss terms for grid fitting: reconstruction, adaptive TV, and circle consistency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .grid import CoeffField, MultiScaleGrid, invert_field
from .image import Image, l1_error, ssim


@dataclass
class LossConfig:
    """Weights and guards for the composite fitting loss.

    lambda_d and lambda_o are slots for renderer-side depth and opacity terms;
    they must stay 0 here because no renderer is attached.
    """

    lambda_r: float = 0.8
    lambda_tv: float = 1e-2
    lambda_circle: float = 1e-2
    tv_a: float = 1e-3
    tv_b: float = 0.0
    cond_threshold: float = 1e6
    ssim_window: int = 11
    lambda_d: float = 0.0
    lambda_o: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_r <= 1.0:
            raise ValueError("lambda_r must lie in [0, 1]")
        if self.lambda_tv < 0.0 or self.lambda_circle < 0.0:
            raise ValueError("lambda_tv and lambda_circle must be >= 0")
        if self.tv_a < 0.0:
            raise ValueError("tv_a must be >= 0")
        if self.lambda_d != 0.0 or self.lambda_o != 0.0:
            raise ValueError("depth/opacity loss terms need a renderer and must stay 0")

    def engine_params(self) -> _engine.EngineParams:
        return _engine.EngineParams(
            w_l1=self.lambda_r,
            w_ssim=1.0 - self.lambda_r,
            w_tv=self.lambda_tv,
            w_circle=self.lambda_circle,
            tv_a=self.tv_a,
            tv_b=self.tv_b,
            cond_threshold=self.cond_threshold,
        )


@dataclass
class LossBreakdown:
    """Weighted loss components; they sum to `total`."""

    total: float
    recon_l1: float
    recon_ssim: float
    tv: float
    circle: float

    @property
    def recon(self) -> float:
        return self.recon_l1 + self.recon_ssim

    @classmethod
    def from_terms(cls, terms: _engine.Terms, p: _engine.EngineParams) -> "LossBreakdown":
        recon_l1 = p.w_l1 * terms.l1
        recon_ssim = p.w_ssim * terms.ssim_comp
        tv = p.w_tv * terms.tv
        circle = p.w_circle * terms.circle
        return cls(recon_l1 + recon_ssim + tv + circle, recon_l1, recon_ssim, tv, circle)


def recon_loss(img_e: Image, img_gt: Image, lambda_r: float, ssim_window: int = 11) -> float:
    """lambda_r * mean|e - gt| + (1 - lambda_r) * (1 - SSIM); 0 at a perfect fit."""
    if img_e.data.shape != img_gt.data.shape:
        raise ValueError("recon_loss requires images of equal dimensions")
    value = lambda_r * l1_error(img_e, img_gt)
    if lambda_r < 1.0:
        value += (1.0 - lambda_r) * (1.0 - ssim(img_e, img_gt, window=ssim_window))
    return float(value)


def tv_loss(msg: MultiScaleGrid, tv_a: float, tv_b: float) -> float:
    """Size-weighted mean squared forward differences over every grid level."""
    total = 0.0
    for lvl in msg.levels:
        k = _engine.tv_weight(lvl.shape, tv_a, tv_b)
        total += k / lvl.cell_count * _engine._tv_level_ssd(lvl.coeffs)
    return float(total)


def circle_loss(
    composite: CoeffField,
    img_r: Image,
    img_gt: Image,
    cond_threshold: float = 1e6,
) -> float:
    """Mean squared gap between img_r and the inverse transform of img_gt.

    Pixels whose linear block fails the inversion guard are excluded; an
    empty mask yields 0.
    """
    if (composite.h, composite.w) != (img_r.height, img_r.width):
        raise ValueError("composite field and image dimensions must match")
    if img_r.data.shape != img_gt.data.shape:
        raise ValueError("circle_loss requires images of equal dimensions")
    inverse, mask = invert_field(composite, cond_threshold)
    nm = int(mask.sum())
    if nm == 0:
        return 0.0
    gt = img_gt.data.astype(np.float64)
    pulled = np.einsum("hwij,hwj->hwi", inverse.m, gt) + inverse.t
    v = (img_r.data.astype(np.float64) - pulled) * mask[..., None]
    return float(np.sum(v * v) / nm)


def total_loss(
    msg: MultiScaleGrid,
    img_r: Image,
    img_gt: Image,
    cfg: LossConfig,
) -> LossBreakdown:
    """Composite loss: recon on the enhanced image plus weighted TV and circle terms."""
    ctx = _engine.Context(msg, img_r, img_gt, ssim_window=cfg.ssim_window)
    params = cfg.engine_params()
    terms, _ = _engine.evaluate(ctx, _engine.pack(msg), params, need_grad=False)
    return LossBreakdown.from_terms(terms, params)
