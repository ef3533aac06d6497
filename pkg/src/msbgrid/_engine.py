"""Shared forward/backward engine for the enhance-plus-loss pipeline.

The guidance map, slice geometry, and resampling weights depend only on the
input image and the pyramid shapes, so a `Context` precomputes them once and
every evaluation reuses them.  All math runs in float64; gradient
accumulation uses fixed sequential reductions so repeated runs are
bit-identical.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import _kernels
from .grid import (
    COEFF_COUNT,
    DET_FLOOR,
    BilateralGrid,
    MultiScaleGrid,
    _resize_bilinear,
    _resize_bilinear_adjoint,
    _resize_matrix,
    _slice_plan,
    _SliceOps,
)
from .image import (
    SSIM_C1,
    SSIM_C2,
    Image,
    _area_reduce,
    _gaussian_kernel,
    _ssim_y_stats,
    grayscale,
)


class EngineParams(NamedTuple):
    """Raw term weights plus the per-term knobs the pipeline needs."""

    w_l1: float
    w_ssim: float
    w_tv: float
    w_circle: float
    tv_a: float
    tv_b: float
    cond_threshold: float


class Terms(NamedTuple):
    """Unweighted term values; ssim_comp is (1 - mean SSIM)."""

    l1: float
    ssim_comp: float
    tv: float
    circle: float

    def weighted_total(self, p: EngineParams) -> float:
        return (
            p.w_l1 * self.l1
            + p.w_ssim * self.ssim_comp
            + p.w_tv * self.tv
            + p.w_circle * self.circle
        )


def pack(msg: MultiScaleGrid) -> np.ndarray:
    """Flatten all grid coefficients, level-major, cell order ((i*w + j)*d + k)."""
    return np.concatenate([lvl.coeffs.ravel() for lvl in msg.levels])


def unpack(theta: np.ndarray, like: MultiScaleGrid) -> MultiScaleGrid:
    """Rebuild a pyramid with `like`'s shapes and factors from a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size != param_count(like):
        raise ValueError("parameter vector length does not match the pyramid")
    levels = []
    pos = 0
    for lvl in like.levels:
        n = lvl.cell_count * COEFF_COUNT
        levels.append(BilateralGrid(theta[pos:pos + n].reshape(lvl.coeffs.shape).copy()))
        pos += n
    return MultiScaleGrid(levels, list(like.guidance_factors))


def param_count(msg: MultiScaleGrid) -> int:
    return sum(lvl.cell_count * COEFF_COUNT for lvl in msg.levels)


def _tv_level_ssd(coeffs: np.ndarray) -> float:
    """Sum over the three grid axes of squared forward differences."""
    return float(_kernels.tv_level_ssd(np.ascontiguousarray(coeffs)))


def _tv_level_grad(coeffs: np.ndarray, scale: float, out: np.ndarray) -> None:
    _kernels.tv_level_grad_add(np.ascontiguousarray(coeffs), scale, out)


def tv_weight(shape: tuple[int, int, int], tv_a: float, tv_b: float) -> float:
    """Size-adaptive level weight a * sqrt(h * w * d) + b."""
    h, w, d = shape
    return tv_a * math.sqrt(h * w * d) + tv_b


class _Level(NamedTuple):
    shape: tuple[int, int, int]
    offset: int
    size: int
    ops: _SliceOps
    rmat_ht: np.ndarray | None  # transposed resize weights; None at full res
    rmat_wt: np.ndarray | None


class Context:
    """Fixed per-(pyramid shape, image pair) state for repeated evaluations."""

    def __init__(
        self,
        msg: MultiScaleGrid,
        img_r: Image,
        img_gt: Image,
        ssim_window: int = 11,
        ssim_sigma: float = 1.5,
    ) -> None:
        if img_r.data.shape != img_gt.data.shape:
            raise ValueError("rendered and ground-truth images must share dimensions")
        self.h = img_r.height
        self.w = img_r.width
        self.r = img_r.data.astype(np.float64)
        self.gt = img_gt.data.astype(np.float64)
        self.factors = list(msg.guidance_factors)
        guid = grayscale(img_r).data.astype(np.float64)

        self.levels: list[_Level] = []
        pos = 0
        for lvl, (fh, fw) in zip(msg.levels, self.factors):
            g = _area_reduce(guid, fh, fw)
            ops = _SliceOps(_slice_plan(g, lvl.h, lvl.w, lvl.d))
            if g.shape == (self.h, self.w):
                rmht = rmwt = None
            else:
                rmht = np.ascontiguousarray(_resize_matrix(g.shape[0], self.h).T)
                rmwt = np.ascontiguousarray(_resize_matrix(g.shape[1], self.w).T)
            size = lvl.cell_count * COEFF_COUNT
            self.levels.append(_Level(lvl.shape, pos, size, ops, rmht, rmwt))
            pos += size
        self.n_params = pos

        self.ssim_window = ssim_window
        self.ssim_sigma = ssim_sigma
        self._ssim_kernel: np.ndarray | None = None
        self._ssim_gt_stats: tuple[np.ndarray, np.ndarray] | None = None

    def _ssim_setup(self):
        if self._ssim_kernel is None:
            if self.h < self.ssim_window or self.w < self.ssim_window:
                raise ValueError(
                    f"image smaller than the {self.ssim_window}x{self.ssim_window} ssim window"
                )
            g = _gaussian_kernel(self.ssim_window, self.ssim_sigma)
            self._ssim_kernel = g
            self._ssim_gt_stats = _ssim_y_stats(self.gt, g)
        return self._ssim_kernel, self._ssim_gt_stats


class _State(NamedTuple):
    fields: np.ndarray     # (L, H, W, 12) per-level transforms
    prefixes: np.ndarray   # (L, H, W, 12) running compositions, coarsest first
    enhanced: np.ndarray   # (H, W, 3)


def _forward(ctx: Context, theta: np.ndarray) -> _State:
    fields = np.empty((len(ctx.levels), ctx.h, ctx.w, COEFF_COUNT))
    for li, lv in enumerate(ctx.levels):
        coeffs = theta[lv.offset:lv.offset + lv.size].reshape(lv.shape + (COEFF_COUNT,))
        sliced = lv.ops.apply(coeffs)
        if lv.rmat_ht is not None:
            sliced = _resize_bilinear(sliced, ctx.h, ctx.w)
        fields[li] = sliced
    prefixes, enhanced = _kernels.compose_apply(fields, ctx.r)
    return _State(fields, prefixes, enhanced)


def evaluate(
    ctx: Context,
    theta: np.ndarray,
    params: EngineParams,
    need_grad: bool,
) -> tuple[Terms, np.ndarray | None]:
    """Weighted pipeline loss terms and, optionally, d(total)/d(theta)."""
    state = _forward(ctx, theta)
    e = state.enhanced

    l1_scale = params.w_l1 / e.size
    l1_sum, ge = _kernels.l1_and_sign(e, ctx.gt, l1_scale)
    l1 = l1_sum / e.size

    ssim_comp = 0.0
    ssim_cache = None
    if params.w_ssim != 0.0:
        kernel, (muy, syy) = ctx._ssim_setup()
        s_sum, mux, n1, d1, n2, d2 = _kernels.ssim_forward(
            e, ctx.gt, kernel, muy, syy, SSIM_C1, SSIM_C2
        )
        ssim_comp = 1.0 - s_sum / mux.size
        ssim_cache = (kernel, muy, mux, n1, d1, n2, d2)

    tv = 0.0
    if params.w_tv != 0.0:
        for lv in ctx.levels:
            coeffs = theta[lv.offset:lv.offset + lv.size].reshape(lv.shape + (COEFF_COUNT,))
            scale = tv_weight(lv.shape, params.tv_a, params.tv_b) / (
                lv.shape[0] * lv.shape[1] * lv.shape[2]
            )
            tv += scale * _tv_level_ssd(coeffs)

    circle = 0.0
    circle_cache = None
    if params.w_circle != 0.0:
        c_sum, nm, inv, pulled, vres, mask = _kernels.circle_forward(
            state.prefixes[-1], ctx.r, ctx.gt, params.cond_threshold, DET_FLOOR
        )
        if nm > 0:
            circle = c_sum / nm
            circle_cache = (inv, pulled, vres, mask, nm)

    terms = Terms(l1, ssim_comp, tv, circle)
    if not need_grad:
        return terms, None

    # d(total)/d(enhanced); ge already carries the L1 part
    if params.w_ssim != 0.0 and ssim_cache is not None:
        kernel, muy, mux, n1, d1, n2, d2 = ssim_cache
        ge += _kernels.ssim_backward(
            e, ctx.gt, kernel, muy, mux, n1, d1, n2, d2, -params.w_ssim
        )

    # d(total)/d(composite field)
    gm = ge[..., :, None] * ctx.r[..., None, :]
    gt_grad = ge
    if circle_cache is not None:
        inv, pulled, vres, mask, nm = circle_cache
        _kernels.circle_backward(
            inv, pulled, vres, mask, 2.0 * params.w_circle / nm, gm, gt_grad
        )

    # distribute to levels, then back through resampling and slicing
    level_grads = _kernels.backward_chain(state.fields, state.prefixes, gm, gt_grad)
    grad = np.zeros(ctx.n_params, dtype=np.float64)
    for lv, gfield in zip(ctx.levels, level_grads):
        if lv.rmat_ht is not None:
            gfield = _resize_bilinear_adjoint(gfield, lv.rmat_ht, lv.rmat_wt)
        grad[lv.offset:lv.offset + lv.size] = lv.ops.adjoint(gfield).ravel()

    if params.w_tv != 0.0:
        for lv in ctx.levels:
            coeffs = theta[lv.offset:lv.offset + lv.size].reshape(lv.shape + (COEFF_COUNT,))
            scale = params.w_tv * tv_weight(lv.shape, params.tv_a, params.tv_b) / (
                lv.shape[0] * lv.shape[1] * lv.shape[2]
            )
            gview = grad[lv.offset:lv.offset + lv.size].reshape(lv.shape + (COEFF_COUNT,))
            _tv_level_grad(coeffs, scale, gview)

    return terms, grad
