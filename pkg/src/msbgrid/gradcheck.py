"""Analytic-vs-finite-difference verification over grids, images, and loss terms.

Test instances keep the check well-conditioned: the target image is the
forward output minus per-pixel offsets bounded away from zero, so the L1
term's |.| kinks sit far outside the reach of a 1e-3 central-difference
probe, and the base image mixes smooth ramps with noise so window statistics
stay contrastive.  Pass/fail uses the gradient-vector relative error; the
worst coefficient (largest absolute discrepancy) is reported alongside.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _engine
from .diff import central_difference, relative_error
from .grid import MultiScaleGrid
from .image import Image

TERMS = ("l1", "ssim", "tv", "circle", "total")

# One-hot raw weights per term; "total" uses a representative mixed config.
_TERM_WEIGHTS = {
    "l1": (1.0, 0.0, 0.0, 0.0),
    "ssim": (0.0, 1.0, 0.0, 0.0),
    "tv": (0.0, 0.0, 1.0, 0.0),
    "circle": (0.0, 0.0, 0.0, 1.0),
    "total": (0.8, 0.2, 1e-2, 1e-2),
}


class GradCheckCase(NamedTuple):
    shapes: tuple[tuple[int, int, int], ...]
    term: str
    restart: int
    rel_err: float
    worst_index: int
    passed: bool


def _term_params(term: str, tv_a: float = 1e-3, tv_b: float = 0.0,
                 cond_threshold: float = 1e6) -> _engine.EngineParams:
    w_l1, w_ssim, w_tv, w_circle = _TERM_WEIGHTS[term]
    return _engine.EngineParams(w_l1, w_ssim, w_tv, w_circle, tv_a, tv_b, cond_threshold)


def make_instance(
    shapes,
    factors,
    seed: int,
    img_h: int = 8,
    img_w: int = 8,
    spread: float = 0.25,
):
    """Random near-identity pyramid plus an image pair with kink-safe residuals."""
    rng = np.random.default_rng(seed)
    msg = MultiScaleGrid.identity(shapes, factors)
    theta = _engine.pack(msg) + rng.uniform(-spread, spread, _engine.param_count(msg))
    msg = _engine.unpack(theta, msg)
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, img_h), np.linspace(0.0, 1.0, img_w), indexing="ij"
    )
    ramps = np.stack([0.2 + 0.6 * xx, 0.2 + 0.6 * yy, 0.2 + 0.3 * (xx + yy)], axis=-1)
    img_r = Image((0.7 * ramps + 0.3 * rng.uniform(0.05, 0.95, (img_h, img_w, 3))).astype(np.float32))
    # residual magnitudes live in [0.15, 0.4]; FD probes shift pixels by <~2e-3
    offsets = rng.choice([-1.0, 1.0], (img_h, img_w, 3)) * rng.uniform(0.15, 0.4, (img_h, img_w, 3))
    ctx = _engine.Context(msg, img_r, img_r, ssim_window=7)
    e0 = _engine._forward(ctx, _engine.pack(msg)).enhanced
    img_gt = Image((e0 - offsets).astype(np.float32))
    return msg, img_r, img_gt


def check_case(
    shapes,
    factors,
    term: str,
    seed: int,
    img_h: int = 8,
    img_w: int = 8,
    ssim_window: int = 7,
    fd_step: float = 1e-3,
) -> tuple[float, int]:
    """Gradient-vector relative error plus the worst coefficient index."""
    msg, img_r, img_gt = make_instance(shapes, factors, seed, img_h, img_w)
    params = _term_params(term)
    ctx = _engine.Context(msg, img_r, img_gt, ssim_window=ssim_window)
    theta = _engine.pack(msg)
    _, analytic = _engine.evaluate(ctx, theta, params, need_grad=True)

    def fn(t: np.ndarray) -> float:
        terms, _ = _engine.evaluate(ctx, t, params, need_grad=False)
        return terms.weighted_total(params)

    fd = central_difference(fn, theta, fd_step)
    worst = int(np.argmax(np.abs(analytic - fd)))
    return relative_error(analytic, fd), worst


DEFAULT_MATRIX = (
    (((2, 2, 1),), ((2, 2),)),
    (((1, 1, 1),), ((1, 1),)),
    (((2, 2, 1), (4, 4, 2)), ((2, 2), (2, 2))),
)


def run_gradcheck(
    matrix=DEFAULT_MATRIX,
    terms=TERMS,
    restarts: int = 3,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> list[GradCheckCase]:
    results = []
    for shapes, factors in matrix:
        for term in terms:
            for restart in range(restarts):
                err, worst = check_case(shapes, factors, term, seed + 7919 * restart)
                results.append(
                    GradCheckCase(tuple(shapes), term, restart, err, worst, err <= tolerance)
                )
    return results
