"""Adam with per-level learning rates and the full-image fitting loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _engine
from .grid import MultiScaleGrid
from .image import Image
from .loss import LossBreakdown, LossConfig

TRACE_HEADER = "iteration,total,recon_l1,recon_ssim,tv,circle"


@dataclass
class AdamState:
    """First/second moment accumulators; step counts completed updates."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    per_param_lr: np.ndarray,
) -> np.ndarray:
    """One bias-corrected Adam update; mutates `state`, returns new parameters."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    lr = np.asarray(per_param_lr, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient, and state shapes must match")
    if lr.shape not in ((), params.shape):
        raise ValueError("per-parameter learning rate must be scalar or match parameters")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class FitConfig:
    """Fitting schedule.

    level_lrs holds one Adam rate per pyramid level, coarse first; the
    standard three-level schedule is (1e-5, 3e-5, 1e-4).  The seed is
    reserved for stochastic variants; the full-image loop itself is
    deterministic.
    """

    level_lrs: tuple[float, ...] = (1e-5, 3e-5, 1e-4)
    iterations: int = 2000
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        self.level_lrs = tuple(float(lr) for lr in self.level_lrs)
        if any(lr <= 0.0 for lr in self.level_lrs):
            raise ValueError("learning rates must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


class FitResult(NamedTuple):
    grids: MultiScaleGrid
    trace: list[LossBreakdown]


def fit(msg: MultiScaleGrid, img_r: Image, img_gt: Image, cfg: FitConfig) -> FitResult:
    """Run `iterations` steps of loss_and_grad + adam_step.

    Trace row i records the loss at the parameters entering iteration i.
    """
    if len(cfg.level_lrs) != len(msg.levels):
        raise ValueError(
            f"need one learning rate per level: got {len(cfg.level_lrs)} for {len(msg.levels)} levels"
        )
    ctx = _engine.Context(msg, img_r, img_gt, ssim_window=cfg.loss.ssim_window)
    params = cfg.loss.engine_params()
    theta = _engine.pack(msg)
    lr_vec = np.concatenate(
        [np.full(lvl.cell_count * 12, lr) for lvl, lr in zip(msg.levels, cfg.level_lrs)]
    )
    state = AdamState.zeros(theta.size)
    trace: list[LossBreakdown] = []
    for _ in range(cfg.iterations):
        terms, grad = _engine.evaluate(ctx, theta, params, need_grad=True)
        trace.append(LossBreakdown.from_terms(terms, params))
        theta = adam_step(theta, grad, state, lr_vec)
    return FitResult(_engine.unpack(theta, msg), trace)


def trace_to_csv(trace: list[LossBreakdown]) -> str:
    """CSV with columns iteration,total,recon_l1,recon_ssim,tv,circle."""
    lines = [TRACE_HEADER]
    for i, row in enumerate(trace):
        lines.append(
            f"{i},{row.total!r},{row.recon_l1!r},{row.recon_ssim!r},{row.tv!r},{row.circle!r}"
        )
    return "\n".join(lines) + "\n"


def ema(values, span: int = 100) -> np.ndarray:
    """Exponential moving average with smoothing 2 / (span + 1)."""
    values = np.asarray(values, dtype=np.float64)
    alpha = 2.0 / (span + 1.0)
    out = np.empty_like(values)
    acc = 0.0
    for i, v in enumerate(values):
        acc = v if i == 0 else alpha * v + (1.0 - alpha) * acc
        out[i] = acc
    return out
