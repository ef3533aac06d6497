"""Synthetic photometric-inconsistency generator with known ground truth.

Stands in for real multi-camera captures: `gen_base` produces a deterministic
test pattern exercising the full luminance range, `perturb` applies a known
photometric distortion, and the pair (base, perturbed) becomes a fitting
target whose recoverability is measurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grid import AffineCoeffs, identity_coeffs
from .image import Image

PERTURBATION_KINDS = ("global_affine", "patch_affine", "tone_curve", "mixed")

# Draw bounds keep outputs near [0, 1] and inverses well-conditioned.
_LINEAR_SPREAD = 0.3
_TRANSLATE_SPREAD = 0.2
_GAMMA_RANGE = (0.6, 1.6)
_SEAM_RADIUS = 4  # box-blur radius; seams blend over 2*radius = 8 px


@dataclass
class Perturbation:
    """A photometric distortion recipe; params hold the drawn ground truth."""

    kind: str
    seed: int = 0
    block: int = 32
    params: dict | None = None

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"kind must be one of {PERTURBATION_KINDS}")
        if self.block < 1:
            raise ValueError("block size must be >= 1")

    @classmethod
    def identity(cls) -> "Perturbation":
        return cls("global_affine", params={"affine": identity_coeffs()})


def _draw_affine(rng: np.random.Generator) -> np.ndarray:
    """Flattened 3x4 affine near identity; redraw if badly conditioned."""
    while True:
        m = np.eye(3) + rng.uniform(-_LINEAR_SPREAD, _LINEAR_SPREAD, (3, 3))
        if np.linalg.cond(m) <= 8.0:
            break
    t = rng.uniform(-_TRANSLATE_SPREAD, _TRANSLATE_SPREAD, 3)
    out = np.empty((3, 4))
    out[:, :3] = m
    out[:, 3] = t
    return out.reshape(12)


def resolve(p: Perturbation, h: int, w: int) -> Perturbation:
    """Draw concrete transform parameters for an image of the given size."""
    if p.params is not None:
        return p
    rng = np.random.default_rng(p.seed)
    params: dict = {}
    if p.kind in ("tone_curve", "mixed"):
        params["gamma"] = rng.uniform(*_GAMMA_RANGE, 3)
    if p.kind in ("patch_affine", "mixed"):
        nb_h = math.ceil(h / p.block)
        nb_w = math.ceil(w / p.block)
        params["blocks"] = np.stack(
            [[_draw_affine(rng) for _ in range(nb_w)] for _ in range(nb_h)]
        )
    if p.kind in ("global_affine", "mixed"):
        params["affine"] = _draw_affine(rng)
    return Perturbation(p.kind, p.seed, p.block, params)


def _box_blur(arr: np.ndarray, radius: int) -> np.ndarray:
    """Separable box mean with edge replication; output size unchanged."""
    k = 2 * radius + 1
    pad = np.pad(arr, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    arr = sum(pad[i:i + arr.shape[0]] for i in range(k)) / k
    pad = np.pad(arr, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    return sum(pad[:, j:j + arr.shape[1]] for j in range(k)) / k


def _apply_affine_map(coeff_map: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    mt = coeff_map.reshape(coeff_map.shape[0], coeff_map.shape[1], 3, 4)
    return np.einsum("hwij,hwj->hwi", mt[..., :3], rgb) + mt[..., 3]


def _patch_coeff_map(blocks: np.ndarray, h: int, w: int, block: int) -> np.ndarray:
    cm = np.repeat(np.repeat(blocks, block, axis=0), block, axis=1)[:h, :w]
    return _box_blur(cm, _SEAM_RADIUS)


def perturb(img: Image, p: Perturbation) -> Image:
    """Apply the perturbation; mixed composes global(patch(tone(img)))."""
    p = resolve(p, img.height, img.width)
    out = img.data.astype(np.float64)
    if p.kind in ("tone_curve", "mixed"):
        gamma = np.asarray(p.params["gamma"], dtype=np.float64)
        out = np.power(np.clip(out, 0.0, None), gamma)
    if p.kind in ("patch_affine", "mixed"):
        cm = _patch_coeff_map(np.asarray(p.params["blocks"]), img.height, img.width, p.block)
        out = _apply_affine_map(cm, out)
    if p.kind in ("global_affine", "mixed"):
        a = AffineCoeffs(np.asarray(p.params["affine"]))
        out = out @ a.m.T + a.t
    return Image(out.astype(np.float32))


def gen_base(seed: int, h: int, w: int) -> Image:
    """Deterministic test pattern: gradients, sinusoids, band-limited noise, hard edges.

    The luminance histogram covers the full [0, 1] range so every guidance
    bin of a sliced grid gets exercised.
    """
    if h < 16 or w < 16:
        raise ValueError("base images must be at least 16x16")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij"
    )
    img = np.empty((h, w, 3))
    ramp = (xx + yy) / 2.0
    for c in range(3):
        f1, f2 = rng.uniform(1.5, 4.0, 2)
        p1, p2 = rng.uniform(0.0, 2.0 * np.pi, 2)
        waves = 0.5 + 0.5 * np.sin(2.0 * np.pi * f1 * xx + p1) * np.cos(2.0 * np.pi * f2 * yy + p2)
        img[..., c] = 0.6 * ramp + 0.25 * waves
    noise = _box_blur(rng.normal(0.0, 1.0, (h, w, 3)), 1)
    img += 0.08 * noise / max(1e-12, float(np.abs(noise).max()))
    for _ in range(6):
        bh = int(rng.integers(h // 8, h // 4 + 1))
        bw = int(rng.integers(w // 8, w // 4 + 1))
        r0 = int(rng.integers(0, h - bh + 1))
        c0 = int(rng.integers(0, w - bw + 1))
        color = rng.uniform(0.0, 1.0, 3)
        img[r0:r0 + bh, c0:c0 + bw] = 0.25 * img[r0:r0 + bh, c0:c0 + bw] + 0.75 * color
    lo, hi = float(img.min()), float(img.max())
    img = (img - lo) / (hi - lo)
    return Image(img.astype(np.float32))


class SynthPair(NamedTuple):
    img_r: Image
    img_gt: Image
    truth: Perturbation


def make_pair(seed: int, h: int, w: int, p: Perturbation) -> SynthPair:
    """Base image plus its perturbed counterpart and the resolved ground truth."""
    img_r = gen_base(seed, h, w)
    truth = resolve(p, h, w)
    img_gt = perturb(img_r, truth)
    return SynthPair(img_r, img_gt, truth)


def fit_global_affine_lstsq(img_r: Image, img_gt: Image) -> AffineCoeffs:
    """Closed-form least-squares global affine mapping img_r onto img_gt.

    This is the attainable optimum for any single global transform and
    serves as the oracle floor for appearance-code-mode fits.
    """
    if img_r.data.shape != img_gt.data.shape:
        raise ValueError("images must share dimensions")
    r = img_r.data.astype(np.float64).reshape(-1, 3)
    g = img_gt.data.astype(np.float64).reshape(-1, 3)
    x = np.concatenate([r, np.ones((r.shape[0], 1))], axis=1)
    beta, *_ = np.linalg.lstsq(x, g, rcond=None)  # (4, 3)
    out = np.empty((3, 4))
    out[:, :3] = beta[:3].T
    out[:, 3] = beta[3]
    return AffineCoeffs(out.reshape(12))
