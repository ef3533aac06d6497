"""Bilateral grids, slicing, per-pixel affine algebra, and hierarchical fusion.

A grid cell holds a flattened 3x4 affine color transform (12 coefficients,
row-major [m00, m01, m02, t0, m10, m11, m12, t1, m20, m21, m22, t2]).
Slicing retrieves a per-pixel transform by trilinear interpolation at
(row, col, luminance); per-level transforms are composed coarse to fine into
one composite affine per pixel.

Interpolation is evaluated as nested lerps `a + t * (b - a)` so that grids
whose cells are all identical (identity grids in particular) reproduce the
input bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .image import GuidanceMap, Image, _area_reduce, grayscale

COEFF_COUNT = 12

_IDENTITY_COEFFS = np.array(
    [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0], dtype=np.float64
)

# Masked pixels in invert_field additionally require |det M| above this floor.
DET_FLOOR = 1e-8


def identity_coeffs() -> np.ndarray:
    """Fresh copy of the flattened identity transform."""
    return _IDENTITY_COEFFS.copy()


@dataclass
class AffineCoeffs:
    """One 3x4 color transform, flattened row-major to 12 values."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != COEFF_COUNT:
            raise ValueError("affine coefficients must hold exactly 12 values")
        if not np.isfinite(self.values).all():
            raise ValueError("affine coefficients must be finite")

    @classmethod
    def identity(cls) -> "AffineCoeffs":
        return cls(identity_coeffs())

    @property
    def m(self) -> np.ndarray:
        """3x3 linear block."""
        return self.values.reshape(3, 4)[:, :3]

    @property
    def t(self) -> np.ndarray:
        """Length-3 translation."""
        return self.values.reshape(3, 4)[:, 3]

    def apply(self, rgb) -> np.ndarray:
        rgb = np.asarray(rgb, dtype=np.float64).reshape(3)
        return self.m @ rgb + self.t


def apply_coeffs(a: AffineCoeffs, rgb) -> np.ndarray:
    """out = m . rgb + t, no clamping."""
    return a.apply(rgb)


@dataclass
class BilateralGrid:
    """One level's (h, w, d) lattice of affine transforms, coeffs (h, w, d, 12)."""

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 4 or self.coeffs.shape[3] != COEFF_COUNT:
            raise ValueError("grid coefficients must have shape (h, w, d, 12)")
        if min(self.coeffs.shape[:3]) < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not np.isfinite(self.coeffs).all():
            raise ValueError("grid coefficients must be finite")

    @classmethod
    def identity(cls, h: int, w: int, d: int) -> "BilateralGrid":
        coeffs = np.tile(_IDENTITY_COEFFS, (h, w, d, 1))
        return cls(coeffs)

    @property
    def h(self) -> int:
        return self.coeffs.shape[0]

    @property
    def w(self) -> int:
        return self.coeffs.shape[1]

    @property
    def d(self) -> int:
        return self.coeffs.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.coeffs.shape[:3]

    @property
    def cell_count(self) -> int:
        return self.h * self.w * self.d


# Default three-level pyramid and per-level guidance downsample factors.
DEFAULT_LEVEL_SHAPES = ((2, 2, 1), (4, 4, 2), (8, 8, 4))
DEFAULT_GUIDANCE_FACTORS = ((2, 2), (2, 2), (2, 2))


@dataclass
class MultiScaleGrid:
    """Ordered coarse-to-fine pyramid of bilateral grids for one image."""

    levels: list[BilateralGrid]
    guidance_factors: list[tuple[int, int]]

    def __post_init__(self) -> None:
        if len(self.levels) < 1:
            raise ValueError("pyramid needs at least one level")
        self.guidance_factors = [(int(fh), int(fw)) for fh, fw in self.guidance_factors]
        if len(self.guidance_factors) != len(self.levels):
            raise ValueError("one (fh, fw) guidance factor pair per level required")
        for fh, fw in self.guidance_factors:
            if fh < 1 or fw < 1:
                raise ValueError("guidance factors must be >= 1")
        for coarse, fine in zip(self.levels, self.levels[1:]):
            if any(c > f for c, f in zip(coarse.shape, fine.shape)):
                raise ValueError("level dimensions must be non-decreasing coarse to fine")

    @classmethod
    def identity(cls, shapes=DEFAULT_LEVEL_SHAPES, factors=DEFAULT_GUIDANCE_FACTORS) -> "MultiScaleGrid":
        levels = [BilateralGrid.identity(h, w, d) for h, w, d in shapes]
        return cls(levels, [tuple(f) for f in factors])

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def copy(self) -> "MultiScaleGrid":
        return MultiScaleGrid(
            [BilateralGrid(g.coeffs.copy()) for g in self.levels],
            list(self.guidance_factors),
        )


@dataclass
class CoeffField:
    """Image-resolution field of per-pixel affine transforms, data (h, w, 12)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != COEFF_COUNT:
            raise ValueError("coefficient field must have shape (h, w, 12)")

    @classmethod
    def identity(cls, h: int, w: int) -> "CoeffField":
        return cls(np.tile(_IDENTITY_COEFFS, (h, w, 1)))

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def m(self) -> np.ndarray:
        """(h, w, 3, 3) view of the linear blocks."""
        return self.data.reshape(self.h, self.w, 3, 4)[..., :3]

    @property
    def t(self) -> np.ndarray:
        """(h, w, 3) view of the translations."""
        return self.data.reshape(self.h, self.w, 3, 4)[..., 3]


# ---------------------------------------------------------------------------
# Lerp machinery shared by slicing and bilinear resampling
# ---------------------------------------------------------------------------

def _axis_lerp_params(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-center source coordinates, clamped to the valid range."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, float(n_in - 1))
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    return i0, i1, t


def _coord_split(coord: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split clamped continuous coordinates into bracketing indices and fractions."""
    i0 = np.floor(coord).astype(np.intp)
    np.clip(i0, 0, n - 1, out=i0)
    i1 = np.minimum(i0 + 1, n - 1)
    t = coord - i0
    return i0, i1, t


def _lerp_consume(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    """a + t * (b - a), computed in-place into b; exact when a == b elementwise."""
    b -= a
    b *= t
    b += a
    return b


class SlicePlan(NamedTuple):
    """Precomputed lookup geometry for slicing one grid with one guidance map."""

    grid_shape: tuple[int, int, int]
    out_shape: tuple[int, int]
    ix0: np.ndarray  # (H,) row brackets
    ix1: np.ndarray
    tx: np.ndarray
    jy0: np.ndarray  # (W,) column brackets
    jy1: np.ndarray
    ty: np.ndarray
    kz0: np.ndarray  # (H, W) luminance brackets
    kz1: np.ndarray
    tz: np.ndarray


def _slice_plan(guidance: np.ndarray, h: int, w: int, d: int) -> SlicePlan:
    gh, gw = guidance.shape
    gx = (np.arange(gh, dtype=np.float64) + 0.5) / gh * h - 0.5
    gy = (np.arange(gw, dtype=np.float64) + 0.5) / gw * w - 0.5
    ix0, ix1, tx = _coord_split(np.clip(gx, 0.0, float(h - 1)), h)
    jy0, jy1, ty = _coord_split(np.clip(gy, 0.0, float(w - 1)), w)
    gz = np.clip(guidance, 0.0, 1.0) * (d - 1)
    kz0, kz1, tz = _coord_split(gz, d)
    return SlicePlan((h, w, d), (gh, gw), ix0, ix1, tx, jy0, jy1, ty, kz0, kz1, tz)


def _slice_axis_matrices(plan: SlicePlan) -> tuple[np.ndarray, np.ndarray]:
    """Dense per-axis gather matrices: rows (gh, h) and columns (gw, w)."""
    h, w, _ = plan.grid_shape
    gh, gw = plan.out_shape
    sx = np.zeros((gh, h), dtype=np.float64)
    np.add.at(sx, (np.arange(gh), plan.ix0), 1.0 - plan.tx)
    np.add.at(sx, (np.arange(gh), plan.ix1), plan.tx)
    sy = np.zeros((gw, w), dtype=np.float64)
    np.add.at(sy, (np.arange(gw), plan.jy0), 1.0 - plan.ty)
    np.add.at(sy, (np.arange(gw), plan.jy1), plan.ty)
    return sx, sy


class _SliceOps:
    """Reusable gather/scatter machinery for one slice plan.

    The forward path is a nested lerp over flat-indexed corner gathers, so
    grids with identical cells slice exactly; the adjoint is the exact-math
    transpose staged as a luminance outer product plus per-axis GEMMs.
    """

    def __init__(self, plan: SlicePlan):
        self.plan = plan
        h, w, d = plan.grid_shape
        gh, gw = plan.out_shape
        n = gh * gw
        ix = (plan.ix0, plan.ix1)
        jy = (plan.jy0, plan.jy1)
        kz = (plan.kz0, plan.kz1)
        idx = np.empty((2, 2, 2, n), dtype=np.intp)
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    idx[a, b, c] = ((ix[a][:, None] * w + jy[b][None, :]) * d + kz[c]).reshape(n)
        self.corner_idx = idx.reshape(8, n)
        self.tx = np.repeat(plan.tx, gw)[:, None]
        self.ty = np.tile(plan.ty, gh)[:, None]
        self.tz = plan.tz.reshape(n)[:, None]
        self._wz: np.ndarray | None = None
        self._sxt: np.ndarray | None = None
        self._syt: np.ndarray | None = None

    def _adjoint_setup(self):
        if self._wz is None:
            h, w, d = self.plan.grid_shape
            n = self.corner_idx.shape[1]
            tz = self.tz[:, 0]
            wz = np.zeros((n, d), dtype=np.float64)
            rows = np.arange(n)
            np.add.at(wz, (rows, self.plan.kz0.reshape(n)), 1.0 - tz)
            np.add.at(wz, (rows, self.plan.kz1.reshape(n)), tz)
            sx, sy = _slice_axis_matrices(self.plan)
            self._wz = wz
            self._sxt = np.ascontiguousarray(sx.T)
            self._syt = np.ascontiguousarray(sy.T)
        return self._wz, self._sxt, self._syt

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        gh, gw = self.plan.out_shape
        cf = coeffs.reshape(-1, COEFF_COUNT)
        i = self.corner_idx
        c00 = _lerp_consume(cf[i[0]], cf[i[1]], self.tz)
        c01 = _lerp_consume(cf[i[2]], cf[i[3]], self.tz)
        c10 = _lerp_consume(cf[i[4]], cf[i[5]], self.tz)
        c11 = _lerp_consume(cf[i[6]], cf[i[7]], self.tz)
        c0 = _lerp_consume(c00, c01, self.ty)
        c1 = _lerp_consume(c10, c11, self.ty)
        return _lerp_consume(c0, c1, self.tx).reshape(gh, gw, COEFF_COUNT)

    def adjoint(self, grad: np.ndarray) -> np.ndarray:
        h, w, d = self.plan.grid_shape
        gh, gw = self.plan.out_shape
        n = gh * gw
        wz, sxt, syt = self._adjoint_setup()
        z = np.einsum("nd,nc->ndc", wz, grad.reshape(n, COEFF_COUNT))
        t = sxt @ z.reshape(gh, gw * d * COEFF_COUNT)            # (h, gw*d*12)
        t = t.reshape(h, gw, d * COEFF_COUNT).transpose(1, 0, 2)
        t = syt @ np.ascontiguousarray(t).reshape(gw, h * d * COEFF_COUNT)
        out = t.reshape(w, h, d, COEFF_COUNT).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(out)


def _slice_apply(plan: SlicePlan, coeffs: np.ndarray) -> np.ndarray:
    """Trilinear gather of grid coefficients, nested lerp along z, y, x."""
    return _SliceOps(plan).apply(coeffs)


def _slice_adjoint(plan: SlicePlan, grad: np.ndarray) -> np.ndarray:
    """Transpose of _slice_apply: scatter per-pixel gradients into grid cells."""
    return _SliceOps(plan).adjoint(grad)


def _slice_corner_weights(plan: SlicePlan):
    """Flat cell indices and tent-product weights for the 8 gather corners."""
    h, w, d = plan.grid_shape
    gh, gw = plan.out_shape
    wx = (1.0 - plan.tx, plan.tx)
    wy = (1.0 - plan.ty, plan.ty)
    wz = (1.0 - plan.tz, plan.tz)
    ix = (plan.ix0, plan.ix1)
    jy = (plan.jy0, plan.jy1)
    kz = (plan.kz0, plan.kz1)
    idx = np.empty((8, gh, gw), dtype=np.intp)
    wgt = np.empty((8, gh, gw), dtype=np.float64)
    corner = 0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                idx[corner] = (ix[a][:, None] * w + jy[b][None, :]) * d + kz[c]
                wgt[corner] = wx[a][:, None] * wy[b][None, :] * wz[c]
                corner += 1
    return idx, wgt


def slice_grid(grid: BilateralGrid, g: GuidanceMap) -> CoeffField:
    """Per-pixel transforms from trilinear interpolation at (row, col, luminance)."""
    plan = _slice_plan(g.data.astype(np.float64), grid.h, grid.w, grid.d)
    return CoeffField(_slice_apply(plan, grid.coeffs))


# ---------------------------------------------------------------------------
# Bilinear resampling of coefficient fields
# ---------------------------------------------------------------------------

def _resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    i0, i1, ti = _axis_lerp_params(arr.shape[0], out_h)
    rows = _lerp_consume(arr[i0], arr[i1], ti[:, None, None])
    j0, j1, tj = _axis_lerp_params(arr.shape[1], out_w)
    return _lerp_consume(rows[:, j0], rows[:, j1], tj[None, :, None])


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) matrix of the 1-D bilinear resampling weights."""
    i0, i1, t = _axis_lerp_params(n_in, n_out)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def _resize_bilinear_adjoint(grad: np.ndarray, rmat_ht: np.ndarray, rmat_wt: np.ndarray) -> np.ndarray:
    """Transpose of _resize_bilinear given transposed per-axis weight matrices."""
    h, w, ch = grad.shape
    in_h = rmat_ht.shape[0]
    in_w = rmat_wt.shape[0]
    g = rmat_ht @ grad.reshape(h, w * ch)                       # (in_h, W*C)
    g = g.reshape(in_h, w, ch).transpose(1, 0, 2).reshape(w, in_h * ch)
    g = rmat_wt @ g                                             # (in_w, in_h*C)
    return np.ascontiguousarray(g.reshape(in_w, in_h, ch).transpose(1, 0, 2))


def upsample_bilinear(field: CoeffField, out_h: int, out_w: int) -> CoeffField:
    """Bilinear resampling with half-pixel-center alignment and edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    return CoeffField(_resize_bilinear(field.data, int(out_h), int(out_w)))


def level_field(
    grid: BilateralGrid,
    full_guidance: GuidanceMap,
    factors: tuple[int, int],
    out_h: int,
    out_w: int,
) -> CoeffField:
    """Downsample guidance, slice, and upsample back to (out_h, out_w)."""
    fh, fw = int(factors[0]), int(factors[1])
    if fh < 1 or fw < 1:
        raise ValueError("guidance factors must be >= 1")
    g = _area_reduce(full_guidance.data.astype(np.float64), fh, fw)
    plan = _slice_plan(g, grid.h, grid.w, grid.d)
    sliced = _slice_apply(plan, grid.coeffs)
    if sliced.shape[:2] == (out_h, out_w):
        return CoeffField(sliced)
    return CoeffField(_resize_bilinear(sliced, int(out_h), int(out_w)))


# ---------------------------------------------------------------------------
# Per-pixel affine composition, application, inversion
# ---------------------------------------------------------------------------

def _compose_pair(m_outer, t_outer, m_inner, t_inner):
    """Affine composition outer(inner(x)) on (h, w, 3, 3) / (h, w, 3) arrays."""
    m = m_outer @ m_inner
    t = np.einsum("hwij,hwj->hwi", m_outer, t_inner) + t_outer
    return m, t


def _pack_mt(m: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.concatenate([m, t[..., None]], axis=-1)
    return out.reshape(m.shape[0], m.shape[1], COEFF_COUNT)


def compose_fields(coarse_to_fine: list[CoeffField]) -> CoeffField:
    """Fold per-level transforms, coarsest applied first, into one field."""
    if len(coarse_to_fine) < 1:
        raise ValueError("compose_fields needs at least one field")
    shape = coarse_to_fine[0].data.shape
    for f in coarse_to_fine[1:]:
        if f.data.shape != shape:
            raise ValueError("all fields must share dimensions")
    if len(coarse_to_fine) == 1:
        return CoeffField(coarse_to_fine[0].data.copy())
    m = coarse_to_fine[0].m
    t = coarse_to_fine[0].t
    for f in coarse_to_fine[1:]:
        m, t = _compose_pair(f.m, f.t, m, t)
    return CoeffField(_pack_mt(m, t))


def _apply_mt(m: np.ndarray, t: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    return np.einsum("hwij,hwj->hwi", m, rgb) + t


def apply_field(field: CoeffField, img: Image) -> Image:
    """Apply each pixel's affine transform; no clamping."""
    if (field.h, field.w) != (img.height, img.width):
        raise ValueError("field and image dimensions must match")
    out = _apply_mt(field.m, field.t, img.data.astype(np.float64))
    return Image(out.astype(np.float32))


def _det3(m: np.ndarray) -> np.ndarray:
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def _adjugate3(m: np.ndarray) -> np.ndarray:
    adj = np.empty_like(m)
    adj[..., 0, 0] = m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1]
    adj[..., 0, 1] = m[..., 0, 2] * m[..., 2, 1] - m[..., 0, 1] * m[..., 2, 2]
    adj[..., 0, 2] = m[..., 0, 1] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 1]
    adj[..., 1, 0] = m[..., 1, 2] * m[..., 2, 0] - m[..., 1, 0] * m[..., 2, 2]
    adj[..., 1, 1] = m[..., 0, 0] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 0]
    adj[..., 1, 2] = m[..., 0, 2] * m[..., 1, 0] - m[..., 0, 0] * m[..., 1, 2]
    adj[..., 2, 0] = m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]
    adj[..., 2, 1] = m[..., 0, 1] * m[..., 2, 0] - m[..., 0, 0] * m[..., 2, 1]
    adj[..., 2, 2] = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return adj


def _invert_mt(m: np.ndarray, t: np.ndarray, cond_threshold: float):
    """Guarded per-pixel affine inverse.

    Pixels pass the guard when |det| >= DET_FLOOR and the Frobenius-norm
    condition estimate ||M||_F * ||M^-1||_F stays at or below cond_threshold
    (the estimate brackets the singular-value ratio within a factor of 3).
    Failing pixels get identity coefficients and mask False.
    """
    det = _det3(m)
    ok_det = np.abs(det) >= DET_FLOOR
    safe_det = np.where(ok_det, det, 1.0)
    inv = _adjugate3(m) / safe_det[..., None, None]
    norm_m = np.sqrt(np.sum(m * m, axis=(-2, -1)))
    norm_inv = np.sqrt(np.sum(inv * inv, axis=(-2, -1)))
    mask = ok_det & (norm_m * norm_inv <= cond_threshold)
    eye = np.eye(3)
    inv = np.where(mask[..., None, None], inv, eye)
    t_inv = np.where(
        mask[..., None],
        -np.einsum("hwij,hwj->hwi", inv, t),
        0.0,
    )
    return inv, t_inv, mask


def invert_field(field: CoeffField, cond_threshold: float = 1e6) -> tuple[CoeffField, np.ndarray]:
    """Per-pixel inverse affine where well-conditioned; identity plus mask=False elsewhere."""
    inv, t_inv, mask = _invert_mt(field.m, field.t, cond_threshold)
    return CoeffField(_pack_mt(inv, t_inv)), mask


# ---------------------------------------------------------------------------
# Full enhancement pipeline
# ---------------------------------------------------------------------------

class EnhanceResult(NamedTuple):
    image: Image
    field: CoeffField


def _enhance_arrays(msg: MultiScaleGrid, img: Image):
    """float64 enhanced pixels plus the composite (m, t) arrays."""
    guid = grayscale(img)
    h, w = img.height, img.width
    fields = [
        level_field(grid, guid, factors, h, w)
        for grid, factors in zip(msg.levels, msg.guidance_factors)
    ]
    composite = compose_fields(fields)
    out = _apply_mt(composite.m, composite.t, img.data.astype(np.float64))
    return out, composite


def enhance(msg: MultiScaleGrid, img: Image) -> EnhanceResult:
    """Slice every level against the image's guidance, fuse, and apply."""
    out, composite = _enhance_arrays(msg, img)
    return EnhanceResult(Image(out.astype(np.float32)), composite)
