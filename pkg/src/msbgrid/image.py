"""Image containers, luminance guidance, quality metrics, and PPM IO.

Images are float32 (H, W, 3) rasters nominally in [0, 1].  Values may leave
that range after affine color transforms; clamping happens only when rasters
are written to disk.  Metric internals accumulate in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Rec.601 luma weights, the conventional grayscale default.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Wang et al. SSIM constants for unit peak.
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class Image:
    """float32 (H, W, 3) color raster."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError("image data must have shape (H, W, 3)")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("image must contain at least one pixel")
        if not np.isfinite(self.data).all():
            raise ValueError("image data must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class GuidanceMap:
    """float32 (H, W) luminance raster, every value in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("guidance data must have shape (H, W)")
        if not np.isfinite(self.data).all():
            raise ValueError("guidance data must be finite")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("guidance values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def grayscale(img: Image, weights: tuple[float, float, float] = LUMA_WEIGHTS) -> GuidanceMap:
    """Per-pixel luminance `w . rgb`, clamped to [0, 1]."""
    w = np.asarray(weights, dtype=np.float64)
    y = img.data.astype(np.float64) @ w
    return GuidanceMap(np.clip(y, 0.0, 1.0).astype(np.float32))


def _area_reduce(arr: np.ndarray, fh: int, fw: int) -> np.ndarray:
    """Block mean over fh x fw tiles; partial edge tiles average what they cover."""
    h, w = arr.shape[:2]
    rows = np.arange(0, h, fh)
    cols = np.arange(0, w, fw)
    acc = np.add.reduceat(np.add.reduceat(arr, rows, axis=0), cols, axis=1)
    nr = np.minimum(rows + fh, h) - rows
    nc = np.minimum(cols + fw, w) - cols
    counts = (nr[:, None] * nc[None, :]).astype(np.float64)
    if arr.ndim == 3:
        counts = counts[..., None]
    return acc / counts


def downsample_area(g: GuidanceMap, factor_h: int, factor_w: int) -> GuidanceMap:
    """Area-average downsampling to ceil(H/fh) x ceil(W/fw)."""
    if factor_h < 1 or factor_w < 1:
        raise ValueError("downsample factors must be >= 1")
    out = _area_reduce(g.data.astype(np.float64), int(factor_h), int(factor_w))
    return GuidanceMap(np.clip(out, 0.0, 1.0).astype(np.float32))


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB with peak 1.0; math.inf when the images are identical."""
    if a.data.shape != b.data.shape:
        raise ValueError("psnr requires images of equal dimensions")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def l1_error(a: Image, b: Image) -> float:
    """Mean absolute difference over all pixels and channels."""
    if a.data.shape != b.data.shape:
        raise ValueError("l1_error requires images of equal dimensions")
    return float(np.mean(np.abs(a.data.astype(np.float64) - b.data.astype(np.float64))))


# ---------------------------------------------------------------------------
# SSIM: separable Gaussian window over 'valid' positions, per channel.
# ---------------------------------------------------------------------------

def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    if window < 1 or window % 2 == 0:
        raise ValueError("ssim window must be a positive odd size")
    x = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _corr_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation with a symmetric 1-D kernel; x is
    # (H, W) or (H, W, C) with channels filtered independently
    k = g.size
    hv = x.shape[0] - k + 1
    wv = x.shape[1] - k + 1
    rows = np.zeros((hv,) + x.shape[1:])
    for i in range(k):
        rows += g[i] * x[i:i + hv]
    out = np.zeros((hv, wv) + x.shape[2:])
    for j in range(k):
        out += g[j] * rows[:, j:j + wv]
    return out


def _corr_valid_adjoint(z: np.ndarray, g: np.ndarray, out_shape: tuple) -> np.ndarray:
    # exact transpose of _corr_valid
    k = g.size
    hv, wv = z.shape[:2]
    rows = np.zeros((hv,) + out_shape[1:])
    for j in range(k):
        rows[:, j:j + wv] += g[j] * z
    out = np.zeros(out_shape)
    for i in range(k):
        out[i:i + hv] += g[i] * rows
    return out


def _ssim_y_stats(y: np.ndarray, g: np.ndarray):
    muy = _corr_valid(y, g)
    syy = _corr_valid(y * y, g) - muy * muy
    return muy, syy


def _ssim_forward(x, y, g, y_stats=None):
    """SSIM map plus the statistics needed by the backward pass."""
    mux = _corr_valid(x, g)
    sxx = _corr_valid(x * x, g) - mux * mux
    muy, syy = _ssim_y_stats(y, g) if y_stats is None else y_stats
    sxy = _corr_valid(x * y, g) - mux * muy
    n1 = 2.0 * mux * muy + SSIM_C1
    d1 = mux * mux + muy * muy + SSIM_C1
    n2 = 2.0 * sxy + SSIM_C2
    d2 = sxx + syy + SSIM_C2
    s = (n1 * n2) / (d1 * d2)
    return s, (mux, muy, n1, d1, n2, d2)


def _ssim_backward(x, y, g, cache, coef):
    """Gradient of coef * mean(ssim map) with respect to x."""
    mux, muy, n1, d1, n2, d2 = cache
    u = coef / n1.size
    inv = 1.0 / (d1 * d2)
    da = 2.0 * n2 * (muy * d1 - mux * n1) * inv / d1   # d s / d mu_x
    db = -(n1 * n2) * inv / d2                         # d s / d sigma_x^2
    dc = 2.0 * n1 * inv                                # d s / d sigma_xy
    shape = x.shape
    out = _corr_valid_adjoint(u * (da - 2.0 * db * mux - dc * muy), g, shape)
    out += 2.0 * x * _corr_valid_adjoint(u * db, g, shape)
    out += y * _corr_valid_adjoint(u * dc, g, shape)
    return out


def ssim(a: Image, b: Image, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over a Gaussian window, computed per channel and averaged."""
    if a.data.shape != b.data.shape:
        raise ValueError("ssim requires images of equal dimensions")
    if a.height < window or a.width < window:
        raise ValueError(f"image smaller than the {window}x{window} ssim window")
    g = _gaussian_kernel(window, sigma)
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    smap, _ = _ssim_forward(x, y, g)
    return float(np.mean(smap))


# ---------------------------------------------------------------------------
# PPM P6 IO (binary, maxval 255)
# ---------------------------------------------------------------------------

class PpmError(ValueError):
    """Malformed PPM input; the message carries the failing byte offset."""


def _ppm_token(blob: bytes, pos: int) -> tuple[bytes, int, int]:
    n = len(blob)
    while pos < n:
        c = blob[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise PpmError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not blob[pos:pos + 1].isspace():
        pos += 1
    return blob[start:pos], start, pos


def _ppm_int(blob: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, start, pos = _ppm_token(blob, pos)
    if not tok.isdigit():
        raise PpmError(f"invalid {what} {tok!r} at byte {start}")
    return int(tok), pos


def read_ppm(path) -> Image:
    """Read a binary P6 PPM with maxval 255; byte v maps to v/255."""
    blob = Path(path).read_bytes()
    magic, start, pos = _ppm_token(blob, 0)
    if magic != b"P6":
        raise PpmError(f"bad magic {magic!r} at byte {start}; expected P6")
    width, pos = _ppm_int(blob, pos, "width")
    height, pos = _ppm_int(blob, pos, "height")
    maxval, pos = _ppm_int(blob, pos, "maxval")
    if width < 1 or height < 1:
        raise PpmError(f"non-positive dimensions {width}x{height} at byte {pos}")
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval} at byte {pos}; only 255 is handled")
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise PpmError(f"missing whitespace after maxval at byte {pos}")
    pos += 1
    need = width * height * 3
    payload = blob[pos:pos + need]
    if len(payload) < need:
        raise PpmError(
            f"truncated payload at byte {len(blob)}: expected {need} bytes from offset {pos}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(arr.astype(np.float32) / np.float32(255.0))


def write_ppm(img: Image, path) -> None:
    """Write a binary P6 PPM; values are clamped to [0, 1] and rounded half-up."""
    q = np.floor(img.data.astype(np.float64) * 255.0 + 0.5)
    q = np.clip(q, 0.0, 255.0).astype(np.uint8)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())
