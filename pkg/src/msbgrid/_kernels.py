"""Fused per-pixel kernels for the fitting hot path.

Everything here is scalar-looped under numba so the per-pixel 3x3 affine
algebra, the guarded inversion, and the windowed SSIM statistics run in one
pass without large temporaries.  Loops use fixed iteration orders, so results
are deterministic across runs.  Coefficient vectors are the flattened 3x4
layout [m00, m01, m02, t0, m10, m11, m12, t1, m20, m21, m22, t2].
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def l1_and_sign(e, gt, scale):
    """Sum of |e - gt| plus scale * sign(e - gt), one pass."""
    h, w, ch = e.shape
    ge = np.empty_like(e)
    total = 0.0
    for i in range(h):
        for j in range(w):
            for c in range(ch):
                d = e[i, j, c] - gt[i, j, c]
                if d > 0.0:
                    total += d
                    ge[i, j, c] = scale
                elif d < 0.0:
                    total -= d
                    ge[i, j, c] = -scale
                else:
                    ge[i, j, c] = 0.0
    return total, ge


@njit(cache=True)
def compose_apply(fields, r):
    """Coarse-to-fine prefix compositions plus the enhanced image.

    fields: (L, H, W, 12) per-level transforms, coarsest first.
    Returns (prefixes (L, H, W, 12), enhanced (H, W, 3)).
    """
    nlev, h, w, _ = fields.shape
    prefixes = np.empty_like(fields)
    e = np.empty((h, w, 3))
    for i in range(h):
        for j in range(w):
            p = prefixes[0, i, j]
            f0 = fields[0, i, j]
            for k in range(12):
                p[k] = f0[k]
            for l in range(1, nlev):
                a = fields[l, i, j]
                q = prefixes[l - 1, i, j]
                out = prefixes[l, i, j]
                for row in range(3):
                    a0 = a[row * 4]
                    a1 = a[row * 4 + 1]
                    a2 = a[row * 4 + 2]
                    out[row * 4 + 0] = a0 * q[0] + a1 * q[4] + a2 * q[8]
                    out[row * 4 + 1] = a0 * q[1] + a1 * q[5] + a2 * q[9]
                    out[row * 4 + 2] = a0 * q[2] + a1 * q[6] + a2 * q[10]
                    out[row * 4 + 3] = a0 * q[3] + a1 * q[7] + a2 * q[11] + a[row * 4 + 3]
            pl = prefixes[nlev - 1, i, j]
            r0 = r[i, j, 0]
            r1 = r[i, j, 1]
            r2 = r[i, j, 2]
            for row in range(3):
                e[i, j, row] = (
                    pl[row * 4] * r0 + pl[row * 4 + 1] * r1 + pl[row * 4 + 2] * r2 + pl[row * 4 + 3]
                )
    return prefixes, e


@njit(cache=True)
def circle_forward(composite, r, gt, cond_threshold, det_floor):
    """Guarded inversion and pullback residual in one pass.

    Returns (sum of squared residuals over passing pixels, passing count,
    inverse blocks (H, W, 9), pullback (H, W, 3), residual (H, W, 3), mask).
    """
    h, w = composite.shape[:2]
    inv = np.zeros((h, w, 9))
    pulled = np.zeros((h, w, 3))
    resid = np.zeros((h, w, 3))
    mask = np.empty((h, w), np.bool_)
    total = 0.0
    count = 0
    for i in range(h):
        for j in range(w):
            c = composite[i, j]
            m00, m01, m02, t0 = c[0], c[1], c[2], c[3]
            m10, m11, m12, t1 = c[4], c[5], c[6], c[7]
            m20, m21, m22, t2 = c[8], c[9], c[10], c[11]
            det = (
                m00 * (m11 * m22 - m12 * m21)
                - m01 * (m10 * m22 - m12 * m20)
                + m02 * (m10 * m21 - m11 * m20)
            )
            ok = abs(det) >= det_floor
            if ok:
                b = inv[i, j]
                b[0] = (m11 * m22 - m12 * m21) / det
                b[1] = (m02 * m21 - m01 * m22) / det
                b[2] = (m01 * m12 - m02 * m11) / det
                b[3] = (m12 * m20 - m10 * m22) / det
                b[4] = (m00 * m22 - m02 * m20) / det
                b[5] = (m02 * m10 - m00 * m12) / det
                b[6] = (m10 * m21 - m11 * m20) / det
                b[7] = (m01 * m20 - m00 * m21) / det
                b[8] = (m00 * m11 - m01 * m10) / det
                nm = (
                    m00 * m00 + m01 * m01 + m02 * m02
                    + m10 * m10 + m11 * m11 + m12 * m12
                    + m20 * m20 + m21 * m21 + m22 * m22
                )
                nb = 0.0
                for k in range(9):
                    nb += b[k] * b[k]
                ok = np.sqrt(nm) * np.sqrt(nb) <= cond_threshold
            mask[i, j] = ok
            if ok:
                y0 = gt[i, j, 0] - t0
                y1 = gt[i, j, 1] - t1
                y2 = gt[i, j, 2] - t2
                b = inv[i, j]
                p0 = b[0] * y0 + b[1] * y1 + b[2] * y2
                p1 = b[3] * y0 + b[4] * y1 + b[5] * y2
                p2 = b[6] * y0 + b[7] * y1 + b[8] * y2
                pulled[i, j, 0] = p0
                pulled[i, j, 1] = p1
                pulled[i, j, 2] = p2
                v0 = r[i, j, 0] - p0
                v1 = r[i, j, 1] - p1
                v2 = r[i, j, 2] - p2
                resid[i, j, 0] = v0
                resid[i, j, 1] = v1
                resid[i, j, 2] = v2
                total += v0 * v0 + v1 * v1 + v2 * v2
                count += 1
    return total, count, inv, pulled, resid, mask


@njit(cache=True)
def circle_backward(inv, pulled, resid, mask, scale, gm, gtv):
    """Add the circle term's composite-field gradient into gm (3x3) and gtv."""
    h, w = mask.shape
    for i in range(h):
        for j in range(w):
            if mask[i, j]:
                b = inv[i, j]
                v0 = resid[i, j, 0]
                v1 = resid[i, j, 1]
                v2 = resid[i, j, 2]
                bt0 = scale * (b[0] * v0 + b[3] * v1 + b[6] * v2)
                bt1 = scale * (b[1] * v0 + b[4] * v1 + b[7] * v2)
                bt2 = scale * (b[2] * v0 + b[5] * v1 + b[8] * v2)
                gtv[i, j, 0] += bt0
                gtv[i, j, 1] += bt1
                gtv[i, j, 2] += bt2
                p = pulled[i, j]
                gm[i, j, 0, 0] += bt0 * p[0]
                gm[i, j, 0, 1] += bt0 * p[1]
                gm[i, j, 0, 2] += bt0 * p[2]
                gm[i, j, 1, 0] += bt1 * p[0]
                gm[i, j, 1, 1] += bt1 * p[1]
                gm[i, j, 1, 2] += bt1 * p[2]
                gm[i, j, 2, 0] += bt2 * p[0]
                gm[i, j, 2, 1] += bt2 * p[1]
                gm[i, j, 2, 2] += bt2 * p[2]


@njit(cache=True)
def backward_chain(fields, prefixes, gm, gtv):
    """Distribute composite-field gradients to every level's field.

    gm (H, W, 3, 3) and gtv (H, W, 3) hold the gradient with respect to the
    final composite; returns level gradients as (L, H, W, 12).
    """
    nlev, h, w, _ = fields.shape
    out = np.empty_like(fields)
    for i in range(h):
        for j in range(w):
            g00, g01, g02 = gm[i, j, 0, 0], gm[i, j, 0, 1], gm[i, j, 0, 2]
            g10, g11, g12 = gm[i, j, 1, 0], gm[i, j, 1, 1], gm[i, j, 1, 2]
            g20, g21, g22 = gm[i, j, 2, 0], gm[i, j, 2, 1], gm[i, j, 2, 2]
            v0, v1, v2 = gtv[i, j, 0], gtv[i, j, 1], gtv[i, j, 2]
            for l in range(nlev - 1, 0, -1):
                q = prefixes[l - 1, i, j]
                a = fields[l, i, j]
                o = out[l, i, j]
                # dL/dA.M = gm @ Q.M^T + gtv x Q.T ; dL/dA.T = gtv
                o[0] = g00 * q[0] + g01 * q[1] + g02 * q[2] + v0 * q[3]
                o[1] = g00 * q[4] + g01 * q[5] + g02 * q[6] + v0 * q[7]
                o[2] = g00 * q[8] + g01 * q[9] + g02 * q[10] + v0 * q[11]
                o[3] = v0
                o[4] = g10 * q[0] + g11 * q[1] + g12 * q[2] + v1 * q[3]
                o[5] = g10 * q[4] + g11 * q[5] + g12 * q[6] + v1 * q[7]
                o[6] = g10 * q[8] + g11 * q[9] + g12 * q[10] + v1 * q[11]
                o[7] = v1
                o[8] = g20 * q[0] + g21 * q[1] + g22 * q[2] + v2 * q[3]
                o[9] = g20 * q[4] + g21 * q[5] + g22 * q[6] + v2 * q[7]
                o[10] = g20 * q[8] + g21 * q[9] + g22 * q[10] + v2 * q[11]
                o[11] = v2
                # gm <- A.M^T @ gm ; gtv <- A.M^T @ gtv
                a00, a01, a02 = a[0], a[1], a[2]
                a10, a11, a12 = a[4], a[5], a[6]
                a20, a21, a22 = a[8], a[9], a[10]
                n00 = a00 * g00 + a10 * g10 + a20 * g20
                n01 = a00 * g01 + a10 * g11 + a20 * g21
                n02 = a00 * g02 + a10 * g12 + a20 * g22
                n10 = a01 * g00 + a11 * g10 + a21 * g20
                n11 = a01 * g01 + a11 * g11 + a21 * g21
                n12 = a01 * g02 + a11 * g12 + a21 * g22
                n20 = a02 * g00 + a12 * g10 + a22 * g20
                n21 = a02 * g01 + a12 * g11 + a22 * g21
                n22 = a02 * g02 + a12 * g12 + a22 * g22
                g00, g01, g02 = n00, n01, n02
                g10, g11, g12 = n10, n11, n12
                g20, g21, g22 = n20, n21, n22
                w0 = a00 * v0 + a10 * v1 + a20 * v2
                w1 = a01 * v0 + a11 * v1 + a21 * v2
                w2 = a02 * v0 + a12 * v1 + a22 * v2
                v0, v1, v2 = w0, w1, w2
            o = out[0, i, j]
            o[0], o[1], o[2], o[3] = g00, g01, g02, v0
            o[4], o[5], o[6], o[7] = g10, g11, g12, v1
            o[8], o[9], o[10], o[11] = g20, g21, g22, v2
    return out


@njit(cache=True)
def tv_level_ssd(coeffs):
    """Sum over the three grid axes of squared forward differences."""
    h, w, d, ch = coeffs.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(d):
                c = coeffs[i, j, k]
                if i + 1 < h:
                    nxt = coeffs[i + 1, j, k]
                    for q in range(ch):
                        dv = nxt[q] - c[q]
                        total += dv * dv
                if j + 1 < w:
                    nxt = coeffs[i, j + 1, k]
                    for q in range(ch):
                        dv = nxt[q] - c[q]
                        total += dv * dv
                if k + 1 < d:
                    nxt = coeffs[i, j, k + 1]
                    for q in range(ch):
                        dv = nxt[q] - c[q]
                        total += dv * dv
    return total


@njit(cache=True)
def tv_level_grad_add(coeffs, scale, out):
    """Accumulate d(scale * ssd)/d(coeffs) into out."""
    h, w, d, ch = coeffs.shape
    two = 2.0 * scale
    for i in range(h):
        for j in range(w):
            for k in range(d):
                c = coeffs[i, j, k]
                o = out[i, j, k]
                if i + 1 < h:
                    nxt = coeffs[i + 1, j, k]
                    on = out[i + 1, j, k]
                    for q in range(ch):
                        dv = two * (nxt[q] - c[q])
                        on[q] += dv
                        o[q] -= dv
                if j + 1 < w:
                    nxt = coeffs[i, j + 1, k]
                    on = out[i, j + 1, k]
                    for q in range(ch):
                        dv = two * (nxt[q] - c[q])
                        on[q] += dv
                        o[q] -= dv
                if k + 1 < d:
                    nxt = coeffs[i, j, k + 1]
                    on = out[i, j, k + 1]
                    for q in range(ch):
                        dv = two * (nxt[q] - c[q])
                        on[q] += dv
                        o[q] -= dv


@njit(cache=True)
def ssim_forward(x, y, g, muy, syy, c1, c2):
    """Windowed SSIM statistics in two separable passes.

    Returns (sum of the ssim map, mux, n1, d1, n2, d2) with map-shaped
    statistics kept for the backward pass.
    """
    h, w, ch = x.shape
    k = g.size
    hv = h - k + 1
    wv = w - k + 1
    rows = np.zeros((hv, w, ch, 3))  # windowed x, x^2, x*y partial sums
    for i in range(hv):
        for kk in range(k):
            gk = g[kk]
            for j in range(w):
                for c in range(ch):
                    xv = x[i + kk, j, c]
                    yv = y[i + kk, j, c]
                    rows[i, j, c, 0] += gk * xv
                    rows[i, j, c, 1] += gk * xv * xv
                    rows[i, j, c, 2] += gk * xv * yv
    mux = np.empty((hv, wv, ch))
    n1 = np.empty((hv, wv, ch))
    d1 = np.empty((hv, wv, ch))
    n2 = np.empty((hv, wv, ch))
    d2 = np.empty((hv, wv, ch))
    total = 0.0
    for i in range(hv):
        for j in range(wv):
            for c in range(ch):
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                for kk in range(k):
                    gk = g[kk]
                    s0 += gk * rows[i, j + kk, c, 0]
                    s1 += gk * rows[i, j + kk, c, 1]
                    s2 += gk * rows[i, j + kk, c, 2]
                mu = s0
                sxx = s1 - mu * mu
                sxy = s2 - mu * muy[i, j, c]
                a1 = 2.0 * mu * muy[i, j, c] + c1
                b1 = mu * mu + muy[i, j, c] * muy[i, j, c] + c1
                a2 = 2.0 * sxy + c2
                b2 = sxx + syy[i, j, c] + c2
                mux[i, j, c] = mu
                n1[i, j, c] = a1
                d1[i, j, c] = b1
                n2[i, j, c] = a2
                d2[i, j, c] = b2
                total += (a1 * a2) / (b1 * b2)
    return total, mux, n1, d1, n2, d2


@njit(cache=True)
def ssim_backward(x, y, g, muy, mux, n1, d1, n2, d2, coef):
    """Gradient of coef * mean(ssim map) with respect to x, fused adjoint."""
    h, w, ch = x.shape
    k = g.size
    hv, wv = mux.shape[:2]
    u = coef / (hv * wv * ch)
    # per-position weights for the three adjoint fields
    f1 = np.empty((hv, wv, ch))
    f2 = np.empty((hv, wv, ch))
    f3 = np.empty((hv, wv, ch))
    for i in range(hv):
        for j in range(wv):
            for c in range(ch):
                inv = 1.0 / (d1[i, j, c] * d2[i, j, c])
                da = 2.0 * n2[i, j, c] * (muy[i, j, c] * d1[i, j, c] - mux[i, j, c] * n1[i, j, c]) * inv / d1[i, j, c]
                db = -(n1[i, j, c] * n2[i, j, c]) * inv / d2[i, j, c]
                dc = 2.0 * n1[i, j, c] * inv
                f1[i, j, c] = u * (da - 2.0 * db * mux[i, j, c] - dc * muy[i, j, c])
                f2[i, j, c] = u * db
                f3[i, j, c] = u * dc
    rows = np.zeros((hv, w, ch, 3))
    for i in range(hv):
        for kk in range(k):
            gk = g[kk]
            for j in range(wv):
                for c in range(ch):
                    rows[i, j + kk, c, 0] += gk * f1[i, j, c]
                    rows[i, j + kk, c, 1] += gk * f2[i, j, c]
                    rows[i, j + kk, c, 2] += gk * f3[i, j, c]
    out = np.zeros((h, w, ch))
    for i in range(hv):
        for kk in range(k):
            gk = g[kk]
            for j in range(w):
                for c in range(ch):
                    out[i + kk, j, c] += gk * (
                        rows[i, j, c, 0]
                        + 2.0 * x[i + kk, j, c] * rows[i, j, c, 1]
                        + y[i + kk, j, c] * rows[i, j, c, 2]
                    )
    return out