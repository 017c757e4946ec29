"""Independent oracles shared by the unit and acceptance tests.

These deliberately use naive loop formulations so they stay independent of
the vectorized implementations they check.
"""

import numpy as np


def nlm_oracle(x, p):
    """Quadruple-loop non-local means on one (C, H, W) slice in float64.

    Scans the search window in row-major order, sums the patch distance in
    (channel, row, col) order, and accumulates weights in scan order -- the
    same arithmetic sequence the fast path promises, evaluated per pixel.
    """
    channels, height, width = x.shape
    r, sr = p.patch_radius, p.search_radius
    padded = np.pad(x, ((0, 0), (r, r), (r, r)), mode="edge")
    norm = float(channels * (2 * r + 1) ** 2)
    h2 = p.h * p.h
    out = np.empty_like(x)
    for i in range(height):
        for j in range(width):
            den = 0.0
            num = [0.0] * channels
            for dy in range(-sr, sr + 1):
                ni = i + dy
                if not 0 <= ni < height:
                    continue
                for dx in range(-sr, sr + 1):
                    nj = j + dx
                    if not 0 <= nj < width:
                        continue
                    d2 = 0.0
                    for c in range(channels):
                        for u in range(2 * r + 1):
                            for v in range(2 * r + 1):
                                diff = padded[c, i + u, j + v] - padded[c, ni + u, nj + v]
                                d2 += diff * diff
                    d2 /= norm
                    w = float(np.exp(-d2 / h2))
                    den += w
                    for c in range(channels):
                        num[c] += w * x[c, ni, nj]
            for c in range(channels):
                out[c, i, j] = num[c] / den
    return out


def conv2d_oracle(x, kernel, bias):
    """Six-nested-loop 3x3 convolution with zero padding 1 on (C, H, W)."""
    c_in, height, width = x.shape
    c_out = kernel.shape[0]
    out = np.zeros((c_out, height, width), dtype=np.float64)
    for o in range(c_out):
        for i in range(height):
            for j in range(width):
                acc = float(bias[o])
                for c in range(c_in):
                    for u in range(3):
                        for v in range(3):
                            ii, jj = i + u - 1, j + v - 1
                            if 0 <= ii < height and 0 <= jj < width:
                                acc += float(kernel[o, c, u, v]) * float(x[c, ii, jj])
                out[o, i, j] = acc
    return out


def maxpool2_oracle(x):
    """Loop 2x2 max pool on (C, H, W); ties go to the first position scanned."""
    c, h, w = x.shape
    out = np.empty((c, h // 2, w // 2), dtype=x.dtype)
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = max(x[ch, 2 * i, 2 * j], x[ch, 2 * i, 2 * j + 1],
                                    x[ch, 2 * i + 1, 2 * j], x[ch, 2 * i + 1, 2 * j + 1])
    return out


def finite_difference_grads(loss_fn, arrays, eps=1e-3):
    """Central finite differences of a scalar loss wrt a list of float64 arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn()
            flat[i] = old - eps
            lm = loss_fn()
            flat[i] = old
            gf[i] = (lp - lm) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
