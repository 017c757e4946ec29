"""Classical denoising baselines: ROF total variation and non-local means.

TV minimizes  TV(u) + (lambda/2) * ||u - f||^2  per channel with Chambolle's
dual projection (forward-difference gradient, backward-difference divergence,
replicate boundary). NLM averages pixels weighted by patch similarity with
the plain Buades weight exp(-d2/h^2), all channels sharing one weight.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TvParams:
    lam: float
    max_iters: int = 200
    tol: float = 1e-4
    tau: float = 0.25

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("fidelity weight must be positive, got %r" % (self.lam,))
        if not 0 < self.tau <= 0.25:
            raise ValueError("dual step must satisfy 0 < tau <= 0.25, got %r" % (self.tau,))
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass(frozen=True)
class NlmParams:
    h: float
    patch_radius: int = 1
    search_radius: int = 5

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("filtering strength h must be positive, got %r" % (self.h,))
        if self.patch_radius < 0 or self.search_radius < 0:
            raise ValueError("radii must be non-negative")


def _fwd_grad(u):
    """Forward differences with replicate boundary (zero at the far edge)."""
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return gx, gy


def _div(px, py):
    """Negative adjoint of _fwd_grad (backward differences)."""
    d = np.zeros_like(px)
    d[:, 0] += px[:, 0]
    d[:, 1:] += px[:, 1:] - px[:, :-1]
    d[0, :] += py[0, :]
    d[1:, :] += py[1:, :] - py[:-1, :]
    return d


def _tv_channel(f, p, energies=None):
    theta = 1.0 / p.lam
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    for _ in range(p.max_iters):
        g = _div(px, py) - f * p.lam
        gx, gy = _fwd_grad(g)
        denom = 1.0 + p.tau * np.sqrt(gx * gx + gy * gy)
        px_new = (px + p.tau * gx) / denom
        py_new = (py + p.tau * gy) / denom
        change = max(np.max(np.abs(px_new - px)), np.max(np.abs(py_new - py)))
        px, py = px_new, py_new
        if __debug__:
            assert np.all(px * px + py * py <= 1.0 + 1e-12), "dual iterate left the unit ball"
        if energies is not None:
            u = f - theta * _div(px, py)
            energies.append(_tv_energy_channel(u, f, p.lam))
        if change < p.tol:
            break
    return f - theta * _div(px, py)


def tv_denoise(img, p, energy_trace=None):
    """ROF denoising; slices and channels are processed independently.

    `energy_trace`, when a list, receives the per-iteration energy of the
    first processed channel (test hook for the descent invariant).
    """
    out = np.empty_like(img.data)
    first = True
    for s in range(img.slices):
        for c in range(img.channels):
            energies = energy_trace if (first and energy_trace is not None) else None
            out[s, c] = _tv_channel(img.data[s, c].astype(np.float64), p,
                                    energies).astype(np.float32)
            first = False
    return img.with_data(out)


def _tv_energy_channel(u, f, lam):
    gx, gy = _fwd_grad(u)
    tv = np.sum(np.sqrt(gx * gx + gy * gy))
    fid = 0.5 * lam * np.sum((u - f) ** 2)
    return float(tv + fid)


def tv_energy(u, f, lam):
    """Discrete ROF energy, summed over all slices and channels."""
    if u.data.shape != f.data.shape:
        raise ValueError("shape mismatch: %s vs %s" % (u.data.shape, f.data.shape))
    total = 0.0
    for s in range(u.slices):
        for c in range(u.channels):
            total += _tv_energy_channel(u.data[s, c].astype(np.float64),
                                        f.data[s, c].astype(np.float64), lam)
    return total


def _nlm_slice(x, p):
    """NLM on one slice (C, H, W) in float64.

    Accumulates neighbor contributions in search-window scan order with the
    patch distance summed in (channel, row, col) order, so the result is
    bit-identical to a scalar quadruple-loop evaluation of the same formula.
    """
    channels, height, width = x.shape
    r, sr = p.patch_radius, p.search_radius
    pad = r + sr
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    norm = float(channels * (2 * r + 1) ** 2)
    h2 = p.h * p.h

    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    num = np.zeros((channels, height, width), dtype=np.float64)
    den = np.zeros((height, width), dtype=np.float64)

    def view(dy, dx, u, v):
        return padded[:, pad + dy + u: pad + dy + u + height,
                      pad + dx + v: pad + dx + v + width]

    for dy in range(-sr, sr + 1):
        for dx in range(-sr, sr + 1):
            mask = ((rows + dy >= 0) & (rows + dy < height)
                    & (cols + dx >= 0) & (cols + dx < width))
            d2 = np.zeros((height, width), dtype=np.float64)
            for c in range(channels):
                for u in range(-r, r + 1):
                    for v in range(-r, r + 1):
                        diff = view(0, 0, u, v)[c] - view(dy, dx, u, v)[c]
                        d2 += diff * diff
            d2 /= norm
            w = np.exp(-d2 / h2)
            neighbor = view(dy, dx, 0, 0)
            wm = np.where(mask, w, 0.0)
            den += wm
            for c in range(channels):
                num[c] += wm * neighbor[c]
    return num / den


def nlm_denoise(img, p):
    """Non-local means; color channels share one patch-similarity weight."""
    out = np.empty_like(img.data)
    for s in range(img.slices):
        out[s] = _nlm_slice(img.data[s].astype(np.float64), p).astype(np.float32)
    return img.with_data(out)
