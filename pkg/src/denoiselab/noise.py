"""Poisson-Gaussian corruption, frame averaging, and fidelity metrics.

The corruption model per pixel of a normalized clean value v is

    noisy = Poisson(v * peak) / peak + N(0, sigma^2)

where `peak` is the expected photon count at full scale (v = 1). Output is
deliberately left unclamped so the noise stays zero-mean, which the
noisy-target training scheme relies on.
"""

import math
from dataclasses import dataclass

import numpy as np

from .rng import derive_seed, make_rng

# Above this expectation the Poisson draw switches from Knuth's
# uniform-product method to the rounded-normal approximation.
POISSON_NORMAL_THRESHOLD = 30.0

INFINITE_PSNR = math.inf


@dataclass(frozen=True)
class NoiseParams:
    peak: float
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.peak > 0) or not math.isfinite(self.peak):
            raise ValueError("peak must be positive and finite, got %r" % (self.peak,))
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be non-negative and finite, got %r" % (self.sigma,))


def sample_poisson(lam, rng):
    """One Poisson draw: Knuth's method below the threshold, rounded normal above."""
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0:
        raise ValueError("poisson rate must be finite and non-negative, got %r" % lam)
    if lam >= POISSON_NORMAL_THRESHOLD:
        return int(round(max(0.0, rng.normal(lam, math.sqrt(lam)))))
    limit = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        k += 1
        p *= rng.random()
        if p <= limit:
            return k - 1


def _sample_poisson_field(lam, rng):
    """Vectorized draw over an array of rates; same per-pixel algorithm as
    sample_poisson. Large-rate pixels are drawn first (one normal each), then
    the small-rate pixels run the Knuth loop together."""
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise ValueError("poisson rates must be finite and non-negative")
    flat = lam.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)

    big = flat >= POISSON_NORMAL_THRESHOLD
    if np.any(big):
        mu = flat[big]
        draws = rng.normal(mu, np.sqrt(mu))
        out[big] = np.round(np.maximum(0.0, draws))

    small_idx = np.flatnonzero(~big)
    if small_idx.size:
        limit = np.exp(-flat[small_idx])
        p = np.ones(small_idx.size, dtype=np.float64)
        k = np.zeros(small_idx.size, dtype=np.int64)
        active = np.arange(small_idx.size)
        while active.size:
            u = rng.random(active.size)
            p[active] *= u
            k[active] += 1
            still = p[active] > limit[active]
            active = active[still]
        out[small_idx] = k - 1

    return out.reshape(lam.shape)


def corrupt(img, params):
    """Apply Poisson-Gaussian noise; deterministic for a given (image, params).

    Each slice uses its own sub-stream keyed by (seed, slice index), so
    stacks can be corrupted slice-parallel without changing the result.
    """
    out = np.empty_like(img.data, dtype=np.float32)
    for s in range(img.slices):
        rng = make_rng(derive_seed(params.seed, s))
        lam = img.data[s].astype(np.float64) * params.peak
        counts = _sample_poisson_field(lam, rng)
        noisy = counts / params.peak
        if params.sigma > 0:
            noisy = noisy + params.sigma * rng.standard_normal(noisy.shape)
        out[s] = noisy.astype(np.float32)
    return img.with_data(out)


def average_stack(imgs, n=None):
    """Pixel-wise mean of the first n images (float64 accumulation)."""
    if not imgs:
        raise ValueError("cannot average an empty list of images")
    if n is None:
        n = len(imgs)
    if not 1 <= n <= len(imgs):
        raise ValueError("n=%d out of range for %d images" % (n, len(imgs)))
    first = imgs[0]
    acc = np.zeros(first.data.shape, dtype=np.float64)
    for im in imgs[:n]:
        if im.data.shape != first.data.shape:
            raise ValueError("shape mismatch in average: %s vs %s"
                             % (im.data.shape, first.data.shape))
        acc += im.data
    return first.with_data((acc / n).astype(np.float32))


def mse(a, b):
    """Mean squared error over all samples (normalized units squared)."""
    if a.data.shape != b.data.shape:
        raise ValueError("shape mismatch: %s vs %s" % (a.data.shape, b.data.shape))
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(reference, test):
    """PSNR in dB with MAX = 1.0 (normalized scale); inf when images match."""
    err = mse(reference, test)
    if err == 0.0:
        return INFINITE_PSNR
    return 10.0 * math.log10(1.0 / err)


def format_psnr(value):
    """4-decimal string, or "inf" for the zero-error case."""
    if math.isinf(value):
        return "inf"
    return "%.4f" % value
