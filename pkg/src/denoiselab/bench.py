"""Benchmark harness: corrupt synthetic samples, run every denoiser, score
PSNR against a 50-frame-average target, and emit a CSV report plus
side-by-side montages (full frame and a region of interest)."""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .classical import NlmParams, TvParams, nlm_denoise, tv_denoise
from .image import Image, Roi, crop, save_image
from .network import denoise_cnn
from .noise import NoiseParams, average_stack, corrupt, format_psnr, psnr
from .rng import derive_seed
from .training import PhantomSpec, make_phantoms

ALL_METHODS = ("noisy", "avg2", "avg4", "avg8", "avg16", "tv", "nlm", "cnn")

DEFAULT_TV = TvParams(lam=12.0, max_iters=200, tol=1e-4)
DEFAULT_NLM = NlmParams(h=0.08, patch_radius=1, search_radius=5)

TARGET_FRAMES = 50
LADDER_FRAMES = 16
GUTTER = 2


@dataclass
class BenchRow:
    sample: str
    method: str
    psnr_db: float
    time_ms: int


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("sample,method,psnr_db,time_ms\n")
            for r in self.rows:
                fh.write("%s,%s,%s,%d\n" % (r.sample, r.method,
                                            format_psnr(r.psnr_db), r.time_ms))


def time_call(op):
    """Wall time (monotonic clock) around exactly one call, in whole ms."""
    start = time.perf_counter_ns()
    result = op()
    elapsed = time.perf_counter_ns() - start
    return result, int(elapsed // 1_000_000)


def _strip(images):
    """Horizontal strip with 2-pixel white gutters between panels."""
    first = images[0]
    for im in images[1:]:
        if im.data.shape != first.data.shape:
            raise ValueError("montage panels differ in shape: %s vs %s"
                             % (im.data.shape, first.data.shape))
    s, c, h, w = first.data.shape
    total_w = len(images) * w + (len(images) - 1) * GUTTER
    out = np.ones((s, c, h, total_w), dtype=np.float32)
    x = 0
    for im in images:
        out[:, :, :, x:x + w] = np.clip(im.data, 0.0, 1.0)
        x += w + GUTTER
    return first.with_data(out)


def montage(noisy, denoised, target, roi, out_prefix):
    """Write [noisy | denoised | target] strips for the full frame and ROI."""
    ext = ".ppm" if noisy.channels == 3 else ".pgm"
    panels = [noisy, denoised, target]
    paths = []
    for tag, imgs in (("full", panels), ("roi", [crop(p, roi) for p in panels])):
        path = "%s_%s%s" % (out_prefix, tag, ext)
        save_image(_strip(imgs), path)
        paths.append(path)
    return paths


def default_roi(img, size=100):
    """Centered square ROI, clipped to the frame."""
    size = min(size, img.width, img.height)
    return Roi((img.width - size) // 2, (img.height - size) // 2, size, size)


def synthetic_corpus(seed, size=256, per_mode=2):
    """Default bench samples: gray and color phantoms at the given size."""
    samples = []
    gray = make_phantoms(PhantomSpec(count=per_mode, size=size, channels=1,
                                     seed=derive_seed(seed, "bench-gray")))
    color = make_phantoms(PhantomSpec(count=per_mode, size=size, channels=3,
                                      seed=derive_seed(seed, "bench-color")))
    for i, img in enumerate(gray):
        samples.append(img.with_name("gray%d" % i))
    for i, img in enumerate(color):
        samples.append(img.with_name("color%d" % i))
    return samples


def run_bench(samples, noise, methods=None, out_dir=None, models=None,
              tv_params=DEFAULT_TV, nlm_params=DEFAULT_NLM, roi=None):
    """Score every requested method on every sample.

    samples: list of clean Images (e.g. from synthetic_corpus or a directory).
    models: mapping channel-count -> UNetModel for the "cnn" method.
    Writes report.csv and per-sample montages into out_dir when given.
    """
    methods = list(methods) if methods else list(ALL_METHODS)
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValueError("unknown methods: %s" % ", ".join(unknown))
    models = models or {}
    if "cnn" in methods:
        missing = sorted({img.channels for img in samples} - set(models))
        if missing:
            raise ValueError("cnn requested but no weights for %s-channel samples"
                             % "/".join(map(str, missing)))

    report = BenchReport()
    for img in samples:
        sid = _sample_id(img)
        frames = [corrupt(img, NoiseParams(noise.peak, noise.sigma,
                                           derive_seed(noise.seed, sid, "frame", j)))
                  for j in range(LADDER_FRAMES)]
        target = average_stack(
            [corrupt(img, NoiseParams(noise.peak, noise.sigma,
                                      derive_seed(noise.seed, sid, "avg", j)))
             for j in range(TARGET_FRAMES)])
        noisy = frames[0]
        outputs = {}
        for method in methods:
            result, ms = _run_method(method, noisy, frames, models, tv_params, nlm_params)
            outputs[method] = result
            report.rows.append(BenchRow(img.name, method, psnr(target, result), ms))
        if out_dir is not None:
            r = roi or default_roi(img)
            for method in methods:
                if method in ("tv", "nlm", "cnn"):
                    montage(noisy, outputs[method], target, r,
                            os.path.join(out_dir, "%s_%s" % (img.name, method)))
    if out_dir is not None:
        report.write_csv(os.path.join(out_dir, "report.csv"))
    return report


def _sample_id(img):
    return derive_seed(img.name)


def _run_method(method, noisy, frames, models, tv_params, nlm_params):
    if method == "noisy":
        return noisy, 0
    if method.startswith("avg"):
        n = int(method[3:])
        return time_call(lambda: average_stack(frames, n))
    if method == "tv":
        return time_call(lambda: tv_denoise(noisy, tv_params))
    if method == "nlm":
        return time_call(lambda: nlm_denoise(noisy, nlm_params))
    if method == "cnn":
        return time_call(lambda: denoise_cnn(noisy, models[noisy.channels]))
    raise ValueError("unknown method %r" % method)
