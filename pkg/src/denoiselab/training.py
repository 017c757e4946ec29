"""Noisy-target training loop and the synthetic phantom corpus behind it.

Phantoms (disks, rectangles, lines over a smooth sinusoidal background) stand
in for real microscopy frames: the clean image is known, so every claim about
denoising quality can be scored exactly. Training pairs two independent
corruptions of the same clean patch; the supervised arm shares the identical
batch schedule and swaps only the target.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .image import Image, Roi, crop
from .network import adam_step, denoise_cnn, unet_backward_batch, unet_forward_batch
from .noise import NoiseParams, average_stack, corrupt, psnr
from .rng import derive_seed, make_rng

HOLDOUT_FRACTION = 0.2

DEFAULT_KINDS = ("disk", "rect", "line")


@dataclass(frozen=True)
class PhantomSpec:
    count: int
    size: int
    channels: int = 1
    kinds: tuple = DEFAULT_KINDS
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.size < 8:
            raise ValueError("size must be at least 8 pixels")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not self.kinds:
            raise ValueError("need at least one shape kind")


@dataclass(frozen=True)
class TrainConfig:
    noise: NoiseParams
    lr: float = 1e-3
    batch_size: int = 8
    patch_size: int = 64
    steps: int = 2000
    seed: int = 0
    eval_every: int = 250

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1 or self.patch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size, patch_size and eval_every must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)  # (step, train_loss, eval_psnr_db)
    input_digest: str = ""

    def add(self, step, train_loss, eval_psnr_db):
        if self.records and step <= self.records[-1][0]:
            raise ValueError("trace steps must be strictly increasing")
        if not (math.isfinite(train_loss) and math.isfinite(eval_psnr_db)):
            raise ValueError("trace values must be finite")
        self.records.append((step, train_loss, eval_psnr_db))

    def final_psnr(self):
        return self.records[-1][2]

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("step,train_loss,eval_psnr_db\n")
            for step, loss, p in self.records:
                fh.write("%d,%.6f,%.6f\n" % (step, loss, p))


# ---------------------------------------------------------------------------
# phantom generation

def _disk(yy, xx, rng, size):
    cy, cx = rng.uniform(0, size, 2)
    radius = rng.uniform(size / 16, size / 4)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _rect(yy, xx, rng, size):
    y0, x0 = rng.uniform(0, size * 0.8, 2)
    h = rng.uniform(size / 12, size / 3)
    w = rng.uniform(size / 12, size / 3)
    return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)


def _line(yy, xx, rng, size):
    p0 = rng.uniform(0, size, 2)
    p1 = rng.uniform(0, size, 2)
    thick = rng.uniform(1.0, 3.0)
    d = p1 - p0
    length2 = float(d @ d) + 1e-12
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / length2
    t = np.clip(t, 0.0, 1.0)
    dist2 = (yy - (p0[0] + t * d[0])) ** 2 + (xx - (p0[1] + t * d[1])) ** 2
    return dist2 <= thick ** 2

_SHAPES = {"disk": _disk, "rect": _rect, "line": _line}


def _texture_field(rng, size, corr):
    """Zero-mean, unit-variance random field with ~corr-pixel correlation."""
    white = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    filt = np.exp(-2.0 * (np.pi * corr) ** 2 * (fy ** 2 + fx ** 2))
    field = np.fft.irfft2(np.fft.rfft2(white) * filt, s=(size, size))
    return field / field.std()


def _puncta_field(yy, xx, rng, size, count):
    """Sum of small bright Gaussian blobs (fluorescent-granule look-alikes)."""
    field = np.zeros((size, size))
    for _ in range(count):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(1.0, 2.2)
        a = rng.uniform(0.12, 0.35)
        field += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * r * r))
    return field


# Texture/puncta intensity of the phantom corpus. Fine structure is what
# separates a learned denoiser from TV/NLM smoothing, so the corpus needs a
# realistic amount of it; these values keep all bench methods above the noisy
# baseline at default NoiseParams.
_TEXTURE_STD = (0.025, 0.045)
_TEXTURE_CORR = (2.0, 3.0)
_PUNCTA_PER_128 = (20, 40)


def _one_phantom(spec, index):
    rng = make_rng(derive_seed(spec.seed, "phantom", index))
    size = spec.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.empty((1, spec.channels, size, size), dtype=np.float64)

    # smooth background shared across channels (per-channel gain for color)
    base = rng.uniform(0.15, 0.35)
    amp = rng.uniform(0.03, 0.10)
    fy, fx = rng.uniform(0.5, 3.0, 2)
    phase = rng.uniform(0, 2 * np.pi, 2)
    background = base + amp * np.sin(2 * np.pi * fy * yy / size + phase[0]) \
                      * np.sin(2 * np.pi * fx * xx / size + phase[1])
    gain = np.concatenate([[1.0], rng.uniform(0.70, 1.0, spec.channels - 1)])
    for c in range(spec.channels):
        img[0, c] = background * gain[c]

    n_shapes = int(rng.integers(3, 9))
    for _ in range(n_shapes):
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        mask = _SHAPES[kind](yy, xx, rng, size)
        level = rng.uniform(0.35, 0.9)
        tint = np.concatenate([[1.0], rng.uniform(0.9, 1.0, spec.channels - 1)])
        for c in range(spec.channels):
            img[0, c][mask] = level * tint[c]

    # fine-scale structure shared across channels
    sigma_t = rng.uniform(*_TEXTURE_STD)
    corr = rng.uniform(*_TEXTURE_CORR)
    texture = sigma_t * _texture_field(rng, size, corr)
    count = int(rng.integers(*_PUNCTA_PER_128) * (size / 128.0) ** 2)
    puncta = _puncta_field(yy, xx, rng, size, max(count, 1))
    for c in range(spec.channels):
        img[0, c] += gain[c] * (texture + puncta)

    np.clip(img, 0.05, 0.95, out=img)
    return Image(data=img.astype(np.float32), name="phantom%03d" % index)


def make_phantoms(spec):
    """Deterministic synthetic corpus; every image has at least one shape."""
    return [_one_phantom(spec, i) for i in range(spec.count)]


# ---------------------------------------------------------------------------
# pair construction

def _image_id(img):
    return derive_seed(img.name)


def make_pair(clean, noise, k):
    """Two independent corruptions of the same clean image.

    Sub-seeds hash (noise seed, image id, pair index, role), so repeated calls
    reproduce the pair exactly and the two noise fields are independent.
    """
    sid = _image_id(clean)
    inp = corrupt(clean, NoiseParams(noise.peak, noise.sigma,
                                     derive_seed(noise.seed, sid, k, 0)))
    tgt = corrupt(clean, NoiseParams(noise.peak, noise.sigma,
                                     derive_seed(noise.seed, sid, k, 1)))
    return inp, tgt


def make_clean_target_set(clean, noise, n=50):
    """Evaluation target: average of n independent corruptions of one frame."""
    frames = [corrupt(clean, NoiseParams(noise.peak, noise.sigma,
                                         derive_seed(noise.seed, _image_id(clean), "avg", j)))
              for j in range(n)]
    return average_stack(frames)


def mse_loss(pred, target):
    """Mean squared error and its gradient wrt pred."""
    if pred.shape != target.shape:
        raise ValueError("shape mismatch: %s vs %s" % (pred.shape, target.shape))
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad


# ---------------------------------------------------------------------------
# training loop

def split_corpus(corpus):
    """Training / held-out split; the last fifth is never trained on."""
    if not corpus:
        raise ValueError("corpus is empty")
    n_hold = max(1, int(round(len(corpus) * HOLDOUT_FRACTION))) if len(corpus) > 1 else 0
    return corpus[:len(corpus) - n_hold], corpus[len(corpus) - n_hold:]


def _eval_noisy(held, cfg):
    """Fixed noisy versions of the held-out frames (stable across evals)."""
    return [corrupt(img, NoiseParams(cfg.noise.peak, cfg.noise.sigma,
                                     derive_seed(cfg.seed, "eval", _image_id(img))))
            for img in held]


def eval_psnr(model, held, noisy):
    vals = [psnr(clean, denoise_cnn(n, model)) for clean, n in zip(held, noisy)]
    return float(np.mean(vals))


def noisy_baseline_psnr(held, noisy):
    """Score of the identity map on the evaluation set."""
    return float(np.mean([psnr(c, n) for c, n in zip(held, noisy)]))


def _make_batch(train_imgs, cfg, step, supervised):
    """One batch of (input, target) patches; the input side and the patch
    schedule are identical for both training arms."""
    rng = make_rng(derive_seed(cfg.seed, "batch", step))
    ps = cfg.patch_size
    xs, ts = [], []
    for slot in range(cfg.batch_size):
        idx = int(rng.integers(len(train_imgs)))
        img = train_imgs[idx]
        x0 = int(rng.integers(img.width - ps + 1))
        y0 = int(rng.integers(img.height - ps + 1))
        patch = crop(img, Roi(x0, y0, ps, ps)).with_name(
            "%s@%d,%d" % (img.name, x0, y0))
        inp, tgt = make_pair(patch, cfg.noise, k=step * cfg.batch_size + slot)
        xs.append(inp.data[0])
        ts.append(patch.data[0] if supervised else tgt.data[0])
    return np.stack(xs), np.stack(ts)


def _train(model, corpus, cfg, supervised):
    train_imgs, held = split_corpus(corpus)
    if not train_imgs:
        raise ValueError("no training images after holdout split")
    for img in train_imgs:
        if img.width < cfg.patch_size or img.height < cfg.patch_size:
            raise ValueError("image %r smaller than the %d-pixel patch"
                             % (img.name, cfg.patch_size))
    noisy_held = _eval_noisy(held, cfg) if held else []
    trace = TrainTrace()
    digest = hashlib.blake2b(digest_size=16)
    for step in range(1, cfg.steps + 1):
        xb, tb = _make_batch(train_imgs, cfg, step, supervised)
        digest.update(xb.tobytes())
        yb, cache = unet_forward_batch(model, xb)
        loss, grad = mse_loss(yb, tb)
        if not math.isfinite(loss):
            raise RuntimeError("non-finite training loss at step %d" % step)
        grads, _ = unet_backward_batch(model, cache, grad)
        adam_step(model, grads, cfg.lr)
        if __debug__:
            assert all(np.all(np.isfinite(p)) for p in model.params.values()), \
                "non-finite weights at step %d" % step
        if held and (step % cfg.eval_every == 0 or step == cfg.steps):
            trace.add(step, loss, eval_psnr(model, held, noisy_held))
    trace.input_digest = digest.hexdigest()
    return model, trace


def train(model, corpus, cfg):
    """Noisy-target training: the regression target is a second corruption."""
    return _train(model, corpus, cfg, supervised=False)


def train_supervised(model, corpus, cfg):
    """Clean-target contrast arm with the identical batch schedule."""
    return _train(model, corpus, cfg, supervised=True)
