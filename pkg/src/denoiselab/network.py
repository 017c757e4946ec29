"""From-scratch convolutional network engine and the small U-Net built on it.

Tensors are plain numpy arrays shaped (channels, height, width); the training
path stacks them into (batch, channels, height, width) and runs the same ops
batched. Convolutions are 3x3 with zero padding 1, implemented via im2col and
a single matmul so the whole thing stays fast on one CPU core. No
normalization layers anywhere.

All ops preserve the input dtype: float32 in normal use, float64 inside the
gradient-check harness.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .image import Image
from .rng import make_rng

LEAKY_SLOPE = 0.1


class CheckpointError(ValueError):
    """Corrupt or incompatible weight file."""


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    depth: int = 2
    base_channels: int = 16
    kernel: int = 3

    def __post_init__(self):
        if self.in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 or 3, got %d" % self.in_channels)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.kernel != 3:
            raise ValueError("only 3x3 kernels are supported")

    @property
    def out_channels(self):
        return self.in_channels


def layer_specs(config):
    """Canonical ordered list of (name, shape) for every parameter block."""
    specs = []

    def conv(name, cin, cout):
        specs.append((name + "_w", (cout, cin, 3, 3)))
        specs.append((name + "_b", (cout,)))

    prev = config.in_channels
    for i in range(config.depth):
        c = config.base_channels * (2 ** i)
        conv("enc%d_conv0" % i, prev, c)
        conv("enc%d_conv1" % i, c, c)
        prev = c
    cb = config.base_channels * (2 ** config.depth)
    conv("bottleneck_conv0", prev, cb)
    conv("bottleneck_conv1", cb, cb)
    prev = cb
    for i in reversed(range(config.depth)):
        c = config.base_channels * (2 ** i)
        conv("dec%d_conv0" % i, prev + c, c)
        conv("dec%d_conv1" % i, c, c)
        prev = c
    conv("final_conv", prev, config.out_channels)
    return specs


class UNetModel:
    """Architecture config plus parameters and Adam state (one checkpointable unit)."""

    def __init__(self, config, params, m, v, step=0):
        self.config = config
        self.params = params
        self.m = m
        self.v = v
        self.step = step

    @classmethod
    def initialize(cls, config, seed=0):
        """He-style uniform init, bound sqrt(6/fan_in); biases zero."""
        rng = make_rng(seed)
        params, m, v = {}, {}, {}
        for name, shape in layer_specs(config):
            if name.endswith("_w"):
                fan_in = shape[1] * shape[2] * shape[3]
                bound = np.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            else:
                params[name] = np.zeros(shape, dtype=np.float32)
            m[name] = np.zeros(shape, dtype=np.float32)
            v[name] = np.zeros(shape, dtype=np.float32)
        return cls(config, params, m, v, step=0)

    def param_names(self):
        return [name for name, _ in layer_specs(self.config)]

    def astype(self, dtype):
        """Copy with parameters cast (gradient-check harness runs in float64)."""
        cast = lambda d: {k: a.astype(dtype) for k, a in d.items()}
        return UNetModel(self.config, cast(self.params), cast(self.m),
                         cast(self.v), self.step)


# ---------------------------------------------------------------------------
# batched primitive ops; x is (N, C, H, W)

def _im2col(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, 3, 3, h, w), strides=(s[0], s[1], s[2], s[3], s[2], s[3]))
    return win.reshape(n, c * 9, h * w)


def _conv_forward_cols(x, kernel, bias):
    n, c, h, w = x.shape
    out_c = kernel.shape[0]
    if kernel.shape[1] != c:
        raise ValueError("kernel expects %d input channels, got %d" % (kernel.shape[1], c))
    cols = _im2col(x)
    k2 = kernel.reshape(out_c, c * 9)
    out = np.matmul(k2, cols)
    out += bias[:, None]
    return out.reshape(n, out_c, h, w), cols


def conv2d_forward_batch(x, kernel, bias):
    return _conv_forward_cols(x, kernel, bias)[0]


def conv2d_backward_batch(x, kernel, grad_out, cols=None):
    n, c, h, w = x.shape
    out_c = kernel.shape[0]
    if grad_out.shape != (n, out_c, h, w):
        raise ValueError("grad_out shape %s inconsistent with forward output %s"
                         % (grad_out.shape, (n, out_c, h, w)))
    if cols is None:
        cols = _im2col(x)
    g = grad_out.reshape(n, out_c, h * w)
    grad_kernel = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
    grad_bias = g.sum(axis=(0, 2))
    gcols = np.matmul(kernel.reshape(out_c, c * 9).T, g)
    gwin = gcols.reshape(n, c, 3, 3, h, w)
    gxp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            gxp[:, :, u:u + h, v:v + w] += gwin[:, :, u, v]
    return gxp[:, :, 1:-1, 1:-1], grad_kernel, grad_bias


def leaky_relu_forward(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(x, grad_out, slope=LEAKY_SLOPE):
    # x == 0 takes the slope branch
    return grad_out * np.where(x > 0, x.dtype.type(1), x.dtype.type(slope))


def maxpool2_forward_batch(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool needs even spatial dims, got %dx%d" % (h, w))
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    # argmax breaks ties toward the first element in row-major block order
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward_batch(idx, grad_out, in_shape):
    n, c, h, w = in_shape
    gb = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(gb, idx[..., None], grad_out[..., None], axis=-1)
    gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return gb.reshape(n, c, h, w)


def upsample2_forward_batch(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward_batch(grad_out):
    n, c, h, w = grad_out.shape
    return grad_out.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def concat_channels_batch(a, b):
    if a.shape[2:] != b.shape[2:]:
        raise ValueError("spatial mismatch in channel concat: %s vs %s"
                         % (a.shape[2:], b.shape[2:]))
    return np.concatenate([a, b], axis=1)


# single-sample (C, H, W) wrappers ------------------------------------------

def conv2d_forward(x, kernel, bias):
    return conv2d_forward_batch(x[None], kernel, bias)[0]


def conv2d_backward(x, kernel, grad_out):
    gx, gk, gb = conv2d_backward_batch(x[None], kernel, grad_out[None])
    return gx[0], gk, gb


def maxpool2_forward(x):
    out, _ = maxpool2_forward_batch(x[None])
    return out[0]


def maxpool2_backward(x, grad_out):
    _, idx = maxpool2_forward_batch(x[None])
    return maxpool2_backward_batch(idx, grad_out[None], x[None].shape)[0]


def upsample2_forward(x):
    return upsample2_forward_batch(x[None])[0]


def upsample2_backward(grad_out):
    return upsample2_backward_batch(grad_out[None])[0]


def concat_channels(a, b):
    return concat_channels_batch(a[None], b[None])[0]


def split_channels(x, c_first):
    """Inverse of concat_channels for the backward pass."""
    return x[:c_first], x[c_first:]


# ---------------------------------------------------------------------------
# U-Net forward / backward

def _check_input(config, x):
    n, c, h, w = x.shape
    if c != config.in_channels:
        raise ValueError("model expects %d channels, input has %d" % (config.in_channels, c))
    div = 2 ** config.depth
    if h % div or w % div:
        raise ValueError("spatial dims %dx%d must be divisible by %d" % (h, w, div))


def _conv_act(p, name, x, cache):
    pre, cols = _conv_forward_cols(x, p[name + "_w"], p[name + "_b"])
    cache[name] = (x, pre, cols)
    return leaky_relu_forward(pre)


def unet_forward_batch(model, x):
    """Returns (output, cache); cache feeds unet_backward_batch."""
    _check_input(model.config, x)
    p = model.params
    cache = {}
    skips = []
    h = x
    for i in range(model.config.depth):
        h = _conv_act(p, "enc%d_conv0" % i, h, cache)
        h = _conv_act(p, "enc%d_conv1" % i, h, cache)
        skips.append(h)
        pooled, idx = maxpool2_forward_batch(h)
        cache["pool%d" % i] = (h.shape, idx)
        h = pooled
    h = _conv_act(p, "bottleneck_conv0", h, cache)
    h = _conv_act(p, "bottleneck_conv1", h, cache)
    for i in reversed(range(model.config.depth)):
        up = upsample2_forward_batch(h)
        h = concat_channels_batch(up, skips[i])
        cache["concat%d" % i] = up.shape[1]
        h = _conv_act(p, "dec%d_conv0" % i, h, cache)
        h = _conv_act(p, "dec%d_conv1" % i, h, cache)
    out, cols = _conv_forward_cols(h, p["final_conv_w"], p["final_conv_b"])
    cache["final"] = (h, cols)
    if __debug__:
        assert np.all(np.isfinite(out)), "network produced non-finite values"
    return out, cache


def _conv_act_backward(p, name, grad, cache, grads):
    x, pre, cols = cache[name]
    grad = leaky_relu_backward(pre, grad)
    gx, gk, gb = conv2d_backward_batch(x, p[name + "_w"], grad, cols=cols)
    grads[name + "_w"] = gk
    grads[name + "_b"] = gb
    return gx

def unet_backward_batch(model, cache, grad_out):
    """Gradients of a scalar loss wrt every parameter (and the input)."""
    p = model.params
    grads = {}
    h, final_cols = cache["final"]
    gx, gkern, gbias = conv2d_backward_batch(h, p["final_conv_w"], grad_out,
                                             cols=final_cols)
    grads["final_conv_w"] = gkern
    grads["final_conv_b"] = gbias
    grad = gx
    skip_grads = {}
    for i in range(model.config.depth):
        grad = _conv_act_backward(p, "dec%d_conv1" % i, grad, cache, grads)
        grad = _conv_act_backward(p, "dec%d_conv0" % i, grad, cache, grads)
        c_up = cache["concat%d" % i]
        grad_up, grad_skip = grad[:, :c_up], grad[:, c_up:]
        skip_grads[i] = grad_skip
        grad = upsample2_backward_batch(grad_up)
    grad = _conv_act_backward(p, "bottleneck_conv1", grad, cache, grads)
    grad = _conv_act_backward(p, "bottleneck_conv0", grad, cache, grads)
    for i in reversed(range(model.config.depth)):
        shape, idx = cache["pool%d" % i]
        grad = maxpool2_backward_batch(idx, grad, shape)
        grad = grad + skip_grads[i]
        grad = _conv_act_backward(p, "enc%d_conv1" % i, grad, cache, grads)
        grad = _conv_act_backward(p, "enc%d_conv0" % i, grad, cache, grads)
    return grads, grad


def unet_forward(model, x):
    out, _ = unet_forward_batch(model, x[None])
    return out[0]


# ---------------------------------------------------------------------------
# Adam

def adam_step(model, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update, in place; returns the model."""
    model.step += 1
    t = model.step
    for name in model.param_names():
        g = grads[name]
        p = model.params[name]
        if g.shape != p.shape:
            raise ValueError("gradient shape %s does not match %s %s"
                             % (g.shape, name, p.shape))
        g = g.astype(p.dtype, copy=False)
        m = model.m[name] = beta1 * model.m[name] + (1 - beta1) * g
        v = model.v[name] = beta2 * model.v[name] + (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        model.params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return model


# ---------------------------------------------------------------------------
# Checkpoints (".n2nw"): magic, u32 version, length-prefixed JSON header,
# then parameters, first moments, second moments as little-endian float32.

_CKPT_MAGIC = b"N2NW"
_CKPT_VERSION = 1


def save_weights(model, path):
    cfg = model.config
    header = json.dumps({
        "config": {"in_channels": cfg.in_channels, "depth": cfg.depth,
                   "base_channels": cfg.base_channels, "kernel": cfg.kernel},
        "layers": [[name, list(shape)] for name, shape in layer_specs(cfg)],
        "step": model.step,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(header)))
        fh.write(header)
        for group in (model.params, model.m, model.v):
            for name in model.param_names():
                fh.write(np.ascontiguousarray(group[name], dtype="<f4").tobytes())


def load_weights(path, config=None):
    """Read a checkpoint; optionally verify it matches an expected config."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic %r" % buf[:4])
    if len(buf) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != _CKPT_VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    if len(buf) < 12 + hlen:
        raise CheckpointError("truncated checkpoint JSON header")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
        cfg = UNetConfig(**header["config"])
        layers = [(name, tuple(shape)) for name, shape in header["layers"]]
        step = int(header["step"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError("malformed checkpoint header: %s" % exc) from None

    expected = layer_specs(cfg)
    if layers != expected:
        for (hn, hs), (en, es) in zip(layers, expected):
            if hn != en or hs != es:
                raise CheckpointError("layer %r shape %s does not match config-derived %r %s"
                                      % (hn, hs, en, es))
        raise CheckpointError("layer list length %d does not match config (%d)"
                              % (len(layers), len(expected)))
    if config is not None and cfg != config:
        raise CheckpointError("checkpoint config %s does not match requested %s" % (cfg, config))

    counts = [int(np.prod(shape)) for _, shape in layers]
    total = sum(counts) * 3
    if len(buf) - 12 - hlen < total * 4:
        raise CheckpointError("truncated checkpoint payload: need %d floats" % total)
    flat = np.frombuffer(buf, dtype="<f4", count=total, offset=12 + hlen)
    groups = []
    pos = 0
    for _ in range(3):
        group = {}
        for (name, shape), cnt in zip(layers, counts):
            group[name] = flat[pos:pos + cnt].reshape(shape).copy()
            pos += cnt
        groups.append(group)
    return UNetModel(cfg, groups[0], groups[1], groups[2], step=step)


# ---------------------------------------------------------------------------

def denoise_cnn(img, model):
    """Run the network on an Image, slice by slice.

    Slices are replicate-padded up to the next multiple of 2^depth, processed,
    and cropped back. Output values are not clamped (clamping happens at save).
    """
    if img.channels != model.config.in_channels:
        raise ValueError("model expects %d channels, image has %d"
                         % (model.config.in_channels, img.channels))
    div = 2 ** model.config.depth
    pad_h = (-img.height) % div
    pad_w = (-img.width) % div
    out = np.empty_like(img.data)
    for s in range(img.slices):
        x = img.data[s]
        if pad_h or pad_w:
            x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
        y = unet_forward(model, x)
        out[s] = y[:, :img.height, :img.width]
    return img.with_data(out)
