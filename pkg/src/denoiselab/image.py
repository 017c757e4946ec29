"""Image container plus bit-exact file I/O (netpbm and raw-tensor formats).

Pixel data is kept as normalized 32-bit floats in [0, 1] regardless of the
source bit depth; `source_max` remembers the original integer full scale so
saving restores it. Layout is (slices, channels, height, width), i.e. planar
channels, which is also the on-disk order of the ".rt" container.
"""

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

_WHITESPACE = b" \t\r\n\x0b\x0c"
_NETPBM_EXTS = (".pgm", ".ppm", ".pnm")


class ImageFormatError(ValueError):
    """Malformed or unsupported image file; message carries the byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = "%s (byte offset %d)" % (message, offset)
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Image:
    """Normalized raster: data has shape (slices, channels, height, width)."""

    data: np.ndarray
    source_max: int = 255
    name: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError("image data must be 4-d (slices, channels, h, w), got shape %s"
                             % (arr.shape,))
        if arr.shape[1] not in (1, 3):
            raise ValueError("channels must be 1 or 3, got %d" % arr.shape[1])
        if self.source_max not in (255, 65535):
            raise ValueError("source_max must be 255 or 65535, got %r" % (self.source_max,))
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def slices(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[2]

    @property
    def width(self):
        return self.data.shape[3]

    def with_data(self, data):
        """Same metadata, new pixel payload."""
        return replace(self, data=data)

    def with_name(self, name):
        return replace(self, name=name)


@dataclass(frozen=True)
class Roi:
    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("roi must be at least 1x1, got %dx%d" % (self.width, self.height))
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError("roi offsets must be non-negative")

    def check_within(self, img):
        if self.x0 + self.width > img.width or self.y0 + self.height > img.height:
            raise ValueError("roi (%d,%d,%d,%d) exceeds image bounds %dx%d"
                             % (self.x0, self.y0, self.width, self.height,
                                img.width, img.height))


def crop(img, roi):
    """Extract the ROI from every slice and channel."""
    roi.check_within(img)
    sub = img.data[:, :, roi.y0:roi.y0 + roi.height, roi.x0:roi.x0 + roi.width]
    return img.with_data(np.ascontiguousarray(sub))


def split_slices(img):
    """One single-slice Image per slice, in order."""
    return [img.with_data(img.data[s:s + 1]) for s in range(img.slices)]


def stack_slices(imgs):
    """Inverse of split_slices; all inputs must agree in shape and metadata."""
    if not imgs:
        raise ValueError("cannot stack an empty list of images")
    first = imgs[0]
    for im in imgs[1:]:
        if im.data.shape[1:] != first.data.shape[1:]:
            raise ValueError("slice shape mismatch: %s vs %s"
                             % (im.data.shape[1:], first.data.shape[1:]))
        if im.source_max != first.source_max:
            raise ValueError("source_max mismatch between slices")
    data = np.concatenate([im.data for im in imgs], axis=0)
    return first.with_data(data)


# ---------------------------------------------------------------------------
# netpbm (P2/P3 ASCII, P5/P6 binary; maxval 255 or 65535, 16-bit big-endian)

def _next_token(buf, pos):
    n = len(buf)
    while pos < n:
        c = buf[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == 0x23:  # '#' comment runs to end of line
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise ImageFormatError("unexpected end of file in header", pos)
    start = pos
    while pos < n and buf[pos] not in _WHITESPACE:
        pos += 1
    return buf[start:pos], start, pos


def _header_int(buf, pos, what):
    tok, start, pos = _next_token(buf, pos)
    try:
        value = int(tok)
    except ValueError:
        raise ImageFormatError("malformed %s %r" % (what, tok), start) from None
    if value < 0:
        raise ImageFormatError("negative %s" % what, start)
    return value, pos


def _load_netpbm(buf, name):
    if len(buf) < 2 or buf[0:1] != b"P" or buf[1:2] not in b"2356":
        raise ImageFormatError("not a supported netpbm file (expected P2/P3/P5/P6 magic)", 0)
    magic = buf[:2].decode("ascii")
    pos = 2
    width, pos = _header_int(buf, pos, "width")
    height, pos = _header_int(buf, pos, "height")
    maxval, pos = _header_int(buf, pos, "maxval")
    if maxval not in (255, 65535):
        raise ImageFormatError("unsupported maxval %d (only 255 and 65535)" % maxval, pos)
    if width < 1 or height < 1:
        raise ImageFormatError("degenerate image dimensions %dx%d" % (width, height), pos)
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels

    if magic in ("P5", "P6"):
        if pos >= len(buf):
            raise ImageFormatError("missing raster", pos)
        pos += 1  # exactly one whitespace byte after maxval
        itemsize = 2 if maxval > 255 else 1
        need = count * itemsize
        if len(buf) - pos < need:
            raise ImageFormatError("truncated raster: need %d bytes, have %d"
                                   % (need, len(buf) - pos), len(buf))
        dtype = ">u2" if itemsize == 2 else np.uint8
        raw = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        values = raw.astype(np.float32)
    else:
        values = np.empty(count, dtype=np.float32)
        for i in range(count):
            v, pos = _header_int(buf, pos, "sample")
            if v > maxval:
                raise ImageFormatError("sample %d exceeds maxval %d" % (v, maxval), pos)
            values[i] = v

    values /= np.float32(maxval)
    if channels == 3:
        data = values.reshape(height, width, 3).transpose(2, 0, 1)
    else:
        data = values.reshape(1, height, width)
    return Image(data=data[np.newaxis], source_max=maxval, name=name)


def _save_netpbm(img, path):
    if img.slices != 1:
        raise ValueError("netpbm holds a single frame; save %d-slice stacks as .rt" % img.slices)
    maxval = img.source_max
    quant = _quantize(img.data[0], maxval)
    if img.channels == 3:
        magic, payload = b"P6", quant.transpose(1, 2, 0)
    else:
        magic, payload = b"P5", quant[0]
    dtype = ">u2" if maxval > 255 else np.uint8
    header = b"%s\n%d %d\n%d\n" % (magic, img.width, img.height, maxval)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload.astype(dtype)).tobytes())


def _quantize(data, maxval):
    """Clamp to [0,1], scale, round half-to-even."""
    scaled = np.clip(data.astype(np.float64), 0.0, 1.0) * maxval
    return np.rint(scaled).astype(np.int64)


# ---------------------------------------------------------------------------
# Raw-tensor container (".rt"): "RTN1", u32 header length, JSON header,
# then w*h*c*s little-endian float32 in (slice, channel, row) order.

_RT_MAGIC = b"RTN1"


def _load_rt(buf, name):
    if buf[:4] != _RT_MAGIC:
        raise ImageFormatError("bad raw-tensor magic %r" % buf[:4], 0)
    if len(buf) < 8:
        raise ImageFormatError("truncated header length field", len(buf))
    (hlen,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + hlen:
        raise ImageFormatError("truncated JSON header", len(buf))
    try:
        header = json.loads(buf[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ImageFormatError("malformed JSON header: %s" % exc, 8) from None
    try:
        w, h, c, s = (int(header[k]) for k in ("w", "h", "c", "s"))
        source_max = int(header["source_max"])
        stored_name = str(header.get("name", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise ImageFormatError("incomplete header: %s" % exc, 8) from None
    pos = 8 + hlen
    count = w * h * c * s
    if len(buf) - pos < count * 4:
        raise ImageFormatError("truncated payload: need %d floats, have %d bytes"
                               % (count, len(buf) - pos), len(buf))
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
    return Image(data=data.reshape(s, c, h, w).copy(),
                 source_max=source_max, name=stored_name or name)


def _save_rt(img, path):
    header = json.dumps({"w": img.width, "h": img.height, "c": img.channels,
                         "s": img.slices, "source_max": img.source_max,
                         "name": img.name}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_RT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(img.data, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------

def load_image(path):
    """Read a netpbm or raw-tensor file into a normalized Image."""
    path = str(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    name = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    if buf[:4] == _RT_MAGIC or path.endswith(".rt"):
        return _load_rt(buf, name)
    return _load_netpbm(buf, name)


def save_image(img, path):
    """Write by extension: .rt raw tensor, otherwise binary netpbm (P5/P6)."""
    path = str(path)
    if path.endswith(".rt"):
        _save_rt(img, path)
        return
    if path.endswith(".pgm") and img.channels != 1:
        raise ValueError("cannot save a %d-channel image as .pgm; use .ppm or .rt"
                         % img.channels)
    if path.endswith(".ppm") and img.channels != 3:
        raise ValueError("cannot save a %d-channel image as .ppm; use .pgm or .rt"
                         % img.channels)
    _save_netpbm(img, path)
