"""Binary model container.

Layout (little-endian)::

    b"NSN1" | u32 version | u32 n | n bytes of JSON header
    u32 n_layers, then per layer: u32 record length | record
        record = u32 patch_h, patch_w, stride, n_filters, channels
                 | f32 means (n_filters * dim) | f32 sigmas (n_filters)
    u8 has_zca   [u32 c, h, w | f32 mean | f32 whitening | f32 dewhitening]
    u8 has_mean  [u32 h, w, c | f32 pixels]
    u32 CRC-32 of every preceding byte

Tensors are stored as float32, so parameters should already hold
float32-representable values (training produces them that way) for a
save/load round trip to be exact.
"""

import io
import json
import struct
import zlib

import numpy as np

from .data import PixelNormalizer, ZCAWhitening
from .filters import FilterBank
from .network import LayerSpec, Network

MAGIC = b"NSN1"
VERSION = 1


class ModelFormatError(ValueError):
    """The file is not a readable model container."""


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dumps(net):
    """Serialise ``net`` to bytes."""
    pre = net.preprocessor
    pre_meta = {"kind": "none"}
    if isinstance(pre, PixelNormalizer):
        pre_meta = {"kind": "normalize", "shift": pre.shift_, "scale": pre.scale_}
    elif isinstance(pre, ZCAWhitening):
        pre_meta = {"kind": "zca", "epsilon": pre.epsilon, "max_images": pre.max_images}
    elif pre is not None:
        raise TypeError(f"cannot serialise preprocessor {type(pre).__name__}")
    header = {
        "input_shape": list(net.input_shape),
        "score_offsets": [float(o) for o in net.score_offsets],
        "preprocessing": pre_meta,
        "metadata": _jsonable(net.metadata),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<II", VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", net.n_layers))
    for spec, bank in zip(net.specs, net.banks):
        rec = struct.pack(
            "<IIIII", spec.patch_h, spec.patch_w, spec.stride, len(bank), bank.patch_shape[2]
        ) + _f32(bank.means) + _f32(bank.sigmas)
        buf.write(struct.pack("<I", len(rec)))
        buf.write(rec)
    if isinstance(pre, ZCAWhitening):
        h, w, c = pre.image_shape_
        buf.write(struct.pack("<BIII", 1, c, h, w))
        buf.write(_f32(pre.mean_) + _f32(pre.whitening_) + _f32(pre.dewhitening_))
    else:
        buf.write(b"\x00")
    if net.mean_image is not None:
        h, w, c = net.mean_image.shape
        buf.write(struct.pack("<BIII", 1, h, w, c))
        buf.write(_f32(net.mean_image))
    else:
        buf.write(b"\x00")
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)


def loads(data):
    """Rebuild a ``Network`` from ``dumps`` output."""
    data = bytes(data)
    if len(data) < 12:
        raise ModelFormatError("model file is truncated")
    if data[:4] != MAGIC:
        raise ModelFormatError("not an NSN model file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(4)
    version, n = r.unpack("<II")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}, expected {VERSION}")
    if zlib.crc32(body) != crc:
        raise ModelFormatError("model checksum mismatch")
    header = json.loads(r.take(n).decode("utf-8"))
    (n_layers,) = r.unpack("<I")
    specs, banks = [], []
    for _ in range(n_layers):
        (length,) = r.unpack("<I")
        rec = _Reader(r.take(length))
        ph, pw, stride, k, c = rec.unpack("<IIIII")
        dim = ph * pw * c
        means = rec.floats(k * dim).reshape(k, dim)
        sigmas = rec.floats(k)
        specs.append(LayerSpec(ph, pw, stride))
        banks.append(FilterBank(means, sigmas, (ph, pw, c)))
    pre_meta = header["preprocessing"]
    pre = None
    (has_zca,) = r.unpack("<B")
    if has_zca:
        c, h, w = r.unpack("<III")
        d = h * w
        pre = ZCAWhitening(epsilon=pre_meta["epsilon"], max_images=pre_meta["max_images"])
        pre.mean_ = r.floats(c * d).reshape(c, d)
        pre.whitening_ = r.floats(c * d * d).reshape(c, d, d)
        pre.dewhitening_ = r.floats(c * d * d).reshape(c, d, d)
        pre.image_shape_ = (h, w, c)
    elif pre_meta["kind"] == "normalize":
        pre = PixelNormalizer()
        pre.shift_ = pre_meta["shift"]
        pre.scale_ = pre_meta["scale"]
    mean_image = None
    (has_mean,) = r.unpack("<B")
    if has_mean:
        h, w, c = r.unpack("<III")
        mean_image = r.floats(h * w * c).reshape(h, w, c)
    if r.pos != len(body):
        raise ModelFormatError("trailing bytes after model payload")
    return Network(
        specs=specs,
        banks=banks,
        input_shape=tuple(header["input_shape"]),
        preprocessor=pre,
        score_offsets=header["score_offsets"],
        mean_image=mean_image,
        metadata=header["metadata"],
    )


def save_model(net, path):
    data = dumps(net)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_model(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
