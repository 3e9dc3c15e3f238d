"""CBNW weight files.

Layout (all little-endian)::

    b"CBNW"  u32 version (=1)  u32 tensor_count
    repeated tensor_count times:
        u32 name_length  name (utf-8)  u32 ndim  u64 dims[ndim]  f64 payload[prod(dims)]

Entries are written in the network's own order: parameters, then batch-norm
running statistics.
"""
import os
import struct

import numpy as np

from .errors import FormatError, ShapeError
from .model import build_network

MAGIC = b"CBNW"
VERSION = 1


def encode(tensors):
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}: need {n} bytes, "
                              f"{len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf):
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = r.unpack("<I", "tensor count")
    out = {}
    for _ in range(count):
        start = r.pos
        (n,) = r.unpack("<I", "name length")
        try:
            name = r.take(n, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid utf-8", start + 4) from None
        (ndim,) = r.unpack("<I", "ndim")
        dims = r.unpack(f"<{ndim}Q", "dims")
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = r.take(8 * size, f"payload of {name!r}")
        if name in out:
            raise FormatError(f"duplicate tensor {name!r}", start)
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after the tensor table", r.pos)
    return out


def save_weights(net, path):
    data = encode(net.state_dict())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_weight_file(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def assign_state(net, tensors):
    """Copy arrays into ``net``; names and shapes must match exactly."""
    expected = net.state_dict()
    for name, arr in expected.items():
        if name not in tensors:
            raise ShapeError(f"weight file lacks tensor {name!r} required by this network")
        if tensors[name].shape != arr.shape:
            raise ShapeError(f"shape mismatch for {name!r}: file has {tensors[name].shape}, "
                             f"network expects {arr.shape}")
    extra = [n for n in tensors if n not in expected]
    if extra:
        raise ShapeError(f"weight file has tensor {extra[0]!r} unknown to this network")
    for name, arr in expected.items():
        arr[...] = tensors[name]
    return net


def load_weights(path, config):
    """Build a network from ``config`` and fill it from ``path``."""
    net = build_network(config)
    return assign_state(net, read_weight_file(path))
