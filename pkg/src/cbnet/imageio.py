"""Binary PGM (P5) and PPM (P6) with maxval 255.

Headers may contain ``#`` comments anywhere whitespace is allowed.
"""
import os

import numpy as np

from .errors import FormatError

_WS = b" \t\r\n\v\f"


def _tokens(buf, count):
    """Read ``count`` header integers after the magic; return them and the payload offset."""
    pos = 2
    out = []
    while len(out) < count:
        if pos >= len(buf):
            raise FormatError("truncated header", pos)
        c = buf[pos:pos + 1]
        if c in (b"",) or c not in _WS and c != b"#" and not c.isdigit():
            raise FormatError(f"unexpected byte {c!r} in header", pos)
        if c == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise FormatError("unterminated header comment", pos)
            pos = end + 1
            continue
        if c in _WS:
            pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        out.append(int(buf[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise FormatError("missing whitespace after header", pos)
    return out, pos + 1


def decode_pnm(buf):
    if len(buf) < 2:
        raise FormatError("file too short for a PNM magic number", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}; expected P5 or P6", 0)
    (width, height, maxval), offset = _tokens(buf, 3)
    if width < 1 or height < 1:
        raise FormatError(f"invalid extent {width}x{height}", 2)
    if maxval != 255:
        raise FormatError(f"maxval {maxval} not supported (only 255)", 2)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    have = len(buf) - offset
    if have < need:
        raise FormatError(f"truncated raster: need {need} bytes, have {have}", offset + have)
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    if channels == 3:
        return data.reshape(height, width, 3).copy()
    return data.reshape(height, width).copy()


def encode_pnm(img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        if img.size and (img.min() < 0 or img.max() > 255 or not np.all(np.equal(np.mod(img, 1), 0))):
            raise ValueError("PNM data must be integers in [0, 255]")
        img = img.astype(np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {img.shape} as PNM")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_pnm(path):
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def write_pnm(path, img):
    data = encode_pnm(img)
    with open(path, "wb") as fh:
        fh.write(data)


def read_pgm(path):
    img = read_pnm(path)
    if img.ndim != 2:
        raise FormatError(f"{os.fspath(path)} is a colour image, expected PGM", 0)
    return img


def read_ppm(path):
    img = read_pnm(path)
    if img.ndim != 3:
        raise FormatError(f"{os.fspath(path)} is a grey image, expected PPM", 0)
    return img


def to_uint8(x):
    """Quantise values in [0, 1] to bytes (round half to even)."""
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_scene_image(path, image):
    """Write a [2, H, W] red/green image in [0, 1] as PPM (blue = 0)."""
    image = np.asarray(image)
    rgb = np.zeros(image.shape[1:] + (3,), dtype=np.uint8)
    rgb[..., 0] = to_uint8(image[0])
    rgb[..., 1] = to_uint8(image[1])
    write_pnm(path, rgb)


def read_scene_image(path):
    rgb = read_ppm(path)
    return np.stack([rgb[..., 0], rgb[..., 1]]).astype(np.float64) / 255.0
