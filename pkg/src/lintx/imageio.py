"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255 only."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _header(blob: bytes):
    """Parse magic, width, height, maxval; returns them with the payload offset."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(blob):
            raise ImageFormatError("truncated PPM header")
        if blob[pos:pos + 1] == b"#":
            end = blob.find(b"\n", pos)
            if end < 0:
                raise ImageFormatError("truncated PPM header")
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(blob[start:pos])
        if len(tokens) == 1 and tokens[0] not in (b"P5", b"P6"):
            raise ImageFormatError(f"unsupported PPM variant {tokens[0][:2].decode(errors='replace')!r}")
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise ImageFormatError("malformed PPM header")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("malformed PPM header") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError("PPM dimensions must be positive")
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    return tokens[0], width, height, pos + 1


def read_bytes(path) -> np.ndarray:
    """Raw samples as uint8, shape (channels, H, W)."""
    blob = Path(path).read_bytes()
    magic, w, h, off = _header(blob)
    ch = 3 if magic == b"P6" else 1
    need = w * h * ch
    if len(blob) - off < need:
        raise ImageFormatError(f"truncated PPM payload: need {need} bytes, have {len(blob) - off}")
    data = np.frombuffer(blob, dtype=np.uint8, count=need, offset=off)
    return data.reshape(h, w, ch).transpose(2, 0, 1).copy()


def read_image(path) -> np.ndarray:
    """(3, H, W) float64 image in [0, 1]; a P5 file is replicated to three channels."""
    raw = read_bytes(path)
    if raw.shape[0] == 1:
        raw = np.repeat(raw, 3, axis=0)
    return raw.astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8-bit codes."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(img: np.ndarray, path) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {img.shape}")
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory {path.parent} does not exist")
    _, h, w = img.shape
    payload = quantize(img).transpose(1, 2, 0).tobytes()
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + payload)


def write_gray(values: np.ndarray, path) -> None:
    values = np.asarray(values, dtype=np.uint8)
    h, w = values.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + values.tobytes())


def read_mask_values(path) -> np.ndarray:
    """(H, W) gray levels from a P5 file, or from a P6 file whose channels agree."""
    raw = read_bytes(path)
    if raw.shape[0] == 3 and not (np.array_equal(raw[0], raw[1]) and np.array_equal(raw[0], raw[2])):
        raise ImageFormatError("mask must be grayscale (R == G == B)")
    return raw[0]
