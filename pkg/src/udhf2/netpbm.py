"""Binary portable graymap/pixmap rasters (P5/P6), maxval 255."""

import numpy as np

from .errors import ParameterError

__all__ = ["image_from_uint8", "image_to_uint8", "read_pgm", "read_ppm",
           "write_pgm", "write_ppm"]


def image_to_uint8(image):
    """[0, 1] float image to rounded 8-bit values."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def image_from_uint8(raw):
    """8-bit values back to float32 in [0, 1]."""
    return (np.asarray(raw).astype(np.float32) / 255.0)


def _write(path, magic, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    h, w = array.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(array.tobytes())


def write_pgm(path, array):
    """Single-channel uint8 raster to a P5 file."""
    array = np.asarray(array)
    if array.ndim != 2:
        raise ParameterError(f"graymap needs a 2-D array, got {array.shape}")
    _write(path, "P5", array)


def write_ppm(path, array):
    """(H, W, 3) uint8 image to a P6 file."""
    array = np.asarray(array)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ParameterError(f"pixmap needs an (H, W, 3) array, got {array.shape}")
    _write(path, "P6", array)


def _read(path, magic, channels):
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParameterError(f"truncated netpbm header in {path}")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace byte separates header from payload
    if tokens[0] != magic.encode("ascii"):
        raise ParameterError(
            f"{path} is not a {magic} file (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ParameterError(f"{path}: only maxval 255 is supported, got {maxval}")
    expected = h * w * channels
    payload = blob[pos:pos + expected]
    if len(payload) != expected:
        raise ParameterError(
            f"{path}: expected {expected} payload bytes, got {len(payload)}")
    shape = (h, w) if channels == 1 else (h, w, channels)
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape).copy()


def read_pgm(path):
    return _read(path, "P5", 1)


def read_ppm(path):
    return _read(path, "P6", 3)
