"""Image representation, mirror/symmetry operators, and binary netpbm I/O.

An image is a numpy array of shape ``(height, width, channels)`` holding real
intensities, nominally in [0, 1]; ``channels`` is 1 (grayscale) or 3 (RGB).
Intensities stay floating point everywhere in the pipeline and are quantized
to 8 bits only at file or wire boundaries, so the optimizer never loses
precision to byte rounding.

Flattened vectors use a fixed channel-major ordering (all of channel 0 in row
order, then channel 1, ...) so that basis files are portable across builds.

Files are binary PGM (P5, gray) and PPM (P6, RGB) with maxval 255.  The writer
emits a canonical byte-exact header: magic, newline, ``width height``,
newline, ``255``, newline, payload.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, GeometryError, ModeError

MAXVAL = 255


def require_image(img) -> np.ndarray:
    """Validate image shape and return it as a float64 (h, w, c) array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise GeometryError(f"image must be (height, width, channels), got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise GeometryError(f"image must have positive size, got {h}x{w}")
    if c not in (1, 3):
        raise ModeError(f"channels must be 1 (gray) or 3 (RGB), got {c}")
    return arr


def reflect(img) -> np.ndarray:
    """Mirror across the vertical axis (left-right flip), per channel."""
    arr = require_image(img)
    return arr[:, ::-1, :].copy()


def symmetrize(img) -> np.ndarray:
    """Soft symmetry map X -> (X + 2*reflect(X)) / 3, without clipping."""
    arr = require_image(img)
    return (arr + 2.0 * arr[:, ::-1, :]) / 3.0


def clip(img) -> np.ndarray:
    """Clamp every intensity into [0, 1]."""
    return np.clip(require_image(img), 0.0, 1.0)


def to_gray(img) -> np.ndarray:
    """Average the three channels with equal weights; requires an RGB image."""
    arr = require_image(img)
    if arr.shape[2] != 3:
        raise ModeError(f"to_gray needs 3 channels, got {arr.shape[2]}")
    return arr.mean(axis=2, keepdims=True)


def flatten(img) -> np.ndarray:
    """Flatten to a length h*w*c vector, channel-major then row-major."""
    arr = require_image(img)
    return arr.transpose(2, 0, 1).ravel()


def reshape(vec, height: int, width: int, channels: int) -> np.ndarray:
    """Inverse of flatten(); the vector length must equal height*width*channels."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1:
        raise GeometryError(f"expected a 1-d vector, got shape {v.shape}")
    d = height * width * channels
    if v.shape[0] != d:
        raise GeometryError(
            f"vector length {v.shape[0]} does not match {height}x{width}x{channels} = {d}"
        )
    return np.ascontiguousarray(v.reshape(channels, height, width).transpose(1, 2, 0))


def encode_netpbm(img) -> bytes:
    """Serialize to binary PGM (P5) or PPM (P6) bytes, quantizing to 8 bits."""
    arr = require_image(img)
    h, w, c = arr.shape
    magic = b"P5" if c == 1 else b"P6"
    payload = np.round(np.clip(arr, 0.0, 1.0) * MAXVAL).astype(np.uint8)
    header = magic + b"\n" + f"{w} {h}".encode("ascii") + b"\n255\n"
    return header + payload.tobytes()


def decode_netpbm(data: bytes) -> np.ndarray:
    """Parse binary PGM/PPM bytes into a float image with intensities b/255."""
    if len(data) < 2:
        raise FormatError("magic", "file too short to hold a magic number")
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError("magic", f"expected P5 or P6, got {magic!r}")

    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        while pos < len(data) and data[pos] in b" \t\r\n":
            pos += 1
        start = pos
        while pos < len(data) and data[pos] not in b" \t\r\n":
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(name, f"expected an ASCII integer, got {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError("width" if width < 1 else "height", "must be positive")
    if maxval != MAXVAL:
        raise FormatError("maxval", f"only maxval 255 is supported, got {maxval}")

    pos += 1  # exactly one whitespace byte separates the header from the payload
    expected = width * height * channels
    payload = data[pos:]
    if len(payload) != expected:
        raise FormatError(
            "payload", f"expected {expected} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / MAXVAL
    return pixels.reshape(height, width, channels)


def write_image(img, path) -> None:
    """Write an image as binary PGM/PPM; the extension is the caller's choice."""
    data = encode_netpbm(img)
    with open(path, "wb") as fh:
        fh.write(data)


def read_image(path) -> np.ndarray:
    """Read a binary PGM/PPM file written by write_image (or any P5/P6 file)."""
    with open(path, "rb") as fh:
        return decode_netpbm(fh.read())


def load_image_dir(path) -> list[np.ndarray]:
    """Load every .pgm/.ppm file in a directory, in lexicographic name order."""
    names = sorted(
        n for n in os.listdir(path) if n.lower().endswith((".pgm", ".ppm"))
    )
    return [read_image(os.path.join(path, n)) for n in names]
