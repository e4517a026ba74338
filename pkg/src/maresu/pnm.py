"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .segnet import ImageTensor

_CHANNELS = {b"P5": 1, b"P6": 3}
_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(data: bytes, path) -> tuple[list[int], int]:
    """Parse width, height, maxval; return them and the raster offset."""
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise FormatError(f"{path}: header ends before width, height and maxval")
        ch = data[pos : pos + 1]
        if ch not in _WHITESPACE + b"#":
            start = pos
            while pos < len(data) and data[pos : pos + 1] not in _WHITESPACE + b"#":
                pos += 1
            word = data[start:pos]
            if not word.isdigit():
                raise FormatError(f"{path}: bad header field {word!r}")
            tokens.append(int(word))
        elif ch == b"#":
            while pos < len(data) and data[pos : pos + 1] not in b"\r\n":
                pos += 1
        else:
            pos += 1
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise FormatError(f"{path}: missing whitespace after maxval")
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Raw 8-bit raster: ``h x w`` for P5, ``h x w x 3`` for P6."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in _CHANNELS:
        raise FormatError(f"{path}: unsupported magic {magic!r}; expected P5 or P6")
    if data[2:3] == b"" or data[2:3] not in _WHITESPACE:
        raise FormatError(f"{path}: magic {data[:3]!r} is not followed by whitespace")
    (width, height, maxval), offset = _header_tokens(data, path)
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported; only 255 is accepted")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: empty image {width}x{height}")
    channels = _CHANNELS[magic]
    size = width * height * channels
    raster = data[offset : offset + size]
    if len(raster) < size:
        raise FormatError(f"{path}: raster truncated ({len(raster)} of {size} bytes)")
    pixels = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return pixels.reshape(shape).copy()


def read_pgm(path) -> ImageTensor:
    """Read a P5/P6 file as an image with channel values scaled to [0, 1]."""
    return ImageTensor(read_pnm(path).astype(np.float64) / 255.0)


def read_labels(path) -> np.ndarray:
    """Read a P5 label map; the gray level is the class index."""
    raw = read_pnm(path)
    if raw.ndim != 2:
        raise FormatError(f"{path}: label maps must be single-channel P5")
    return raw.astype(np.int64)


def write_pgm(image, path) -> None:
    """Write an image or label map.

    An :class:`ImageTensor` (values in [0, 1], 1 or 3 channels) is scaled
    to 0..255. An integer array of shape ``h x w`` is written unscaled as
    a P5 label map.
    """
    if isinstance(image, ImageTensor):
        if image.channels not in (1, 3):
            raise DataError(f"can only write 1- or 3-channel images, got {image.channels}")
        raster = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
        if image.channels == 1:
            raster = raster[:, :, 0]
    else:
        labels = np.asarray(image)
        if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
            raise DataError("label maps must be 2-D integer arrays")
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise DataError("label values must lie in 0..255 to fit a P5 gray level")
        raster = labels.astype(np.uint8)
    magic = b"P5" if raster.ndim == 2 else b"P6"
    h, w = raster.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + raster.tobytes())
