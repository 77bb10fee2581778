"""Minimal binary PGM (P5) reader/writer for diagnostic images."""

from pathlib import Path

import numpy as np

from .errors import FormatError


def write_pgm(path, img: np.ndarray) -> None:
    if img.ndim != 2:
        raise FormatError(f"PGM image must be 2-D, got shape {img.shape}")
    img = np.ascontiguousarray(img, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM file", 0)
    try:
        w, h = (int(t) for t in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header", len(parts[0]) + 1) from exc
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pixels = parts[3][:h * w]
    if len(pixels) < h * w:
        raise FormatError(f"{path}: truncated pixel data", len(data))
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)
