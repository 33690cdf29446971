"""Deterministic binary image I/O: PFM depth maps, PGM masks, PPM images.

PFM files are grayscale "Pf" with scale -1.0 (little-endian floats),
holding depth in meters, rows stored bottom-to-top per the format's
convention.  PGM "P5" stores probabilities linearly quantized to 8 bits
(255 = 1.0); PPM "P6" stores RGB in [0, 1] the same way.
"""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    pass


def save_pfm(path, depth):
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ValueError(f"PFM writer expects (H, W), got {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(depth).astype("<f4").tobytes())


def load_pfm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise ImageFormatError(f"bad PFM magic {magic!r} (grayscale 'Pf' expected)")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        buf = f.read(4 * w * h)
    if len(buf) != 4 * w * h:
        raise ImageFormatError("truncated PFM payload")
    data = np.frombuffer(buf, dtype="<f4" if scale < 0 else ">f4")
    return np.flipud(data.reshape(h, w)).astype(np.float64)


def _quantize(values):
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_pgm(path, values):
    """8-bit grayscale; values in [0, 1] map linearly to 0..255."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"PGM writer expects (H, W), got {values.shape}")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"P5\n")
        f.write(f"{w} {h}\n255\n".encode())
        f.write(_quantize(values).tobytes())


def _read_pnm_header(f, magic_want):
    magic = f.readline().strip()
    if magic != magic_want:
        raise ImageFormatError(f"bad magic {magic!r} (expected {magic_want!r})")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ImageFormatError("truncated header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(v) for v in text.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit maps supported, got maxval {maxval}")
    return w, h


def load_pgm(path):
    with open(path, "rb") as f:
        w, h = _read_pnm_header(f, b"P5")
        buf = f.read(w * h)
    if len(buf) != w * h:
        raise ImageFormatError("truncated PGM payload")
    return np.frombuffer(buf, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def save_ppm(path, rgb):
    """8-bit RGB; accepts (H, W, 3) or channel-first (3, H, W) in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 3 and rgb.shape[0] == 3 and rgb.shape[2] != 3:
        rgb = np.moveaxis(rgb, 0, -1)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM writer expects (H, W, 3), got {rgb.shape}")
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n")
        f.write(f"{w} {h}\n255\n".encode())
        f.write(_quantize(rgb).tobytes())


def load_ppm(path):
    with open(path, "rb") as f:
        w, h = _read_pnm_header(f, b"P6")
        buf = f.read(3 * w * h)
    if len(buf) != 3 * w * h:
        raise ImageFormatError("truncated PPM payload")
    return np.frombuffer(buf, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0
