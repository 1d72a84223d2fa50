"""Tiny deterministic software rasterizer and binary PPM (P6) image I/O.

Images are uint8 (height, width, 3) framebuffers. World coordinates map onto
the pixel grid with y pointing up, so row 0 is the top of the arena. Drawing
uses pixel-center coverage tests with no anti-aliasing, which keeps rendering
bit-reproducible.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _pixel_grid(size: int, width: float, height: float):
    """Pixel-center world coordinates for a size x size top-view image."""
    sx = width / size
    sy = height / size
    xs = (np.arange(size) + 0.5) * sx
    ys = (size - np.arange(size) - 0.5) * sy
    gx, gy = np.meshgrid(xs, ys)
    return gx, gy


def new_frame(size: int, color) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:, :] = color
    return img


def draw_disk(img, bounds_wh, cx, cy, radius, color):
    gx, gy = _pixel_grid(img.shape[0], *bounds_wh)
    mask = (gx - cx) ** 2 + (gy - cy) ** 2 <= radius * radius
    img[mask] = color


def draw_segment(img, bounds_wh, ax, ay, bx, by, half_width, color):
    """Draws a thick segment: pixels whose center is within half_width of it."""
    gx, gy = _pixel_grid(img.shape[0], *bounds_wh)
    ex, ey = bx - ax, by - ay
    seg_len2 = ex * ex + ey * ey
    px, py = gx - ax, gy - ay
    if seg_len2 == 0.0:
        d2 = px * px + py * py
    else:
        t = np.clip((px * ex + py * ey) / seg_len2, 0.0, 1.0)
        dx = px - t * ex
        dy = py - t * ey
        d2 = dx * dx + dy * dy
    img[d2 <= half_width * half_width] = color


def to_observation(img: np.ndarray) -> np.ndarray:
    """uint8 framebuffer -> float intensities in [0, 1]."""
    return img.astype(np.float64) / 255.0


def quantize(observation: np.ndarray) -> np.ndarray:
    """Float [0,1] image -> uint8 with round-half-up, the PPM pixel encoding."""
    return np.floor(np.asarray(observation) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, img: np.ndarray):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = quantize(img)
    h, w, c = img.shape
    if c != 3:
        raise ValueError(f"PPM needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    # header: magic, width, height, maxval; '#' comments allowed
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raw.reshape(h, w, 3).copy()
