"""Image quantization and file output (8-bit PPM always, PNG via Pillow)."""

from __future__ import annotations

import numpy as np


def quantize(img: np.ndarray) -> np.ndarray:
    """Float (h, w, 3) image -> uint8 via round(clamp(c, 0, 1) * 255)."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """Write a binary P6 PPM; float images are quantized first."""
    if img.dtype != np.uint8:
        img = quantize(img)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError(f"unsupported PPM header {fields}")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    if img.dtype != np.uint8:
        img = quantize(img)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def write_image(path, img: np.ndarray, fmt: str = "ppm") -> None:
    if fmt == "ppm":
        write_ppm(path, img)
    elif fmt == "png":
        write_png(path, img)
    else:
        raise ValueError(f"unknown image format {fmt!r}")
