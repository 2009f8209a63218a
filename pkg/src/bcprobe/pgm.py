"""8-bit binary PGM (P5) images of raster masks.

Arrays use row 0 at the bottom of the unit square; files store the top row
first.
"""

from __future__ import annotations

import numpy as np


def mask_to_image(mask: np.ndarray, on: int = 255, off: int = 0) -> np.ndarray:
    img = np.full(mask.shape, off, dtype=np.uint8)
    img[np.asarray(mask, dtype=bool)] = on
    return img


def encode_pgm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.dtype == bool:
        img = mask_to_image(img)
    if img.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    img = np.clip(img, 0, 255).astype(np.uint8)
    rows, cols = img.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + img[::-1].tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(image))


def decode_pgm(buf: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit P5 images are supported")
    cols, rows = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(buf, dtype=np.uint8, count=rows * cols, offset=pos + 1)
    return data.reshape(rows, cols)[::-1].copy()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())
