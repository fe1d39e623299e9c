"""Bit-exact PPM (P6, maxval 255) image I/O, with optional PNG via Pillow."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def _read_token(buf, pos):
    # skip whitespace and '#' comments between header tokens
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ContractViolation("truncated PPM header")
    return buf[start:pos], pos


def read_ppm(path):
    with open(path, "rb") as f:
        buf = f.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise ContractViolation("only binary P6 PPM is supported")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    if int(maxval) != 255:
        raise ContractViolation("only maxval 255 PPM is supported")
    w, h = int(w), int(h)
    pos += 1  # single whitespace after maxval
    data = buf[pos:pos + 3 * w * h]
    if len(data) != 3 * w * h:
        raise ContractViolation("PPM payload shorter than its header claims")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ContractViolation("write_ppm expects (H, W, 3) uint8")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def read_image(path):
    p = str(path)
    if p.lower().endswith(".ppm"):
        return read_ppm(p)
    try:
        from PIL import Image
    except ImportError as exc:
        raise ContractViolation(
            f"cannot read {p}: Pillow not installed (PPM is the native format)"
        ) from exc
    with Image.open(p) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, image):
    p = str(path)
    if p.lower().endswith(".ppm"):
        write_ppm(p, image)
        return
    try:
        from PIL import Image
    except ImportError as exc:
        raise ContractViolation(
            f"cannot write {p}: Pillow not installed (PPM is the native format)"
        ) from exc
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(p)
