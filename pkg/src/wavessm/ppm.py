"""Binary PPM (P6) image I/O plus optional PNG reading.

P6 with maxval 255 is the native format: its byte layout is fully
specified here, and decode(encode(img)) is bit-identical.  PNG files can
be read when Pillow is installed; output is always PPM.
"""

from __future__ import annotations

import numpy as np


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("unexpected end of PPM header")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Parse P6 bytes into an (H, W, 3) uint8 array."""
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM (P6) file, magic {magic!r}")
    width_tok, pos = _read_token(data, pos)
    height_tok, pos = _read_token(data, pos)
    maxval_tok, pos = _read_token(data, pos)
    try:
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except ValueError:
        raise ValueError("malformed PPM header") from None
    if width <= 0 or height <= 0:
        raise ValueError(f"invalid PPM dimensions {width}x{height}")
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # the single whitespace byte after maxval
    need = width * height * 3
    pixels = data[pos : pos + need]
    if len(pixels) != need:
        raise ValueError(
            f"PPM payload truncated: need {need} bytes, have {len(pixels)}"
        )
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    """Serialize an (H, W, 3) uint8 array as P6."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected uint8 (H, W, 3), got {img.dtype} {img.shape}")
    h, w = img.shape[0], img.shape[1]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def write_ppm(path, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(img))


def read_image(path) -> np.ndarray:
    """Read PPM natively, PNG via Pillow when available."""
    p = str(path)
    if p.lower().endswith(".png"):
        try:
            from PIL import Image
        except ImportError:
            raise ValueError(
                "PNG input needs Pillow (pip install wavessm[png]); "
                "PPM is supported natively"
            ) from None
        with Image.open(p) as im:
            return np.asarray(im.convert("RGB"))
    return read_ppm(p)


def to_unit(img8: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 -> [0, 1] floats."""
    return img8.astype(dtype) / dtype(255.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 with round-half-up and clamping."""
    q = np.floor(img.astype(np.float64) * 255.0 + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)
