"""Binary PGM (P5) and PPM (P6) image files, 8-bit only.

Float images in [0,1] quantize as floor(v * 255 + 0.5); out-of-range
values are clipped before quantization. Loading maps bytes back to
value / 255 as float32. Headers may carry '#' comments anywhere
whitespace is allowed, per the format's grammar.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

MAXVAL = 255


def _quantize(img: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(clipped * MAXVAL + 0.5).astype(np.uint8)


def save_pgm(path, img: np.ndarray) -> None:
    """Write a grayscale image, (H,W) or (1,H,W)."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise DimensionError(f"grayscale output needs (H,W) or (1,H,W), got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        f.write(_quantize(img).tobytes())


def save_ppm(path, img: np.ndarray) -> None:
    """Write an RGB image, (3,H,W)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"color output needs (3,H,W), got {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        # interleave to per-pixel RGB
        f.write(_quantize(img).transpose(1, 2, 0).tobytes())


def _read_token(data: bytes, pos: int, path) -> tuple[bytes, int]:
    """Next header token, skipping whitespace and '#' comments."""
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
    if pos >= n:
        raise ContractError(f"{path}: truncated header")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def load_pnm(path) -> np.ndarray:
    """Read a P5 or P6 file; returns float32 (1,H,W) or (3,H,W) in [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    magic, pos = _read_token(data, 0, path)
    if magic not in (b"P5", b"P6"):
        raise ContractError(f"{path}: unsupported magic {magic!r}")
    channels = 1 if magic == b"P5" else 3
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos, path)
        if not tok.isdigit():
            raise ContractError(f"{path}: malformed header token {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != MAXVAL:
        raise ContractError(f"{path}: only maxval {MAXVAL} is supported, got {maxval}")
    if w < 1 or h < 1:
        raise ContractError(f"{path}: bad dimensions {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    need = w * h * channels
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise ContractError(
            f"{path}: payload holds {len(payload)} bytes, header promises {need}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)
    return (arr.transpose(2, 0, 1).astype(np.float32) / MAXVAL).copy()
