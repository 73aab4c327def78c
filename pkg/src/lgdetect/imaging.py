"""Image representation, PPM/PGM I/O, resizing, flipping and patch grids.

Images are plain numpy arrays of shape ``(H, W, C)`` with ``C in {1, 3}``.
Integer images are ``uint8``; working images are ``float64`` on a nominal
[0, 1] scale.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ImageFormatError(ValueError):
    """Malformed or truncated PPM/PGM data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, C) image with C in {{1, 3}}, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"empty image of shape {img.shape}")
    return img


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 -> float64 with f = u / 255 exactly."""
    img = _check_image(img)
    if img.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {img.dtype}")
    return img.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """float -> uint8 using round-half-up with clamping to [0, 255]."""
    img = _check_image(img)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    q = np.floor(img * 255.0 + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# PPM / PGM


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header", start)
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode binary P6 (RGB) or P5 (gray) bytes with maxval 255."""
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}", 0)
    channels = 3 if magic == b"P6" else 1
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"non-numeric {name} {tok!r}", start)
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid dimensions {width}x{height}", pos)
    if maxval != 255:
        raise ImageFormatError(f"max value must be 255, got {maxval}", pos)
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after header", pos)
    pos += 1
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise ImageFormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}", pos + len(payload)
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return arr.copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = _check_image(img)
    if img.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {img.dtype}")
    h, w, c = img.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img).tobytes()


def load_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def save_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


# --------------------------------------------------------------------------
# geometry


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres (align_corners=False), source coordinate clamped at 0
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centred sampling."""
    img = _check_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    img = img.astype(np.float64, copy=False)
    h, w, _ = img.shape
    if (out_h, out_w) == (h, w):
        return img.copy()
    lo, hi, fr = _axis_weights(h, out_h)
    rows = img[lo] * (1.0 - fr)[:, None, None] + img[hi] * fr[:, None, None]
    lo, hi, fr = _axis_weights(w, out_w)
    out = rows[:, lo] * (1.0 - fr)[None, :, None] + rows[:, hi] * fr[None, :, None]
    return np.clip(out, img.min(), img.max())


def hflip(img: np.ndarray) -> np.ndarray:
    img = _check_image(img)
    return img[:, ::-1].copy()


def preprocess(img: np.ndarray, size: int) -> np.ndarray:
    """Shorter side to ``size``, centre crop to a square, exact ``size x size``."""
    img = _check_image(img)
    h, w, _ = img.shape
    if (h, w) == (size, size):
        return img.astype(np.float64, copy=True)
    scale = size / min(h, w)
    nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
    img = resize_bilinear(img, nh, nw)
    top, left = (nh - size) // 2, (nw - size) // 2
    img = img[top : top + size, left : left + size]
    if img.shape[:2] != (size, size):
        img = resize_bilinear(img, size, size)
    return img


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    rows: int
    cols: int
    patches: np.ndarray  # (rows * cols, P, P, C), row-major grid order

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def flat(self) -> np.ndarray:
        """Patches as ``(N, P*P*C)`` row vectors."""
        return self.patches.reshape(self.n, -1)


def extract_patches(img: np.ndarray, patch_size: int) -> PatchGrid:
    img = _check_image(img)
    h, w, c = img.shape
    p = int(patch_size)
    if p < 1 or h % p or w % p:
        raise ValueError(f"image height {h} and width {w} must both be multiples of patch size {p}")
    gh, gw = h // p, w // p
    patches = img.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p, p, c)
    return PatchGrid(p, gh, gw, patches.copy())


def stitch_patches(grid: PatchGrid) -> np.ndarray:
    p, gh, gw = grid.patch_size, grid.rows, grid.cols
    c = grid.patches.shape[-1]
    return grid.patches.reshape(gh, gw, p, p, c).transpose(0, 2, 1, 3, 4).reshape(gh * p, gw * p, c)


def batch_patches(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Vectorised patch extraction for a ``(B, H, W, C)`` stack -> ``(B, N, P*P*C)``."""
    b, h, w, c = images.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image height {h} and width {w} must both be multiples of patch size {p}")
    gh, gw = h // p, w // p
    x = images.reshape(b, gh, p, gw, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, p * p * c)
