"""Seeded degradation chains and severity ladders.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` created
fresh for each call, consumed in op order.  Noise draws are the only
per-pixel random quantities; random *parameters* are drawn by
:func:`sample_policy` before a chain is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .imaging import _check_image, resize_bilinear

KINDS = ("gaussian_blur", "gaussian_noise", "jpeg_quantize", "color_shift", "spatial_distort", "grayscale")
AXES = ("jpeg_qf", "resize_scale", "blur_sigma")

# ITU-T T.81 Annex K luminance table
BASE_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

LUMA = np.array([0.299, 0.587, 0.114])


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos((2 * x + 1) * k * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


_DCT8 = _dct_matrix(8)


@dataclass(frozen=True)
class DegradationOp:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "gaussian_blur" and not p.get("sigma", -1) >= 0:
            raise ValueError(f"blur sigma must be >= 0, got {p.get('sigma')}")
        if self.kind == "gaussian_noise" and not p.get("std", -1) >= 0:
            raise ValueError(f"noise std must be >= 0, got {p.get('std')}")
        if self.kind == "jpeg_quantize":
            q = p.get("quality")
            if not isinstance(q, (int, np.integer)) or not 1 <= q <= 100:
                raise ValueError(f"jpeg quality must be an integer in [1, 100], got {q!r}")
        if self.kind == "color_shift":
            gain = np.asarray(p.get("gain", [1.0]), dtype=float)
            np.asarray(p.get("offset", [0.0]), dtype=float)
            if np.any(gain <= 0):
                raise ValueError(f"color gains must be positive, got {gain.tolist()}")
        if self.kind == "spatial_distort" and not 0 < p.get("scale", 0) < 1:
            raise ValueError(f"distortion scale must lie in (0, 1), got {p.get('scale')}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass(frozen=True)
class DegradationSpec:
    ops: tuple[DegradationOp, ...] = ()
    seed: int = 0

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "ops": [op.to_dict() for op in self.ops]}

    @classmethod
    def from_dict(cls, d: dict) -> DegradationSpec:
        ops = tuple(DegradationOp(o["kind"], dict(o.get("params", {}))) for o in d.get("ops", []))
        return cls(ops, int(d.get("seed", 0)))


# --------------------------------------------------------------------------
# individual ops


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.ones(1)
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    img = _check_image(img).astype(np.float64, copy=False)
    if sigma < 0:
        raise ValueError(f"blur sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, wk in enumerate(k):
            sl = [slice(None)] * 3
            sl[axis] = slice(i, i + n)
            acc += wk * padded[tuple(sl)]
        out = acc
    return out


def quant_table(quality: int) -> np.ndarray:
    """Luminance table scaled with the IJG quality rule."""
    if not 1 <= quality <= 100:
        raise ValueError(f"jpeg quality must be in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((BASE_LUMA_TABLE * scale + 50) // 100, 1, 255)


def _rgb_to_ycc(img):
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b
    return y, cb, cr


def _ycc_to_rgb(y, cb, cr):
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _quantize_plane(y: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = y.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(y * 255.0 - 128.0, ((0, ph), (0, pw)), mode="edge")
    bh, bw = x.shape[0] // 8, x.shape[1] // 8
    blocks = x.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coef = _DCT8 @ blocks @ _DCT8.T
    coef = np.round(coef / table) * table
    rec = _DCT8.T @ coef @ _DCT8
    rec = rec.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)[:h, :w]
    return (rec + 128.0) / 255.0


def jpeg_quantize(img: np.ndarray, quality: int) -> np.ndarray:
    """Block-DCT quantisation of luma; chroma is passed through unchanged.

    Models the compression distortion only; nothing is entropy coded.
    """
    img = _check_image(img).astype(np.float64, copy=False)
    table = quant_table(int(quality))
    if img.shape[2] == 1:
        out = _quantize_plane(img[..., 0], table)[..., None]
    else:
        y, cb, cr = _rgb_to_ycc(img)
        out = _ycc_to_rgb(_quantize_plane(y, table), cb, cr)
    return np.clip(out, 0.0, 1.0)


def gaussian_noise(img: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    img = _check_image(img).astype(np.float64, copy=False)
    return img + rng.normal(0.0, std, size=img.shape)


def color_shift(img: np.ndarray, gain, offset) -> np.ndarray:
    img = _check_image(img).astype(np.float64, copy=False)
    c = img.shape[2]
    gain = np.broadcast_to(np.asarray(gain, dtype=float), (c,))
    offset = np.broadcast_to(np.asarray(offset, dtype=float), (c,))
    return img * gain + offset


def spatial_distort(img: np.ndarray, scale: float) -> np.ndarray:
    img = _check_image(img).astype(np.float64, copy=False)
    h, w, _ = img.shape
    small = resize_bilinear(img, max(1, math.floor(scale * h)), max(1, math.floor(scale * w)))
    return resize_bilinear(small, h, w)


def grayscale(img: np.ndarray) -> np.ndarray:
    img = _check_image(img).astype(np.float64, copy=False)
    if img.shape[2] == 1:
        return img.copy()
    y = img @ LUMA
    return np.repeat(y[..., None], 3, axis=2)


def apply_op(img: np.ndarray, op: DegradationOp, rng: np.random.Generator) -> np.ndarray:
    p = op.params
    if op.kind == "gaussian_blur":
        return gaussian_blur(img, float(p["sigma"]))
    if op.kind == "gaussian_noise":
        return gaussian_noise(img, float(p["std"]), rng)
    if op.kind == "jpeg_quantize":
        return jpeg_quantize(img, int(p["quality"]))
    if op.kind == "color_shift":
        return color_shift(img, p.get("gain", 1.0), p.get("offset", 0.0))
    if op.kind == "spatial_distort":
        return spatial_distort(img, float(p["scale"]))
    return grayscale(img)


def apply_degradation(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    out = _check_image(img).astype(np.float64, copy=True)
    for op in spec.ops:
        out = np.clip(apply_op(out, op, rng), 0.0, 1.0)
    return out


# --------------------------------------------------------------------------
# training-time policy

GROUPS = ("blur", "noise", "jpeg", "color", "spatial")


def sample_policy(seed: int, channels: int = 3) -> DegradationSpec:
    """Draw a random chain: 0-2 distinct groups with uniform parameters."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(rng.integers(0, 3))
    groups = [GROUPS[i] for i in sorted(rng.choice(len(GROUPS), size=n, replace=False))]
    ops = []
    for g in groups:
        if g == "blur":
            ops.append(DegradationOp("gaussian_blur", {"sigma": float(rng.uniform(0.3, 2.0))}))
        elif g == "noise":
            ops.append(DegradationOp("gaussian_noise", {"std": float(rng.uniform(0.005, 0.05))}))
        elif g == "jpeg":
            ops.append(DegradationOp("jpeg_quantize", {"quality": int(rng.integers(40, 96))}))
        elif g == "color":
            ops.append(
                DegradationOp(
                    "color_shift",
                    {
                        "gain": rng.uniform(0.8, 1.2, channels).tolist(),
                        "offset": rng.uniform(-0.08, 0.08, channels).tolist(),
                    },
                )
            )
        else:
            ops.append(DegradationOp("spatial_distort", {"scale": float(rng.uniform(0.4, 0.9))}))
    return DegradationSpec(tuple(ops), int(rng.integers(0, 2**63)))


# --------------------------------------------------------------------------
# severity ladders


@dataclass(frozen=True)
class SeverityLadder:
    axis: str
    levels: tuple[float, ...]


def make_ladder(axis: str, levels) -> SeverityLadder:
    if axis not in AXES:
        raise ValueError(f"unknown ladder axis {axis!r}; expected one of {AXES}")
    levels = tuple(float(v) for v in levels)
    if not levels:
        raise ValueError("ladder needs at least one level")
    diffs = np.diff(levels)
    if len(levels) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError(f"ladder levels must be strictly monotone, got {list(levels)}")
    if axis == "jpeg_qf" and any(not (1 <= v <= 100 and v == int(v)) for v in levels):
        raise ValueError("jpeg_qf levels must be integers in [1, 100]")
    return SeverityLadder(axis, levels)


_DEFAULT_LEVELS = {
    "jpeg_qf": (100, 90, 80, 70, 60, 50, 40),
    "resize_scale": (0.5, 0.75, 1.0, 1.5, 2.0),
    "blur_sigma": (0.0, 0.5, 1.0, 1.5, 2.0),
}


def ladder_default(axis: str) -> SeverityLadder:
    if axis not in AXES:
        raise ValueError(f"unknown ladder axis {axis!r}; expected one of {AXES}")
    return make_ladder(axis, _DEFAULT_LEVELS[axis])


def degrade_at_level(img: np.ndarray, axis: str, level: float) -> np.ndarray:
    """Single-op degradation used by robustness sweeps.

    ``resize_scale`` changes the image size; the scoring system is expected
    to bring it back to its own input resolution.
    """
    img = _check_image(img).astype(np.float64, copy=False)
    if axis == "jpeg_qf":
        return jpeg_quantize(img, int(level))
    if axis == "blur_sigma":
        return np.clip(gaussian_blur(img, level), 0.0, 1.0)
    if axis == "resize_scale":
        h, w, _ = img.shape
        return resize_bilinear(img, max(1, math.floor(level * h)), max(1, math.floor(level * w)))
    raise ValueError(f"unknown ladder axis {axis!r}")
