"""Procedural real images and locally / globally forged fakes.

Real images are a flat base colour plus a few low-frequency sinusoids plus
fine-grain texture noise whose amplitude varies smoothly over the image.
Two forgery families:

* ``local_texture`` -- a contiguous block of ``ceil(f * N)`` patches has its
  texture phase-shuffled (per patch) and amplified, blended over a 2-pixel ramp.
* ``global_stat`` -- the texture of every pixel is made correlated across
  colour channels at unchanged per-channel variance; no single patch carries
  much of the signal.

``mixed`` alternates the two families over fake indices.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import save_ppm, to_float, to_uint8
from .model.data import LabeledImages, Record, inverse_frequency_weights, write_manifest

FAMILIES = ("local_texture", "global_stat", "mixed")
SPLITS = ("train", "val", "test")
RAMP = 2


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    channels: int = 3
    patch_size: int = 8
    forged_fraction: float = 0.08
    family: str = "local_texture"
    seed: int = 0
    counts: dict = field(default_factory=lambda: {"train": 2000, "val": 500, "test": 500})

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown artifact family {self.family!r}")
        if self.size % self.patch_size:
            raise ValueError(f"image size {self.size} must be a multiple of patch size {self.patch_size}")
        if not 0 <= self.forged_fraction <= 1:
            raise ValueError("forged_fraction must lie in [0, 1]")
        if self.family in ("local_texture", "mixed") and self.forged_fraction == 0:
            raise ValueError("local_texture forgeries need a positive forged_fraction")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    @property
    def grid(self) -> int:
        return self.size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid**2

    @property
    def n_forged(self) -> int:
        return math.ceil(round(self.forged_fraction * self.n_patches, 9))

    def split_range(self, split: str) -> range:
        start = 0
        for s in SPLITS:
            n = int(self.counts.get(s, 0))
            if s == split:
                return range(start, start + n)
            start += n
        raise ValueError(f"unknown split {split!r}")


def _rng(cfg: SynthConfig, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, index, stream])


def _components(cfg: SynthConfig, index: int):
    """(smooth part, texture) of the real image at ``index``."""
    rng = _rng(cfg, index, 0)
    s, c = cfg.size, cfg.channels
    yy, xx = np.mgrid[0:s, 0:s] / s
    smooth = np.empty((s, s, c))
    smooth[...] = rng.uniform(0.35, 0.65, c)
    for _ in range(int(rng.integers(2, 5))):
        freq = rng.uniform(0.2, 0.8)
        ang = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy) + rng.uniform(0, 2 * np.pi))
        smooth += rng.uniform(0.02, 0.06) * wave[..., None] * rng.uniform(0.6, 1.4, c)
    ang = rng.uniform(0, 2 * np.pi)
    envelope = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * (np.cos(ang) * xx + np.sin(ang) * yy) + rng.uniform(0, 2 * np.pi))
    texture = rng.normal(0.0, 1.0, (s, s, c)) * (rng.uniform(0.025, 0.045) * envelope)[..., None]
    return smooth, texture


def gen_real(cfg: SynthConfig, index: int) -> np.ndarray:
    smooth, texture = _components(cfg, index)
    return np.clip(smooth + texture, 0.0, 1.0)


def fake_family(cfg: SynthConfig, index: int) -> str:
    if cfg.family != "mixed":
        return cfg.family
    return "local_texture" if (index // 2) % 2 == 0 else "global_stat"


def _block_shape(m: int, gh: int, gw: int, rng) -> list[tuple[int, int]]:
    """Patch cells of a contiguous block holding exactly ``m`` patches."""
    pairs = [(a, m // a) for a in range(1, m + 1) if m % a == 0 and a <= gh and m // a <= gw]
    if pairs:
        best = min(abs(a - b) for a, b in pairs)
        squarest = [pr for pr in pairs if abs(pr[0] - pr[1]) == best]
        a, b = squarest[int(rng.integers(0, len(squarest)))]
        return [(i, j) for i in range(a) for j in range(b)]
    # no exact rectangle fits: full rows of width w plus one partial row
    w = min(gw, math.ceil(math.sqrt(m)))
    return [divmod(t, w) for t in range(m)]


def _phase_shuffle(tex: np.ndarray, rng) -> np.ndarray:
    out = np.empty_like(tex)
    for ch in range(tex.shape[2]):
        spec = np.fft.fft2(tex[..., ch])
        phase = np.angle(np.fft.fft2(rng.normal(size=tex.shape[:2])))
        out[..., ch] = np.real(np.fft.ifft2(np.abs(spec) * np.exp(1j * phase)))
    return out


def gen_fake(cfg: SynthConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Forged image and its ``(grid, grid)`` boolean patch mask."""
    smooth, texture = _components(cfg, index)
    base = np.clip(smooth + texture, 0.0, 1.0)
    rng = _rng(cfg, index, 1)
    g, p = cfg.grid, cfg.patch_size
    family = fake_family(cfg, index)
    if family == "global_stat":
        if cfg.channels == 1:
            raise ValueError("global_stat forgeries need 3 channels")
        gamma = rng.uniform(0.4, 0.8)
        shared = texture.mean(axis=2, keepdims=True)
        mixed = (texture + gamma * shared) / math.sqrt(1 + 2 * gamma / 3 + gamma**2 / 3)
        return np.clip(smooth + mixed, 0.0, 1.0), np.ones((g, g), dtype=bool)

    cells = _block_shape(cfg.n_forged, g, g, rng)
    bh = max(i for i, _ in cells) + 1
    bw = max(j for _, j in cells) + 1
    top = int(rng.integers(0, g - bh + 1))
    left = int(rng.integers(0, g - bw + 1))
    mask = np.zeros((g, g), dtype=bool)
    for i, j in cells:
        mask[top + i, left + j] = True
    pix = np.kron(mask, np.ones((p, p), dtype=bool))
    # 4-neighbour distance to the nearest unforged pixel; image borders do not count
    dist = np.where(pix, np.inf, 0.0)
    for _ in range(RAMP):
        shifted = np.full_like(dist, np.inf)
        padded = np.pad(dist, 1, constant_values=np.inf)
        for dy, dx in ((0, 1), (2, 1), (1, 0), (1, 2)):
            shifted = np.minimum(shifted, padded[dy : dy + dist.shape[0], dx : dx + dist.shape[1]] + 1)
        dist = np.where(pix, np.minimum(dist, shifted), 0.0)
    alpha = np.clip(dist / (RAMP + 1), 0.0, 1.0)  # 1/3, 2/3, then 1
    boost = rng.uniform(2.2, 2.8)
    forged_tex = np.zeros_like(texture)
    for i, j in cells:
        ys = slice((top + i) * p, (top + i + 1) * p)
        xs = slice((left + j) * p, (left + j + 1) * p)
        forged_tex[ys, xs] = boost * _phase_shuffle(texture[ys, xs], rng)
    content = np.clip(smooth + forged_tex, 0.0, 1.0)
    out = base.copy()
    sel = alpha > 0
    a = alpha[sel][:, None]
    out[sel] = (1.0 - a) * base[sel] + a * content[sel]
    return out, mask


# --------------------------------------------------------------------------
# splits


def image_id(split: str, index: int, label: int) -> str:
    return f"{split}_{index:05d}_{'fake' if label else 'real'}"


def make_split(cfg: SynthConfig, split: str) -> tuple[LabeledImages, dict[str, np.ndarray]]:
    """Generate one split in memory, quantised to 8 bits like the files on disk.

    Labels alternate real/fake by index, so every split is class-balanced.
    Returns the images and a dict of patch masks keyed by fake image id.
    """
    imgs, labels, ids, masks = [], [], [], {}
    for i in cfg.split_range(split):
        y = i % 2
        if y:
            img, m = gen_fake(cfg, i)
        else:
            img = gen_real(cfg, i)
        iid = image_id(split, i, y)
        if y:
            masks[iid] = m
        imgs.append(to_float(to_uint8(img)))
        labels.append(y)
        ids.append(iid)
    labels = np.array(labels, dtype=np.int64)
    return LabeledImages(np.stack(imgs), labels, ids, np.array(inverse_frequency_weights(labels))), masks


def write_mask(path, mask: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("".join("1" if v else "0" for v in mask.ravel()) + "\n")


def read_mask(path, grid: tuple[int, int]) -> np.ndarray:
    with open(path) as fh:
        s = fh.read().strip()
    if len(s) != grid[0] * grid[1] or set(s) - {"0", "1"}:
        raise ValueError(f"mask file {path} does not hold {grid[0] * grid[1]} binary characters")
    return np.array([c == "1" for c in s]).reshape(grid)


def gen_split(cfg: SynthConfig, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write PPM images, mask sidecars and one manifest per split.

    Layout: ``out_dir/<split>/<id>.ppm``, ``out_dir/<split>/<id>.mask`` for
    fakes, and ``out_dir/<split>.csv`` with paths relative to ``out_dir``.
    """
    out = Path(out_dir)
    manifests = {}
    for split in SPLITS:
        if not cfg.counts.get(split):
            continue
        (out / split).mkdir(parents=True, exist_ok=True)
        data, masks = make_split(cfg, split)
        records = []
        for img, y, iid, w in zip(data.images, data.labels, data.ids, data.weights):
            save_ppm(out / split / f"{iid}.ppm", to_uint8(img))
            if iid in masks:
                write_mask(out / split / f"{iid}.mask", masks[iid])
            source = fake_family(cfg, int(iid.split("_")[1])) if y else "real"
            records.append(Record(f"{split}/{iid}.ppm", int(y), source, float(w)))
        manifests[split] = out / f"{split}.csv"
        write_manifest(manifests[split], records)
    return manifests
